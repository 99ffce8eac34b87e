mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use fdt_response::diagnostics::{correlation, diagonal_average, l2_relative_error, symmetrize};
use fdt_response::ideal::{ideal_response, intrinsic_error, EnsembleSpec};
use fdt_response::io::{self, Metadata};
use fdt_response::lyapunov::{cutoff_time, largest_lyapunov, LyapunovConfig, LyapunovEstimate};
use fdt_response::response::{
    blended_operator, integrate_operator, mean_and_covariance, qg_fdt_operator, sst_fdt_operator, Algorithm,
    IntegratedResponse, ResponseGrid, ResponseOperatorSeries, Sampling, StateMap,
};
use fdt_response::sde::{simulate_recorded, IntegratorConfig, NoiseStream, SdeModel, Trajectory};
use serde_json::{json, Value};

use crate::config::{ConfigError, ExperimentConfig};

/// Stream ids inside one seed. Ensemble members use their own range.
const TRAJECTORY_STREAM: u64 = 0;
const LYAPUNOV_STREAM: u64 = 1;

#[derive(Parser)]
#[command(
    name = "fdt",
    version,
    about = "Linear response experiments: SST, qG and blended FDT versus direct perturbation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment configuration (flat `key = value` file).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory; overrides `output_dir`.
    #[arg(long, global = true, value_name = "DIR")]
    output: Option<PathBuf>,

    /// Master seed; overrides `seed`.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Maximum number of worker threads. Results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,

    /// Comma-separated snapshot times for `compare`.
    #[arg(long, global = true, value_delimiter = ',', value_name = "T,...")]
    snapshot_times: Option<Vec<f64>>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate, then write the SST, qG and blended integrated responses.
    RunResponse,
    /// Write the ideal (direct perturbation) response and its intrinsic error.
    RunIdeal,
    /// Compare the FDT outputs in the output directory with the ideal response.
    Compare,
    /// Estimate the largest Lyapunov exponent and the blending cutoff.
    Lyapunov,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let numerical = e
        .chain()
        .filter_map(|c| c.downcast_ref::<fdt_response::Error>())
        .any(|c| c.is_numerical());
    if numerical {
        2
    } else {
        1
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ExperimentConfig::parse(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = cli.output {
        cfg.output_dir = dir;
    }
    if let Some(times) = cli.snapshot_times {
        cfg.snapshot_times = Some(times);
    }
    cfg.validate()?;
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(ConfigError("--workers must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::RunResponse => run_response(&cfg),
        Command::RunIdeal => run_ideal(&cfg),
        Command::Compare => compare(&cfg),
        Command::Lyapunov => lyapunov(&cfg),
    }
}

struct Setup {
    model: Box<dyn SdeModel<f64>>,
    integrator: IntegratorConfig<f64>,
    grid: ResponseGrid<f64>,
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    std::fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    Ok(Setup {
        model: cfg.model()?,
        integrator: IntegratorConfig::new(cfg.dt)?,
        grid: ResponseGrid::new(cfg.response_horizon, cfg.grid_points)?,
    })
}

/// Burn-in, averaging window and one response horizon of unperturbed
/// trajectory.
fn source_trajectory(cfg: &ExperimentConfig, s: &Setup) -> Result<Trajectory<f64>> {
    let n_steps = cfg.burn_in_steps() + cfg.averaging_steps() + cfg.horizon_steps();
    simulate_recorded(
        &s.model,
        &cfg.initial_state(),
        0.0,
        0,
        n_steps,
        cfg.record_every,
        &s.integrator,
        NoiseStream::new(cfg.seed, TRAJECTORY_STREAM),
    )
    .context("simulating the unperturbed trajectory")
}

/// Lyapunov estimate started from the post-burn-in state of the source
/// trajectory.
fn lyapunov_estimate(cfg: &ExperimentConfig, s: &Setup) -> Result<LyapunovEstimate<f64>> {
    let burn = cfg.burn_in_steps();
    let spin = simulate_recorded(
        &s.model,
        &cfg.initial_state(),
        0.0,
        0,
        burn,
        burn.max(1),
        &s.integrator,
        NoiseStream::new(cfg.seed, TRAJECTORY_STREAM),
    )
    .context("burn-in before the Lyapunov run")?;
    let lc = LyapunovConfig {
        total_time: cfg.lyapunov_time,
        renorm_interval: cfg.lyapunov_renorm,
        history_every: 100,
    };
    largest_lyapunov(
        &s.model,
        spin.state(spin.len() - 1),
        &s.integrator,
        NoiseStream::new(cfg.seed, LYAPUNOV_STREAM),
        0,
        &lc,
    )
    .context("estimating the largest Lyapunov exponent")
}

fn finite_or_label(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(if v > 0.0 { "inf" } else { "-inf" })
    }
}

fn metadata(cfg: &ExperimentConfig, file: &str, algorithm: Option<Algorithm>) -> Metadata {
    let mut details = BTreeMap::new();
    details.insert("config".into(), cfg.to_json());
    details.insert("t_max".into(), json!(cfg.response_horizon));
    details.insert("grid_points".into(), json!(cfg.grid_points));
    details.insert("dt".into(), json!(cfg.dt));
    Metadata {
        file: file.into(),
        algorithm: algorithm.map(|a| a.name().to_string()),
        seed: cfg.seed,
        config_hash: cfg.hash(),
        code_version: env!("CARGO_PKG_VERSION").into(),
        details,
    }
}

fn write_response(
    cfg: &ExperimentConfig,
    file: &str,
    series: &ResponseOperatorSeries<f64>,
    extra: &[(&str, Value)],
) -> Result<()> {
    let path = cfg.output_dir.join(file);
    io::write_integrated(&path, &integrate_operator(series)).with_context(|| format!("writing {}", path.display()))?;
    let mut meta = metadata(cfg, file, Some(series.algorithm));
    meta.details
        .insert("averaging".into(), serde_json::to_value(&series.meta)?);
    meta.details.insert("truncated_at".into(), json!(series.truncated_at));
    for (k, v) in extra {
        meta.details.insert((*k).into(), v.clone());
    }
    io::write_metadata(&path, &meta)?;
    Ok(())
}

fn run_response(cfg: &ExperimentConfig) -> Result<()> {
    let s = setup(cfg)?;
    let traj = source_trajectory(cfg, &s)?;
    let burn = cfg.burn_in_steps();
    let stats = mean_and_covariance(&traj, burn).context("trajectory statistics")?;

    let (lambda1, cutoff) = match cfg.cutoff {
        Some(c) => (None, c),
        None => {
            let est = lyapunov_estimate(cfg, &s)?;
            (Some(est.lambda1), cutoff_time(est.lambda1))
        }
    };

    let sst_sampling = Sampling::new(burn, cfg.anchor_stride).with_batches(cfg.batches);
    let sst = sst_fdt_operator(
        &s.model,
        &traj,
        &s.grid,
        &sst_sampling,
        StateMap::Identity,
        StateMap::Identity,
    )
    .context("SST operator")?;
    let qg_sampling = Sampling::new(burn, cfg.qg_stride).with_batches(cfg.batches);
    let qg = qg_fdt_operator(&traj, &s.grid, &stats, &qg_sampling).context("qG operator")?;
    let blended = blended_operator(&sst, &qg, cutoff).context("blending SST and qG")?;

    let blend_info = [
        ("cutoff", finite_or_label(cutoff)),
        (
            "cutoff_source",
            json!(if lambda1.is_some() { "lyapunov" } else { "config" }),
        ),
        ("lambda1", json!(lambda1)),
        ("lyapunov_includes_noise", json!(true)),
    ];
    write_response(cfg, "sst.csv", &sst, &[])?;
    write_response(cfg, "qg.csv", &qg, &[])?;
    write_response(cfg, "blended.csv", &blended, &blend_info)?;

    println!(
        "sst: {} anchors, qg: {} anchors, averaging {} time units",
        sst.meta.n_samples, qg.meta.n_samples, sst.meta.averaging_time
    );
    if let Some(i) = sst.truncated_at {
        println!("sst: non-finite from t = {}", s.grid.time(i));
    }
    match lambda1 {
        Some(l) => println!("lambda1 = {l}, cutoff = {cutoff}"),
        None => println!("cutoff = {cutoff} (from config)"),
    }
    println!("wrote sst.csv, qg.csv, blended.csv to {}", cfg.output_dir.display());
    Ok(())
}

fn run_ideal(cfg: &ExperimentConfig) -> Result<()> {
    let s = setup(cfg)?;
    let traj = source_trajectory(cfg, &s)?;
    let spec = EnsembleSpec {
        size: cfg.ensemble_size,
        burn_in_steps: cfg.burn_in_steps(),
        draw_stride_steps: cfg.ensemble_stride_steps(),
        alpha: cfg.alpha,
        pairing: cfg.pairing,
        columns: cfg.ideal_columns,
        first_member: 0,
    };
    let (response, dropped, intrinsic) = if cfg.intrinsic_error {
        let ie = intrinsic_error(&s.model, &traj, &spec, &s.grid).context("ideal response")?;
        (ie.full, ie.dropped, Some(ie.series))
    } else {
        let est = ideal_response(&s.model, &traj, &spec, &s.grid).context("ideal response")?;
        (est.response, est.dropped, None)
    };

    let ensemble_info = json!({
        "size": spec.size,
        "draw_stride_steps": spec.draw_stride_steps,
        "alpha": spec.alpha,
        "pairing": spec.pairing,
        "columns": spec.columns,
        "dropped": dropped,
    });
    let path = cfg.output_dir.join("ideal.csv");
    io::write_integrated(&path, &response)?;
    let mut meta = metadata(cfg, "ideal.csv", Some(Algorithm::Ideal));
    meta.details.insert("ensemble".into(), ensemble_info.clone());
    io::write_metadata(&path, &meta)?;

    if let Some(series) = intrinsic {
        let path = cfg.output_dir.join("intrinsic_error.csv");
        let times = s.grid.times();
        let col: Vec<Option<f64>> = series.into_iter().map(Some).collect();
        io::write_scalar_series(&path, &times, &[("intrinsic_error", col)])?;
        let mut meta = metadata(cfg, "intrinsic_error.csv", Some(Algorithm::Ideal));
        meta.details.insert("ensemble".into(), ensemble_info);
        meta.details.insert("half_alpha".into(), json!(cfg.alpha / 2.0));
        io::write_metadata(&path, &meta)?;
    }
    println!(
        "ideal: {} members, {} dropped; wrote ideal.csv{} to {}",
        spec.size,
        dropped,
        if cfg.intrinsic_error {
            ", intrinsic_error.csv"
        } else {
            ""
        },
        cfg.output_dir.display()
    );
    Ok(())
}

fn load(dir: &Path, file: &str, algorithm: Algorithm) -> Result<Option<(IntegratedResponse<f64>, Metadata)>> {
    let path = dir.join(file);
    if !path.exists() {
        return Ok(None);
    }
    let r = io::read_integrated(&path, algorithm).with_context(|| format!("reading {}", path.display()))?;
    let meta = io::read_metadata(&path).with_context(|| format!("reading metadata of {}", path.display()))?;
    Ok(Some((r, meta)))
}

fn compare(cfg: &ExperimentConfig) -> Result<()> {
    let dir = &cfg.output_dir;
    let Some((ideal, ideal_meta)) = load(dir, "ideal.csv", Algorithm::Ideal)? else {
        bail!(ConfigError(format!(
            "{} has no ideal.csv; run run-ideal first",
            dir.display()
        )));
    };
    let mut fdt = Vec::new();
    for (name, alg) in [
        ("sst", Algorithm::Sst),
        ("qg", Algorithm::Qg),
        ("blended", Algorithm::Blended),
    ] {
        if let Some((r, meta)) = load(dir, &format!("{name}.csv"), alg)? {
            if meta.config_hash != ideal_meta.config_hash {
                eprintln!("warning: {name}.csv and ideal.csv come from different configurations");
            }
            fdt.push((name, r));
        }
    }
    if fdt.is_empty() {
        bail!(ConfigError(format!(
            "{} has no sst/qg/blended output; run run-response first",
            dir.display()
        )));
    }
    let (ideal, fdt) = if cfg.symmetrize {
        let fdt = fdt
            .into_iter()
            .map(|(n, r)| Ok((n, symmetrize(&r)?)))
            .collect::<Result<Vec<_>>>()?;
        (symmetrize(&ideal)?, fdt)
    } else {
        (ideal, fdt)
    };

    let times = ideal.grid.times();
    let mut errors = Vec::new();
    let mut correlations = Vec::new();
    for (name, r) in &fdt {
        let e = l2_relative_error(r, &ideal).with_context(|| format!("{name} versus ideal"))?;
        let c = correlation(r, &ideal).with_context(|| format!("{name} versus ideal"))?;
        let mut e: Vec<Option<f64>> = e.into_iter().map(Some).collect();
        let mut c = c;
        e.resize(times.len(), None);
        c.resize(times.len(), None);
        errors.push((*name, e));
        correlations.push((*name, c));
    }

    let compare_meta = |file: &str| {
        let mut details = BTreeMap::new();
        details.insert("symmetrize".into(), json!(cfg.symmetrize));
        details.insert(
            "compared".into(),
            json!(fdt.iter().map(|(n, _)| *n).collect::<Vec<_>>()),
        );
        details.insert("t_max".into(), json!(ideal.grid.t_max()));
        details.insert("grid_points".into(), json!(ideal.grid.n_points()));
        Metadata {
            file: file.into(),
            algorithm: None,
            seed: ideal_meta.seed,
            config_hash: ideal_meta.config_hash.clone(),
            code_version: env!("CARGO_PKG_VERSION").into(),
            details,
        }
    };
    let n_times = ideal.matrices.len();
    for (file, cols) in [("errors.csv", &errors), ("correlations.csv", &correlations)] {
        let path = dir.join(file);
        io::write_scalar_series(&path, &times[..n_times], cols)?;
        io::write_metadata(&path, &compare_meta(file))?;
    }

    let snapshot_times = cfg.snapshot_times();
    for &t in &snapshot_times {
        let Some(i) = ideal.grid.index_of(t).filter(|&i| i < n_times) else {
            bail!(ConfigError(format!(
                "snapshot time {t} is not a point of the response grid"
            )));
        };
        let mut cols = vec![("ideal", diagonal_average(ideal.at(i))?)];
        for (name, r) in &fdt {
            if i < r.matrices.len() {
                cols.push((*name, diagonal_average(r.at(i))?));
            }
        }
        let file = format!("snapshots_T{t}.csv");
        let path = dir.join(&file);
        io::write_profiles(&path, &cols)?;
        let mut meta = compare_meta(&file);
        meta.details.insert("time".into(), json!(ideal.grid.time(i)));
        io::write_metadata(&path, &meta)?;
    }
    println!(
        "wrote errors.csv, correlations.csv and {} snapshot files to {}",
        snapshot_times.len(),
        dir.display()
    );
    Ok(())
}

fn lyapunov(cfg: &ExperimentConfig) -> Result<()> {
    let s = setup(cfg)?;
    let est = lyapunov_estimate(cfg, &s)?;
    let cutoff = cutoff_time(est.lambda1);
    let path = cfg.output_dir.join("lyapunov.csv");
    let times: Vec<f64> = est.convergence_history.iter().map(|(t, _)| *t).collect();
    let values = est.convergence_history.iter().map(|(_, l)| Some(*l)).collect();
    io::write_scalar_series(&path, &times, &[("lambda1", values)])?;
    let mut meta = metadata(cfg, "lyapunov.csv", None);
    meta.details.insert("lambda1".into(), json!(est.lambda1));
    meta.details.insert("cutoff".into(), finite_or_label(cutoff));
    meta.details
        .insert("renorm_interval".into(), json!(est.renorm_interval));
    meta.details.insert("total_time".into(), json!(est.total_time));
    meta.details.insert("includes_noise".into(), json!(true));
    io::write_metadata(&path, &meta)?;
    println!("lambda1 = {}", est.lambda1);
    println!("cutoff = {cutoff}");
    Ok(())
}
