//! Flat `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Unknown keys, duplicate keys
//! and values that do not parse are errors naming the offending key.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use fdt_response::ideal::{Columns, Pairing};
use fdt_response::models::{Inert, Lorenz96, NoiseSpec, OrnsteinUhlenbeck};
use fdt_response::sde::SdeModel;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(key: &str, msg: impl fmt::Display) -> ConfigError {
    ConfigError(format!("config key `{key}`: {msg}"))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ModelKind {
    Sl96,
    Ou,
    ScalarMultiplicative,
    Inert,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseKind {
    None,
    Additive,
    Multiplicative,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub n: usize,
    pub forcing: f64,
    pub noise: NoiseKind,
    pub noise_coeff: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub beta: f64,
    pub dt: f64,
    pub averaging_time: f64,
    pub ensemble_size: usize,
    pub response_horizon: f64,
    pub grid_points: usize,
    pub anchor_stride: usize,
    pub qg_stride: usize,
    pub record_every: usize,
    pub burn_in: f64,
    pub batches: usize,
    pub alpha: f64,
    pub seed: u64,
    pub cutoff: Option<f64>,
    pub output_dir: PathBuf,
    pub lyapunov_time: f64,
    pub lyapunov_renorm: usize,
    pub ensemble_stride: Option<usize>,
    pub pairing: Pairing,
    pub ideal_columns: Columns,
    pub intrinsic_error: bool,
    /// Explicit snapshot times; see [`ExperimentConfig::snapshot_times`].
    pub snapshot_times: Option<Vec<f64>>,
    pub symmetrize: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Sl96,
            n: 40,
            forcing: 6.0,
            noise: NoiseKind::None,
            noise_coeff: 0.0,
            gamma: 1.0,
            sigma: 1.0,
            beta: 0.0,
            dt: 0.001,
            averaging_time: 10000.0,
            ensemble_size: 10000,
            response_horizon: 5.0,
            grid_points: 51,
            anchor_stride: 100,
            qg_stride: 10,
            record_every: 10,
            burn_in: 10.0,
            batches: 20,
            alpha: 0.1,
            seed: 0,
            cutoff: None,
            output_dir: PathBuf::from("out"),
            lyapunov_time: 1000.0,
            lyapunov_renorm: 10,
            ensemble_stride: None,
            pairing: Pairing::CommonNoise,
            ideal_columns: Columns::All,
            intrinsic_error: true,
            snapshot_times: None,
            symmetrize: false,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| bad(key, format!("cannot parse {v:?}")))
}

fn boolean(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(bad(key, format!("expected true or false, got {v:?}"))),
    }
}

pub fn parse_times(key: &str, v: &str) -> Result<Vec<f64>, ConfigError> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| num::<f64>(key, s))
        .collect()
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        let mut seen = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError(format!("line {}: expected `key = value`", lineno + 1)));
            };
            let (key, v) = (key.trim(), value.trim());
            if seen.insert(key.to_string(), lineno).is_some() {
                return Err(bad(key, "given more than once"));
            }
            match key {
                "model" => {
                    c.model = match v {
                        "sl96" => ModelKind::Sl96,
                        "ou" => ModelKind::Ou,
                        "scalar-multiplicative" => ModelKind::ScalarMultiplicative,
                        "inert" => ModelKind::Inert,
                        _ => return Err(bad(key, format!("unknown model {v:?}"))),
                    }
                }
                "n" => c.n = num(key, v)?,
                "forcing" => c.forcing = num(key, v)?,
                "noise" => {
                    c.noise = match v {
                        "none" => NoiseKind::None,
                        "additive" => NoiseKind::Additive,
                        "multiplicative" => NoiseKind::Multiplicative,
                        _ => return Err(bad(key, format!("unknown noise {v:?}"))),
                    }
                }
                "noise_coeff" => c.noise_coeff = num(key, v)?,
                "gamma" => c.gamma = num(key, v)?,
                "sigma" => c.sigma = num(key, v)?,
                "beta" => c.beta = num(key, v)?,
                "dt" => c.dt = num(key, v)?,
                "averaging_time" => c.averaging_time = num(key, v)?,
                "ensemble_size" => c.ensemble_size = num(key, v)?,
                "response_horizon" => c.response_horizon = num(key, v)?,
                "grid_points" => c.grid_points = num(key, v)?,
                "anchor_stride" => c.anchor_stride = num(key, v)?,
                "qg_stride" => c.qg_stride = num(key, v)?,
                "record_every" => c.record_every = num(key, v)?,
                "burn_in" => c.burn_in = num(key, v)?,
                "batches" => c.batches = num(key, v)?,
                "alpha" => c.alpha = num(key, v)?,
                "seed" => c.seed = num(key, v)?,
                "cutoff" => c.cutoff = Some(num(key, v)?),
                "output_dir" => c.output_dir = PathBuf::from(v),
                "lyapunov_time" => c.lyapunov_time = num(key, v)?,
                "lyapunov_renorm" => c.lyapunov_renorm = num(key, v)?,
                "ensemble_stride" => c.ensemble_stride = Some(num(key, v)?),
                "pairing" => {
                    c.pairing = match v {
                        "common" => Pairing::CommonNoise,
                        "independent" => Pairing::IndependentNoise,
                        _ => return Err(bad(key, format!("expected common or independent, got {v:?}"))),
                    }
                }
                "ideal_columns" => {
                    c.ideal_columns = match v {
                        "all" => Columns::All,
                        "shift-fill" => Columns::ShiftFill,
                        _ => Columns::Single(
                            num(key, v).map_err(|_| bad(key, "expected all, shift-fill or a column index"))?,
                        ),
                    }
                }
                "intrinsic_error" => c.intrinsic_error = boolean(key, v)?,
                "snapshot_times" => c.snapshot_times = Some(parse_times(key, v)?),
                "symmetrize" => c.symmetrize = boolean(key, v)?,
                _ => return Err(ConfigError(format!("unknown config key `{key}`"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("dt", self.dt),
            ("averaging_time", self.averaging_time),
            ("response_horizon", self.response_horizon),
            ("alpha", self.alpha),
            ("lyapunov_time", self.lyapunov_time),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(bad(key, format!("must be positive, got {v}")));
            }
        }
        if !(self.burn_in >= 0.0 && self.burn_in.is_finite()) {
            return Err(bad("burn_in", "must be non-negative"));
        }
        let counts = [
            ("ensemble_size", self.ensemble_size),
            ("anchor_stride", self.anchor_stride),
            ("qg_stride", self.qg_stride),
            ("record_every", self.record_every),
            ("batches", self.batches),
            ("lyapunov_renorm", self.lyapunov_renorm),
        ];
        for (key, v) in counts {
            if v == 0 {
                return Err(bad(key, "must be positive"));
            }
        }
        if self.grid_points < 2 {
            return Err(bad("grid_points", "must be at least 2"));
        }
        for (key, v) in [("anchor_stride", self.anchor_stride), ("qg_stride", self.qg_stride)] {
            if v % self.record_every != 0 {
                return Err(bad(
                    key,
                    format!("must be a multiple of record_every = {}", self.record_every),
                ));
            }
        }
        if let Some(s) = self.ensemble_stride {
            if s == 0 || s % self.record_every != 0 {
                return Err(bad("ensemble_stride", "must be a positive multiple of record_every"));
            }
        }
        let spacing = self.response_horizon / (self.grid_points - 1) as f64 / self.dt;
        if (spacing - spacing.round()).abs() > 1e-6 || !(spacing.round() as usize).is_multiple_of(self.record_every) {
            return Err(bad(
                "grid_points",
                format!("grid spacing must be a whole multiple of record_every steps, got {spacing} steps"),
            ));
        }
        if let Some(c) = self.cutoff {
            if c.is_nan() || c < 0.0 {
                return Err(bad("cutoff", "must be non-negative"));
            }
        }
        if let Some(times) = &self.snapshot_times {
            if times.iter().any(|t| !(*t >= 0.0 && *t <= self.response_horizon)) {
                return Err(bad("snapshot_times", "times must lie in [0, response_horizon]"));
            }
        }
        if let Columns::Single(j) = self.ideal_columns {
            if j >= self.dim() {
                return Err(bad("ideal_columns", format!("column {j} out of range")));
            }
        }
        self.model().map(|_| ())
    }

    /// Snapshot times for `compare`: the explicit list, or those of 1, 2
    /// and 5 that fall inside the response horizon.
    pub fn snapshot_times(&self) -> Vec<f64> {
        match &self.snapshot_times {
            Some(t) => t.clone(),
            None => [1.0, 2.0, 5.0]
                .into_iter()
                .filter(|t| *t <= self.response_horizon)
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        match self.model {
            ModelKind::Sl96 | ModelKind::Inert => self.n,
            ModelKind::Ou | ModelKind::ScalarMultiplicative => 1,
        }
    }

    pub fn model(&self) -> Result<Box<dyn SdeModel<f64>>, ConfigError> {
        let model: Box<dyn SdeModel<f64>> = match self.model {
            ModelKind::Sl96 => {
                let noise = match self.noise {
                    NoiseKind::None => NoiseSpec::None,
                    NoiseKind::Additive => NoiseSpec::Additive(self.noise_coeff),
                    NoiseKind::Multiplicative => NoiseSpec::Multiplicative(self.noise_coeff),
                };
                Box::new(Lorenz96::new(self.n, self.forcing, noise).map_err(|e| bad("model", e))?)
            }
            ModelKind::Ou => {
                Box::new(OrnsteinUhlenbeck::new(self.gamma, self.sigma, self.beta).map_err(|e| bad("model", e))?)
            }
            ModelKind::ScalarMultiplicative => {
                Box::new(OrnsteinUhlenbeck::multiplicative(self.gamma, self.beta).map_err(|e| bad("model", e))?)
            }
            ModelKind::Inert => Box::new(Inert { n: self.n }),
        };
        Ok(model)
    }

    /// Starting state before burn-in.
    pub fn initial_state(&self) -> Vec<f64> {
        match self.model {
            // the uniform state is a fixed point; nudge one site off it
            ModelKind::Sl96 => (0..self.n)
                .map(|k| self.forcing + if k == 0 { 0.01 } else { 0.0 })
                .collect(),
            ModelKind::Ou => vec![0.0],
            // zero is absorbing under purely multiplicative noise
            ModelKind::ScalarMultiplicative => vec![1.0],
            ModelKind::Inert => vec![0.0; self.n],
        }
    }

    fn steps(&self, time: f64) -> usize {
        let raw = (time / self.dt).round() as usize;
        raw.div_ceil(self.record_every) * self.record_every
    }

    pub fn burn_in_steps(&self) -> usize {
        self.steps(self.burn_in)
    }

    pub fn averaging_steps(&self) -> usize {
        self.steps(self.averaging_time)
    }

    pub fn horizon_steps(&self) -> usize {
        self.steps(self.response_horizon)
    }

    /// Steps between ensemble initial states: the averaging window spread
    /// evenly over the members unless set explicitly.
    pub fn ensemble_stride_steps(&self) -> usize {
        self.ensemble_stride.unwrap_or_else(|| {
            let even = self.averaging_steps() / self.ensemble_size;
            (even / self.record_every).max(1) * self.record_every
        })
    }

    /// Canonical JSON form; key order is fixed, so equal configs hash equal.
    pub fn to_json(&self) -> Value {
        let columns = match self.ideal_columns {
            Columns::All => json!("all"),
            Columns::ShiftFill => json!("shift-fill"),
            Columns::Single(j) => json!(j),
        };
        json!({
            "model": format!("{:?}", self.model),
            "n": self.n,
            "forcing": self.forcing,
            "noise": format!("{:?}", self.noise),
            "noise_coeff": self.noise_coeff,
            "gamma": self.gamma,
            "sigma": self.sigma,
            "beta": self.beta,
            "dt": self.dt,
            "averaging_time": self.averaging_time,
            "ensemble_size": self.ensemble_size,
            "response_horizon": self.response_horizon,
            "grid_points": self.grid_points,
            "anchor_stride": self.anchor_stride,
            "qg_stride": self.qg_stride,
            "record_every": self.record_every,
            "burn_in": self.burn_in,
            "batches": self.batches,
            "alpha": self.alpha,
            "seed": self.seed,
            "cutoff": self.cutoff,
            "lyapunov_time": self.lyapunov_time,
            "lyapunov_renorm": self.lyapunov_renorm,
            "ensemble_stride": self.ensemble_stride_steps(),
            "pairing": format!("{:?}", self.pairing),
            "ideal_columns": columns,
            "intrinsic_error": self.intrinsic_error,
            "snapshot_times": self.snapshot_times(),
            "symmetrize": self.symmetrize,
        })
    }

    /// SHA-256 of the canonical form. The output directory is not part of it.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().to_string().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty_text() {
        assert_eq!(
            ExperimentConfig::parse("# nothing\n\n").unwrap(),
            ExperimentConfig::default()
        );
    }

    #[test]
    fn values_and_comments() {
        let c = ExperimentConfig::parse(
            "model = ou  # scalar\ngamma=2\nsigma = 0.5\nsnapshot_times = 0.5, 1\nideal_columns = 0\ncutoff = 1.5\n",
        )
        .unwrap();
        assert_eq!(c.model, ModelKind::Ou);
        assert_eq!(c.gamma, 2.0);
        assert_eq!(c.snapshot_times(), vec![0.5, 1.0]);
        assert_eq!(
            ExperimentConfig::parse("response_horizon = 2")
                .unwrap()
                .snapshot_times(),
            vec![1.0, 2.0]
        );
        assert_eq!(c.ideal_columns, Columns::Single(0));
        assert_eq!(c.cutoff, Some(1.5));
        assert_eq!(c.dim(), 1);
    }

    #[test]
    fn unknown_and_duplicate_keys_are_rejected() {
        let e = ExperimentConfig::parse("averaging_tme = 10\n").unwrap_err();
        assert!(e.0.contains("averaging_tme"), "{e}");
        let e = ExperimentConfig::parse("dt = 0.01\ndt = 0.02\n").unwrap_err();
        assert!(e.0.contains("more than once"), "{e}");
        assert!(ExperimentConfig::parse("just words\n").is_err());
    }

    #[test]
    fn invalid_values_name_the_key() {
        for (text, key) in [
            ("dt = -1", "dt"),
            ("grid_points = 1", "grid_points"),
            ("grid_points = 7", "grid_points"),
            ("anchor_stride = 15", "anchor_stride"),
            ("model = lorenz", "model"),
            ("seed = x", "seed"),
            ("ideal_columns = 40", "ideal_columns"),
            ("snapshot_times = 9", "snapshot_times"),
            ("model = ou\ngamma = 1\nbeta = 2", "model"),
        ] {
            let e = ExperimentConfig::parse(text).unwrap_err();
            assert!(e.0.contains(key), "{text}: {e}");
        }
    }

    #[test]
    fn step_counts_round_up_to_the_record_interval() {
        let c = ExperimentConfig::parse("burn_in = 0.0125\naveraging_time = 100\nensemble_size = 30").unwrap();
        assert_eq!(c.burn_in_steps(), 20);
        assert_eq!(c.averaging_steps(), 100_000);
        assert_eq!(c.ensemble_stride_steps(), 3330);
    }

    #[test]
    fn hash_tracks_content_only() {
        let a = ExperimentConfig::parse("seed = 1").unwrap();
        let mut b = a.clone();
        b.output_dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed = 2;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
