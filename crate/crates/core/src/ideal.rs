//! Ideal response by direct perturbation of a statistical ensemble.
//!
//! Every member starts from a state drawn off a long unperturbed
//! trajectory and is integrated twice per forced direction `e_j`, with drift
//! `f(x) ± α e_j`. Column `j` of the estimate is
//!
//! ```text
//! 𝓡_ideal(t) e_j = (⟨x(t)⟩_{+α e_j} − ⟨x(t)⟩_{−α e_j}) / (2α)
//! ```
//!
//! Central differencing cancels the quadratic term in `α`; comparing the
//! estimates at `α` and `α/2` measures what is left of the nonlinearity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::l2_relative_error;
use crate::response::{Algorithm, IntegratedResponse, ResponseGrid};
use crate::sde::{EulerWorkspace, SdeModel, Trajectory};
use crate::{Error, Matrix, Result, Scalar};

/// Stream ids for ensemble members start here, clear of trajectory streams.
pub const ENSEMBLE_STREAM_BASE: u64 = 1 << 40;

/// Members per work unit. Fixed so the reduction order never depends on
/// the number of worker threads.
const CHUNK: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pairing {
    /// `+α`, `−α` and every column of a member share one Wiener path.
    CommonNoise,
    /// Every perturbed run gets its own Wiener path.
    IndependentNoise,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Columns {
    /// Perturb every basis direction.
    All,
    /// Perturb one direction; the other columns are left zero.
    Single(usize),
    /// Perturb `e_0` and fill column `j` by cyclically shifting column 0.
    /// Only meaningful for shift-equivariant models such as Lorenz 96.
    ShiftFill,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec<S> {
    /// Number of members `M`.
    pub size: usize,
    /// Steps after the source trajectory start before the first draw.
    pub burn_in_steps: usize,
    /// Steps between consecutive initial states on the source trajectory.
    pub draw_stride_steps: usize,
    pub alpha: S,
    pub pairing: Pairing,
    pub columns: Columns,
    /// Global index of the first member. Member `m` draws its noise from
    /// index `first_member + m`, so specs with disjoint index ranges are
    /// statistically independent.
    #[serde(default)]
    pub first_member: usize,
}

impl<S: Scalar> EnsembleSpec<S> {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.size < 2 {
            return Err(Error::Config(format!(
                "ensemble needs at least 2 members, got {}",
                self.size
            )));
        }
        if !(self.alpha > S::zero()) || !self.alpha.is_finite() {
            return Err(Error::Config(format!(
                "perturbation amplitude must be positive, got {}",
                self.alpha
            )));
        }
        if self.draw_stride_steps == 0 {
            return Err(Error::Config("ensemble draw stride must be positive".into()));
        }
        if let Columns::Single(j) = self.columns {
            if j >= dim {
                return Err(Error::Config(format!(
                    "perturbed direction {j} out of range for dimension {dim}"
                )));
            }
        }
        Ok(())
    }

    /// Source steps of the member initial states.
    pub fn draw_steps<S2: Scalar>(&self, source: &Trajectory<S2>) -> Result<Vec<u64>> {
        let steps: Vec<u64> = (0..self.size)
            .map(|m| source.start_step + (self.burn_in_steps + m * self.draw_stride_steps) as u64)
            .collect();
        for s in [steps[0], steps[steps.len() - 1]] {
            source.record_of(s).map_err(|_| {
                Error::Config(format!(
                    "ensemble draw at step {s} is not a recorded state of the source trajectory (last {})",
                    source.last_step()
                ))
            })?;
        }
        if !self.draw_stride_steps.is_multiple_of(source.record_every) {
            return Err(Error::Config(
                "ensemble draw stride must be a multiple of the record interval".into(),
            ));
        }
        Ok(steps)
    }
}

#[derive(Clone, Debug)]
pub struct IdealEstimate<S: Scalar> {
    pub response: IntegratedResponse<S>,
    /// Members dropped because a perturbed run diverged.
    pub dropped: usize,
}

#[derive(Clone, Debug)]
pub struct IntrinsicError<S: Scalar> {
    /// Estimate at amplitude `α`.
    pub full: IntegratedResponse<S>,
    /// Estimate at amplitude `α/2`, same members and noise.
    pub half: IntegratedResponse<S>,
    /// `‖𝓡_{α/2} − 𝓡_α‖ / ‖𝓡_α‖` per grid time.
    pub series: Vec<S>,
    pub dropped: usize,
}

/// Running mean and sum of squared deviations, entrywise.
#[derive(Clone)]
struct Moments<S: Scalar> {
    count: usize,
    mean: Vec<Matrix<S>>,
    m2: Vec<Matrix<S>>,
}

impl<S: Scalar> Moments<S> {
    fn new(points: usize, rows: usize, cols: usize) -> Self {
        Self {
            count: 0,
            mean: vec![Matrix::zeros(rows, cols); points],
            m2: vec![Matrix::zeros(rows, cols); points],
        }
    }

    fn push(&mut self, sample: &[Matrix<S>]) {
        self.count += 1;
        let c = S::from_count(self.count);
        for ((mean, m2), x) in self.mean.iter_mut().zip(&mut self.m2).zip(sample) {
            let delta = x - &*mean;
            *mean += &delta / c;
            let delta2 = x - &*mean;
            *m2 += delta.component_mul(&delta2);
        }
    }

    /// Chan et al. pairwise combination.
    fn merge(&mut self, other: &Self) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (S::from_count(self.count), S::from_count(other.count));
        let n = na + nb;
        for i in 0..self.mean.len() {
            let delta = &other.mean[i] - &self.mean[i];
            self.mean[i] += &delta * (nb / n);
            self.m2[i] += &other.m2[i] + delta.component_mul(&delta) * (na * nb / n);
        }
        self.count += other.count;
    }

    fn std_errors(&self) -> Vec<Matrix<S>> {
        let n = S::from_count(self.count);
        self.m2
            .iter()
            .map(|m2| m2.map(|v| (v / (n - S::one()) / n).max(S::zero()).sqrt()))
            .collect()
    }
}

struct ChunkResult<S: Scalar> {
    per_amplitude: Vec<Moments<S>>,
    dropped: usize,
}

fn column_list(columns: Columns, n: usize) -> Vec<usize> {
    match columns {
        Columns::All => (0..n).collect(),
        Columns::Single(j) => vec![j],
        Columns::ShiftFill => vec![0],
    }
}

/// Runs one member for every amplitude, forced direction and sign in
/// lockstep. Returns `None` if any run diverged.
#[allow(clippy::too_many_arguments)]
fn run_member<S: Scalar, M: SdeModel<S> + ?Sized>(
    model: &M,
    source: &Trajectory<S>,
    x0: &[S],
    member: usize,
    spec: &EnsembleSpec<S>,
    amplitudes: &[S],
    cols: &[usize],
    horizons: &[usize],
) -> Option<Vec<Vec<Matrix<S>>>> {
    let n = model.dim();
    let dt = source.dt;
    // run r = ((a * ncols) + c) * 2 + sign
    let runs = amplitudes.len() * cols.len() * 2;
    let mut states: Vec<Vec<S>> = vec![x0.to_vec(); runs];
    let forcing: Vec<(usize, S)> = (0..runs)
        .map(|r| {
            let a = amplitudes[r / (2 * cols.len())];
            let c = cols[(r / 2) % cols.len()];
            (c, if r % 2 == 0 { a } else { -a })
        })
        .collect();
    let id = (spec.first_member + member) as u64;
    let stream_of = |r: usize| match spec.pairing {
        Pairing::CommonNoise => source.stream.with_id(ENSEMBLE_STREAM_BASE + id),
        Pairing::IndependentNoise => source
            .stream
            .with_id(ENSEMBLE_STREAM_BASE + id * runs as u64 + r as u64),
    };
    let mut readers: Vec<_> = match spec.pairing {
        Pairing::CommonNoise => vec![stream_of(0).reader(n)],
        Pairing::IndependentNoise => (0..runs).map(|r| stream_of(r).reader(n)).collect(),
    };
    let mut z = vec![0.0; n];
    let mut dws = vec![vec![S::zero(); n]; readers.len()];
    let mut ws = EulerWorkspace::new(n);

    let ncols = cols.len();
    let mut out: Vec<Vec<Matrix<S>>> = vec![Vec::with_capacity(horizons.len()); amplitudes.len()];
    let record = |states: &[Vec<S>], out: &mut Vec<Vec<Matrix<S>>>| {
        for (ai, a) in amplitudes.iter().enumerate() {
            let inv = S::one() / (S::lit(2.0) * *a);
            let mut m = Matrix::zeros(n, ncols);
            for c in 0..ncols {
                let base = (ai * ncols + c) * 2;
                let (p, q) = (&states[base], &states[base + 1]);
                for k in 0..n {
                    m[(k, c)] = (p[k] - q[k]) * inv;
                }
            }
            out[ai].push(m);
        }
    };
    let mut next = 0;
    let mut h = 0usize;
    loop {
        while next < horizons.len() && horizons[next] == h {
            record(&states, &mut out);
            next += 1;
        }
        if next == horizons.len() {
            return Some(out);
        }
        let step = h as u64;
        let t = S::lit(h as f64) * dt;
        for (reader, dw) in readers.iter_mut().zip(dws.iter_mut()) {
            reader.fill_increment(step, dt, &mut z, dw);
        }
        for (r, x) in states.iter_mut().enumerate() {
            let dw = &dws[if readers.len() == 1 { 0 } else { r }];
            if !ws.step_in_place(model, x, t, dt, dw, Some(forcing[r])) {
                return None;
            }
        }
        h += 1;
    }
}

fn ensemble<S: Scalar, M: SdeModel<S> + ?Sized>(
    model: &M,
    source: &Trajectory<S>,
    spec: &EnsembleSpec<S>,
    grid: &ResponseGrid<S>,
    amplitudes: &[S],
) -> Result<(Vec<IntegratedResponse<S>>, usize)> {
    let n = model.dim();
    spec.validate(n)?;
    if source.dim() != n {
        return Err(Error::Dimension {
            what: "source trajectory",
            expected: n,
            got: source.dim(),
        });
    }
    let horizons = grid.horizon_steps(source.dt)?;
    let draws = spec.draw_steps(source)?;
    let cols = column_list(spec.columns, n);
    let chunks: Vec<usize> = (0..spec.size.div_ceil(CHUNK)).collect();
    let results: Vec<Result<ChunkResult<S>>> = chunks
        .par_iter()
        .map(|&c| {
            let mut res = ChunkResult {
                per_amplitude: vec![Moments::new(horizons.len(), n, cols.len()); amplitudes.len()],
                dropped: 0,
            };
            let members = c * CHUNK..((c + 1) * CHUNK).min(spec.size);
            for (m, &draw) in members.clone().zip(&draws[members]) {
                let x0 = source.state_at_step(draw)?;
                match run_member(model, source, x0, m, spec, amplitudes, &cols, &horizons) {
                    Some(samples) => {
                        for (mom, s) in res.per_amplitude.iter_mut().zip(&samples) {
                            mom.push(s);
                        }
                    }
                    None => res.dropped += 1,
                }
            }
            Ok(res)
        })
        .collect();
    let mut total = vec![Moments::new(horizons.len(), n, cols.len()); amplitudes.len()];
    let mut dropped = 0;
    for r in results {
        let r = r?;
        dropped += r.dropped;
        for (t, part) in total.iter_mut().zip(&r.per_amplitude) {
            t.merge(part);
        }
    }
    if dropped * 100 > spec.size || total[0].count < 2 {
        return Err(Error::EnsembleDivergence {
            dropped,
            total: spec.size,
        });
    }
    let responses = total
        .iter()
        .map(|mom| {
            let se = mom.std_errors();
            let (matrices, std_errors) = match spec.columns {
                Columns::All => (mom.mean.clone(), se),
                Columns::Single(j) => (embed_column(&mom.mean, j, n), embed_column(&se, j, n)),
                Columns::ShiftFill => (shift_fill(&mom.mean), shift_fill(&se)),
            };
            IntegratedResponse {
                grid: grid.clone(),
                algorithm: Algorithm::Ideal,
                matrices,
                std_errors: Some(std_errors),
            }
        })
        .collect();
    Ok((responses, dropped))
}

fn embed_column<S: Scalar>(cols: &[Matrix<S>], j: usize, n: usize) -> Vec<Matrix<S>> {
    cols.iter()
        .map(|c| {
            let mut m = Matrix::zeros(n, n);
            m.set_column(j, &c.column(0));
            m
        })
        .collect()
}

/// `M[k, j] = c[(k − j) mod N]` from a single column `c`.
fn shift_fill<S: Scalar>(cols: &[Matrix<S>]) -> Vec<Matrix<S>> {
    cols.iter()
        .map(|c| {
            let n = c.nrows();
            Matrix::from_fn(n, n, |k, j| c[((k + n - j) % n, 0)])
        })
        .collect()
}

/// Ideal integrated response `𝓡_ideal(t)` on `grid`, with entrywise
/// ensemble standard errors. Initial states are drawn from `source`, whose
/// `dt` and seed the ensemble reuses.
pub fn ideal_response<S: Scalar, M: SdeModel<S> + ?Sized>(
    model: &M,
    source: &Trajectory<S>,
    spec: &EnsembleSpec<S>,
    grid: &ResponseGrid<S>,
) -> Result<IdealEstimate<S>> {
    let (mut r, dropped) = ensemble(model, source, spec, grid, &[spec.alpha])?;
    Ok(IdealEstimate {
        response: r.remove(0),
        dropped,
    })
}

/// Ideal response at `α` and `α/2` from the same members and noise, and
/// their relative discrepancy.
pub fn intrinsic_error<S: Scalar, M: SdeModel<S> + ?Sized>(
    model: &M,
    source: &Trajectory<S>,
    spec: &EnsembleSpec<S>,
    grid: &ResponseGrid<S>,
) -> Result<IntrinsicError<S>> {
    let half = spec.alpha / S::lit(2.0);
    let (mut r, dropped) = ensemble(model, source, spec, grid, &[spec.alpha, half])?;
    let half = r.pop().unwrap();
    let full = r.pop().unwrap();
    let series = l2_relative_error(&half, &full)?;
    Ok(IntrinsicError {
        full,
        half,
        series,
        dropped,
    })
}
