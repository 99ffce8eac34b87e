//! FDT response operators and their time integrals.
//!
//! Both estimators replace the average over the invariant measure with an
//! average over anchors `s` sampled along one long unperturbed trajectory:
//!
//! ```text
//! R_SST(t) = ⟨ DA(x(s+t)) T(s, t) B(x(s)) ⟩_s
//! R_qG(t)  = ⟨ (x(s+t) − x̄) [C⁻¹ (x(s) − x̄)]ᵀ ⟩_s
//! ```
//!
//! The integrated operator `𝓡(t) = ∫₀ᵗ R(τ) dτ` maps a constant forcing
//! switched on at `t = 0` to the change in the mean state.

use nalgebra::{Cholesky, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::sde::{SdeModel, Trajectory};
use crate::tangent::propagate_tangent_from;
use crate::{Error, Matrix, Result, Scalar};

/// Relative Tikhonov shift added to the covariance diagonal, times `tr(C)/N`.
pub const COVARIANCE_REGULARIZATION: f64 = 1e-10;
/// Covariances with a larger condition number after regularization are rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// Uniform grid of response times `0 = t_0 < … < t_{n−1} = t_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseGrid<S> {
    t_max: S,
    n_points: usize,
}

impl<S: Scalar> ResponseGrid<S> {
    pub fn new(t_max: S, n_points: usize) -> Result<Self> {
        if n_points < 2 {
            return Err(Error::Config(format!("grid needs at least 2 points, got {n_points}")));
        }
        if !(t_max > S::zero()) || !t_max.is_finite() {
            return Err(Error::Config(format!("response horizon must be positive, got {t_max}")));
        }
        Ok(Self { t_max, n_points })
    }

    /// Rebuilds a grid from explicit times, checking uniform spacing.
    pub fn from_times(times: &[S]) -> Result<Self> {
        if times.len() < 2 || times[0] != S::zero() {
            return Err(Error::Parse(
                "time column must start at 0 with at least two rows".into(),
            ));
        }
        let grid = Self::new(times[times.len() - 1], times.len())?;
        let tol = S::lit(1e-9) * grid.t_max;
        for (t, expected) in times.iter().zip(grid.times()) {
            if (*t - expected).abs() > tol {
                return Err(Error::Parse(format!("time column is not uniform near t = {t}")));
            }
        }
        Ok(grid)
    }

    pub fn t_max(&self) -> S {
        self.t_max
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn spacing(&self) -> S {
        self.t_max / S::from_count(self.n_points - 1)
    }

    pub fn time(&self, i: usize) -> S {
        if i + 1 == self.n_points {
            self.t_max
        } else {
            self.t_max * S::from_count(i) / S::from_count(self.n_points - 1)
        }
    }

    pub fn times(&self) -> Vec<S> {
        (0..self.n_points).map(|i| self.time(i)).collect()
    }

    /// Index of the grid point nearest `t`, if within half a spacing.
    pub fn index_of(&self, t: S) -> Option<usize> {
        let x = t / self.spacing();
        let i = x.round().to_f64_lossy();
        if !(i >= 0.0) || i as usize >= self.n_points || (x - S::lit(i)).abs() > S::lit(0.5 + 1e-9) {
            return None;
        }
        Some(i as usize)
    }

    /// Integrator steps per grid interval; the spacing must be a whole
    /// number of steps.
    pub fn steps_per_point(&self, dt: S) -> Result<usize> {
        let r = (self.spacing() / dt).round();
        let steps = r.to_f64_lossy();
        if !(steps >= 1.0) || (r * dt - self.spacing()).abs() > S::lit(1e-6) * self.spacing() {
            return Err(Error::Config(format!(
                "grid spacing {} is not a whole number of time steps {dt}",
                self.spacing()
            )));
        }
        Ok(steps as usize)
    }

    pub fn horizon_steps(&self, dt: S) -> Result<Vec<usize>> {
        let k = self.steps_per_point(dt)?;
        Ok((0..self.n_points).map(|i| i * k).collect())
    }

    pub fn matches(&self, other: &Self) -> bool {
        self.n_points == other.n_points && (self.t_max - other.t_max).abs() <= S::lit(1e-9) * self.t_max
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Sst,
    Qg,
    Blended,
    Ideal,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Sst => "sst",
            Algorithm::Qg => "qg",
            Algorithm::Blended => "blended",
            Algorithm::Ideal => "ideal",
        }
    }
}

/// How anchors are drawn from a trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sampling {
    /// Steps discarded after the trajectory start.
    pub burn_in_steps: usize,
    /// Steps between consecutive anchors.
    pub stride_steps: usize,
    pub max_anchors: Option<usize>,
    /// Contiguous anchor batches used for batch-means standard errors.
    pub batches: usize,
}

impl Sampling {
    pub fn new(burn_in_steps: usize, stride_steps: usize) -> Self {
        Self {
            burn_in_steps,
            stride_steps,
            max_anchors: None,
            batches: 20,
        }
    }

    pub fn with_batches(mut self, batches: usize) -> Self {
        self.batches = batches;
        self
    }

    pub fn with_max_anchors(mut self, n: usize) -> Self {
        self.max_anchors = Some(n);
        self
    }

    /// Anchor steps whose full horizon fits inside `traj`.
    pub fn anchors<S: Scalar>(&self, traj: &Trajectory<S>, horizon: usize) -> Result<Vec<u64>> {
        if self.stride_steps == 0 || !self.stride_steps.is_multiple_of(traj.record_every) {
            return Err(Error::Config(format!(
                "anchor stride {} must be a positive multiple of the record interval {}",
                self.stride_steps, traj.record_every
            )));
        }
        if self.batches == 0 {
            return Err(Error::Config("batch count must be positive".into()));
        }
        let first = traj.start_step + self.burn_in_steps as u64;
        traj.record_of(first)
            .map_err(|_| Error::Config(format!("burn-in step {first} is not a recorded state")))?;
        let last = traj.last_step();
        let mut anchors = Vec::new();
        let mut s = first;
        while s + horizon as u64 <= last && self.max_anchors.is_none_or(|m| anchors.len() < m) {
            anchors.push(s);
            s += self.stride_steps as u64;
        }
        Ok(anchors)
    }
}

/// Averaging bookkeeping carried into output metadata.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AveragingMeta {
    /// Time between the first and the last anchor.
    pub averaging_time: f64,
    pub n_samples: usize,
    pub stride_steps: usize,
    pub batches: usize,
}

/// `R(t_i)` on a response grid.
#[derive(Clone, Debug)]
pub struct ResponseOperatorSeries<S: Scalar> {
    pub grid: ResponseGrid<S>,
    pub algorithm: Algorithm,
    /// One matrix per grid point, or fewer when `truncated_at` is set.
    pub matrices: Vec<Matrix<S>>,
    /// Per-batch means with the same layout as `matrices`; may be empty.
    pub batch_means: Vec<Vec<Matrix<S>>>,
    pub meta: AveragingMeta,
    /// First grid index where the estimate became non-finite.
    pub truncated_at: Option<usize>,
}

impl<S: Scalar> ResponseOperatorSeries<S> {
    pub fn from_matrices(grid: ResponseGrid<S>, algorithm: Algorithm, matrices: Vec<Matrix<S>>) -> Result<Self> {
        if matrices.len() != grid.n_points() {
            return Err(Error::GridMismatch);
        }
        Ok(Self {
            grid,
            algorithm,
            matrices,
            batch_means: Vec::new(),
            meta: AveragingMeta::default(),
            truncated_at: None,
        })
    }

    pub fn valid_len(&self) -> usize {
        self.matrices.len()
    }
}

/// `𝓡(t_i) = ∫₀^{t_i} R(τ) dτ`.
#[derive(Clone, Debug)]
pub struct IntegratedResponse<S: Scalar> {
    pub grid: ResponseGrid<S>,
    pub algorithm: Algorithm,
    pub matrices: Vec<Matrix<S>>,
    /// Entrywise standard errors, when the estimator provides them.
    pub std_errors: Option<Vec<Matrix<S>>>,
}

impl<S: Scalar> IntegratedResponse<S> {
    pub fn at(&self, i: usize) -> &Matrix<S> {
        &self.matrices[i]
    }
}

/// Sample mean and unbiased covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct StatSummary<S: Scalar> {
    pub mean: Vec<S>,
    pub covariance: Matrix<S>,
    pub n_samples: usize,
}

/// Two-pass mean and covariance over `samples`.
pub fn stats_from_samples<'a, S: Scalar, I>(samples: I) -> Result<StatSummary<S>>
where
    I: IntoIterator<Item = &'a [S]>,
    I::IntoIter: Clone,
{
    let iter = samples.into_iter();
    let mut count = 0usize;
    let mut mean: Vec<S> = Vec::new();
    for x in iter.clone() {
        if mean.is_empty() {
            mean = vec![S::zero(); x.len()];
        }
        for (m, v) in mean.iter_mut().zip(x) {
            *m += *v;
        }
        count += 1;
    }
    if count < 2 {
        return Err(Error::InsufficientSamples { needed: 2, have: count });
    }
    let inv = S::one() / S::from_count(count);
    mean.iter_mut().for_each(|m| *m *= inv);
    let n = mean.len();
    let mut cov = Matrix::zeros(n, n);
    let mut d = vec![S::zero(); n];
    for x in iter {
        for k in 0..n {
            d[k] = x[k] - mean[k];
        }
        for j in 0..n {
            let dj = d[j];
            let col = &mut cov.as_mut_slice()[j * n..j * n + j + 1];
            for (c, di) in col.iter_mut().zip(&d) {
                *c += *di * dj;
            }
        }
    }
    let scale = S::one() / S::from_count(count - 1);
    for j in 0..n {
        for i in 0..=j {
            let v = cov[(i, j)] * scale;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(StatSummary {
        mean,
        covariance: cov,
        n_samples: count,
    })
}

/// Mean and covariance of the recorded states after `burn_in_steps`.
pub fn mean_and_covariance<S: Scalar>(traj: &Trajectory<S>, burn_in_steps: usize) -> Result<StatSummary<S>> {
    let skip = burn_in_steps.div_ceil(traj.record_every);
    stats_from_samples(traj.states().skip(skip))
}

/// Regularized solver for `C w = v`.
pub struct CovarianceSolver<S: Scalar> {
    chol: Cholesky<S, nalgebra::Dyn>,
    pub condition: S,
}

impl<S: Scalar> CovarianceSolver<S> {
    pub fn new(cov: &Matrix<S>) -> Result<Self> {
        let n = cov.nrows();
        let lambda = S::lit(COVARIANCE_REGULARIZATION) * cov.trace() / S::from_count(n);
        let mut reg = cov.clone();
        for i in 0..n {
            reg[(i, i)] += lambda;
        }
        let eig = SymmetricEigen::new(reg.clone());
        let max = eig.eigenvalues.iter().fold(S::zero(), |a, &b| a.max(b.abs()));
        let min = eig.eigenvalues.iter().fold(S::max_value().unwrap(), |a, &b| a.min(b));
        let condition = if min > S::zero() {
            max / min
        } else {
            S::max_value().unwrap()
        };
        let singular = |c: S| Error::SingularCovariance {
            condition: c.to_f64_lossy(),
        };
        if !(condition <= S::lit(MAX_CONDITION)) {
            return Err(singular(condition));
        }
        let chol = Cholesky::new(reg).ok_or_else(|| singular(condition))?;
        Ok(Self { chol, condition })
    }

    pub fn solve(&self, v: &[S]) -> Vec<S> {
        self.chol.solve(&DVector::from_column_slice(v)).as_slice().to_vec()
    }
}

/// Linear map of the state used for the observable derivative `DA` and
/// the forcing structure `B` of the SST operator.
#[derive(Clone, Copy)]
pub enum StateMap<'a, S> {
    Identity,
    Function(&'a (dyn Fn(&[S]) -> Matrix<S> + Sync)),
}

impl<S> std::fmt::Debug for StateMap<'_, S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StateMap::Identity => f.write_str("Identity"),
            StateMap::Function(_) => f.write_str("Function"),
        }
    }
}

struct BatchSums<S: Scalar> {
    sums: Vec<Matrix<S>>,
    count: usize,
    valid: usize,
}

fn split_batches(anchors: &[u64], batches: usize) -> Vec<&[u64]> {
    let b = batches.min(anchors.len()).max(1);
    (0..b)
        .map(|i| &anchors[i * anchors.len() / b..(i + 1) * anchors.len() / b])
        .collect()
}

/// Combines per-batch sums into the overall mean and per-batch means, in
/// batch order.
fn assemble<S: Scalar>(
    grid: &ResponseGrid<S>,
    algorithm: Algorithm,
    parts: Vec<BatchSums<S>>,
    meta: AveragingMeta,
) -> ResponseOperatorSeries<S> {
    let total: usize = parts.iter().map(|p| p.count).sum();
    let mut valid = parts.iter().map(|p| p.valid).min().unwrap_or(0);
    let mut matrices: Vec<Matrix<S>> = Vec::with_capacity(valid);
    for i in 0..valid {
        let mut acc = parts[0].sums[i].clone();
        for p in &parts[1..] {
            acc += &p.sums[i];
        }
        matrices.push(acc / S::from_count(total));
    }
    if let Some(bad) = matrices.iter().position(|m| !m.iter().all(|v| v.is_finite())) {
        valid = bad;
        matrices.truncate(bad);
    }
    let batch_means = if parts.len() >= 2 {
        parts
            .iter()
            .map(|p| p.sums[..valid].iter().map(|m| m / S::from_count(p.count)).collect())
            .collect()
    } else {
        Vec::new()
    };
    ResponseOperatorSeries {
        grid: grid.clone(),
        algorithm,
        truncated_at: (valid < grid.n_points()).then_some(valid),
        matrices,
        batch_means,
        meta,
    }
}

/// Stochastic short-time FDT operator.
///
/// `R(t_i)` is the anchor average of `DA(x(s+t_i)) T(s, t_i) B(x(s))`,
/// with `T` from [`crate::tangent::propagate_tangent`] on the same
/// trajectory and noise. If tangent maps stop being finite the series is
/// truncated and `truncated_at` records where.
pub fn sst_fdt_operator<S: Scalar, M: SdeModel<S> + ?Sized>(
    model: &M,
    traj: &Trajectory<S>,
    grid: &ResponseGrid<S>,
    sampling: &Sampling,
    observable: StateMap<'_, S>,
    forcing: StateMap<'_, S>,
) -> Result<ResponseOperatorSeries<S>> {
    let n = model.dim();
    let horizons = grid.horizon_steps(traj.dt)?;
    let anchors = sampling.anchors(traj, *horizons.last().unwrap())?;
    if anchors.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, have: 0 });
    }
    let batches = split_batches(&anchors, sampling.batches);
    let parts: Result<Vec<BatchSums<S>>> = batches
        .par_iter()
        .map(|batch| {
            let mut sums: Vec<Matrix<S>> = Vec::new();
            let mut valid = horizons.len();
            for &s in batch.iter() {
                let x_s = traj.state_at_step(s)?;
                let init = match forcing {
                    StateMap::Identity => Matrix::identity(n, n),
                    StateMap::Function(b) => b(x_s),
                };
                let sample = propagate_tangent_from(model, traj, s, &horizons[..valid], &init)?;
                valid = valid.min(sample.matrices.len());
                for (i, (t, x)) in sample.matrices.into_iter().zip(&sample.states).enumerate().take(valid) {
                    let r = match observable {
                        StateMap::Identity => t,
                        StateMap::Function(da) => da(x) * t,
                    };
                    if sums.len() <= i {
                        sums.push(r);
                    } else {
                        sums[i] += r;
                    }
                }
            }
            sums.truncate(valid);
            Ok(BatchSums {
                sums,
                count: batch.len(),
                valid,
            })
        })
        .collect();
    let meta = AveragingMeta {
        averaging_time: ((anchors.len() - 1) * sampling.stride_steps) as f64 * traj.dt.to_f64_lossy(),
        n_samples: anchors.len(),
        stride_steps: sampling.stride_steps,
        batches: batches.len(),
    };
    Ok(assemble(grid, Algorithm::Sst, parts?, meta))
}

/// Quasi-Gaussian FDT operator, centered on both sides:
/// the anchor average of `(x(s+t_i) − x̄) [C⁻¹ (x(s) − x̄)]ᵀ`.
pub fn qg_fdt_operator<S: Scalar>(
    traj: &Trajectory<S>,
    grid: &ResponseGrid<S>,
    stats: &StatSummary<S>,
    sampling: &Sampling,
) -> Result<ResponseOperatorSeries<S>> {
    let n = traj.dim();
    if stats.mean.len() != n {
        return Err(Error::Dimension {
            what: "statistics",
            expected: n,
            got: stats.mean.len(),
        });
    }
    let horizons = grid.horizon_steps(traj.dt)?;
    if horizons[1] % traj.record_every != 0 {
        return Err(Error::Config(format!(
            "grid spacing of {} steps is not a multiple of the record interval {}",
            horizons[1], traj.record_every
        )));
    }
    let solver = CovarianceSolver::new(&stats.covariance)?;
    let anchors = sampling.anchors(traj, *horizons.last().unwrap())?;
    if anchors.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, have: 0 });
    }
    let batches = split_batches(&anchors, sampling.batches);
    let mean = &stats.mean;
    let parts: Result<Vec<BatchSums<S>>> = batches
        .par_iter()
        .map(|batch| {
            let mut sums = vec![Matrix::zeros(n, n); horizons.len()];
            let mut d = vec![S::zero(); n];
            for &s in batch.iter() {
                let x_s = traj.state_at_step(s)?;
                let centered: Vec<S> = x_s.iter().zip(mean).map(|(a, b)| *a - *b).collect();
                let w = solver.solve(&centered);
                for (sum, h) in sums.iter_mut().zip(&horizons) {
                    let x = traj.state_at_step(s + *h as u64)?;
                    for k in 0..n {
                        d[k] = x[k] - mean[k];
                    }
                    // rank-one update sum += d wᵀ, column by column
                    for (j, wj) in w.iter().enumerate() {
                        for (c, dk) in sum.as_mut_slice()[j * n..(j + 1) * n].iter_mut().zip(&d) {
                            *c += *dk * *wj;
                        }
                    }
                }
            }
            Ok(BatchSums {
                sums,
                count: batch.len(),
                valid: horizons.len(),
            })
        })
        .collect();
    let meta = AveragingMeta {
        averaging_time: ((anchors.len() - 1) * sampling.stride_steps) as f64 * traj.dt.to_f64_lossy(),
        n_samples: anchors.len(),
        stride_steps: sampling.stride_steps,
        batches: batches.len(),
    };
    Ok(assemble(grid, Algorithm::Qg, parts?, meta))
}

/// Heaviside blend: SST for `t_i < t_cutoff`, qG for `t_i ≥ t_cutoff`.
pub fn blended_operator<S: Scalar>(
    sst: &ResponseOperatorSeries<S>,
    qg: &ResponseOperatorSeries<S>,
    t_cutoff: S,
) -> Result<ResponseOperatorSeries<S>> {
    if !sst.grid.matches(&qg.grid) {
        return Err(Error::GridMismatch);
    }
    let grid = &sst.grid;
    let switch = (0..grid.n_points())
        .find(|&i| grid.time(i) >= t_cutoff)
        .unwrap_or(grid.n_points());
    if sst.valid_len() < switch {
        return Err(Error::NonFiniteResponse {
            from: grid.time(sst.valid_len()).to_f64_lossy(),
            cutoff: t_cutoff.to_f64_lossy(),
        });
    }
    let pick = |a: &[Matrix<S>], b: &[Matrix<S>]| -> Vec<Matrix<S>> {
        a[..switch].iter().chain(&b[switch.min(b.len())..]).cloned().collect()
    };
    let matrices = pick(&sst.matrices, &qg.matrices);
    let batch_means = if sst.batch_means.len() == qg.batch_means.len() && !sst.batch_means.is_empty() {
        sst.batch_means
            .iter()
            .zip(&qg.batch_means)
            .map(|(a, b)| pick(a, b))
            .collect()
    } else {
        Vec::new()
    };
    let valid = matrices.len();
    Ok(ResponseOperatorSeries {
        grid: grid.clone(),
        algorithm: Algorithm::Blended,
        matrices,
        batch_means,
        meta: sst.meta.clone(),
        truncated_at: (valid < grid.n_points()).then_some(valid),
    })
}

/// Cumulative trapezoidal integral with `𝓡(0) = 0`.
pub fn cumulative_trapezoid<S: Scalar>(spacing: S, series: &[Matrix<S>]) -> Vec<Matrix<S>> {
    let Some(first) = series.first() else {
        return Vec::new();
    };
    let half = spacing / S::lit(2.0);
    let mut out = Vec::with_capacity(series.len());
    out.push(Matrix::zeros(first.nrows(), first.ncols()));
    for w in series.windows(2) {
        let next = out.last().unwrap() + (&w[0] + &w[1]) * half;
        out.push(next);
    }
    out
}

/// Integrates an operator series. Standard errors come from the spread of
/// the integrated batch means.
pub fn integrate_operator<S: Scalar>(series: &ResponseOperatorSeries<S>) -> IntegratedResponse<S> {
    let h = series.grid.spacing();
    let matrices = cumulative_trapezoid(h, &series.matrices);
    let std_errors = (series.batch_means.len() >= 2).then(|| {
        let integrated: Vec<Vec<Matrix<S>>> = series.batch_means.iter().map(|b| cumulative_trapezoid(h, b)).collect();
        let b = S::from_count(integrated.len());
        (0..matrices.len())
            .map(|i| {
                let mean = integrated
                    .iter()
                    .fold(Matrix::zeros(matrices[i].nrows(), matrices[i].ncols()), |acc, m| {
                        acc + &m[i]
                    })
                    / b;
                let var = integrated
                    .iter()
                    .fold(Matrix::zeros(mean.nrows(), mean.ncols()), |acc, m| {
                        let d = &m[i] - &mean;
                        acc + d.component_mul(&d)
                    })
                    / (b - S::one());
                var.map(|v| (v / b).sqrt())
            })
            .collect()
    });
    IntegratedResponse {
        grid: series.grid.clone(),
        algorithm: series.algorithm,
        matrices,
        std_errors,
    }
}
