//! Tangent map (integrating factor) of the stochastic flow.
//!
//! `T(s, t)` solves `dT = (Df dt + Σ_k ∇σ_k dW_k) T`, `T(s, 0) = I`, along
//! the trajectory through `x(s)` and driven by that trajectory's own Wiener
//! increments. It is discretized with the same forward Euler step as the
//! state, so it is exactly the derivative of the discrete flow map.

use crate::sde::{EulerWorkspace, SdeModel, Trajectory};
use crate::{Error, Matrix, Result, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct TangentMatrix<S: Scalar> {
    pub entries: Matrix<S>,
    pub origin_time: S,
    pub elapsed: S,
}

impl<S: Scalar> TangentMatrix<S> {
    pub fn identity(n: usize, origin_time: S) -> Self {
        Self {
            entries: Matrix::identity(n, n),
            origin_time,
            elapsed: S::zero(),
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }
}

/// One Euler–Maruyama step of the tangent equation at state `x`, using the
/// same increment `dw` that advances `x`.
pub fn tangent_step<S: Scalar, M: SdeModel<S> + ?Sized>(
    model: &M,
    x: &[S],
    tangent: &TangentMatrix<S>,
    t: S,
    dt: S,
    dw: &[S],
) -> Result<TangentMatrix<S>> {
    let n = model.dim();
    if x.len() != n || tangent.entries.nrows() != n {
        return Err(Error::Dimension {
            what: "tangent state",
            expected: n,
            got: if x.len() != n { x.len() } else { tangent.entries.nrows() },
        });
    }
    if dw.len() != model.noise_dim() {
        return Err(Error::Dimension {
            what: "Wiener increment",
            expected: model.noise_dim(),
            got: dw.len(),
        });
    }
    let mut next = tangent.clone();
    let cols = next.entries.ncols();
    model.tangent_step_block(x, t, dt, dw, next.entries.as_mut_slice(), cols);
    next.elapsed += dt;
    Ok(next)
}

/// Tangent maps from one anchor at a set of horizons.
#[derive(Clone, Debug)]
pub struct TangentSample<S: Scalar> {
    pub anchor_step: u64,
    /// Horizons in steps after the anchor, ascending.
    pub horizon_steps: Vec<usize>,
    /// `T(anchor, horizon_steps[i])`; shorter than `horizon_steps` if the
    /// map stopped being finite.
    pub matrices: Vec<Matrix<S>>,
    /// States `x(anchor + horizon_steps[i])` re-integrated alongside `T`.
    pub states: Vec<Vec<S>>,
    /// Index of the first horizon at which `T` was non-finite.
    pub first_nonfinite: Option<usize>,
}

/// Propagates `T(anchor, ·)` from the identity along `traj`.
///
/// The state is re-integrated from the recorded anchor state with the
/// trajectory's increments, which reproduces the stored trajectory exactly,
/// so only the anchor has to be recorded.
pub fn propagate_tangent<S: Scalar, M: SdeModel<S> + ?Sized>(
    model: &M,
    traj: &Trajectory<S>,
    anchor_step: u64,
    horizon_steps: &[usize],
) -> Result<TangentSample<S>> {
    let n = model.dim();
    propagate_tangent_from(model, traj, anchor_step, horizon_steps, &Matrix::identity(n, n))
}

/// Like [`propagate_tangent`] but starting from an arbitrary `N × m` block.
/// By linearity the result equals `T(anchor, t) · initial`.
pub fn propagate_tangent_from<S: Scalar, M: SdeModel<S> + ?Sized>(
    model: &M,
    traj: &Trajectory<S>,
    anchor_step: u64,
    horizon_steps: &[usize],
    initial: &Matrix<S>,
) -> Result<TangentSample<S>> {
    let n = model.dim();
    if traj.dim() != n || initial.nrows() != n {
        return Err(Error::Dimension {
            what: "tangent propagation",
            expected: n,
            got: if traj.dim() != n { traj.dim() } else { initial.nrows() },
        });
    }
    if horizon_steps.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config("horizons must be ascending".into()));
    }
    let max_h = horizon_steps.last().copied().unwrap_or(0);
    if anchor_step + max_h as u64 > traj.last_step() {
        return Err(Error::HorizonExceeded {
            needed: anchor_step + max_h as u64,
            last: traj.last_step(),
        });
    }
    let mut x = traj.state_at_step(anchor_step)?.to_vec();
    let mut block = initial.clone();
    let ncols = block.ncols();
    let dt = traj.dt;

    let mut reader = traj.stream.reader(n);
    let mut z = vec![0.0; n];
    let mut dw = vec![S::zero(); n];
    let mut ws = EulerWorkspace::new(n);

    let mut sample = TangentSample {
        anchor_step,
        horizon_steps: horizon_steps.to_vec(),
        matrices: Vec::with_capacity(horizon_steps.len()),
        states: Vec::with_capacity(horizon_steps.len()),
        first_nonfinite: None,
    };
    let mut next = 0;
    let mut h = 0usize;
    loop {
        while next < horizon_steps.len() && horizon_steps[next] == h {
            if !block.iter().all(|v| v.is_finite()) {
                sample.first_nonfinite = Some(next);
                return Ok(sample);
            }
            sample.matrices.push(block.clone());
            sample.states.push(x.clone());
            next += 1;
        }
        if next == horizon_steps.len() {
            return Ok(sample);
        }
        let step = anchor_step + h as u64;
        let t = traj.time_of_step(step);
        reader.fill_increment(step, dt, &mut z, &mut dw);
        model.tangent_step_block(&x, t, dt, &dw, block.as_mut_slice(), ncols);
        if !ws.step_in_place(model, &mut x, t, dt, &dw, None) {
            return Err(Error::Divergence { step });
        }
        h += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Lorenz96, NoiseSpec, OrnsteinUhlenbeck};
    use crate::sde::{simulate, simulate_recorded, IntegratorConfig, NoiseStream};

    fn l96_traj(noise: NoiseSpec<f64>, steps: usize) -> (Lorenz96<f64>, Trajectory<f64>) {
        let m = Lorenz96::new(40, 6.0, noise).unwrap();
        let mut x0 = vec![6.0; 40];
        x0[0] += 0.5;
        let cfg = IntegratorConfig::new(0.001).unwrap();
        let spin = simulate_recorded(&m, &x0, 0.0, 0, 10_000, 10_000, &cfg, NoiseStream::new(99, 7)).unwrap();
        let start = spin.state(1).to_vec();
        let t = simulate(&m, &start, 0.0, steps, &cfg, NoiseStream::new(5, 0)).unwrap();
        (m, t)
    }

    #[test]
    fn step_identities() {
        let ou = OrnsteinUhlenbeck::new(1.0, 1.0, 0.0).unwrap();
        let t = TangentMatrix::identity(1, 0.0);
        let next = tangent_step(&ou, &[0.3], &t, 0.0, 0.001, &[0.05]).unwrap();
        assert_eq!(next.entries[(0, 0)], 1.0 - 0.001);

        let mult = OrnsteinUhlenbeck::multiplicative(1.0, 0.5).unwrap();
        let mut t2 = TangentMatrix::identity(1, 0.0);
        t2.entries[(0, 0)] = 2.0;
        let next = tangent_step(&mult, &[0.3], &t2, 0.0, 0.001, &[0.05]).unwrap();
        assert_eq!(next.entries[(0, 0)], 2.0 + (-0.001 + 0.5 * 0.05) * 2.0);

        let inert = crate::models::Inert { n: 3 };
        let t3 = TangentMatrix::identity(3, 0.0);
        let next = tangent_step(&inert, &[1.0, 2.0, 3.0], &t3, 0.0, 0.1, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(next.entries, t3.entries);
        assert!(tangent_step(&inert, &[1.0, 2.0], &t3, 0.0, 0.1, &[0.1, 0.2, 0.3]).is_err());
    }

    #[test]
    fn zero_horizon_is_identity() {
        let (m, traj) = l96_traj(NoiseSpec::Additive(1.0), 100);
        let s = propagate_tangent(&m, &traj, 10, &[0]).unwrap();
        assert_eq!(s.matrices.len(), 1);
        assert_eq!(s.matrices[0], Matrix::identity(40, 40));
    }

    #[test]
    fn reintegrated_states_match_trajectory_bitwise() {
        let (m, traj) = l96_traj(NoiseSpec::Multiplicative(0.5), 600);
        let s = propagate_tangent(&m, &traj, 100, &[0, 1, 250, 500]).unwrap();
        for (h, x) in s.horizon_steps.iter().zip(&s.states) {
            assert_eq!(x.as_slice(), traj.state_at_step(100 + *h as u64).unwrap());
        }
    }

    #[test]
    fn horizon_past_end_is_an_error() {
        let (m, traj) = l96_traj(NoiseSpec::None, 100);
        assert!(matches!(
            propagate_tangent(&m, &traj, 50, &[0, 60]),
            Err(Error::HorizonExceeded { .. })
        ));
    }

    #[test]
    fn cocycle_on_step_boundaries() {
        let (m, traj) = l96_traj(NoiseSpec::Multiplicative(0.2), 1200);
        let (s, tau, t) = (100u64, 300usize, 1000usize);
        let full = propagate_tangent(&m, &traj, s, &[t]).unwrap();
        let first = propagate_tangent(&m, &traj, s, &[tau]).unwrap();
        let second = propagate_tangent(&m, &traj, s + tau as u64, &[t - tau]).unwrap();
        let composed = &second.matrices[0] * &first.matrices[0];
        let diff = (&full.matrices[0] - composed).amax();
        assert!(diff <= 1e-12, "cocycle defect {diff}");
    }

    #[test]
    fn linearity_in_initial_block() {
        let (m, traj) = l96_traj(NoiseSpec::Additive(1.0), 800);
        let init = Matrix::from_fn(40, 3, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let a = propagate_tangent_from(&m, &traj, 0, &[700], &init).unwrap();
        let b = propagate_tangent(&m, &traj, 0, &[700]).unwrap();
        let expected = &b.matrices[0] * &init;
        assert!((&a.matrices[0] - &expected).amax() <= 1e-10 * expected.amax());
    }

    /// Divided difference of the discrete flow with shared noise.
    fn fd_apply(m: &Lorenz96<f64>, traj: &Trajectory<f64>, anchor: u64, steps: usize, v: &[f64], eps: f64) -> Vec<f64> {
        let x = traj.state_at_step(anchor).unwrap();
        let cfg = IntegratorConfig::new(traj.dt).unwrap();
        let run = |sign: f64| {
            let x0: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + sign * eps * b).collect();
            let t = simulate_recorded(m, &x0, 0.0, anchor, steps, steps, &cfg, traj.stream).unwrap();
            t.state(1).to_vec()
        };
        let (p, q) = (run(1.0), run(-1.0));
        p.iter().zip(&q).map(|(a, b)| (a - b) / (2.0 * eps)).collect()
    }

    #[test]
    fn tangent_matches_divided_differences() {
        let (m, traj) = l96_traj(NoiseSpec::Multiplicative(0.2), 2000);
        let v: Vec<f64> = (0..40).map(|k| ((k * 13) % 7) as f64 - 3.0).collect();
        let s = propagate_tangent(&m, &traj, 700, &[500]).unwrap();
        let tv = &s.matrices[0] * nalgebra::DVector::from_column_slice(&v);
        let fd = fd_apply(&m, &traj, 700, 500, &v, 1e-6);
        let fd = nalgebra::DVector::from_vec(fd);
        let rel = (&tv - &fd).norm() / fd.norm();
        assert!(rel <= 1e-4, "relative error {rel}");
    }

    #[test]
    fn deterministic_limit_matches_noise_free_differences() {
        let (m, traj) = l96_traj(NoiseSpec::None, 1500);
        let v: Vec<f64> = (0..40).map(|k| (k % 5) as f64 - 2.0).collect();
        let s = propagate_tangent(&m, &traj, 200, &[1000]).unwrap();
        let tv = &s.matrices[0] * nalgebra::DVector::from_column_slice(&v);
        let fd = nalgebra::DVector::from_vec(fd_apply(&m, &traj, 200, 1000, &v, 1e-6));
        assert!((&tv - &fd).norm() / fd.norm() <= 1e-4);
    }
}
