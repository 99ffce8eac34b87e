//! Largest Lyapunov exponent by Benettin renormalization, and the blending
//! cutoff derived from it.

use serde::{Deserialize, Serialize};

use crate::sde::{EulerWorkspace, IntegratorConfig, NoiseStream, SdeModel};
use crate::{Error, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovConfig<S> {
    pub total_time: S,
    /// Steps between renormalizations of the tangent vector.
    pub renorm_interval: usize,
    /// Renormalizations between recorded running estimates.
    pub history_every: usize,
}

impl<S: Scalar> LyapunovConfig<S> {
    pub fn new(total_time: S) -> Self {
        Self {
            total_time,
            renorm_interval: 10,
            history_every: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate<S> {
    pub lambda1: S,
    pub renorm_interval: usize,
    pub total_time: S,
    /// `(time, running estimate)` pairs.
    pub convergence_history: Vec<(S, S)>,
}

/// Pathwise largest Lyapunov exponent of the noisy tangent flow.
///
/// A tangent vector is advanced with the same Euler step and increments as
/// the state (global steps `start_step..`), renormalized every
/// `renorm_interval` steps, and `λ₁` is the mean log growth rate.
pub fn largest_lyapunov<S: Scalar, M: SdeModel<S> + ?Sized>(
    model: &M,
    x0: &[S],
    integrator: &IntegratorConfig<S>,
    stream: NoiseStream,
    start_step: u64,
    cfg: &LyapunovConfig<S>,
) -> Result<LyapunovEstimate<S>> {
    let n = model.dim();
    if x0.len() != n {
        return Err(Error::Dimension {
            what: "initial state",
            expected: n,
            got: x0.len(),
        });
    }
    if cfg.renorm_interval == 0 || cfg.history_every == 0 {
        return Err(Error::Config(
            "renormalization and history intervals must be positive".into(),
        ));
    }
    let dt = integrator.dt;
    let total_steps = (cfg.total_time / dt).round().to_f64_lossy();
    if !(total_steps >= 1.0) {
        return Err(Error::Config(format!(
            "total time {} is shorter than one step",
            cfg.total_time
        )));
    }
    let total_steps = total_steps as u64;

    // Fixed pseudo-random start direction, independent of the state noise.
    let mut v = vec![0.0; n];
    NoiseStream::new(stream.master_seed, !stream.stream_id)
        .reader(n)
        .fill_standard(0, &mut v);
    let norm0 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let mut v: Vec<S> = v.iter().map(|a| S::lit(a / norm0)).collect();

    let mut x = x0.to_vec();
    let mut reader = stream.reader(n);
    let mut z = vec![0.0; n];
    let mut dw = vec![S::zero(); n];
    let mut ws = EulerWorkspace::new(n);
    let mut log_sum = S::zero();
    let mut renorms = 0usize;
    let mut history = Vec::new();

    for i in 0..total_steps {
        let step = start_step + i;
        let t = S::lit(i as f64) * dt;
        reader.fill_increment(step, dt, &mut z, &mut dw);
        model.tangent_step_block(&x, t, dt, &dw, &mut v, 1);
        if !ws.step_in_place(model, &mut x, t, dt, &dw, None) {
            return Err(Error::Divergence { step });
        }
        let done = i + 1;
        if done % cfg.renorm_interval as u64 == 0 || done == total_steps {
            let norm = v.iter().fold(S::zero(), |acc, a| acc + *a * *a).sqrt();
            if !(norm > S::zero()) || !norm.is_finite() {
                return Err(Error::Divergence { step });
            }
            log_sum += norm.ln();
            v.iter_mut().for_each(|a| *a /= norm);
            renorms += 1;
            let elapsed = S::lit(done as f64) * dt;
            if renorms.is_multiple_of(cfg.history_every) || done == total_steps {
                history.push((elapsed, log_sum / elapsed));
            }
        }
    }
    let elapsed = S::lit(total_steps as f64) * dt;
    if history.len() < 2 {
        history.insert(0, (elapsed, log_sum / elapsed));
    }
    Ok(LyapunovEstimate {
        lambda1: log_sum / elapsed,
        renorm_interval: cfg.renorm_interval,
        total_time: elapsed,
        convergence_history: history,
    })
}

/// Blending cutoff `3/λ₁`; infinite (never switch to qG) when `λ₁ ≤ 0`.
pub fn cutoff_time<S: Scalar>(lambda1: S) -> S {
    if lambda1 > S::zero() {
        S::lit(3.0) / lambda1
    } else {
        S::lit(f64::INFINITY)
    }
}
