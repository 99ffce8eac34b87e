//! SDE model abstraction, reproducible Wiener increments and the forward
//! Euler–Maruyama integrator.
//!
//! Everything here is for Itô equations with diagonal diffusion,
//!
//! ```text
//! dx = f(x, t) dt + σ(x, t) ∘ dW,    W ∈ R^N,
//! ```
//!
//! where `∘` is the componentwise product.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Matrix, Result, Scalar};

/// States whose components exceed this magnitude are treated as divergent.
pub const DIVERGENCE_BOUND: f64 = 1e8;

/// An Itô SDE with diagonal diffusion.
///
/// Row `k` of [`SdeModel::diffusion_jacobian`] is the gradient of the `k`-th
/// diffusion coefficient `σ_k(x)`; together with the drift Jacobian it
/// defines the tangent equation `dT = (Df dt + Σ_k ∇σ_k dW_k) T`.
pub trait SdeModel<S: Scalar>: Send + Sync {
    /// State dimension `N`.
    fn dim(&self) -> usize;

    /// Wiener dimension. Diffusion is diagonal, so this is always `N`.
    fn noise_dim(&self) -> usize {
        self.dim()
    }

    fn drift(&self, x: &[S], t: S, out: &mut [S]);

    /// Diagonal of the diffusion matrix.
    fn diffusion(&self, x: &[S], t: S, out: &mut [S]);

    fn drift_jacobian(&self, x: &[S], t: S) -> Matrix<S>;

    fn diffusion_jacobian(&self, x: &[S], t: S) -> Matrix<S>;

    /// One Euler–Maruyama step of the tangent equation applied in place to a
    /// column-major `N × ncols` block: `B ← B + (Df dt + diag(dW) Dσ) B`.
    ///
    /// The default forms both Jacobians densely. Models with sparse
    /// Jacobians should override it; the result must match the dense form.
    fn tangent_step_block(&self, x: &[S], t: S, dt: S, dw: &[S], block: &mut [S], ncols: usize) {
        let n = self.dim();
        let mut m = self.drift_jacobian(x, t) * dt;
        let g = self.diffusion_jacobian(x, t);
        for k in 0..n {
            let w = dw[k];
            if w != S::zero() {
                for j in 0..n {
                    m[(k, j)] += w * g[(k, j)];
                }
            }
        }
        let mut col = vec![S::zero(); n];
        for c in 0..ncols {
            let b = &mut block[c * n..(c + 1) * n];
            for (k, out) in col.iter_mut().enumerate() {
                let mut acc = S::zero();
                for (j, bj) in b.iter().enumerate() {
                    acc += m[(k, j)] * *bj;
                }
                *out = acc;
            }
            for (bk, ck) in b.iter_mut().zip(&col) {
                *bk += *ck;
            }
        }
    }
}

impl<S: Scalar, M: SdeModel<S> + ?Sized> SdeModel<S> for &M {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn drift(&self, x: &[S], t: S, out: &mut [S]) {
        (**self).drift(x, t, out)
    }
    fn diffusion(&self, x: &[S], t: S, out: &mut [S]) {
        (**self).diffusion(x, t, out)
    }
    fn drift_jacobian(&self, x: &[S], t: S) -> Matrix<S> {
        (**self).drift_jacobian(x, t)
    }
    fn diffusion_jacobian(&self, x: &[S], t: S) -> Matrix<S> {
        (**self).diffusion_jacobian(x, t)
    }
    fn tangent_step_block(&self, x: &[S], t: S, dt: S, dw: &[S], block: &mut [S], ncols: usize) {
        (**self).tangent_step_block(x, t, dt, dw, block, ncols)
    }
}

impl<S: Scalar> SdeModel<S> for Box<dyn SdeModel<S>> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn drift(&self, x: &[S], t: S, out: &mut [S]) {
        (**self).drift(x, t, out)
    }
    fn diffusion(&self, x: &[S], t: S, out: &mut [S]) {
        (**self).diffusion(x, t, out)
    }
    fn drift_jacobian(&self, x: &[S], t: S) -> Matrix<S> {
        (**self).drift_jacobian(x, t)
    }
    fn diffusion_jacobian(&self, x: &[S], t: S) -> Matrix<S> {
        (**self).diffusion_jacobian(x, t)
    }
    fn tangent_step_block(&self, x: &[S], t: S, dt: S, dw: &[S], block: &mut [S], ncols: usize) {
        (**self).tangent_step_block(x, t, dt, dw, block, ncols)
    }
}

/// Index-addressable source of Wiener increments.
///
/// The increment for `(step, component)` is a pure function of
/// `(master_seed, stream_id, step, component)`, so a trajectory's noise can
/// be replayed without storing it. Backed by ChaCha8 with one stream per
/// `stream_id`; each step owns a fixed block of the keystream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseStream {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl NoiseStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self { master_seed, stream_id }
    }

    /// Returns a sibling stream with the same seed.
    pub fn with_id(self, stream_id: u64) -> Self {
        Self { stream_id, ..self }
    }

    pub fn reader(&self, components: usize) -> NoiseReader {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        NoiseReader {
            rng,
            components,
            // Box–Muller pairs, two u64 (four u32 words) per pair.
            words_per_step: 4 * components.div_ceil(2) as u128,
        }
    }
}

/// Seekable reader over a [`NoiseStream`] for a fixed number of components.
#[derive(Clone, Debug)]
pub struct NoiseReader {
    rng: ChaCha8Rng,
    components: usize,
    words_per_step: u128,
}

impl NoiseReader {
    pub fn components(&self) -> usize {
        self.components
    }

    /// Writes standard normal variates for `step` into `out`.
    pub fn fill_standard(&mut self, step: u64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.components);
        self.rng.set_word_pos(step as u128 * self.words_per_step);
        for pair in out.chunks_mut(2) {
            let u1 = ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
            let u2 = (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            let r = (-2.0 * u1.ln()).sqrt();
            let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
            pair[0] = r * c;
            if pair.len() > 1 {
                pair[1] = r * s;
            }
        }
    }

    /// Writes the Wiener increment `dW` for `step` (variance `dt` per component).
    pub fn fill_increment<S: Scalar>(&mut self, step: u64, dt: S, scratch: &mut [f64], out: &mut [S]) {
        if dt == S::zero() {
            out.iter_mut().for_each(|w| *w = S::zero());
            return;
        }
        self.fill_standard(step, scratch);
        let scale = dt.sqrt();
        for (w, z) in out.iter_mut().zip(scratch.iter()) {
            *w = S::lit(*z) * scale;
        }
    }
}

/// Wiener increment with `k_components` entries for `step`.
pub fn wiener_increment<S: Scalar>(stream: &NoiseStream, step: u64, k_components: usize, dt: S) -> Vec<S> {
    let mut reader = stream.reader(k_components);
    let mut scratch = vec![0.0; k_components];
    let mut out = vec![S::zero(); k_components];
    reader.fill_increment(step, dt, &mut scratch, &mut out);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig<S> {
    pub dt: S,
}

impl<S: Scalar> IntegratorConfig<S> {
    pub fn new(dt: S) -> Result<Self> {
        if !(dt > S::zero()) || !dt.is_finite() {
            return Err(Error::Config(format!("dt must be positive and finite, got {dt}")));
        }
        Ok(Self { dt })
    }
}

/// Reusable buffers for repeated Euler–Maruyama steps of one model.
#[derive(Clone, Debug)]
pub struct EulerWorkspace<S> {
    drift: Vec<S>,
    diffusion: Vec<S>,
}

impl<S: Scalar> EulerWorkspace<S> {
    pub fn new(dim: usize) -> Self {
        Self {
            drift: vec![S::zero(); dim],
            diffusion: vec![S::zero(); dim],
        }
    }

    /// `x ← x + (f(x,t) + forcing) dt + σ(x,t) ∘ dW`.
    ///
    /// `forcing` is an optional constant drift perturbation. Returns `false`
    /// if the new state is non-finite or exceeds [`DIVERGENCE_BOUND`].
    pub fn step_in_place<M: SdeModel<S> + ?Sized>(
        &mut self,
        model: &M,
        x: &mut [S],
        t: S,
        dt: S,
        dw: &[S],
        forcing: Option<(usize, S)>,
    ) -> bool {
        model.drift(x, t, &mut self.drift);
        model.diffusion(x, t, &mut self.diffusion);
        if let Some((j, a)) = forcing {
            self.drift[j] += a;
        }
        let bound = S::lit(DIVERGENCE_BOUND);
        let mut ok = true;
        for k in 0..x.len() {
            x[k] += self.drift[k] * dt + self.diffusion[k] * dw[k];
            ok &= x[k].abs() <= bound;
        }
        ok
    }
}

fn check_dims<S: Scalar, M: SdeModel<S> + ?Sized>(model: &M, x: &[S], dw: &[S]) -> Result<()> {
    if x.len() != model.dim() {
        return Err(Error::Dimension {
            what: "state",
            expected: model.dim(),
            got: x.len(),
        });
    }
    if dw.len() != model.noise_dim() {
        return Err(Error::Dimension {
            what: "Wiener increment",
            expected: model.noise_dim(),
            got: dw.len(),
        });
    }
    Ok(())
}

/// One forward Euler–Maruyama step: `x + f(x,t) dt + σ(x,t) ∘ dW`.
pub fn euler_step<S: Scalar, M: SdeModel<S> + ?Sized>(model: &M, x: &[S], t: S, dt: S, dw: &[S]) -> Result<Vec<S>> {
    check_dims(model, x, dw)?;
    let mut out = x.to_vec();
    EulerWorkspace::new(x.len()).step_in_place(model, &mut out, t, dt, dw, None);
    Ok(out)
}

/// A trajectory recorded every `record_every` steps.
///
/// Step indices are global noise-stream indices: the state recorded at step
/// `s` was advanced to `s + 1` with the increment for step `s` of `stream`.
#[derive(Clone, Debug)]
pub struct Trajectory<S> {
    pub dt: S,
    pub t0: S,
    pub start_step: u64,
    pub record_every: usize,
    pub stream: NoiseStream,
    dim: usize,
    data: Vec<S>,
}

impl<S: Scalar> Trajectory<S> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of recorded states.
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Recorded state by record index.
    pub fn state(&self, i: usize) -> &[S] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn states(&self) -> impl ExactSizeIterator<Item = &[S]> + Clone {
        self.data.chunks_exact(self.dim)
    }

    pub fn last_step(&self) -> u64 {
        self.step_of(self.len() - 1)
    }

    pub fn step_of(&self, record: usize) -> u64 {
        self.start_step + (record * self.record_every) as u64
    }

    /// Record index for a global step, if that step was recorded.
    pub fn record_of(&self, step: u64) -> Result<usize> {
        if step < self.start_step {
            return Err(Error::NotRecorded(step));
        }
        let off = step - self.start_step;
        if !off.is_multiple_of(self.record_every as u64) || off / self.record_every as u64 >= self.len() as u64 {
            return Err(Error::NotRecorded(step));
        }
        Ok((off / self.record_every as u64) as usize)
    }

    pub fn state_at_step(&self, step: u64) -> Result<&[S]> {
        self.record_of(step).map(|i| self.state(i))
    }

    pub fn time_of_step(&self, step: u64) -> S {
        self.t0 + S::lit((step - self.start_step) as f64) * self.dt
    }

    /// The recorded states as owned vectors.
    pub fn to_vecs(&self) -> Vec<Vec<S>> {
        self.states().map(<[S]>::to_vec).collect()
    }
}

/// Integrates `n_steps` Euler–Maruyama steps from `x0`, recording every state.
///
/// Increments are drawn at global steps `0..n_steps` of `stream`.
pub fn simulate<S: Scalar, M: SdeModel<S> + ?Sized>(
    model: &M,
    x0: &[S],
    t0: S,
    n_steps: usize,
    cfg: &IntegratorConfig<S>,
    stream: NoiseStream,
) -> Result<Trajectory<S>> {
    simulate_recorded(model, x0, t0, 0, n_steps, 1, cfg, stream)
}

/// Like [`simulate`], starting at global step `start_step` and keeping one
/// state every `record_every` steps. `n_steps` must be a multiple of
/// `record_every` so the final state is recorded.
#[allow(clippy::too_many_arguments)]
pub fn simulate_recorded<S: Scalar, M: SdeModel<S> + ?Sized>(
    model: &M,
    x0: &[S],
    t0: S,
    start_step: u64,
    n_steps: usize,
    record_every: usize,
    cfg: &IntegratorConfig<S>,
    stream: NoiseStream,
) -> Result<Trajectory<S>> {
    let n = model.dim();
    if x0.len() != n {
        return Err(Error::Dimension {
            what: "initial state",
            expected: n,
            got: x0.len(),
        });
    }
    if record_every == 0 || !n_steps.is_multiple_of(record_every) {
        return Err(Error::Config(format!(
            "record interval {record_every} must be positive and divide {n_steps}"
        )));
    }
    let dt = cfg.dt;
    let mut data = Vec::with_capacity(n * (n_steps / record_every + 1));
    data.extend_from_slice(x0);
    let mut x = x0.to_vec();
    let mut reader = stream.reader(n);
    let mut z = vec![0.0; n];
    let mut dw = vec![S::zero(); n];
    let mut ws = EulerWorkspace::new(n);
    for i in 0..n_steps {
        let step = start_step + i as u64;
        let t = t0 + S::lit(i as f64) * dt;
        reader.fill_increment(step, dt, &mut z, &mut dw);
        if !ws.step_in_place(model, &mut x, t, dt, &dw, None) {
            return Err(Error::Divergence { step });
        }
        if (i + 1) % record_every == 0 {
            data.extend_from_slice(&x);
        }
    }
    Ok(Trajectory {
        dt,
        t0,
        start_step,
        record_every,
        stream,
        dim: n,
        data,
    })
}
