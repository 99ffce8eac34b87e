//! Concrete SDE models: stochastic Lorenz 96, the scalar Ornstein–Uhlenbeck
//! family (additive and multiplicative noise) and a trivial inert model.

use serde::{Deserialize, Serialize};

use crate::sde::SdeModel;
use crate::{Error, Matrix, Result, Scalar};

/// Diagonal noise of the stochastic Lorenz 96 model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "coeff", rename_all = "lowercase")]
pub enum NoiseSpec<S> {
    None,
    /// `σ_k = c`
    Additive(S),
    /// `σ_k = c X_k`
    Multiplicative(S),
}

impl<S: Scalar> NoiseSpec<S> {
    pub fn coefficient(&self) -> S {
        match *self {
            NoiseSpec::None => S::zero(),
            NoiseSpec::Additive(c) | NoiseSpec::Multiplicative(c) => c,
        }
    }

    fn validate(&self) -> Result<()> {
        let c = self.coefficient();
        if !(c >= S::zero()) || !c.is_finite() {
            return Err(Error::Config(format!("noise coefficient must be nonnegative, got {c}")));
        }
        Ok(())
    }
}

fn check_l96_len(n: usize) -> Result<()> {
    if n < 4 {
        return Err(Error::Config(format!("Lorenz 96 needs at least 4 modes, got {n}")));
    }
    Ok(())
}

#[inline]
fn wrap(k: usize, off: isize, n: usize) -> usize {
    (k as isize + off).rem_euclid(n as isize) as usize
}

fn l96_drift_into<S: Scalar>(x: &[S], forcing: S, out: &mut [S]) {
    let n = x.len();
    for k in 0..n {
        let km2 = wrap(k, -2, n);
        let km1 = wrap(k, -1, n);
        let kp1 = wrap(k, 1, n);
        out[k] = x[km1] * (x[kp1] - x[km2]) - x[k] + forcing;
    }
}

/// Lorenz 96 tendency `x_{k−1}(x_{k+1} − x_{k−2}) − x_k + F` with periodic indices.
pub fn l96_drift<S: Scalar>(x: &[S], forcing: S) -> Result<Vec<S>> {
    check_l96_len(x.len())?;
    let mut out = vec![S::zero(); x.len()];
    l96_drift_into(x, forcing, &mut out);
    Ok(out)
}

/// Jacobian of [`l96_drift`]; independent of `F`.
pub fn l96_jacobian<S: Scalar>(x: &[S]) -> Result<Matrix<S>> {
    let n = x.len();
    check_l96_len(n)?;
    let mut j = Matrix::zeros(n, n);
    for k in 0..n {
        let km2 = wrap(k, -2, n);
        let km1 = wrap(k, -1, n);
        let kp1 = wrap(k, 1, n);
        j[(k, km2)] = -x[km1];
        j[(k, km1)] = x[kp1] - x[km2];
        j[(k, k)] = -S::one();
        j[(k, kp1)] = x[km1];
    }
    Ok(j)
}

/// Stochastic Lorenz 96 with diagonal additive or multiplicative noise.
#[derive(Clone, Debug, PartialEq)]
pub struct Lorenz96<S> {
    n: usize,
    forcing: S,
    noise: NoiseSpec<S>,
}

impl<S: Scalar> Lorenz96<S> {
    pub fn new(n: usize, forcing: S, noise: NoiseSpec<S>) -> Result<Self> {
        check_l96_len(n)?;
        noise.validate()?;
        if !forcing.is_finite() {
            return Err(Error::Config("forcing must be finite".into()));
        }
        Ok(Self { n, forcing, noise })
    }

    pub fn forcing(&self) -> S {
        self.forcing
    }

    pub fn noise(&self) -> NoiseSpec<S> {
        self.noise
    }

    /// `∂σ_k/∂x_k`; all other diffusion derivatives vanish.
    fn diffusion_slope(&self) -> S {
        match self.noise {
            NoiseSpec::Multiplicative(c) => c,
            _ => S::zero(),
        }
    }
}

/// `sl96_model`: the stochastic Lorenz 96 system as an [`SdeModel`].
pub fn sl96_model<S: Scalar>(n: usize, forcing: S, noise: NoiseSpec<S>) -> Result<Lorenz96<S>> {
    Lorenz96::new(n, forcing, noise)
}

impl<S: Scalar> SdeModel<S> for Lorenz96<S> {
    fn dim(&self) -> usize {
        self.n
    }

    fn drift(&self, x: &[S], _t: S, out: &mut [S]) {
        l96_drift_into(x, self.forcing, out);
    }

    fn diffusion(&self, x: &[S], _t: S, out: &mut [S]) {
        match self.noise {
            NoiseSpec::None => out.fill(S::zero()),
            NoiseSpec::Additive(c) => out.fill(c),
            NoiseSpec::Multiplicative(c) => {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = c * *xi;
                }
            }
        }
    }

    fn drift_jacobian(&self, x: &[S], _t: S) -> Matrix<S> {
        l96_jacobian(x).expect("length checked at construction")
    }

    fn diffusion_jacobian(&self, _x: &[S], _t: S) -> Matrix<S> {
        Matrix::identity(self.n, self.n) * self.diffusion_slope()
    }

    fn tangent_step_block(&self, x: &[S], _t: S, dt: S, dw: &[S], block: &mut [S], ncols: usize) {
        // Row k of (I + Df dt + diag(dW) Dσ) has four nonzeros:
        // columns k−2, k−1, k, k+1.
        let n = self.n;
        let slope = self.diffusion_slope();
        let mut a = vec![S::zero(); n];
        let mut b = vec![S::zero(); n];
        let mut d = vec![S::zero(); n];
        let mut e = vec![S::zero(); n];
        for k in 0..n {
            let xm1 = x[wrap(k, -1, n)];
            a[k] = -dt * xm1;
            b[k] = dt * (x[wrap(k, 1, n)] - x[wrap(k, -2, n)]);
            d[k] = S::one() - dt + slope * dw[k];
            e[k] = dt * xm1;
        }
        let mut out = vec![S::zero(); n];
        for col in block.chunks_exact_mut(n).take(ncols) {
            out[0] = a[0] * col[n - 2] + b[0] * col[n - 1] + d[0] * col[0] + e[0] * col[1];
            out[1] = a[1] * col[n - 1] + b[1] * col[0] + d[1] * col[1] + e[1] * col[2];
            for k in 2..n - 1 {
                out[k] = a[k] * col[k - 2] + b[k] * col[k - 1] + d[k] * col[k] + e[k] * col[k + 1];
            }
            let k = n - 1;
            out[k] = a[k] * col[k - 2] + b[k] * col[k - 1] + d[k] * col[k] + e[k] * col[0];
            col.copy_from_slice(&out);
        }
    }
}

/// Scalar Ornstein–Uhlenbeck process with optional multiplicative noise,
/// `dx = −γ x dt + (σ + β x) dW`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrnsteinUhlenbeck<S> {
    pub gamma: S,
    pub sigma: S,
    pub beta: S,
}

impl<S: Scalar> OrnsteinUhlenbeck<S> {
    pub fn new(gamma: S, sigma: S, beta: S) -> Result<Self> {
        if !(gamma > S::zero()) {
            return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
        }
        if !(sigma >= S::zero()) || !(beta >= S::zero()) {
            return Err(Error::Config("sigma and beta must be nonnegative".into()));
        }
        if !(S::lit(2.0) * gamma > beta * beta) {
            return Err(Error::Config(format!(
                "multiplicative noise too strong for stationarity: 2*gamma = {} <= beta^2 = {}",
                S::lit(2.0) * gamma,
                beta * beta
            )));
        }
        Ok(Self { gamma, sigma, beta })
    }

    /// `dx = −γ x dt + β x dW`
    pub fn multiplicative(gamma: S, beta: S) -> Result<Self> {
        Self::new(gamma, S::zero(), beta)
    }

    #[cfg(test)]
    pub(crate) fn unchecked(gamma: S, sigma: S, beta: S) -> Self {
        Self { gamma, sigma, beta }
    }
}

/// `ou_model`: the scalar OU oracle as an [`SdeModel`].
pub fn ou_model<S: Scalar>(gamma: S, sigma: S, beta: S) -> Result<OrnsteinUhlenbeck<S>> {
    OrnsteinUhlenbeck::new(gamma, sigma, beta)
}

impl<S: Scalar> SdeModel<S> for OrnsteinUhlenbeck<S> {
    fn dim(&self) -> usize {
        1
    }
    fn drift(&self, x: &[S], _t: S, out: &mut [S]) {
        out[0] = -self.gamma * x[0];
    }
    fn diffusion(&self, x: &[S], _t: S, out: &mut [S]) {
        out[0] = self.sigma + self.beta * x[0];
    }
    fn drift_jacobian(&self, _x: &[S], _t: S) -> Matrix<S> {
        Matrix::from_element(1, 1, -self.gamma)
    }
    fn diffusion_jacobian(&self, _x: &[S], _t: S) -> Matrix<S> {
        Matrix::from_element(1, 1, self.beta)
    }
}

/// Zero drift and zero diffusion in `n` dimensions. Under a constant forcing
/// `αη` its state moves as `x0 + αη t`, which makes the ideal response exact.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Inert {
    pub n: usize,
}

impl<S: Scalar> SdeModel<S> for Inert {
    fn dim(&self) -> usize {
        self.n
    }
    fn drift(&self, _x: &[S], _t: S, out: &mut [S]) {
        out.fill(S::zero());
    }
    fn diffusion(&self, _x: &[S], _t: S, out: &mut [S]) {
        out.fill(S::zero());
    }
    fn drift_jacobian(&self, _x: &[S], _t: S) -> Matrix<S> {
        Matrix::zeros(self.n, self.n)
    }
    fn diffusion_jacobian(&self, _x: &[S], _t: S) -> Matrix<S> {
        Matrix::zeros(self.n, self.n)
    }
}
