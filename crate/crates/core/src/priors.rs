//! Scale-mixture priors on the latent gradient precision `z`.
//!
//! A prior is given by a reference measure `q` on `[0, ∞)` and a potential `v`,
//! and enters the restoration only through
//!
//! ```text
//! ψ(t)  = −log ∫ exp(−t z − v(z)) q(dz)
//! ψ′(t) = E[z | t]          (posterior mean of z given t = ½|∇u|²)
//! ```
//!
//! `ψ′` is the Perona-Malik diffusivity. Additive constants of `ψ` are dropped.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};

/// Capability flags of a prior.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Capabilities {
    pub has_psi: bool,
    pub has_psi_prime: bool,
    pub has_z_sampler: bool,
}

/// A Gaussian scale mixture seen through `ψ`, `ψ′` and the conditional law of `z`.
pub trait ScaleMixture {
    fn name(&self) -> &'static str;

    fn capabilities(&self) -> Capabilities;

    fn psi(&self, t: f64) -> f64;

    fn psi_prime(&self, t: f64) -> f64;

    /// Draws `z` from `p(z | t) ∝ exp(−t z − v(z)) q(dz)`.
    fn sample_z<R: Rng + ?Sized>(&self, t: f64, rng: &mut R) -> Result<f64>;

    fn require_sampler(&self) -> Result<()> {
        if self.capabilities().has_z_sampler {
            Ok(())
        } else {
            Err(Error::MissingCapability {
                prior: self.name(),
                capability: "z-sampler",
            })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScaleMixturePrior {
    /// `v(z) = z/λ − (C/λ − 1) log z` with Lebesgue `q`; Perona-Malik diffusivity `C/(1+λt)`.
    Gamma { lambda: f64, c: f64 },
    /// `q = δ₀ + δ_λ`, `v(z) = −(μ/λ) z`; sigmoid diffusivity `λ(1 − σ(λt − μ))`.
    TwoPoint { lambda: f64, mu: f64 },
    /// `ψ(t) = 1 − e^{−t}`; the mixing law is not known in closed form.
    ExponentialDiffusivity,
}

fn positive(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive and finite, got {value}")))
    }
}

impl ScaleMixturePrior {
    pub fn gamma(lambda: f64, c: f64) -> Result<Self> {
        positive("lambda", lambda)?;
        positive("C", c)?;
        Ok(Self::Gamma { lambda, c })
    }

    pub fn two_point(lambda: f64, mu: f64) -> Result<Self> {
        positive("lambda", lambda)?;
        if !mu.is_finite() {
            return Err(Error::Config(format!("mu must be finite, got {mu}")));
        }
        Ok(Self::TwoPoint { lambda, mu })
    }

    pub fn exponential_diffusivity() -> Self {
        Self::ExponentialDiffusivity
    }
}

/// Logistic sigmoid, evaluated without overflow.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl ScaleMixture for ScaleMixturePrior {
    fn name(&self) -> &'static str {
        match self {
            Self::Gamma { .. } => "gamma",
            Self::TwoPoint { .. } => "two-point",
            Self::ExponentialDiffusivity => "exp",
        }
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            has_psi: true,
            has_psi_prime: true,
            has_z_sampler: !matches!(self, Self::ExponentialDiffusivity),
        }
    }

    fn psi(&self, t: f64) -> f64 {
        match *self {
            Self::Gamma { lambda, c } => (c / lambda) * (lambda * t).ln_1p(),
            Self::TwoPoint { lambda, mu } => -softplus(mu - lambda * t),
            Self::ExponentialDiffusivity => -(-t).exp_m1(),
        }
    }

    fn psi_prime(&self, t: f64) -> f64 {
        match *self {
            Self::Gamma { lambda, c } => c / (1.0 + lambda * t),
            Self::TwoPoint { lambda, mu } => lambda * sigmoid(mu - lambda * t),
            Self::ExponentialDiffusivity => (-t).exp(),
        }
    }

    fn sample_z<R: Rng + ?Sized>(&self, t: f64, rng: &mut R) -> Result<f64> {
        match *self {
            Self::Gamma { lambda, c } => {
                let rate = t + 1.0 / lambda;
                let dist = Gamma::new(c / lambda, 1.0 / rate)
                    .map_err(|e| Error::Config(format!("gamma conditional: {e}")))?;
                Ok(dist.sample(rng))
            }
            Self::TwoPoint { lambda, mu } => {
                let p = sigmoid(mu - lambda * t);
                Ok(if rng.random::<f64>() < p { lambda } else { 0.0 })
            }
            Self::ExponentialDiffusivity => Err(Error::MissingCapability {
                prior: self.name(),
                capability: "z-sampler",
            }),
        }
    }
}

/// `q = δ_λ`: the latent scale is the constant `λ`, so `ψ(t) = λt` and the
/// model is the plain Gaussian (Tikhonov) smoothness prior.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointMass {
    pub lambda: f64,
}

impl PointMass {
    pub fn new(lambda: f64) -> Result<Self> {
        positive("lambda", lambda)?;
        Ok(Self { lambda })
    }
}

impl ScaleMixture for PointMass {
    fn name(&self) -> &'static str {
        "point-mass"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            has_psi: true,
            has_psi_prime: true,
            has_z_sampler: true,
        }
    }

    fn psi(&self, t: f64) -> f64 {
        self.lambda * t
    }

    fn psi_prime(&self, _t: f64) -> f64 {
        self.lambda
    }

    fn sample_z<R: Rng + ?Sized>(&self, _t: f64, _rng: &mut R) -> Result<f64> {
        Ok(self.lambda)
    }
}

const MONOTONICITY_STEP: f64 = 1e-3;
const MONOTONICITY_TOL: f64 = 1e-6;

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Numerically checks that `Ψ = e^{−ψ}` is completely monotone up to `order`
/// (at most 4), i.e. `(−1)^k Ψ^{(k)} ≥ 0` at every point for `k ≤ order`.
///
/// Derivatives are divided differences with step `h = 10⁻³`, centered where the
/// stencil fits in `[0, ∞)` and forward otherwise. A point fails when
/// `(−1)^k Δ^k Ψ / h^k < −(10⁻⁶ + ε_k)` with `ε_k = 2^k · 4u · max|Ψ| / h^k` the
/// rounding floor of the difference quotient.
pub fn complete_monotonicity_check(psi: impl Fn(f64) -> f64, order: usize, points: &[f64]) -> bool {
    assert!(order <= 4, "finite-difference depth is limited to 4");
    let big_psi = |t: f64| (-psi(t)).exp();
    let h = MONOTONICITY_STEP;
    for &t in points {
        for k in 0..=order {
            let half = k as f64 * h / 2.0;
            let start = if t >= half { t - half } else { t };
            let mut diff = 0.0;
            let mut scale: f64 = 0.0;
            for j in 0..=k {
                let value = big_psi(start + j as f64 * h);
                scale = scale.max(value.abs());
                let sign = if (k - j) % 2 == 0 { 1.0 } else { -1.0 };
                diff += sign * binomial(k, j) * value;
            }
            let derivative = diff / h.powi(k as i32);
            let signed = if k % 2 == 0 { derivative } else { -derivative };
            let rounding = 2f64.powi(k as i32) * 4.0 * f64::EPSILON * scale / h.powi(k as i32);
            if !signed.is_finite() || signed < -(MONOTONICITY_TOL + rounding) {
                return false;
            }
        }
    }
    true
}

impl ScaleMixturePrior {
    pub fn is_completely_monotone(&self, order: usize, points: &[f64]) -> bool {
        complete_monotonicity_check(|t| self.psi(t), order, points)
    }
}
