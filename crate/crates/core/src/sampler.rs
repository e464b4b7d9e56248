//! Blockwise Gibbs sampling of `p(u, z | v)`.
//!
//! Given `u`, the latent scales factor over pixels and are drawn from
//! `p(z(x) | t(x))`. Given `z`, `u` is Gaussian with precision `Λ(z)` and mean
//! `Λ(z)⁻¹m`; an exact draw is obtained by perturbation:
//!
//! ```text
//! ε_p ~ N(0, σ²I)  in data space,   ε_m(x) ~ N₂(0, I/z(x))  where z(x) ≠ 0
//! u = argmin (1/(2σ²))‖Au − v − ε_p‖² + ½ Σ_x z(x)|∇u(x) − ε_m(x)|²
//!   ⇔ Λ(z) u = (1/σ²)A′(v + ε_p) − ∇·(z ε_m)
//! ```
//!
//! The right-hand side has covariance `(1/σ²)A′A + ∇′Z∇ = Λ(z)`, so
//! `Λ(z)⁻¹b ~ N(Λ(z)⁻¹m, Λ(z)⁻¹)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::{self, edge_statistic, EdgeWeightField, ImageGrid};
use crate::operators::ForwardOperator;
use crate::priors::ScaleMixture;
use crate::solver::{cg_solve_from, CgSettings, DiffusionOperator};

/// Random stream owned by one chain.
pub type ChainRng = ChaCha20Rng;

#[derive(Clone, Debug)]
pub struct SamplerConfig<P> {
    pub prior: P,
    pub forward: ForwardOperator,
    pub sigma: f64,
    pub num_iterations: usize,
    /// Leading iterations excluded from the running means.
    pub burn_in: usize,
    pub seed: u64,
    pub cg: CgSettings,
}

impl<P: ScaleMixture> SamplerConfig<P> {
    /// Burn-in defaults to 20% of the iterations.
    pub fn new(prior: P, forward: ForwardOperator, sigma: f64, num_iterations: usize, seed: u64) -> Self {
        Self {
            prior,
            forward,
            sigma,
            num_iterations,
            burn_in: num_iterations / 5,
            seed,
            cg: CgSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.prior.require_sampler()?;
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.num_iterations == 0 {
            return Err(Error::Config("num_iterations must be at least 1".into()));
        }
        if self.burn_in >= self.num_iterations {
            return Err(Error::Config(format!(
                "burn-in ({}) must be smaller than the number of iterations ({})",
                self.burn_in, self.num_iterations
            )));
        }
        Ok(())
    }
}

/// Running sum of a vector quantity.
#[derive(Clone, Debug, PartialEq)]
pub struct Accumulator {
    sum: Vec<f64>,
    count: usize,
}

impl Accumulator {
    pub fn new(len: usize) -> Self {
        Self {
            sum: vec![0.0; len],
            count: 0,
        }
    }

    pub fn add(&mut self, values: &[f64]) {
        for (s, v) in self.sum.iter_mut().zip(values) {
            *s += v;
        }
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.sum.iter().map(|s| s / n).collect()
    }
}

#[derive(Clone, Debug)]
pub struct ChainState {
    pub u: ImageGrid,
    pub z: EdgeWeightField,
    pub accum_u: Accumulator,
    pub accum_z: Accumulator,
    /// Completed Gibbs sweeps.
    pub iteration: usize,
}

impl ChainState {
    /// `u⁰ = v`, `z⁰ ~ p(z | t(v))`.
    pub fn initial<P: ScaleMixture, R: Rng + ?Sized>(
        prior: &P,
        observed: &ImageGrid,
        rng: &mut R,
    ) -> Result<Self> {
        prior.require_sampler()?;
        let z = sample_scales(prior, &edge_statistic(observed), rng)?;
        Ok(Self {
            u: observed.clone(),
            accum_u: Accumulator::new(observed.as_slice().len()),
            accum_z: Accumulator::new(z.len()),
            z,
            iteration: 0,
        })
    }
}

fn sample_scales<P: ScaleMixture, R: Rng + ?Sized>(
    prior: &P,
    t: &EdgeWeightField,
    rng: &mut R,
) -> Result<EdgeWeightField> {
    let mut z = EdgeWeightField::zeros(t.width(), t.height());
    for (zi, &ti) in z.as_mut_slice().iter_mut().zip(t.as_slice()) {
        *zi = prior.sample_z(ti, rng)?;
    }
    Ok(z)
}

/// Draws `u ~ N(Λ(z)⁻¹m, Λ(z)⁻¹)` by perturbation, warm-starting CG at `start`.
pub fn sample_gaussian_conditional<R: Rng + ?Sized>(
    forward: &ForwardOperator,
    sigma: f64,
    z: &EdgeWeightField,
    observed: &ImageGrid,
    start: &ImageGrid,
    cg: &CgSettings,
    rng: &mut R,
) -> Result<ImageGrid> {
    let (w, h, channels) = observed.dims();
    let n = w * h;

    let perturbed = observed.map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal));

    let mut flux_x = vec![0.0; n];
    let mut flux_y = vec![0.0; n];
    let mut div = vec![0.0; n];
    let op = DiffusionOperator::new(forward, sigma, z)?;
    let mut b = op.rhs(&perturbed)?;
    for ch in 0..channels {
        // z ε_m with ε_m ~ N₂(0, I/z): each component has standard deviation √z
        for (i, &zi) in z.as_slice().iter().enumerate() {
            let (gx, gy): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            if zi != 0.0 {
                let scale = zi.sqrt();
                flux_x[i] = scale * gx;
                flux_y[i] = scale * gy;
            } else {
                flux_x[i] = 0.0;
                flux_y[i] = 0.0;
            }
        }
        grid::divergence_channel(&flux_x, &flux_y, w, h, &mut div);
        for (bi, di) in b.channel_mut(ch).iter_mut().zip(&div) {
            *bi -= di;
        }
    }
    Ok(cg_solve_from(&op, &b, Some(start), cg)?.u)
}

/// One sweep: `z | u`, then `u | z`. Post-burn-in sweeps feed the accumulators.
pub fn gibbs_step<P: ScaleMixture, R: Rng + ?Sized>(
    state: &mut ChainState,
    config: &SamplerConfig<P>,
    observed: &ImageGrid,
    rng: &mut R,
) -> Result<()> {
    config.prior.require_sampler()?;
    state.u.same_dims(observed)?;
    state.z = sample_scales(&config.prior, &edge_statistic(&state.u), rng)?;
    state.u = sample_gaussian_conditional(
        &config.forward,
        config.sigma,
        &state.z,
        observed,
        &state.u,
        &config.cg,
        rng,
    )
    .map_err(|e| Error::OuterIteration {
        iteration: state.iteration + 1,
        source: Box::new(e),
    })?;
    if state.iteration >= config.burn_in {
        state.accum_u.add(state.u.as_slice());
        state.accum_z.add(state.z.as_slice());
    }
    state.iteration += 1;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct ChainOutput {
    pub mean_u: ImageGrid,
    pub mean_z: EdgeWeightField,
    pub final_state: ChainState,
}

pub fn run_chain<P: ScaleMixture>(config: &SamplerConfig<P>, observed: &ImageGrid) -> Result<ChainOutput> {
    run_chain_with(config, observed, |_| {})
}

/// Like [`run_chain`], calling `observe` after every sweep.
pub fn run_chain_with<P: ScaleMixture>(
    config: &SamplerConfig<P>,
    observed: &ImageGrid,
    mut observe: impl FnMut(&ChainState),
) -> Result<ChainOutput> {
    config.validate()?;
    let mut rng = ChainRng::seed_from_u64(config.seed);
    let mut state = ChainState::initial(&config.prior, observed, &mut rng)?;
    for _ in 0..config.num_iterations {
        gibbs_step(&mut state, config, observed, &mut rng)?;
        observe(&state);
    }
    let (w, h, c) = observed.dims();
    let mean_u = ImageGrid::from_planar(w, h, c, state.accum_u.mean())?;
    let mean_z = EdgeWeightField::from_vec(w, h, state.accum_z.mean())?;
    Ok(ChainOutput {
        mean_u,
        mean_z,
        final_state: state,
    })
}
