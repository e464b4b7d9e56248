//! MAP and mean-field restoration.
//!
//! All methods minimize or approximate the marginal MAP problem
//!
//! ```text
//! min_u  (1/(2σ²))‖Au − v‖² + C · Σ_x ψ(t(x)),    t = channel-averaged ½|∇u|²
//! ```
//!
//! where `C` is the channel count (for one channel this is the textbook form).
//! With the channel factor the EM surrogate is exactly
//! `(1/(2σ²))‖Au − v‖² + ½ Σ_ch Σ_x ξ(x)|∇u_ch(x)|²`, i.e. one solve with `Λ(ξ)`
//! per channel and shared edge weights.
//!
//! EM alternates `ξ ← ψ′(t)` with `u ← Λ(ξ)⁻¹m`; lagged diffusivity reaches the
//! same iteration through the dual variable `s = −ψ′(t)`. The approximate mean
//! field method additionally carries diagonal variances `c` whose stencil sum
//! `δ` inflates the edge statistic before `ψ′` is applied.

use crate::error::{Error, Result};
use crate::grid::{
    self, edge_statistic, squared_gradient_magnitude, stencil_column_sum, stencil_row_sum,
    EdgeWeightField, ImageGrid,
};
use crate::operators::ForwardOperator;
use crate::priors::ScaleMixture;
use crate::solver::{cg_solve_from, CgSettings, DiffusionOperator};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Method {
    Em,
    LaggedDiffusivity,
    /// Explicit descent with backtracking; `step` is the initial and largest step.
    GradientDescent { step: f64 },
    /// `update_variances = false` pins `c = 0`, which reduces the scheme to EM.
    MeanField { update_variances: bool },
}

impl Method {
    pub fn mean_field() -> Self {
        Method::MeanField {
            update_variances: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RestoreConfig<P> {
    pub prior: P,
    pub forward: ForwardOperator,
    pub sigma: f64,
    pub max_outer_iters: usize,
    /// Stop once `‖u_{k+1} − u_k‖ / ‖u_k‖` falls below this.
    pub outer_tol: f64,
    pub cg: CgSettings,
    pub method: Method,
    /// Keep every outer iterate in [`RestoreResult::iterates`].
    pub record_iterates: bool,
}

impl<P: ScaleMixture> RestoreConfig<P> {
    pub fn new(prior: P, forward: ForwardOperator, sigma: f64, method: Method) -> Self {
        Self {
            prior,
            forward,
            sigma,
            max_outer_iters: 100,
            outer_tol: 1e-4,
            cg: CgSettings::default(),
            method,
            record_iterates: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::Config("max_outer_iters must be at least 1".into()));
        }
        if !(self.outer_tol > 0.0) {
            return Err(Error::Config(format!("outer_tol must be positive, got {}", self.outer_tol)));
        }
        let caps = self.prior.capabilities();
        if !caps.has_psi || !caps.has_psi_prime {
            return Err(Error::MissingCapability {
                prior: self.prior.name(),
                capability: "psi",
            });
        }
        if let Method::GradientDescent { step } = self.method {
            if !(step > 0.0) || !step.is_finite() {
                return Err(Error::Config(format!("gradient step must be positive, got {step}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct RestoreResult {
    pub u: ImageGrid,
    /// Edge weights used for the final solve.
    pub xi0: EdgeWeightField,
    /// Stencil sums of the variances (mean field only, otherwise zero).
    pub delta: EdgeWeightField,
    /// Diagonal marginal variances (mean field only, otherwise zero).
    pub c: EdgeWeightField,
    /// Objective at `u⁰` followed by its value after every outer iteration.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `u¹, u², …` when requested in the config.
    pub iterates: Vec<ImageGrid>,
}

/// Marginal MAP objective `(1/(2σ²))‖Au − v‖² + C·Σ_x ψ(t(x))`.
pub fn objective<P: ScaleMixture>(
    config: &RestoreConfig<P>,
    observed: &ImageGrid,
    u: &ImageGrid,
) -> Result<f64> {
    if !config.prior.capabilities().has_psi {
        return Err(Error::MissingCapability {
            prior: config.prior.name(),
            capability: "psi",
        });
    }
    u.same_dims(observed)?;
    let residual = config.forward.apply(u).axpy(-1.0, observed);
    let data = residual.dot(&residual) / (2.0 * config.sigma * config.sigma);
    let t = edge_statistic(u);
    let prior: f64 = t.as_slice().iter().map(|&t| config.prior.psi(t)).sum();
    Ok(data + u.channels() as f64 * prior)
}

/// `(1/σ²)A′(Au − v) − ∇·(ψ′(t)∇u)`, per channel.
pub fn objective_gradient<P: ScaleMixture>(
    config: &RestoreConfig<P>,
    observed: &ImageGrid,
    u: &ImageGrid,
) -> Result<ImageGrid> {
    u.same_dims(observed)?;
    let inv_sigma2 = 1.0 / (config.sigma * config.sigma);
    let residual = config.forward.apply(u).axpy(-1.0, observed);
    let mut out = config.forward.adjoint_apply(&residual).map(|v| v * inv_sigma2);
    let diffusivity = em_weights(&config.prior, u);
    let (w, h) = (u.width(), u.height());
    for ch in 0..u.channels() {
        let mut channel = out.channel(ch).to_vec();
        grid::add_weighted_neg_divergence(u.channel(ch), diffusivity.as_slice(), w, h, &mut channel);
        out.channel_mut(ch).copy_from_slice(&channel);
    }
    Ok(out)
}

/// E-step: `ξ(x) = E[z(x) | u] = ψ′(t(x))`.
pub fn em_weights<P: ScaleMixture>(prior: &P, u: &ImageGrid) -> EdgeWeightField {
    edge_statistic(u).map(|t| prior.psi_prime(t))
}

/// Mean-field edge weights `ξ(x) = ψ′(½(|∇u(x)|² + δ(x)))` with
/// `δ(x) = Σ_y c(y)|∇δ_y(x)|²`. Returns `(ξ, δ)`.
pub fn mean_field_weights<P: ScaleMixture>(
    prior: &P,
    u: &ImageGrid,
    c: &EdgeWeightField,
) -> (EdgeWeightField, EdgeWeightField) {
    let delta = stencil_row_sum(c);
    let raw = squared_gradient_magnitude(u);
    let values = raw
        .as_slice()
        .iter()
        .zip(delta.as_slice())
        .map(|(&g, &d)| prior.psi_prime(0.5 * (g + d)))
        .collect();
    let xi = EdgeWeightField::from_vec(u.width(), u.height(), values).expect("matching sizes");
    (xi, delta)
}

/// Diagonal variances `c(x) = 1 / ((1/σ²)|Aδ_x|² + Σ_y ξ(y)|∇δ_x(y)|²)`,
/// the reciprocal of `diag Λ(ξ)`.
pub fn mean_field_variances(
    forward: &ForwardOperator,
    sigma: f64,
    xi: &EdgeWeightField,
) -> EdgeWeightField {
    let (w, h) = (xi.width(), xi.height());
    let data = forward.column_norms_sq(w, h);
    let diffusion = stencil_column_sum(xi);
    let inv_sigma2 = 1.0 / (sigma * sigma);
    let values = data
        .as_slice()
        .iter()
        .zip(diffusion.as_slice())
        .map(|(a, d)| 1.0 / (a * inv_sigma2 + d))
        .collect();
    EdgeWeightField::from_vec(w, h, values).expect("matching sizes")
}

pub fn restore<P: ScaleMixture>(config: &RestoreConfig<P>, observed: &ImageGrid) -> Result<RestoreResult> {
    match config.method {
        Method::Em => em_restore(config, observed),
        Method::LaggedDiffusivity => lagged_diffusivity_restore(config, observed),
        Method::GradientDescent { step } => gradient_descent_restore(config, observed, step),
        Method::MeanField { .. } => mean_field_restore(config, observed),
    }
}

fn relative_change(next: &ImageGrid, prev: &ImageGrid) -> f64 {
    let diff = next.axpy(-1.0, prev).norm();
    let scale = prev.norm();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

fn wrap(iteration: usize) -> impl FnOnce(Error) -> Error {
    move |e| Error::OuterIteration {
        iteration,
        source: Box::new(e),
    }
}

/// Shared outer loop for methods whose step maps `u_k` to `(u_{k+1}, ξ_k)`.
fn fixed_point<P: ScaleMixture>(
    config: &RestoreConfig<P>,
    observed: &ImageGrid,
    mut step: impl FnMut(&ImageGrid) -> Result<(ImageGrid, EdgeWeightField)>,
) -> Result<RestoreResult> {
    config.validate()?;
    let (w, h) = (observed.width(), observed.height());
    let mut u = observed.clone();
    let mut xi0 = EdgeWeightField::zeros(w, h);
    let mut trace = vec![objective(config, observed, &u)?];
    let mut iterates = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for k in 1..=config.max_outer_iters {
        let (next, xi) = step(&u).map_err(wrap(k))?;
        let change = relative_change(&next, &u);
        u = next;
        xi0 = xi;
        iterations = k;
        trace.push(objective(config, observed, &u)?);
        if config.record_iterates {
            iterates.push(u.clone());
        }
        if change < config.outer_tol {
            converged = true;
            break;
        }
    }
    Ok(RestoreResult {
        u,
        xi0,
        delta: EdgeWeightField::zeros(w, h),
        c: EdgeWeightField::zeros(w, h),
        objective_trace: trace,
        iterations,
        converged,
        iterates,
    })
}

/// EM for the scale mixture: E-step `ξ ← ψ′(t(u))`, M-step
/// `u ← argmin (1/(2σ²))‖Au − v‖² + ½Σ_x ξ(x)|∇u(x)|²`.
///
/// The M-step runs conjugate gradients warm-started at the current iterate,
/// which cannot increase the surrogate, so the objective trace is nonincreasing
/// regardless of the CG tolerance.
pub fn em_restore<P: ScaleMixture>(config: &RestoreConfig<P>, observed: &ImageGrid) -> Result<RestoreResult> {
    fixed_point(config, observed, |u| {
        let xi = em_weights(&config.prior, u);
        let op = DiffusionOperator::new(&config.forward, config.sigma, &xi)?;
        let m = op.rhs(observed)?;
        let next = cg_solve_from(&op, &m, Some(u), &config.cg)?.u;
        Ok((next, xi))
    })
}

/// Lagged diffusivity through the dual of `−ψ`: `s ← −ψ′(t(u_k))`, then solve
/// the stationarity condition `(1/σ²)A′(Au − v) + ∇·(s∇u) = 0` for `u_{k+1}`.
pub fn lagged_diffusivity_restore<P: ScaleMixture>(
    config: &RestoreConfig<P>,
    observed: &ImageGrid,
) -> Result<RestoreResult> {
    fixed_point(config, observed, |u| {
        let dual = edge_statistic(u).map(|t| -config.prior.psi_prime(t));
        let diffusivity = dual.map(|s| -s);
        let op = DiffusionOperator::new(&config.forward, config.sigma, &diffusivity)?;
        let m = op.rhs(observed)?;
        let next = cg_solve_from(&op, &m, Some(u), &config.cg)?.u;
        Ok((next, diffusivity))
    })
}

const MIN_STEP: f64 = 1e-12;

/// One backtracking step `u − h·∇f(u)`, halving `h` until the objective does
/// not increase. Returns the new iterate, its objective and the accepted step.
pub fn gradient_step<P: ScaleMixture>(
    config: &RestoreConfig<P>,
    observed: &ImageGrid,
    u: &ImageGrid,
    step: f64,
) -> Result<(ImageGrid, f64, f64)> {
    let f0 = objective(config, observed, u)?;
    let g = objective_gradient(config, observed, u)?;
    let mut h = step;
    loop {
        let candidate = u.axpy(-h, &g);
        let f = objective(config, observed, &candidate)?;
        if f <= f0 {
            return Ok((candidate, f, h));
        }
        h *= 0.5;
        if h < MIN_STEP {
            return Err(Error::StepUnderflow { step: h });
        }
    }
}

/// Gradient descent on the marginal MAP objective. Baseline only; the step
/// regrows by doubling after each accepted step, capped at `step`.
pub fn gradient_descent_restore<P: ScaleMixture>(
    config: &RestoreConfig<P>,
    observed: &ImageGrid,
    step: f64,
) -> Result<RestoreResult> {
    config.validate()?;
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::Config(format!("gradient step must be positive, got {step}")));
    }
    let (w, h) = (observed.width(), observed.height());
    let mut u = observed.clone();
    let mut trace = vec![objective(config, observed, &u)?];
    let mut iterates = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut h_try = step;
    for k in 1..=config.max_outer_iters {
        let (next, f, accepted) = gradient_step(config, observed, &u, h_try).map_err(wrap(k))?;
        let change = relative_change(&next, &u);
        u = next;
        iterations = k;
        trace.push(f);
        if config.record_iterates {
            iterates.push(u.clone());
        }
        h_try = (2.0 * accepted).min(step);
        if change < config.outer_tol {
            converged = true;
            break;
        }
    }
    Ok(RestoreResult {
        xi0: em_weights(&config.prior, &u),
        u,
        delta: EdgeWeightField::zeros(w, h),
        c: EdgeWeightField::zeros(w, h),
        objective_trace: trace,
        iterations,
        converged,
        iterates,
    })
}

/// Approximate mean field with diagonal variances: starting from `c = 0` and
/// `u = v`, repeat `δ ← Σ_y c(y)|∇δ_y|²`, `ξ ← ψ′(½(|∇u|² + δ))`,
/// `u ← Λ(ξ)⁻¹m`, `c ← 1/diag Λ(ξ)`.
pub fn mean_field_restore<P: ScaleMixture>(
    config: &RestoreConfig<P>,
    observed: &ImageGrid,
) -> Result<RestoreResult> {
    config.validate()?;
    let update_variances = match config.method {
        Method::MeanField { update_variances } => update_variances,
        _ => true,
    };
    let (w, h) = (observed.width(), observed.height());
    let mut u = observed.clone();
    let mut c = EdgeWeightField::zeros(w, h);
    let mut delta = EdgeWeightField::zeros(w, h);
    let mut xi0 = EdgeWeightField::zeros(w, h);
    let mut trace = vec![objective(config, observed, &u)?];
    let mut iterates = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for k in 1..=config.max_outer_iters {
        let (xi, d) = mean_field_weights(&config.prior, &u, &c);
        let next = (|| {
            let op = DiffusionOperator::new(&config.forward, config.sigma, &xi)?;
            let m = op.rhs(observed)?;
            Ok(cg_solve_from(&op, &m, Some(&u), &config.cg)?.u)
        })()
        .map_err(wrap(k))?;
        if update_variances {
            c = mean_field_variances(&config.forward, config.sigma, &xi);
        }
        let change = relative_change(&next, &u);
        u = next;
        xi0 = xi;
        delta = d;
        iterations = k;
        trace.push(objective(config, observed, &u)?);
        if config.record_iterates {
            iterates.push(u.clone());
        }
        if change < config.outer_tol {
            converged = true;
            break;
        }
    }
    Ok(RestoreResult {
        u,
        xi0,
        delta,
        c,
        objective_trace: trace,
        iterations,
        converged,
        iterates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::{PointMass, ScaleMixturePrior};
    use crate::solver::DenseOracle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn noisy_step(w: usize, h: usize, sigma: f64, seed: u64) -> ImageGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageGrid::from_fn(w, h, 1, |_, x1, _| {
            let clean = if x1 < w / 2 { 0.2 } else { 0.8 };
            clean + sigma * rng.sample::<f64, _>(StandardNormal)
        })
    }

    fn gamma_config(method: Method) -> RestoreConfig<ScaleMixturePrior> {
        RestoreConfig::new(
            ScaleMixturePrior::gamma(1e3, 1e3).unwrap(),
            ForwardOperator::Identity,
            0.1,
            method,
        )
    }

    #[test]
    fn constant_input_is_a_fixed_point() {
        let v = ImageGrid::filled(8, 6, 1, 0.4);
        for method in [Method::Em, Method::LaggedDiffusivity, Method::mean_field()] {
            let res = restore(&gamma_config(method), &v).unwrap();
            assert_eq!(res.iterations, 1, "{method:?}");
            assert!(res.converged);
            assert!(res.u.axpy(-1.0, &v).norm() < 1e-12);
            assert_eq!(res.objective_trace[0], 0.0);
        }
    }

    #[test]
    fn objective_of_linear_psi_is_tikhonov() {
        let lambda = 3.0;
        let config = RestoreConfig::new(PointMass::new(lambda).unwrap(), ForwardOperator::Identity, 0.5, Method::Em);
        let v = noisy_step(6, 5, 0.3, 1);
        let u = noisy_step(6, 5, 0.3, 2);
        let xi = EdgeWeightField::filled(6, 5, lambda);
        let op = DiffusionOperator::new(&config.forward, 0.5, &xi).unwrap();
        let tikhonov = op.quadratic_energy(&u, &v).unwrap();
        let f = objective(&config, &v, &u).unwrap();
        assert!((f - tikhonov).abs() <= 1e-12 * tikhonov);
    }

    #[test]
    fn objective_bounded_below_by_flat_value() {
        let config = gamma_config(Method::Em);
        let v = noisy_step(8, 8, 0.1, 3);
        let u = noisy_step(8, 8, 0.2, 4);
        let f = objective(&config, &v, &u).unwrap();
        assert!(f.is_finite());
        assert!(f >= 64.0 * config.prior.psi(0.0));
    }

    #[test]
    fn linear_psi_em_reproduces_tikhonov_solution() {
        let lambda = 2.0;
        let mut config = RestoreConfig::new(PointMass::new(lambda).unwrap(), ForwardOperator::Identity, 0.3, Method::Em);
        config.max_outer_iters = 1;
        config.cg.tol = 1e-12;
        let v = noisy_step(5, 5, 0.2, 5);
        let res = em_restore(&config, &v).unwrap();
        let xi = EdgeWeightField::filled(5, 5, lambda);
        let op = DiffusionOperator::new(&config.forward, 0.3, &xi).unwrap();
        let exact = DenseOracle::assemble(&op).unwrap().solve(&op.rhs(&v).unwrap()).unwrap();
        assert!(res.u.axpy(-1.0, &exact).norm() <= 1e-10 * exact.norm());
    }

    #[test]
    fn em_and_lagged_diffusivity_agree() {
        let v = noisy_step(16, 16, 0.1, 6);
        let mut em = gamma_config(Method::Em);
        em.record_iterates = true;
        em.max_outer_iters = 10;
        em.outer_tol = 1e-300;
        let mut lagged = em.clone();
        lagged.method = Method::LaggedDiffusivity;
        let a = restore(&em, &v).unwrap();
        let b = restore(&lagged, &v).unwrap();
        assert_eq!(a.iterates.len(), 10);
        for (x, y) in a.iterates.iter().zip(&b.iterates) {
            assert!(x.axpy(-1.0, y).norm() <= 1e-10);
        }
    }

    #[test]
    fn em_descends_and_denoises() {
        let clean = ImageGrid::from_fn(24, 24, 1, |_, x1, _| if x1 < 12 { 0.2 } else { 0.8 });
        let v = noisy_step(24, 24, 0.1, 7);
        let res = em_restore(&gamma_config(Method::Em), &v).unwrap();
        for pair in res.objective_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-10 * pair[0].abs().max(1.0));
        }
        let err_in = v.axpy(-1.0, &clean).norm();
        let err_out = res.u.axpy(-1.0, &clean).norm();
        assert!(err_out < 0.7 * err_in, "{err_out} vs {err_in}");
    }

    #[test]
    fn em_fixed_point_satisfies_euler_lagrange() {
        let mut config = gamma_config(Method::Em);
        config.prior = ScaleMixturePrior::gamma(10.0, 10.0).unwrap();
        config.outer_tol = 1e-13;
        config.max_outer_iters = 500;
        config.cg.tol = 1e-13;
        let v = noisy_step(4, 4, 0.1, 8);
        let res = em_restore(&config, &v).unwrap();
        assert!(res.converged);
        let residual = objective_gradient(&config, &v, &res.u).unwrap();
        assert!(residual.norm() <= 1e-6, "{}", residual.norm());
    }

    #[test]
    fn gradient_step_at_stationary_point_is_negligible() {
        let mut config = gamma_config(Method::Em);
        config.prior = ScaleMixturePrior::gamma(10.0, 10.0).unwrap();
        config.outer_tol = 1e-13;
        config.max_outer_iters = 500;
        config.cg.tol = 1e-13;
        let v = noisy_step(6, 6, 0.1, 9);
        let res = em_restore(&config, &v).unwrap();
        let f0 = objective(&config, &v, &res.u).unwrap();
        let (_, f1, _) = gradient_step(&config, &v, &res.u, 1e-3).unwrap();
        assert!(f1 <= f0);
        assert!(f0 - f1 <= 1e-8);
    }

    #[test]
    fn gradient_descent_trace_is_monotone() {
        let v = noisy_step(12, 12, 0.1, 10);
        let mut config = gamma_config(Method::GradientDescent { step: 1e-4 });
        config.max_outer_iters = 50;
        let res = restore(&config, &v).unwrap();
        assert_eq!(res.objective_trace.len(), res.iterations + 1);
        for pair in res.objective_trace.windows(2) {
            assert!(pair[1] <= pair[0]);
        }
        assert!(res.objective_trace.last().unwrap() < &res.objective_trace[0]);
    }

    #[test]
    fn gradient_of_constant_image_has_no_diffusion_part() {
        let config = gamma_config(Method::Em);
        let u = ImageGrid::filled(5, 5, 2, 0.3);
        let g = objective_gradient(&config, &u, &u).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let mut config = gamma_config(Method::Em);
        config.prior = ScaleMixturePrior::gamma(5.0, 2.0).unwrap();
        config.forward = ForwardOperator::gaussian_blur(1, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v = ImageGrid::from_fn(4, 3, 2, |_, _, _| rng.random_range(0.0..1.0));
        let u = ImageGrid::from_fn(4, 3, 2, |_, _, _| rng.random_range(0.0..1.0));
        let g = objective_gradient(&config, &v, &u).unwrap();
        let eps = 1e-6;
        for i in 0..u.as_slice().len() {
            let mut up = u.clone();
            up.as_mut_slice()[i] += eps;
            let mut dn = u.clone();
            dn.as_mut_slice()[i] -= eps;
            let fd = (objective(&config, &v, &up).unwrap() - objective(&config, &v, &dn).unwrap()) / (2.0 * eps);
            assert!((fd - g.as_slice()[i]).abs() <= 1e-5 * (1.0 + fd.abs()), "{i}: {fd} vs {}", g.as_slice()[i]);
        }
    }

    #[test]
    fn mean_field_first_weights_equal_em() {
        let prior = ScaleMixturePrior::gamma(1e3, 1e3).unwrap();
        let v = noisy_step(8, 8, 0.1, 12);
        let (xi, delta) = mean_field_weights(&prior, &v, &EdgeWeightField::zeros(8, 8));
        assert_eq!(xi, em_weights(&prior, &v));
        assert!(delta.as_slice().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn mean_field_variances_on_unit_problem() {
        let c = mean_field_variances(&ForwardOperator::Identity, 1.0, &EdgeWeightField::filled(5, 5, 1.0));
        assert!((c.get(2, 2) - 0.2).abs() < 1e-15);
        assert!((c.get(0, 0) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn mean_field_variances_invert_dense_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let xi = EdgeWeightField::from_fn(5, 4, |_, _| rng.random_range(0.0..3.0));
        let forward = ForwardOperator::gaussian_blur(1, 1.0).unwrap();
        let c = mean_field_variances(&forward, 0.2, &xi);
        let op = DiffusionOperator::new(&forward, 0.2, &xi).unwrap();
        let diag = DenseOracle::assemble(&op).unwrap().diagonal();
        for (ci, d) in c.as_slice().iter().zip(diag.as_slice()) {
            assert!((ci * d - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn mean_field_damps_diffusivity() {
        let prior = ScaleMixturePrior::two_point(800.0, 3.8).unwrap();
        let v = noisy_step(8, 8, 0.1, 14);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let c = EdgeWeightField::from_fn(8, 8, |_, _| rng.random_range(0.0..0.01));
        let (mf, delta) = mean_field_weights(&prior, &v, &c);
        let em = em_weights(&prior, &v);
        assert!(delta.min() >= 0.0);
        for (a, b) in mf.as_slice().iter().zip(em.as_slice()) {
            assert!(a <= b);
        }
        let interior = stencil_row_sum(&EdgeWeightField::filled(8, 8, 0.25));
        assert_eq!(interior.get(3, 3), 1.0);
    }

    #[test]
    fn mean_field_with_pinned_variances_is_em() {
        let v = noisy_step(12, 12, 0.1, 16);
        let mut em = gamma_config(Method::Em);
        em.record_iterates = true;
        em.max_outer_iters = 8;
        let mut mf = em.clone();
        mf.method = Method::MeanField {
            update_variances: false,
        };
        let a = restore(&em, &v).unwrap();
        let b = restore(&mf, &v).unwrap();
        assert_eq!(a.iterates, b.iterates);
        assert_eq!(a.xi0, b.xi0);
    }

    #[test]
    fn mean_field_fields_stay_valid() {
        let v = noisy_step(10, 10, 0.1, 17);
        let mut config = gamma_config(Method::mean_field());
        config.max_outer_iters = 6;
        let res = restore(&config, &v).unwrap();
        assert!(res.c.min() > 0.0);
        assert!(res.delta.min() >= 0.0);
        assert!(res.xi0.min() > 0.0);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let v = ImageGrid::filled(3, 3, 1, 0.0);
        let mut config = gamma_config(Method::Em);
        config.sigma = -1.0;
        assert!(matches!(restore(&config, &v), Err(Error::Config(_))));
        let mut config = gamma_config(Method::Em);
        config.max_outer_iters = 0;
        assert!(restore(&config, &v).is_err());
        let config = gamma_config(Method::GradientDescent { step: 0.0 });
        assert!(restore(&config, &v).is_err());
    }

    #[test]
    fn cg_failure_reports_outer_iteration() {
        let v = noisy_step(8, 8, 0.1, 18);
        let mut config = gamma_config(Method::Em);
        config.cg = CgSettings {
            tol: 1e-15,
            max_iter: Some(1),
            ..CgSettings::default()
        };
        match restore(&config, &v) {
            Err(Error::OuterIteration { iteration: 1, source }) => {
                assert!(matches!(*source, Error::CgNotConverged { .. }))
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
