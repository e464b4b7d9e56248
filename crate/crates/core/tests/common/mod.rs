//! Helpers shared by the integration tests: numerical oracles and seeded
//! problem instances.

#![allow(dead_code)]

use gsm_diffusion::{EdgeWeightField, ForwardOperator, ImageGrid, Kernel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: usize,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = simpson(fa, fm, fb, a, b);
    recurse(f, a, b, fa, fm, fb, whole, tol, 24)
}

/// Integral of `f` over `[0, ∞)` for a positive, exponentially decaying `f`.
/// The cutoff `Z` doubles from `scale` until the mass on `[Z, 4Z]` is below
/// `1e-13` of the total; returns the integral and the relative tail estimate.
pub fn half_line_integral(f: &dyn Fn(f64) -> f64, scale: f64) -> (f64, f64) {
    let mut z_max = scale;
    loop {
        // Composite midpoint sum, only to size the absolute tolerances.
        let panels = 256;
        let h = z_max / panels as f64;
        let magnitude: f64 = (0..panels).map(|i| f((i as f64 + 0.5) * h) * h).sum();
        let body = adaptive_simpson(f, 0.0, z_max, 1e-12 * magnitude);
        let tail = adaptive_simpson(f, z_max, 4.0 * z_max, 1e-15 * magnitude);
        if tail.abs() <= 1e-13 * body.abs() {
            return (body, (tail / body).abs());
        }
        z_max *= 2.0;
    }
}

/// Gamma-type mixture written out directly: `q(dz) = z^{a−1} dz` on `(0, ∞)`
/// with potential `v(z) = z/λ`, `a = C/λ`. Returns `(I₀(t), I₁(t), tail)` where
/// `I_k(t) = ∫ z^k e^{−tz − v(z)} q(dz)`, so `ψ(t) − ψ(0) = −log(I₀(t)/I₀(0))`
/// and `ψ′(t) = I₁(t)/I₀(t)`; `tail` bounds the relative truncation error.
pub fn gamma_moments_by_quadrature(lambda: f64, c: f64, t: f64) -> (f64, f64, f64) {
    let a = c / lambda;
    let rate = t + 1.0 / lambda;
    let density = move |z: f64| if z <= 0.0 { if a == 1.0 { 1.0 } else { 0.0 } } else { z.powf(a - 1.0) * (-rate * z).exp() };
    let scale = 1.0 / rate;
    let (i0, tail0) = half_line_integral(&|z| density(z), scale);
    let (i1, tail1) = half_line_integral(&|z| z * density(z), scale);
    (i0, i1, tail0.max(tail1))
}

/// Two-point mixture summed exactly: mass 1 at `z = 0`, mass `e^{μ}` at `z = λ`.
/// Returns `(ψ(t), ψ′(t))` with `ψ(t) = −log Σ_z e^{−tz} w(z)`.
pub fn two_point_by_summation(lambda: f64, mu: f64, t: f64) -> (f64, f64) {
    // Factor out the larger term so the remainder is `1 + small`.
    let e0: f64 = 0.0;
    let e1 = mu - lambda * t;
    let m = e0.max(e1);
    let small = (-(e1 - e0).abs()).exp();
    let total = 1.0 + small;
    let psi = -(m + small.ln_1p());
    let w1 = (e1 - m).exp();
    let psi_prime = lambda * w1 / total;
    (psi, psi_prime)
}

pub fn relative_error(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Random piecewise-constant image: a background plus a few axis-aligned boxes.
pub fn piecewise_image<R: Rng>(rng: &mut R, width: usize, height: usize, channels: usize) -> ImageGrid {
    let boxes: Vec<(usize, usize, usize, usize, f64)> = (0..4)
        .map(|_| {
            let x0 = rng.random_range(0..width);
            let y0 = rng.random_range(0..height);
            let x1 = rng.random_range(x0..width) + 1;
            let y1 = rng.random_range(y0..height) + 1;
            (x0, y0, x1, y1, rng.random_range(0.0..1.0))
        })
        .collect();
    let background = rng.random_range(0.2..0.8);
    ImageGrid::from_fn(width, height, channels, |ch, x, y| {
        let mut v = background;
        for &(x0, y0, x1, y1, val) in &boxes {
            if x >= x0 && x < x1 && y >= y0 && y < y1 {
                v = val;
            }
        }
        v * (1.0 - 0.2 * ch as f64)
    })
}

pub fn gaussian_noise<R: Rng>(rng: &mut R, u: &ImageGrid, sigma: f64) -> ImageGrid {
    u.map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
}

pub fn random_image<R: Rng>(rng: &mut R, width: usize, height: usize, channels: usize) -> ImageGrid {
    ImageGrid::from_fn(width, height, channels, |_, _, _| rng.sample(StandardNormal))
}

/// Nonnegative weights with a fraction of exact zeros.
pub fn random_weights<R: Rng>(rng: &mut R, width: usize, height: usize) -> EdgeWeightField {
    EdgeWeightField::from_fn(width, height, |_, _| {
        if rng.random_bool(0.2) {
            0.0
        } else {
            rng.random_range(0.0..10.0)
        }
    })
}

/// Identity or a random positive kernel of odd size up to 5×5.
pub fn random_forward<R: Rng>(rng: &mut R) -> ForwardOperator {
    if rng.random_bool(0.3) {
        return ForwardOperator::Identity;
    }
    let kw = 2 * rng.random_range(0..3) + 1;
    let kh = 2 * rng.random_range(0..3) + 1;
    let values = (0..kw * kh).map(|_| rng.random_range(0.05..1.0)).collect();
    ForwardOperator::Convolution(Kernel::new(kw, kh, values).unwrap())
}
