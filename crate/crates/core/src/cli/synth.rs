//! Test scenes and seeded noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

/// A piecewise-constant image with a textured patch, plus ground-truth masks.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub clean: ImageGrid,
    /// Pixels whose forward difference crosses a step between constant regions.
    pub edge_mask: Vec<bool>,
    /// Pixels at least two pixels away from every step and from the texture.
    pub flat_mask: Vec<bool>,
}

fn in_range(v: usize, lo: usize, hi: usize) -> bool {
    v >= lo && v < hi
}

/// Builds a `size × size` scene: a vertical step (0.25 | 0.75), a square block
/// of 0.55 in the upper-left quadrant and a sinusoidal texture patch in the
/// lower-right quadrant. Further channels are scaled copies.
pub fn synthetic_scene(size: usize, channels: usize) -> Result<SyntheticScene> {
    if size < 16 {
        return Err(Error::Config(format!("synthetic scene needs size >= 16, got {size}")));
    }
    if channels == 0 {
        return Err(Error::Config("synthetic scene needs at least one channel".into()));
    }
    let n = size;
    let block = (n / 8, 3 * n / 8);
    let texture = (5 * n / 8, 7 * n / 8);
    let piecewise = |x1: usize, x2: usize| -> f64 {
        if in_range(x1, block.0, block.1) && in_range(x2, block.0, block.1) {
            0.55
        } else if x1 < n / 2 {
            0.25
        } else {
            0.75
        }
    };
    let in_texture = |x1: usize, x2: usize| in_range(x1, texture.0, texture.1) && in_range(x2, texture.0, texture.1);
    let base = |x1: usize, x2: usize| -> f64 {
        let v = piecewise(x1, x2);
        if in_texture(x1, x2) {
            let phase = 2.0 * std::f64::consts::PI / 6.0;
            v + 0.15 * (phase * x1 as f64).sin() * (phase * x2 as f64).sin()
        } else {
            v
        }
    };
    let clean = ImageGrid::from_fn(n, n, channels, |ch, x1, x2| {
        let scale = 1.0 - 0.15 * ch as f64;
        scale * base(x1, x2)
    });

    let mut edge_mask = vec![false; n * n];
    for x2 in 0..n {
        for x1 in 0..n {
            let here = piecewise(x1, x2);
            let right = if x1 + 1 < n { piecewise(x1 + 1, x2) } else { here };
            let down = if x2 + 1 < n { piecewise(x1, x2 + 1) } else { here };
            edge_mask[x2 * n + x1] = right != here || down != here;
        }
    }
    let near = |mask: &dyn Fn(usize, usize) -> bool, x1: usize, x2: usize| -> bool {
        let lo1 = x1.saturating_sub(2);
        let lo2 = x2.saturating_sub(2);
        (lo2..=(x2 + 2).min(n - 1)).any(|b| (lo1..=(x1 + 2).min(n - 1)).any(|a| mask(a, b)))
    };
    let edge_at = |a: usize, b: usize| edge_mask[b * n + a];
    let mut flat_mask = vec![false; n * n];
    for x2 in 0..n {
        for x1 in 0..n {
            flat_mask[x2 * n + x1] = !near(&edge_at, x1, x2) && !near(&in_texture, x1, x2);
        }
    }
    for x2 in 0..n {
        for x1 in 0..n {
            if in_texture(x1, x2) {
                edge_mask[x2 * n + x1] = false;
            }
        }
    }
    Ok(SyntheticScene {
        clean,
        edge_mask,
        flat_mask,
    })
}

/// `u + ε`, `ε` i.i.d. `N(0, σ²)` per pixel and channel, unclamped.
pub fn add_noise(u: &ImageGrid, sigma: f64, seed: u64) -> Result<ImageGrid> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Config(format!("noise sigma must be nonnegative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(u.clone());
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Ok(u.map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal)))
}
