//! Linear forward models `A` (identity for denoising, blur for deblurring),
//! their adjoints and the per-pixel column norms `|Aδ_x|²`.
//!
//! Convolution uses replicate padding, so `A𝟏 = 𝟏` for any unit-sum kernel.

use crate::error::{Error, Result};
use crate::grid::{EdgeWeightField, ImageGrid};

/// A 2-D kernel with odd width and height, normalized to unit sum.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    width: usize,
    height: usize,
    /// Row-major; entry `(i, j)` is the weight for offset `(i − rx, j − ry)`.
    values: Vec<f64>,
}

impl Kernel {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width.is_multiple_of(2) || height.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "kernel dimensions must be odd, got {width}x{height}"
            )));
        }
        if values.len() != width * height {
            return Err(Error::Config(format!(
                "kernel of size {width}x{height} needs {} entries, got {}",
                width * height,
                values.len()
            )));
        }
        let sum: f64 = values.iter().sum();
        if !sum.is_finite() || sum == 0.0 || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("kernel entries must be finite with nonzero sum".into()));
        }
        Ok(Self {
            width,
            height,
            values: values.into_iter().map(|v| v / sum).collect(),
        })
    }

    pub fn delta() -> Self {
        Self {
            width: 1,
            height: 1,
            values: vec![1.0],
        }
    }

    /// `(2r+1)²` samples of `exp(−(i²+j²)/(2σ_b²))`, normalized to unit sum.
    pub fn gaussian(radius: usize, sigma_blur: f64) -> Result<Self> {
        if !(sigma_blur > 0.0) || !sigma_blur.is_finite() {
            return Err(Error::Config(format!(
                "blur sigma must be positive, got {sigma_blur}"
            )));
        }
        let size = 2 * radius + 1;
        let r = radius as f64;
        let mut values = Vec::with_capacity(size * size);
        for j in 0..size {
            for i in 0..size {
                let (di, dj) = (i as f64 - r, j as f64 - r);
                values.push((-(di * di + dj * dj) / (2.0 * sigma_blur * sigma_blur)).exp());
            }
        }
        Self::new(size, size, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn radii(&self) -> (isize, isize) {
        ((self.width / 2) as isize, (self.height / 2) as isize)
    }

    /// Iterates `(offset_x, offset_y, weight)`.
    fn taps(&self) -> impl Iterator<Item = (isize, isize, f64)> + '_ {
        let (rx, ry) = self.radii();
        self.values.iter().enumerate().map(move |(k, &w)| {
            let i = (k % self.width) as isize;
            let j = (k / self.width) as isize;
            (i - rx, j - ry, w)
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ForwardOperator {
    Identity,
    Convolution(Kernel),
}

#[inline]
fn clamp(v: isize, len: usize) -> usize {
    v.clamp(0, len as isize - 1) as usize
}

impl ForwardOperator {
    pub fn gaussian_blur(radius: usize, sigma_blur: f64) -> Result<Self> {
        Ok(ForwardOperator::Convolution(Kernel::gaussian(radius, sigma_blur)?))
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, ForwardOperator::Identity)
    }

    pub fn apply(&self, u: &ImageGrid) -> ImageGrid {
        let mut out = ImageGrid::zeros(u.width(), u.height(), u.channels());
        for ch in 0..u.channels() {
            self.apply_channel(u.channel(ch), u.width(), u.height(), out.channel_mut(ch));
        }
        out
    }

    pub fn adjoint_apply(&self, w: &ImageGrid) -> ImageGrid {
        let mut out = ImageGrid::zeros(w.width(), w.height(), w.channels());
        for ch in 0..w.channels() {
            self.adjoint_channel(w.channel(ch), w.width(), w.height(), out.channel_mut(ch));
        }
        out
    }

    /// `(Au)(y) = Σ_s k(s) u(clamp(y − s))`.
    pub(crate) fn apply_channel(&self, u: &[f64], width: usize, height: usize, out: &mut [f64]) {
        match self {
            ForwardOperator::Identity => out.copy_from_slice(u),
            ForwardOperator::Convolution(kernel) => {
                for y2 in 0..height {
                    for y1 in 0..width {
                        let mut acc = 0.0;
                        for (s1, s2, w) in kernel.taps() {
                            let x1 = clamp(y1 as isize - s1, width);
                            let x2 = clamp(y2 as isize - s2, height);
                            acc += w * u[x2 * width + x1];
                        }
                        out[y2 * width + y1] = acc;
                    }
                }
            }
        }
    }

    /// Scatter form of the transpose of [`Self::apply_channel`].
    pub(crate) fn adjoint_channel(&self, w: &[f64], width: usize, height: usize, out: &mut [f64]) {
        match self {
            ForwardOperator::Identity => out.copy_from_slice(w),
            ForwardOperator::Convolution(kernel) => {
                out.iter_mut().for_each(|v| *v = 0.0);
                for y2 in 0..height {
                    for y1 in 0..width {
                        let wy = w[y2 * width + y1];
                        if wy == 0.0 {
                            continue;
                        }
                        for (s1, s2, k) in kernel.taps() {
                            let x1 = clamp(y1 as isize - s1, width);
                            let x2 = clamp(y2 as isize - s2, height);
                            out[x2 * width + x1] += k * wy;
                        }
                    }
                }
            }
        }
    }

    /// `A′A` applied to one channel; `scratch` must have the channel's length.
    pub(crate) fn normal_channel(
        &self,
        u: &[f64],
        width: usize,
        height: usize,
        scratch: &mut [f64],
        out: &mut [f64],
    ) {
        match self {
            ForwardOperator::Identity => out.copy_from_slice(u),
            ForwardOperator::Convolution(_) => {
                self.apply_channel(u, width, height, scratch);
                self.adjoint_channel(scratch, width, height, out);
            }
        }
    }

    /// Per-pixel `|Aδ_x|²`.
    ///
    /// The column `Aδ_x` is supported on pixels `y` with `clamp(y − s) = x` for
    /// some tap `s`, all of which lie within the kernel radius of `x`.
    pub fn column_norms_sq(&self, width: usize, height: usize) -> EdgeWeightField {
        let kernel = match self {
            ForwardOperator::Identity => return EdgeWeightField::filled(width, height, 1.0),
            ForwardOperator::Convolution(k) => k,
        };
        let (rx, ry) = kernel.radii();
        let mut column = Vec::new();
        EdgeWeightField::from_fn(width, height, |x1, x2| {
            let (x1i, x2i) = (x1 as isize, x2 as isize);
            let win_w = (2 * rx + 1) as usize;
            column.clear();
            column.resize(win_w * (2 * ry + 1) as usize, 0.0);
            for dy2 in -ry..=ry {
                for dy1 in -rx..=rx {
                    let (y1, y2) = (x1i + dy1, x2i + dy2);
                    if y1 < 0 || y2 < 0 || y1 >= width as isize || y2 >= height as isize {
                        continue;
                    }
                    let mut acc = 0.0;
                    for (s1, s2, w) in kernel.taps() {
                        if clamp(y1 - s1, width) == x1 && clamp(y2 - s2, height) == x2 {
                            acc += w;
                        }
                    }
                    column[((dy2 + ry) as usize) * win_w + (dy1 + rx) as usize] = acc;
                }
            }
            column.iter().map(|v| v * v).sum()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> ImageGrid {
        ImageGrid::from_fn(w, h, c, |_, _, _| rng.random_range(-1.0..1.0))
    }

    fn random_kernel(rng: &mut ChaCha8Rng) -> Kernel {
        let values = (0..15).map(|_| rng.random_range(0.1..1.0)).collect();
        Kernel::new(5, 3, values).unwrap()
    }

    #[test]
    fn identity_and_delta_kernel_pass_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_grid(&mut rng, 5, 4, 2);
        assert_eq!(ForwardOperator::Identity.apply(&u), u);
        assert_eq!(ForwardOperator::Identity.adjoint_apply(&u), u);
        let delta = ForwardOperator::Convolution(Kernel::new(1, 1, vec![1.0]).unwrap());
        assert_eq!(delta.apply(&u), u);
    }

    #[test]
    fn box_kernel_preserves_constants() {
        let boxk = ForwardOperator::Convolution(Kernel::new(3, 3, vec![1.0 / 9.0; 9]).unwrap());
        let out = boxk.apply(&ImageGrid::filled(6, 5, 1, 0.37));
        assert!(out.as_slice().iter().all(|v| (v - 0.37).abs() < 1e-15));
    }

    #[test]
    fn even_kernel_is_rejected() {
        assert!(matches!(Kernel::new(2, 3, vec![1.0; 6]), Err(Error::Config(_))));
        assert!(Kernel::gaussian(1, 0.0).is_err());
        assert!(Kernel::gaussian(1, -1.0).is_err());
    }

    #[test]
    fn gaussian_kernel_normalization() {
        assert_eq!(Kernel::gaussian(0, 1.0).unwrap().values(), &[1.0]);
        for (r, s) in [(1, 0.5), (2, 1.0), (3, 2.5), (4, 0.1)] {
            let k = Kernel::gaussian(r, s).unwrap();
            assert_eq!(k.width(), 2 * r + 1);
            assert!((k.values().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let narrow = Kernel::gaussian(1, 1e-3).unwrap();
        assert!((narrow.values()[4] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adjoint_identity_on_random_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (w, h) in [(4, 4), (5, 7), (8, 6), (1, 3)] {
            let ops = [
                ForwardOperator::Identity,
                ForwardOperator::gaussian_blur(1, 1.0).unwrap(),
                ForwardOperator::Convolution(random_kernel(&mut rng)),
            ];
            for op in &ops {
                let u = random_grid(&mut rng, w, h, 2);
                let v = random_grid(&mut rng, w, h, 2);
                let lhs = op.apply(&u).dot(&v);
                let rhs = u.dot(&op.adjoint_apply(&v));
                assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn symmetric_kernel_is_self_adjoint_away_from_boundary() {
        let op = ForwardOperator::gaussian_blur(1, 0.8).unwrap();
        let w = ImageGrid::from_fn(7, 7, 1, |_, a, b| {
            if (2..5).contains(&a) && (2..5).contains(&b) {
                (a * 3 + b) as f64
            } else {
                0.0
            }
        });
        let (aw, atw) = (op.apply(&w), op.adjoint_apply(&w));
        for x2 in 1..6 {
            for x1 in 1..6 {
                assert!((aw.get(0, x1, x2) - atw.get(0, x1, x2)).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn column_norms_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ops = [
            ForwardOperator::Identity,
            ForwardOperator::gaussian_blur(1, 1.0).unwrap(),
            ForwardOperator::gaussian_blur(2, 0.7).unwrap(),
            ForwardOperator::Convolution(random_kernel(&mut rng)),
        ];
        for op in &ops {
            for (w, h) in [(6, 6), (3, 5), (1, 1), (2, 6)] {
                let norms = op.column_norms_sq(w, h);
                for x2 in 0..h {
                    for x1 in 0..w {
                        let delta =
                            ImageGrid::from_fn(w, h, 1, |_, a, b| ((a, b) == (x1, x2)) as u8 as f64);
                        let col = op.apply(&delta);
                        let expect = col.dot(&col);
                        assert!((norms.get(x1, x2) - expect).abs() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn interior_column_norm_is_kernel_energy() {
        let op = ForwardOperator::gaussian_blur(1, 1.0).unwrap();
        let ForwardOperator::Convolution(k) = &op else { unreachable!() };
        let energy: f64 = k.values().iter().map(|v| v * v).sum();
        let norms = op.column_norms_sq(7, 7);
        assert!((norms.get(3, 3) - energy).abs() < 1e-15);
        assert_eq!(ForwardOperator::Identity.column_norms_sq(3, 2).as_slice(), &[1.0; 6]);
    }

    #[test]
    fn apply_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let op = ForwardOperator::Convolution(random_kernel(&mut rng));
        let u = random_grid(&mut rng, 6, 5, 1);
        let v = random_grid(&mut rng, 6, 5, 1);
        let lhs = op.apply(&u.axpy(-2.5, &v));
        let rhs = op.apply(&u).axpy(-2.5, &op.apply(&v));
        for (a, b) in lhs.as_slice().iter().zip(rhs.as_slice()) {
            assert!((a - b).abs() < 1e-13);
        }
    }
}
