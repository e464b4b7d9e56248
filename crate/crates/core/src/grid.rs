//! Pixel grids and discrete vector calculus.
//!
//! Pixels are indexed `(x1, x2)` with `x1` the column and `x2` the row. Images
//! are stored planar: channel after channel, each channel row-major.
//!
//! The gradient uses forward differences whose boundary-crossing components are
//! zero (last column for the horizontal part, last row for the vertical part).
//! The divergence is built as the exact negative adjoint of that gradient, so
//! `⟨∇u, p⟩ = −⟨u, ∇·p⟩` holds for every `u` and `p`.

use crate::error::{Error, Result};

/// Multi-channel raster of real values.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        assert!(width >= 1 && height >= 1 && channels >= 1, "empty grid");
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    /// Builds a grid from planar data (channel-major, row-major within a channel).
    pub fn from_planar(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::Config(format!(
                "grid dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch {
                expected: format!("{} values", width * height * channels),
                actual: format!("{} values", data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("grid values must be finite".into()));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut grid = Self::zeros(width, height, channels);
        for ch in 0..channels {
            for x2 in 0..height {
                for x1 in 0..width {
                    let i = grid.index(ch, x1, x2);
                    grid.data[i] = f(ch, x1, x2);
                }
            }
        }
        grid
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    #[inline]
    pub fn index(&self, ch: usize, x1: usize, x2: usize) -> usize {
        ch * self.width * self.height + x2 * self.width + x1
    }

    #[inline]
    pub fn get(&self, ch: usize, x1: usize, x2: usize) -> f64 {
        self.data[self.index(ch, x1, x2)]
    }

    #[inline]
    pub fn set(&mut self, ch: usize, x1: usize, x2: usize, value: f64) {
        let i = self.index(ch, x1, x2);
        self.data[i] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, ch: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[ch * n..(ch + 1) * n]
    }

    pub fn channel_mut(&mut self, ch: usize) -> &mut [f64] {
        let n = self.pixels();
        &mut self.data[ch * n..(ch + 1) * n]
    }

    pub fn same_dims(&self, other: &ImageGrid) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::dims(self.dims(), other.dims()));
        }
        Ok(())
    }

    pub fn dot(&self, other: &ImageGrid) -> f64 {
        dot(&self.data, &other.data)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `self + scale * other`, elementwise.
    pub fn axpy(&self, scale: f64, other: &ImageGrid) -> ImageGrid {
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + scale * b)
            .collect();
        self.with_data(data)
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> ImageGrid {
        self.with_data(self.data.iter().map(|&v| f(v)).collect())
    }

    fn with_data(&self, data: Vec<f64>) -> ImageGrid {
        debug_assert_eq!(data.len(), self.data.len());
        ImageGrid {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data,
        }
    }
}

/// Per-pixel, per-channel 2-vectors, stored planar like [`ImageGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientField {
    width: usize,
    height: usize,
    channels: usize,
    horizontal: Vec<f64>,
    vertical: Vec<f64>,
}

impl GradientField {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        let n = width * height * channels;
        Self {
            width,
            height,
            channels,
            horizontal: vec![0.0; n],
            vertical: vec![0.0; n],
        }
    }

    pub fn from_components(
        width: usize,
        height: usize,
        channels: usize,
        horizontal: Vec<f64>,
        vertical: Vec<f64>,
    ) -> Result<Self> {
        let n = width * height * channels;
        if horizontal.len() != n || vertical.len() != n {
            return Err(Error::DimensionMismatch {
                expected: format!("{n} values per component"),
                actual: format!("{} / {}", horizontal.len(), vertical.len()),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            horizontal,
            vertical,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn horizontal(&self) -> &[f64] {
        &self.horizontal
    }

    pub fn vertical(&self) -> &[f64] {
        &self.vertical
    }

    pub fn horizontal_mut(&mut self) -> &mut [f64] {
        &mut self.horizontal
    }

    pub fn vertical_mut(&mut self) -> &mut [f64] {
        &mut self.vertical
    }

    /// The vector at pixel `(x1, x2)` of channel `ch`.
    pub fn at(&self, ch: usize, x1: usize, x2: usize) -> (f64, f64) {
        let i = ch * self.width * self.height + x2 * self.width + x1;
        (self.horizontal[i], self.vertical[i])
    }

    pub fn dot(&self, other: &GradientField) -> f64 {
        dot(&self.horizontal, &other.horizontal) + dot(&self.vertical, &other.vertical)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

/// One real per pixel, shared across channels. Holds diffusivities `ξ₀`,
/// latent scales `z`, marginal variances `c`, stencil sums `δ` and edge
/// statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeWeightField {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl EdgeWeightField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: format!("{} values", width * height),
                actual: format!("{} values", values.len()),
            });
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for x2 in 0..height {
            for x1 in 0..width {
                values.push(f(x1, x2));
            }
        }
        Self {
            width,
            height,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, x1: usize, x2: usize) -> f64 {
        self.values[x2 * self.width + x1]
    }

    #[inline]
    pub fn set(&mut self, x1: usize, x2: usize, value: f64) {
        self.values[x2 * self.width + x1] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> EdgeWeightField {
        EdgeWeightField {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn matches(&self, width: usize, height: usize) -> Result<()> {
        if self.width != width || self.height != height {
            return Err(Error::dims((width, height, 1), (self.width, self.height, 1)));
        }
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Forward differences of one channel.
pub(crate) fn gradient_channel(
    u: &[f64],
    width: usize,
    height: usize,
    gx: &mut [f64],
    gy: &mut [f64],
) {
    for x2 in 0..height {
        let row = x2 * width;
        for x1 in 0..width {
            let i = row + x1;
            gx[i] = if x1 + 1 < width { u[i + 1] - u[i] } else { 0.0 };
            gy[i] = if x2 + 1 < height { u[i + width] - u[i] } else { 0.0 };
        }
    }
}

/// Divergence of one channel, the negative adjoint of [`gradient_channel`].
pub(crate) fn divergence_channel(
    gx: &[f64],
    gy: &[f64],
    width: usize,
    height: usize,
    out: &mut [f64],
) {
    for x2 in 0..height {
        let row = x2 * width;
        for x1 in 0..width {
            let i = row + x1;
            let mut d = 0.0;
            if x1 + 1 < width {
                d += gx[i];
            }
            if x1 >= 1 {
                d -= gx[i - 1];
            }
            if x2 + 1 < height {
                d += gy[i];
            }
            if x2 >= 1 {
                d -= gy[i - width];
            }
            out[i] = d;
        }
    }
}

/// Accumulates `−∇·(w ⊙ ∇u)` for one channel into `out`.
pub(crate) fn add_weighted_neg_divergence(
    u: &[f64],
    weights: &[f64],
    width: usize,
    height: usize,
    out: &mut [f64],
) {
    for x2 in 0..height {
        let row = x2 * width;
        for x1 in 0..width {
            let i = row + x1;
            let w = weights[i];
            if w == 0.0 {
                continue;
            }
            if x1 + 1 < width {
                let flux = w * (u[i + 1] - u[i]);
                out[i] -= flux;
                out[i + 1] += flux;
            }
            if x2 + 1 < height {
                let flux = w * (u[i + width] - u[i]);
                out[i] -= flux;
                out[i + width] += flux;
            }
        }
    }
}

pub fn gradient(u: &ImageGrid) -> GradientField {
    let (w, h, c) = u.dims();
    let mut field = GradientField::zeros(w, h, c);
    let n = w * h;
    for ch in 0..c {
        let range = ch * n..(ch + 1) * n;
        gradient_channel(
            u.channel(ch),
            w,
            h,
            &mut field.horizontal[range.clone()],
            &mut field.vertical[range],
        );
    }
    field
}

pub fn divergence(p: &GradientField) -> ImageGrid {
    let (w, h, c) = p.dims();
    let mut out = ImageGrid::zeros(w, h, c);
    let n = w * h;
    for ch in 0..c {
        let range = ch * n..(ch + 1) * n;
        divergence_channel(
            &p.horizontal[range.clone()],
            &p.vertical[range],
            w,
            h,
            out.channel_mut(ch),
        );
    }
    out
}

/// Number of forward differences at `x` that stay inside the grid.
#[inline]
fn outgoing_links(x1: usize, x2: usize, width: usize, height: usize) -> f64 {
    ((x1 + 1 < width) as u8 + (x2 + 1 < height) as u8) as f64
}

/// `y ↦ |∇δ_x(y)|²` where `δ_x` is the indicator image of pixel `x`.
///
/// The center carries one unit per forward difference leaving `x`; the left
/// and upper neighbours carry one unit each because their forward difference
/// ends at `x`.
pub fn stencil_norm_of_x(x1: usize, x2: usize, width: usize, height: usize) -> EdgeWeightField {
    assert!(x1 < width && x2 < height, "pixel outside grid");
    let mut field = EdgeWeightField::zeros(width, height);
    field.set(x1, x2, outgoing_links(x1, x2, width, height));
    if x1 >= 1 {
        field.set(x1 - 1, x2, 1.0);
    }
    if x2 >= 1 {
        field.set(x1, x2 - 1, 1.0);
    }
    field
}

/// `x ↦ Σ_y w(y)|∇δ_x(y)|²`, i.e. the diagonal of `−∇·(w∇·)`.
pub fn stencil_column_sum(weights: &EdgeWeightField) -> EdgeWeightField {
    let (width, height) = (weights.width, weights.height);
    EdgeWeightField::from_fn(width, height, |x1, x2| {
        let mut s = weights.get(x1, x2) * outgoing_links(x1, x2, width, height);
        if x1 >= 1 {
            s += weights.get(x1 - 1, x2);
        }
        if x2 >= 1 {
            s += weights.get(x1, x2 - 1);
        }
        s
    })
}

/// `x ↦ Σ_y w(y)|∇δ_y(x)|²`, the expected squared gradient at `x` when each
/// pixel `y` carries independent variance `w(y)`.
pub fn stencil_row_sum(weights: &EdgeWeightField) -> EdgeWeightField {
    let (width, height) = (weights.width, weights.height);
    EdgeWeightField::from_fn(width, height, |x1, x2| {
        let mut s = weights.get(x1, x2) * outgoing_links(x1, x2, width, height);
        if x1 + 1 < width {
            s += weights.get(x1 + 1, x2);
        }
        if x2 + 1 < height {
            s += weights.get(x1, x2 + 1);
        }
        s
    })
}

/// Channel-averaged squared gradient magnitude `(1/C) Σ_ch |∇u_ch(x)|²`.
pub fn squared_gradient_magnitude(u: &ImageGrid) -> EdgeWeightField {
    let (w, h, c) = u.dims();
    let n = w * h;
    let mut acc = vec![0.0; n];
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    for ch in 0..c {
        gradient_channel(u.channel(ch), w, h, &mut gx, &mut gy);
        for i in 0..n {
            acc[i] += gx[i] * gx[i] + gy[i] * gy[i];
        }
    }
    let inv = 1.0 / c as f64;
    acc.iter_mut().for_each(|v| *v *= inv);
    EdgeWeightField {
        width: w,
        height: h,
        values: acc,
    }
}

/// Edge statistic `t(x) = (1/C) Σ_ch ½|∇u_ch(x)|²`, the argument of `ψ` and `ψ′`.
pub fn edge_statistic(u: &ImageGrid) -> EdgeWeightField {
    squared_gradient_magnitude(u).map(|v| 0.5 * v)
}
