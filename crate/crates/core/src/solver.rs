//! The diffusion operator `Λ(ξ)u = (1/σ²)A′Au − ∇·(ξ∇u)` and its solves.
//!
//! `Λ` is symmetric, and positive definite whenever `A𝟏 ≠ 0` and `ξ ≥ 0`.
//! Every restoration method reduces to solves with it, done here by
//! conjugate gradients channel by channel with the edge weights shared.
//! [`DenseOracle`] assembles `Λ` explicitly for small grids and is meant for
//! testing.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{self, stencil_column_sum, EdgeWeightField, ImageGrid};
use crate::operators::ForwardOperator;

#[derive(Clone, Copy, Debug)]
pub struct DiffusionOperator<'a> {
    forward: &'a ForwardOperator,
    inv_sigma2: f64,
    xi0: &'a EdgeWeightField,
}

impl<'a> DiffusionOperator<'a> {
    pub fn new(forward: &'a ForwardOperator, sigma: f64, xi0: &'a EdgeWeightField) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
        }
        if xi0.as_slice().iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config("edge weights must be finite and nonnegative".into()));
        }
        Ok(Self {
            forward,
            inv_sigma2: 1.0 / (sigma * sigma),
            xi0,
        })
    }

    pub fn width(&self) -> usize {
        self.xi0.width()
    }

    pub fn height(&self) -> usize {
        self.xi0.height()
    }

    pub fn forward(&self) -> &ForwardOperator {
        self.forward
    }

    pub fn edge_weights(&self) -> &EdgeWeightField {
        self.xi0
    }

    pub fn inv_sigma2(&self) -> f64 {
        self.inv_sigma2
    }

    fn check(&self, u: &ImageGrid) -> Result<()> {
        if u.width() != self.width() || u.height() != self.height() {
            return Err(Error::dims(
                (self.width(), self.height(), u.channels()),
                u.dims(),
            ));
        }
        Ok(())
    }

    pub fn apply(&self, u: &ImageGrid) -> Result<ImageGrid> {
        self.check(u)?;
        let mut out = ImageGrid::zeros(u.width(), u.height(), u.channels());
        let mut scratch = vec![0.0; u.pixels()];
        for ch in 0..u.channels() {
            self.apply_channel(u.channel(ch), &mut scratch, out.channel_mut(ch));
        }
        Ok(out)
    }

    pub(crate) fn apply_channel(&self, u: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        let (w, h) = (self.width(), self.height());
        self.forward.normal_channel(u, w, h, scratch, out);
        out.iter_mut().for_each(|v| *v *= self.inv_sigma2);
        grid::add_weighted_neg_divergence(u, self.xi0.as_slice(), w, h, out);
    }

    /// `m = (1/σ²)A′v`.
    pub fn rhs(&self, observed: &ImageGrid) -> Result<ImageGrid> {
        self.check(observed)?;
        Ok(self.forward.adjoint_apply(observed).map(|v| v * self.inv_sigma2))
    }

    /// `diag Λ(x) = (1/σ²)|Aδ_x|² + Σ_y ξ(y)|∇δ_x(y)|²`.
    pub fn diagonal(&self) -> EdgeWeightField {
        let (w, h) = (self.width(), self.height());
        let data = self.forward.column_norms_sq(w, h);
        let diffusion = stencil_column_sum(self.xi0);
        let values = data
            .as_slice()
            .iter()
            .zip(diffusion.as_slice())
            .map(|(a, d)| a * self.inv_sigma2 + d)
            .collect();
        EdgeWeightField::from_vec(w, h, values).expect("matching sizes")
    }

    /// `½(1/σ²)‖Au − v‖² + ½Σ_x ξ(x)|∇u(x)|²`, the energy minimized by `Λu = m`.
    pub fn quadratic_energy(&self, u: &ImageGrid, observed: &ImageGrid) -> Result<f64> {
        self.check(u)?;
        u.same_dims(observed)?;
        let residual = self.forward.apply(u).axpy(-1.0, observed);
        let g = grid::gradient(u);
        let n = u.pixels();
        let xi = self.xi0.as_slice();
        let mut smooth = 0.0;
        for ch in 0..u.channels() {
            for (i, &w) in xi.iter().enumerate() {
                let (a, b) = (g.horizontal()[ch * n + i], g.vertical()[ch * n + i]);
                smooth += w * (a * a + b * b);
            }
        }
        Ok(0.5 * self.inv_sigma2 * residual.dot(&residual) + 0.5 * smooth)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Preconditioner {
    #[default]
    None,
    /// Inverse of `diag Λ`.
    Jacobi,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgSettings {
    /// Relative residual target `‖Λu − b‖ ≤ tol·‖b‖`.
    pub tol: f64,
    /// Defaults to ten times the pixel count.
    pub max_iter: Option<usize>,
    pub preconditioner: Preconditioner,
}

impl Default for CgSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: None,
            preconditioner: Preconditioner::None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CgSolution {
    pub u: ImageGrid,
    /// Largest iteration count over channels.
    pub iterations: usize,
    /// Largest relative residual over channels.
    pub residual: f64,
}

pub fn cg_solve(op: &DiffusionOperator<'_>, b: &ImageGrid, settings: &CgSettings) -> Result<CgSolution> {
    cg_solve_from(op, b, None, settings)
}

/// Conjugate gradients started from `initial` (zero when absent).
///
/// Each iterate minimizes the energy `½⟨u, Λu⟩ − ⟨b, u⟩` over a growing Krylov
/// space around the start, so the energy never exceeds its starting value.
pub fn cg_solve_from(
    op: &DiffusionOperator<'_>,
    b: &ImageGrid,
    initial: Option<&ImageGrid>,
    settings: &CgSettings,
) -> Result<CgSolution> {
    op.check(b)?;
    if let Some(x0) = initial {
        x0.same_dims(b)?;
    }
    if !(settings.tol > 0.0) {
        return Err(Error::Config(format!("cg tolerance must be positive, got {}", settings.tol)));
    }
    let n = b.pixels();
    let max_iter = settings.max_iter.unwrap_or(10 * n).max(1);
    let inv_diag: Option<Vec<f64>> = match settings.preconditioner {
        Preconditioner::None => None,
        Preconditioner::Jacobi => Some(op.diagonal().as_slice().iter().map(|d| 1.0 / d).collect()),
    };

    let mut u = match initial {
        Some(x0) => x0.clone(),
        None => ImageGrid::zeros(b.width(), b.height(), b.channels()),
    };
    let mut work = CgWork::new(n);
    let mut iterations = 0;
    let mut residual: f64 = 0.0;
    for ch in 0..b.channels() {
        let (it, res) = cg_channel(
            op,
            b.channel(ch),
            u.channel_mut(ch),
            settings.tol,
            max_iter,
            inv_diag.as_deref(),
            &mut work,
        )?;
        iterations = iterations.max(it);
        residual = residual.max(res);
    }
    Ok(CgSolution {
        u,
        iterations,
        residual,
    })
}

struct CgWork {
    r: Vec<f64>,
    z: Vec<f64>,
    p: Vec<f64>,
    ap: Vec<f64>,
    scratch: Vec<f64>,
}

impl CgWork {
    fn new(n: usize) -> Self {
        Self {
            r: vec![0.0; n],
            z: vec![0.0; n],
            p: vec![0.0; n],
            ap: vec![0.0; n],
            scratch: vec![0.0; n],
        }
    }
}

fn cg_channel(
    op: &DiffusionOperator<'_>,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
    inv_diag: Option<&[f64]>,
    work: &mut CgWork,
) -> Result<(usize, f64)> {
    let b_norm = grid::dot(b, b).sqrt();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok((0, 0.0));
    }
    let CgWork {
        r,
        z,
        p,
        ap,
        scratch,
    } = work;

    op.apply_channel(x, scratch, ap);
    for i in 0..b.len() {
        r[i] = b[i] - ap[i];
    }
    let mut r_norm = grid::dot(r, r).sqrt();
    if r_norm <= tol * b_norm {
        return Ok((0, r_norm / b_norm));
    }
    precondition(r, inv_diag, z);
    p.copy_from_slice(z);
    let mut rz = grid::dot(r, z);

    for it in 1..=max_iter {
        op.apply_channel(p, scratch, ap);
        let pap = grid::dot(p, ap);
        if !(pap > 0.0) {
            return Err(Error::CgNotConverged {
                iterations: it,
                residual: r_norm / b_norm,
            });
        }
        let alpha = rz / pap;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        r_norm = grid::dot(r, r).sqrt();
        if r_norm <= tol * b_norm {
            return Ok((it, r_norm / b_norm));
        }
        precondition(r, inv_diag, z);
        let rz_next = grid::dot(r, z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..p.len() {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::CgNotConverged {
        iterations: max_iter,
        residual: r_norm / b_norm,
    })
}

fn precondition(r: &[f64], inv_diag: Option<&[f64]>, z: &mut [f64]) {
    match inv_diag {
        Some(d) => {
            for i in 0..r.len() {
                z[i] = d[i] * r[i];
            }
        }
        None => z.copy_from_slice(r),
    }
}

/// Largest grid (in pixels) the dense oracle will assemble.
pub const DENSE_ORACLE_LIMIT: usize = 64;

/// `Λ` of a single channel as an explicit matrix, indexed by row-major pixel.
pub struct DenseOracle {
    width: usize,
    height: usize,
    matrix: DMatrix<f64>,
}

impl DenseOracle {
    /// Assembles `Λ` column by column from indicator images.
    pub fn assemble(op: &DiffusionOperator<'_>) -> Result<Self> {
        let (w, h) = (op.width(), op.height());
        let n = w * h;
        if n > DENSE_ORACLE_LIMIT {
            return Err(Error::GridTooLarge {
                pixels: n,
                limit: DENSE_ORACLE_LIMIT,
            });
        }
        let mut matrix = DMatrix::zeros(n, n);
        let mut delta = vec![0.0; n];
        let mut column = vec![0.0; n];
        let mut scratch = vec![0.0; n];
        for j in 0..n {
            delta[j] = 1.0;
            op.apply_channel(&delta, &mut scratch, &mut column);
            delta[j] = 0.0;
            for i in 0..n {
                matrix[(i, j)] = column[i];
            }
        }
        Ok(Self {
            width: w,
            height: h,
            matrix,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn asymmetry(&self) -> f64 {
        (&self.matrix - self.matrix.transpose()).norm()
    }

    pub fn diagonal(&self) -> EdgeWeightField {
        EdgeWeightField::from_vec(self.width, self.height, self.matrix.diagonal().iter().copied().collect())
            .expect("square matrix")
    }

    fn cholesky(&self) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        self.matrix
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Config("operator is not positive definite".into()))
    }

    /// Exact solve, channel by channel.
    pub fn solve(&self, b: &ImageGrid) -> Result<ImageGrid> {
        if b.width() != self.width || b.height() != self.height {
            return Err(Error::dims((self.width, self.height, b.channels()), b.dims()));
        }
        let chol = self.cholesky()?;
        let mut out = ImageGrid::zeros(self.width, self.height, b.channels());
        for ch in 0..b.channels() {
            let x = chol.solve(&DVector::from_column_slice(b.channel(ch)));
            out.channel_mut(ch).copy_from_slice(x.as_slice());
        }
        Ok(out)
    }

    pub fn log_det(&self) -> Result<f64> {
        let chol = self.cholesky()?;
        Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
    }

    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        Ok(self.cholesky()?.inverse())
    }

    /// `diag(Λ⁻¹)`, the exact marginal variances of `N(Λ⁻¹m, Λ⁻¹)`.
    pub fn inverse_diagonal(&self) -> Result<EdgeWeightField> {
        let inv = self.inverse()?;
        EdgeWeightField::from_vec(self.width, self.height, inv.diagonal().iter().copied().collect())
    }
}
