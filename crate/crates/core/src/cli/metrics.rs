use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::{EdgeWeightField, ImageGrid};

use super::image_io::save_image;

/// `10·log₁₀(1/MSE)` with peak 1; `+∞` for identical images.
pub fn psnr(u: &ImageGrid, reference: &ImageGrid) -> Result<f64> {
    u.same_dims(reference)?;
    let diff = u.axpy(-1.0, reference);
    let mse = diff.dot(&diff) / diff.as_slice().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Affine map from stored intensities back to mean edge values:
/// `1/ξ = offset + scale · pixel`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeScaling {
    pub offset: f64,
    pub scale: f64,
    /// Pixels with `ξ ≤ 0`, written as 1.0.
    pub saturated: usize,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".txt");
    PathBuf::from(name)
}

/// Mean edge image `1/ξ` rescaled to `[0, 1]`. Weights `≤ 0` (e.g. a two-point
/// mean latent scale of exactly 0) map to 1.0, the strongest edge. A constant
/// field becomes uniform 0.5.
pub fn edge_image(weights: &EdgeWeightField) -> (ImageGrid, EdgeScaling) {
    let inverse: Vec<Option<f64>> = weights
        .as_slice()
        .iter()
        .map(|&w| if w > 0.0 { Some(1.0 / w) } else { None })
        .collect();
    let finite = inverse.iter().flatten().copied();
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    let saturated = inverse.iter().filter(|v| v.is_none()).count();
    let (offset, scale) = if lo.is_finite() && hi > lo { (lo, hi - lo) } else if lo.is_finite() { (lo - 0.5, 1.0) } else { (0.0, 1.0) };
    let values = inverse
        .iter()
        .map(|v| match v {
            Some(e) => ((e - offset) / scale).clamp(0.0, 1.0),
            None => 1.0,
        })
        .collect();
    let image = ImageGrid::from_planar(weights.width(), weights.height(), 1, values).expect("sizes match");
    (image, EdgeScaling { offset, scale, saturated })
}

/// Writes the edge image and a `<path>.txt` sidecar recording the scaling.
pub fn export_edge_map(weights: &EdgeWeightField, path: impl AsRef<Path>) -> Result<EdgeScaling> {
    let path = path.as_ref();
    let (image, scaling) = edge_image(weights);
    save_image(&image, path)?;
    let mut text = String::new();
    writeln!(text, "# mean edge value 1/xi = offset + scale * pixel, pixel = stored/255").ok();
    writeln!(text, "offset = {:e}", scaling.offset).ok();
    writeln!(text, "scale = {:e}", scaling.scale).ok();
    writeln!(text, "saturated = {}", scaling.saturated).ok();
    std::fs::write(sidecar_path(path), text)?;
    Ok(scaling)
}

/// Reads a sidecar back.
pub fn read_edge_scaling(path: impl AsRef<Path>) -> Result<EdgeScaling> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let mut offset = None;
    let mut scale = None;
    let mut saturated = 0;
    for line in text.lines() {
        let line = line.trim();
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else { continue };
        let bad = |_| Error::Config(format!("malformed sidecar line `{line}`"));
        match k.trim() {
            "offset" => offset = Some(v.trim().parse::<f64>().map_err(bad)?),
            "scale" => scale = Some(v.trim().parse::<f64>().map_err(bad)?),
            "saturated" => saturated = v.trim().parse::<usize>().map_err(|_| Error::Config(format!("malformed sidecar line `{line}`")))?,
            _ => {}
        }
    }
    match (offset, scale) {
        (Some(offset), Some(scale)) => Ok(EdgeScaling { offset, scale, saturated }),
        _ => Err(Error::Config("sidecar lacks offset or scale".into())),
    }
}

/// First line: PSNR in dB (`inf` for a perfect match, `nan` without a
/// reference). Then one objective value per line.
pub fn write_metrics(path: impl AsRef<Path>, psnr: Option<f64>, trace: &[f64]) -> Result<()> {
    let mut text = String::new();
    match psnr {
        Some(p) => writeln!(text, "{p}").ok(),
        None => writeln!(text, "nan").ok(),
    };
    for v in trace {
        writeln!(text, "{v:.17e}").ok();
    }
    std::fs::write(path, text)?;
    Ok(())
}
