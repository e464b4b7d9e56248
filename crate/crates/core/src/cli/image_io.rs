//! 8-bit PNG and binary PGM/PPM input and output.
//!
//! Samples map to `s/255` on load. On save, values are clamped to `[0, 1]` and
//! rounded to the nearest 8-bit level, so `save(load(p))` reproduces `p`.
//! Interleaved pixels are split into planar channels (R, G, B order).

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, GrayImage, ImageEncoder, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

fn planar_from_interleaved(width: usize, height: usize, channels: usize, raw: &[u8], stride: usize) -> Result<ImageGrid> {
    let n = width * height;
    let mut data = vec![0.0; n * channels];
    for (i, px) in raw.chunks_exact(stride).enumerate() {
        for ch in 0..channels {
            data[ch * n + i] = px[ch] as f64 / 255.0;
        }
    }
    ImageGrid::from_planar(width, height, channels, data)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageGrid> {
    let img = image::open(path.as_ref())?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(buf) => planar_from_interleaved(w, h, 1, buf.as_raw(), 1),
        DynamicImage::ImageLumaA8(buf) => planar_from_interleaved(w, h, 1, buf.as_raw(), 2),
        DynamicImage::ImageRgb8(buf) => planar_from_interleaved(w, h, 3, buf.as_raw(), 3),
        DynamicImage::ImageRgba8(buf) => planar_from_interleaved(w, h, 3, buf.as_raw(), 4),
        other => Err(Error::UnsupportedImage(format!(
            "{}: only 8-bit gray or RGB images are supported, found {:?}",
            path.as_ref().display(),
            other.color()
        ))),
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn format_for(path: &Path) -> Result<ImageFormat> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "png" => Ok(ImageFormat::Png),
        "pgm" | "ppm" | "pnm" => Ok(ImageFormat::Pnm),
        _ => Err(Error::UnsupportedImage(format!(
            "{}: output must end in .png, .pgm, .ppm or .pnm",
            path.display()
        ))),
    }
}

/// PNM output is forced to binary P5/P6; the default encoder would pick P7.
fn write(path: &Path, format: ImageFormat, raw: &[u8], w: u32, h: u32, rgb: bool) -> Result<()> {
    let color = if rgb { ExtendedColorType::Rgb8 } else { ExtendedColorType::L8 };
    if format == ImageFormat::Pnm {
        let subtype = if rgb {
            PnmSubtype::Pixmap(SampleEncoding::Binary)
        } else {
            PnmSubtype::Graymap(SampleEncoding::Binary)
        };
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        PnmEncoder::new(file).with_subtype(subtype).write_image(raw, w, h, color)?;
    } else {
        image::save_buffer_with_format(path, raw, w, h, color, format)?;
    }
    Ok(())
}

pub fn save_image(u: &ImageGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let format = format_for(path)?;
    let (w, h) = (u.width() as u32, u.height() as u32);
    let n = u.pixels();
    match u.channels() {
        1 => {
            let raw = u.channel(0).iter().map(|&v| quantize(v)).collect();
            let buf = GrayImage::from_raw(w, h, raw).expect("buffer size");
            write(path, format, buf.as_raw(), w, h, false)?;
        }
        3 => {
            let mut raw = Vec::with_capacity(3 * n);
            for i in 0..n {
                for ch in 0..3 {
                    raw.push(quantize(u.channel(ch)[i]));
                }
            }
            let buf = RgbImage::from_raw(w, h, raw).expect("buffer size");
            write(path, format, buf.as_raw(), w, h, true)?;
        }
        c => {
            return Err(Error::UnsupportedImage(format!(
                "cannot save an image with {c} channels"
            )))
        }
    }
    Ok(())
}
