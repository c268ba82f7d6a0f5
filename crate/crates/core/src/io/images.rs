use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};

use super::{read_pfm, write_atomic};
use crate::error::{Error, Result};
use crate::scene::{GrayImage, ImageRgb};

fn image_err(path: &Path, source: image::ImageError) -> Error {
    match source {
        image::ImageError::IoError(e) => Error::io(path, e),
        source => Error::Image {
            path: path.into(),
            source,
        },
    }
}

/// Any format the `image` crate decodes, as `[0, 1]` RGB.
pub fn read_rgb(path: &Path) -> Result<ImageRgb> {
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match img {
        DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) | DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) => img
            .into_rgb8()
            .pixels()
            .map(|p| p.0.map(|v| v as f64 / 255.0))
            .collect(),
        _ => img
            .into_rgb16()
            .pixels()
            .map(|p| p.0.map(|v| v as f64 / 65535.0))
            .collect(),
    };
    Ok(ImageRgb {
        width: w,
        height: h,
        data,
    })
}

/// Metric depth from a `.pfm` file or a 16-bit PNG in millimeters.
pub fn read_depth(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("pfm") => read_pfm(path),
        Some("png") => {
            let img = image::open(path).map_err(|e| image_err(path, e))?;
            if !matches!(img, DynamicImage::ImageLuma16(_)) {
                return Err(Error::format(path, "depth PNG must be 16-bit grayscale (millimeters)"));
            }
            let g = img.into_luma16();
            let values = g.pixels().map(|p| p.0[0] as f64 / 1000.0).collect();
            Ok((values, g.width() as usize, g.height() as usize))
        }
        _ => Err(Error::format(path, "depth must be a .pfm or 16-bit .png file")),
    }
}

fn write_png(path: &Path, img: DynamicImage) -> Result<()> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).map_err(|e| image_err(path, e))?;
    write_atomic(path, buf.get_ref())
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_rgb_png(path: &Path, image: &ImageRgb) -> Result<()> {
    let buf = ImageBuffer::from_fn(image.width as u32, image.height as u32, |c, r| {
        Rgb(image.get(c as usize, r as usize).map(to_u8))
    });
    write_png(path, DynamicImage::ImageRgb8(buf))
}

pub fn write_gray_png(path: &Path, image: &GrayImage) -> Result<()> {
    let buf = ImageBuffer::from_fn(image.width as u32, image.height as u32, |c, r| {
        Luma([to_u8(image.get(c as usize, r as usize))])
    });
    write_png(path, DynamicImage::ImageLuma8(buf))
}

/// Depth in meters as a 16-bit millimeter PNG; out-of-range values saturate.
pub fn write_depth_mm_png(path: &Path, depth: &[f64], width: usize, height: usize) -> Result<()> {
    let buf = ImageBuffer::from_fn(width as u32, height as u32, |c, r| {
        let d = depth[r as usize * width + c as usize];
        Luma([(d * 1000.0).round().clamp(0.0, 65535.0) as u16])
    });
    write_png(path, DynamicImage::ImageLuma16(buf))
}

/// How a 16-bit inverse-depth PNG maps back to 1/m: `value / 65535 * max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvDepthEncoding {
    pub max: f64,
}

impl InvDepthEncoding {
    pub fn sidecar(&self) -> String {
        format!("# inverse depth [1/m] = png_value / 65535 * max\nmax {:e}\n", self.max)
    }

    pub fn decode(&self, value: u16) -> f64 {
        value as f64 / 65535.0 * self.max
    }
}

/// Writes inverse depth normalized by its maximum, plus `<path>.txt`
/// recording that maximum.
pub fn write_inv_depth_png(path: &Path, inv_depth: &GrayImage) -> Result<InvDepthEncoding> {
    let max = inv_depth.data.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
    let enc = InvDepthEncoding { max };
    let buf = ImageBuffer::from_fn(inv_depth.width as u32, inv_depth.height as u32, |c, r| {
        let v = inv_depth.get(c as usize, r as usize);
        let q = if max > 0.0 { (v / max * 65535.0).round().clamp(0.0, 65535.0) } else { 0.0 };
        Luma([q as u16])
    });
    write_png(path, DynamicImage::ImageLuma16(buf))?;
    let mut sidecar = path.as_os_str().to_owned();
    sidecar.push(".txt");
    write_atomic(Path::new(&sidecar), enc.sidecar().as_bytes())?;
    Ok(enc)
}
