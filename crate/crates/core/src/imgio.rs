//! PNG reading and writing for grayscale images stored as `(h, w)` arrays
//! of intensities in `[0, 1]`, plus conversion to the `(c, h, w)` network
//! input layout.

use std::path::Path;

use image::{GrayImage, ImageReader};
use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

/// Write intensities in `[0, 1]` as an 8-bit grayscale PNG.
pub fn save_gray_png(path: impl AsRef<Path>, image: &Array2<f64>) -> Result<()> {
    let (h, w) = image.dim();
    if h == 0 || w == 0 {
        return Err(Error::invalid("cannot save an empty image"));
    }
    let mut out = GrayImage::new(w as u32, h as u32);
    for ((y, x), &v) in image.indexed_iter() {
        let byte = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        out.put_pixel(x as u32, y as u32, image::Luma([byte]));
    }
    out.save(path.as_ref())?;
    Ok(())
}

/// Read any supported image as grayscale intensities in `[0, 1]`.
pub fn load_gray_png(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let img = ImageReader::open(path.as_ref())?.decode()?.into_luma8();
    let (w, h) = img.dimensions();
    let mut out = Array2::<f64>::zeros((h as usize, w as usize));
    for (x, y, p) in img.enumerate_pixels() {
        out[[y as usize, x as usize]] = p.0[0] as f64 / 255.0;
    }
    Ok(out)
}

/// Replicate a grayscale image across `channels` planes, the layout the
/// feature extractor consumes.
pub fn to_input_tensor(gray: &Array2<f64>, channels: usize) -> Array3<f64> {
    let (h, w) = gray.dim();
    let mut out = Array3::<f64>::zeros((channels, h, w));
    for c in 0..channels {
        out.index_axis_mut(ndarray::Axis(0), c).assign(gray);
    }
    out
}
