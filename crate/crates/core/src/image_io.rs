//! 8-bit image files to and from `[0, 1]` RGB tensors.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Decode any supported image file into a `3 × H × W` tensor in `[0, 1]`.
pub fn load_rgb(path: impl AsRef<Path>) -> Result<Tensor3> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory(&bytes)
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    rgb8_to_tensor(img.as_raw(), w as usize, h as usize)
}

/// Interleaved 8-bit RGB to a channel-major tensor.
pub fn rgb8_to_tensor(pixels: &[u8], width: usize, height: usize) -> Result<Tensor3> {
    if pixels.len() != width * height * 3 {
        return Err(Error::Input(format!(
            "{width}x{height} RGB image needs {} bytes, got {}",
            width * height * 3,
            pixels.len()
        )));
    }
    Tensor3::from_fn(3, height, width, |c, y, x| {
        pixels[(y * width + x) * 3 + c] as f32 / 255.0
    })
}

/// Header-only dimension probe, `(width, height)`.
pub fn dimensions(path: impl AsRef<Path>) -> Result<(u32, u32)> {
    let path = path.as_ref();
    image::image_dimensions(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Quantize a `[0, 1]` RGB tensor to 8 bits and write it as PNG.
pub fn save_rgb(tensor: &Tensor3, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if tensor.channels() != 3 {
        return Err(Error::Input(format!(
            "expected 3 channels, got {}",
            tensor.channels()
        )));
    }
    let (_, h, w) = tensor.dims();
    let mut buf = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                buf.push((tensor.get(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    image::save_buffer(path, &buf, w as u32, h as u32, image::ColorType::Rgb8).map_err(|e| {
        Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    })
}
