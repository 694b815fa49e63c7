//! PNG/JPEG loading and saving for [`TextureImage`].

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Rgb};
use ndarray::Array3;

use super::{ImageError, ImageResult, TextureImage};

/// Loads a PNG or JPEG into a float image. 8-bit samples map to `v / 255`,
/// 16-bit to `v / 65535`. Grayscale files load with one channel; an alpha
/// channel, if present, is dropped with a warning.
pub fn load_texture(path: impl AsRef<Path>) -> ImageResult<TextureImage> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|source| ImageError::Read {
        path: display.clone(),
        source,
    })?;
    let decoded = image::load_from_memory(&bytes).map_err(|source| ImageError::Decode {
        path: display.clone(),
        source,
    })?;
    if decoded.color().has_alpha() {
        log::warn!("{display}: dropping alpha channel");
    }
    let data = match decoded {
        DynamicImage::ImageLuma8(buf) => {
            let (w, h) = buf.dimensions();
            Array3::from_shape_fn((h as usize, w as usize, 1), |(y, x, _)| {
                buf.get_pixel(x as u32, y as u32).0[0] as f64 / 255.0
            })
        }
        DynamicImage::ImageLuma16(buf) => {
            let (w, h) = buf.dimensions();
            Array3::from_shape_fn((h as usize, w as usize, 1), |(y, x, _)| {
                buf.get_pixel(x as u32, y as u32).0[0] as f64 / 65535.0
            })
        }
        DynamicImage::ImageLumaA8(buf) => {
            let (w, h) = buf.dimensions();
            Array3::from_shape_fn((h as usize, w as usize, 1), |(y, x, _)| {
                buf.get_pixel(x as u32, y as u32).0[0] as f64 / 255.0
            })
        }
        other if other.color().bytes_per_pixel() > 4 => {
            let buf = other.into_rgb16();
            let (w, h) = buf.dimensions();
            Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
                buf.get_pixel(x as u32, y as u32).0[c] as f64 / 65535.0
            })
        }
        other => {
            let buf = other.into_rgb8();
            let (w, h) = buf.dimensions();
            Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
                buf.get_pixel(x as u32, y as u32).0[c] as f64 / 255.0
            })
        }
    };
    TextureImage::new(data)
}

/// Saves as PNG or JPEG depending on the file extension, quantizing each
/// sample with round-half-up to 8 bits. Single-channel images are written as
/// grayscale PNG (or replicated to RGB for JPEG).
pub fn save_texture(img: &TextureImage, path: impl AsRef<Path>) -> ImageResult<()> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let (h, w, c) = img.data().dim();
    let quant = |v: f64| ((v * 255.0).round().clamp(0.0, 255.0)) as u8;
    let out: DynamicImage = if c == 1 {
        let buf = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            image::Luma([quant(img.data()[(y as usize, x as usize, 0)])])
        });
        DynamicImage::ImageLuma8(buf)
    } else {
        let buf = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            let px = |ch: usize| quant(img.data()[(y as usize, x as usize, ch)]);
            Rgb([px(0), px(1), px(2)])
        });
        DynamicImage::ImageRgb8(buf)
    };
    // JPEG has no grayscale path through DynamicImage::save; promote to RGB
    let is_jpeg = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("jpg") || e.eq_ignore_ascii_case("jpeg"));
    let out = if is_jpeg && c == 1 {
        DynamicImage::ImageRgb8(out.into_rgb8())
    } else {
        out
    };
    out.save(path).map_err(|source| match source {
        image::ImageError::IoError(source) => ImageError::Write {
            path: display.clone(),
            source,
        },
        source => ImageError::Encode {
            path: display.clone(),
            source,
        },
    })
}
