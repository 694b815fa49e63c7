//! Channel-last float texture images and the geometric ops the rest of the
//! crate builds on. Pixels are `f64` in `[0, 1]`, shape `[H, W, C]` with 1 or
//! 3 channels, and every dimension is at least 8 px.
//!
//! The tileability convention used throughout: an image tiles seamlessly when
//! its opposite borders are pixel-equal (first and last row, first and last
//! column). [`seam_gap`] measures the mean absolute deviation from that, and
//! ops that claim to preserve tileability must keep the gap at zero exactly.

mod io;

pub use io::{load_texture, save_texture};

use ndarray::{concatenate, Array3, Axis, Slice};
use thiserror::Error;

/// Minimum height/width of a [`TextureImage`].
pub const MIN_SIDE: usize = 8;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image dimensions {h}x{w} below minimum of {MIN_SIDE}x{MIN_SIDE}")]
    TooSmall { h: usize, w: usize },
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    BadChannels(usize),
    #[error("pixel values must be finite and within [0, 1]; found {value} at {index:?}")]
    BadValue {
        value: f64,
        index: (usize, usize, usize),
    },
    #[error("crop {spec:?} exceeds image bounds {h}x{w}")]
    CropOutOfBounds { spec: CropSpec, h: usize, w: usize },
    #[error("crop size {ch}x{cw} larger than image {h}x{w}")]
    CropTooLarge {
        ch: usize,
        cw: usize,
        h: usize,
        w: usize,
    },
    #[error("tile repetitions must be at least 1, got ({0}, {1})")]
    BadReps(usize, usize),
    #[error("resize target {0}x{1} below minimum of {MIN_SIDE}x{MIN_SIDE}")]
    ResizeTooSmall(usize, usize),
    #[error("rotation by {theta} deg leaves no {MIN_SIDE}x{MIN_SIDE} interior on a {h}x{w} image")]
    RotationTooNarrow { theta: f64, h: usize, w: usize },
    #[error("failed to read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to decode {path}: {source}")]
    Decode {
        path: String,
        source: image::ImageError,
    },
    #[error("failed to encode {path}: {source}")]
    Encode {
        path: String,
        source: image::ImageError,
    },
}

pub type ImageResult<T> = Result<T, ImageError>;

/// A rectangular region: row/column offset plus extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropSpec {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Channel-last float image, validated on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureImage {
    data: Array3<f64>,
}

impl TextureImage {
    /// Wraps an `[H, W, C]` array, checking dimensions and value range.
    pub fn new(data: Array3<f64>) -> ImageResult<Self> {
        let (h, w, c) = data.dim();
        if h < MIN_SIDE || w < MIN_SIDE {
            return Err(ImageError::TooSmall { h, w });
        }
        if c != 1 && c != 3 {
            return Err(ImageError::BadChannels(c));
        }
        for (index, &value) in data.indexed_iter() {
            if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                return Err(ImageError::BadValue { value, index });
            }
        }
        Ok(TextureImage {
            data: as_standard(data),
        })
    }

    /// Like [`TextureImage::new`] but clamps out-of-range finite values
    /// instead of rejecting them. NaNs still error.
    pub fn new_clamped(mut data: Array3<f64>) -> ImageResult<Self> {
        for (index, value) in data.indexed_iter_mut() {
            if value.is_nan() {
                return Err(ImageError::BadValue {
                    value: *value,
                    index,
                });
            }
            *value = value.clamp(0.0, 1.0);
        }
        Self::new(data)
    }

    /// Builds an image from a per-pixel function returning one value per channel.
    pub fn from_fn(
        h: usize,
        w: usize,
        c: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> ImageResult<Self> {
        Self::new(Array3::from_shape_fn((h, w, c), |(y, x, ch)| f(y, x, ch)))
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    /// True when the first and last rows and the first and last columns are
    /// pixel-identical, i.e. the image tiles with zero seam gap.
    pub fn is_wrap_equal(&self) -> bool {
        wrap_equal_axis(&self.data, Axis(0)) && wrap_equal_axis(&self.data, Axis(1))
    }
}

fn as_standard(data: Array3<f64>) -> Array3<f64> {
    if data.is_standard_layout() {
        data
    } else {
        data.as_standard_layout().to_owned()
    }
}

fn wrap_equal_axis(data: &Array3<f64>, axis: Axis) -> bool {
    let n = data.len_of(axis);
    let first = data.index_axis(axis, 0);
    let last = data.index_axis(axis, n - 1);
    first == last
}

/// Mean absolute difference between opposite borders, pooled over both axes
/// and all channels. Zero exactly when the image is wrap-equal.
pub fn seam_gap(img: &TextureImage) -> f64 {
    let d = img.data();
    let (h, w, c) = d.dim();
    let mut sum = 0.0;
    for y in 0..h {
        for ch in 0..c {
            sum += (d[(y, 0, ch)] - d[(y, w - 1, ch)]).abs();
        }
    }
    for x in 0..w {
        for ch in 0..c {
            sum += (d[(0, x, ch)] - d[(h - 1, x, ch)]).abs();
        }
    }
    sum / ((h + w) * c) as f64
}

/// Repeats the image `reps.0` times vertically and `reps.1` times
/// horizontally: `out[y, x] = img[y mod H, x mod W]`.
pub fn tile(img: &TextureImage, reps: (usize, usize)) -> ImageResult<TextureImage> {
    let (ry, rx) = reps;
    if ry == 0 || rx == 0 {
        return Err(ImageError::BadReps(ry, rx));
    }
    let d = img.data();
    let rows: Vec<_> = (0..ry).map(|_| d.view()).collect();
    let stacked = concatenate(Axis(0), &rows).unwrap();
    let cols: Vec<_> = (0..rx).map(|_| stacked.view()).collect();
    let out = concatenate(Axis(1), &cols).unwrap();
    Ok(TextureImage {
        data: as_standard(out),
    })
}

/// Mirrors the image horizontally and vertically into a 2H x 2W layout
/// `[img, flip_x; flip_y, flip_xy]`. Edge pixels are duplicated across each
/// fold, so the result tiles with zero seam gap by construction.
pub fn unfold(img: &TextureImage) -> TextureImage {
    let d = img.data();
    let fx = d.slice_axis(Axis(1), Slice::new(0, None, -1));
    let top = concatenate(Axis(1), &[d.view(), fx]).unwrap();
    let bottom = top.slice_axis(Axis(0), Slice::new(0, None, -1)).to_owned();
    let out = concatenate(Axis(0), &[top.view(), bottom.view()]).unwrap();
    TextureImage {
        data: as_standard(out),
    }
}

/// Torus translation: `out[y, x] = img[(y - dy) mod H, (x - dx) mod W]`.
/// Preserves the multiset of pixel values exactly.
pub fn circular_shift(img: &TextureImage, dy: isize, dx: isize) -> TextureImage {
    let d = img.data().view().into_dyn();
    let shifted = textile_autograd::roll_array(&d, 0, dy);
    let shifted = textile_autograd::roll_array(&shifted.view(), 1, dx);
    TextureImage {
        data: as_standard(shifted.into_dimensionality().unwrap()),
    }
}

/// Extracts `spec` from the image.
pub fn crop(img: &TextureImage, spec: CropSpec) -> ImageResult<TextureImage> {
    let (h, w, _) = img.data().dim();
    if spec.height < MIN_SIDE || spec.width < MIN_SIDE {
        return Err(ImageError::TooSmall {
            h: spec.height,
            w: spec.width,
        });
    }
    if spec.top + spec.height > h || spec.left + spec.width > w {
        return Err(ImageError::CropOutOfBounds { spec, h, w });
    }
    let view = img.data().slice(ndarray::s![
        spec.top..spec.top + spec.height,
        spec.left..spec.left + spec.width,
        ..
    ]);
    Ok(TextureImage {
        data: view.as_standard_layout().to_owned(),
    })
}

/// The centered crop region for a target size; ties round toward the
/// top-left, so a 128 -> 64 crop covers rows and columns 32..=95.
pub fn center_crop_spec(h: usize, w: usize, size: (usize, usize)) -> ImageResult<CropSpec> {
    let (ch, cw) = size;
    if ch > h || cw > w {
        return Err(ImageError::CropTooLarge { ch, cw, h, w });
    }
    Ok(CropSpec {
        top: (h - ch) / 2,
        left: (w - cw) / 2,
        height: ch,
        width: cw,
    })
}

/// Centered crop; errors when the target exceeds the image (no padding).
pub fn center_crop(img: &TextureImage, size: (usize, usize)) -> ImageResult<TextureImage> {
    let spec = center_crop_spec(img.height(), img.width(), size)?;
    crop(img, spec)
}

/// Anisotropic bilinear resize with corner-aligned sampling; a same-size
/// resize reproduces the input exactly.
pub fn resize(img: &TextureImage, size: (usize, usize)) -> ImageResult<TextureImage> {
    let (oh, ow) = size;
    if oh < MIN_SIDE || ow < MIN_SIDE {
        return Err(ImageError::ResizeTooSmall(oh, ow));
    }
    let out = textile_autograd::bilinear_resize_array(&img.data().clone().into_dyn(), oh, ow);
    Ok(TextureImage {
        data: out.into_dimensionality().unwrap(),
    })
}

/// Size of the largest axis-aligned rectangle inside a `w x h` image rotated
/// by `theta` degrees (the maximal-area inscribed rectangle).
pub fn rotated_interior(h: usize, w: usize, theta: f64) -> (usize, usize) {
    let rad = theta.to_radians();
    let s = rad.sin().abs();
    let c = rad.cos().abs();
    if s < 1e-12 || c < 1e-12 {
        // axis-aligned: the full extent survives (possibly swapped)
        return if s < 1e-12 { (h, w) } else { (w, h) };
    }
    let (hw, hh) = (w as f64, h as f64);
    let (long, short) = if hw >= hh { (hw, hh) } else { (hh, hw) };
    let (iw, ih) = if short <= 2.0 * s * c * long {
        // thin case: the inscribed rectangle is pinned by the short side
        let x = 0.5 * short;
        if hw >= hh {
            (x / s, x / c)
        } else {
            (x / c, x / s)
        }
    } else {
        let cos2 = c * c - s * s;
        ((hw * c - hh * s) / cos2, (hh * c - hw * s) / cos2)
    };
    (ih.floor() as usize, iw.floor() as usize)
}

/// Rotates about the image center (bilinear) and crops to the largest
/// axis-aligned rectangle fully inside the rotated content, so no padding is
/// ever introduced. Multiples of 90 degrees are exact pixel permutations.
pub fn rotate_center_crop(img: &TextureImage, theta: f64) -> ImageResult<TextureImage> {
    let quarter = theta / 90.0;
    if (quarter - quarter.round()).abs() < 1e-12 {
        return Ok(rotate_exact(img, quarter.round() as i64));
    }
    let (h, w, c) = img.data().dim();
    let (oh, ow) = rotated_interior(h, w, theta);
    if oh < MIN_SIDE || ow < MIN_SIDE {
        return Err(ImageError::RotationTooNarrow { theta, h, w });
    }
    let rad = theta.to_radians();
    let (sin, cos) = (rad.sin(), rad.cos());
    let (cy_src, cx_src) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (cy_out, cx_out) = ((oh as f64 - 1.0) / 2.0, (ow as f64 - 1.0) / 2.0);
    let src = img.data();
    let mut out = Array3::<f64>::zeros((oh, ow, c));
    for yo in 0..oh {
        let yc = yo as f64 - cy_out;
        for xo in 0..ow {
            let xc = xo as f64 - cx_out;
            // inverse rotation carries output coordinates back to the source
            let sx = cos * xc + sin * yc + cx_src;
            let sy = -sin * xc + cos * yc + cy_src;
            let x0f = sx.floor();
            let y0f = sy.floor();
            let fx = sx - x0f;
            let fy = sy - y0f;
            let clamp = |v: f64, hi: usize| (v.max(0.0) as usize).min(hi - 1);
            let x0 = clamp(x0f, w);
            let x1 = clamp(x0f + 1.0, w);
            let y0 = clamp(y0f, h);
            let y1 = clamp(y0f + 1.0, h);
            for ch in 0..c {
                let v = (1.0 - fy) * ((1.0 - fx) * src[(y0, x0, ch)] + fx * src[(y0, x1, ch)])
                    + fy * ((1.0 - fx) * src[(y1, x0, ch)] + fx * src[(y1, x1, ch)]);
                out[(yo, xo, ch)] = v.clamp(0.0, 1.0);
            }
        }
    }
    Ok(TextureImage { data: out })
}

fn rotate_exact(img: &TextureImage, quarters: i64) -> TextureImage {
    let d = img.data();
    let data = match quarters.rem_euclid(4) {
        0 => d.clone(),
        // 90 deg counterclockwise: out[y, x] = in[x, W-1-y]
        1 => {
            let t = d.view().permuted_axes([1, 0, 2]);
            t.slice_axis(Axis(0), Slice::new(0, None, -1)).to_owned()
        }
        2 => d
            .slice_axis(Axis(0), Slice::new(0, None, -1))
            .slice_axis(Axis(1), Slice::new(0, None, -1))
            .to_owned(),
        _ => {
            let t = d.view().permuted_axes([1, 0, 2]);
            t.slice_axis(Axis(1), Slice::new(0, None, -1)).to_owned()
        }
    };
    TextureImage {
        data: as_standard(data),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;

    fn ramp(h: usize, w: usize) -> TextureImage {
        TextureImage::from_fn(h, w, 3, |y, x, c| {
            ((y * 31 + x * 17 + c * 7) % 97) as f64 / 96.0
        })
        .unwrap()
    }

    /// Smooth texture whose opposite borders are pixel-equal: the border is
    /// duplicated structurally (indices wrapped mod the core size), so the
    /// equality is bit-exact rather than trusting sin(0) == sin(tau).
    fn wrap_equal(h: usize, w: usize) -> TextureImage {
        TextureImage::from_fn(h, w, 3, |y, x, c| {
            let fy = (y % (h - 1)) as f64 / (h - 1) as f64 * std::f64::consts::TAU;
            let fx = (x % (w - 1)) as f64 / (w - 1) as f64 * std::f64::consts::TAU;
            0.5 + 0.2 * (fy + c as f64).sin() + 0.2 * (fx * 2.0).cos() * (fy).cos() * 0.5
        })
        .unwrap()
    }

    #[test]
    fn construction_rejects_bad_inputs() {
        assert!(matches!(
            TextureImage::new(Array3::zeros((4, 20, 3))),
            Err(ImageError::TooSmall { .. })
        ));
        assert!(matches!(
            TextureImage::new(Array3::zeros((20, 20, 2))),
            Err(ImageError::BadChannels(2))
        ));
        let mut bad = Array3::zeros((20, 20, 3));
        bad[(3, 4, 1)] = 1.5;
        assert!(matches!(
            TextureImage::new(bad),
            Err(ImageError::BadValue { .. })
        ));
    }

    #[test]
    fn tile_is_modular_copy() {
        let img = ramp(9, 11);
        let tiled = tile(&img, (2, 3)).unwrap();
        assert_eq!((tiled.height(), tiled.width()), (18, 33));
        for y in 0..18 {
            for x in 0..33 {
                for c in 0..3 {
                    assert_eq!(tiled.data()[(y, x, c)], img.data()[(y % 9, x % 11, c)]);
                }
            }
        }
    }

    #[test]
    fn unfold_doubles_and_mirrors_with_duplicated_edges() {
        let img = ramp(10, 12);
        let u = unfold(&img);
        assert_eq!((u.height(), u.width()), (20, 24));
        // top-left quadrant is the original
        assert_eq!(u.data()[(3, 5, 1)], img.data()[(3, 5, 1)]);
        // horizontal fold duplicates the last column
        assert_eq!(u.data()[(3, 11, 0)], u.data()[(3, 12, 0)]);
        // vertical fold duplicates the last row
        assert_eq!(u.data()[(9, 4, 2)], u.data()[(10, 4, 2)]);
        // mirrored quadrant
        assert_eq!(u.data()[(2, 23, 0)], img.data()[(2, 0, 0)]);
        assert!(u.is_wrap_equal());
        assert_eq!(seam_gap(&u), 0.0);
    }

    #[test]
    fn circular_shift_formula_and_identity() {
        let img = ramp(9, 11);
        let s = circular_shift(&img, 3, -4);
        for y in 0..9 {
            for x in 0..11 {
                let sy = (y as isize - 3).rem_euclid(9) as usize;
                let sx = (x as isize + 4).rem_euclid(11) as usize;
                assert_eq!(s.data()[(y, x, 0)], img.data()[(sy, sx, 0)]);
            }
        }
        assert_eq!(circular_shift(&img, 9, 11), img);
        assert_eq!(circular_shift(&img, 0, 0), img);
    }

    proptest! {
        #[test]
        fn circular_shift_preserves_value_multiset(dy in -20isize..20, dx in -20isize..20) {
            let img = ramp(10, 9);
            let shifted = circular_shift(&img, dy, dx);
            let mut a: Vec<u64> = img.data().iter().map(|v| v.to_bits()).collect();
            let mut b: Vec<u64> = shifted.data().iter().map(|v| v.to_bits()).collect();
            a.sort_unstable();
            b.sort_unstable();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn center_crop_matches_documented_offsets() {
        let img = ramp(128, 128);
        let spec = center_crop_spec(128, 128, (64, 64)).unwrap();
        assert_eq!(
            spec,
            CropSpec {
                top: 32,
                left: 32,
                height: 64,
                width: 64
            }
        );
        let c = center_crop(&img, (64, 64)).unwrap();
        assert_eq!(c.data()[(0, 0, 0)], img.data()[(32, 32, 0)]);
        assert_eq!(c.data()[(63, 63, 0)], img.data()[(95, 95, 0)]);
        // odd leftover: extra pixel goes to the bottom/right
        let spec = center_crop_spec(9, 9, (8, 8)).unwrap();
        assert_eq!((spec.top, spec.left), (0, 0));
    }

    #[test]
    fn center_crop_larger_than_image_errors() {
        let img = ramp(32, 32);
        assert!(matches!(
            center_crop(&img, (64, 16)),
            Err(ImageError::CropTooLarge { .. })
        ));
    }

    #[test]
    fn resize_same_size_is_identity() {
        let img = ramp(21, 34);
        let r = resize(&img, (21, 34)).unwrap();
        assert_eq!(r, img);
    }

    #[test]
    fn resize_preserves_wrap_equality() {
        let img = wrap_equal(33, 47);
        assert!(img.is_wrap_equal());
        let r = resize(&img, (20, 61)).unwrap();
        assert!(r.is_wrap_equal());
        assert_eq!(seam_gap(&r), 0.0);
    }

    #[test]
    fn rotation_interior_matches_frozen_value() {
        // 45 deg on a 100x100 square keeps a 70x70 interior:
        // floor(100 / (cos 45 + sin 45)) = floor(70.71...)
        assert_eq!(rotated_interior(100, 100, 45.0), (70, 70));
        let img = ramp(100, 100);
        let r = rotate_center_crop(&img, 45.0).unwrap();
        assert_eq!((r.height(), r.width()), (70, 70));
    }

    #[test]
    fn rotation_by_quarter_turns_is_exact() {
        let img = ramp(64, 64);
        let r = rotate_center_crop(&img, 90.0).unwrap();
        assert_eq!((r.height(), r.width()), (64, 64));
        // out[y, x] = in[x, W-1-y] for a counterclockwise quarter turn
        assert_eq!(r.data()[(5, 7, 1)], img.data()[(7, 64 - 1 - 5, 1)]);
        let back = rotate_center_crop(&r, -90.0).unwrap();
        assert_eq!(back, img);
        let full = rotate_center_crop(&img, 360.0).unwrap();
        assert_eq!(full, img);
    }

    #[test]
    fn rotation_of_uniform_image_is_uniform() {
        let img = TextureImage::from_fn(50, 50, 1, |_, _, _| 0.25).unwrap();
        let r = rotate_center_crop(&img, 17.0).unwrap();
        assert!(r.data().iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn rotation_composition_recovers_alignment() {
        // rotating a smooth periodic texture out and back must leave the
        // interior close to the original (double bilinear smoothing only)
        let img = wrap_equal(96, 96);
        let out = rotate_center_crop(&img, -20.0).unwrap();
        let back = rotate_center_crop(&out, 20.0).unwrap();
        let crop_h = back.height();
        let crop_w = back.width();
        let orig = center_crop(&img, (crop_h, crop_w)).unwrap();
        let mut err = 0.0;
        for y in 2..crop_h - 2 {
            for x in 2..crop_w - 2 {
                err += (orig.data()[(y, x, 0)] - back.data()[(y, x, 0)]).abs();
            }
        }
        err /= ((crop_h - 4) * (crop_w - 4)) as f64;
        assert!(err < 0.02, "mean interior deviation {err} too large");
    }

    #[test]
    fn seam_gap_zero_iff_wrap_equal() {
        let img = wrap_equal(30, 40);
        assert_eq!(seam_gap(&img), 0.0);
        let broken = ramp(30, 40);
        assert!(seam_gap(&broken) > 0.01);
    }
}
