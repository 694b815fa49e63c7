//! Pixel-level augmentation ops. The preserving ops here fall into two
//! groups: value maps (color, gamma, equalization) send equal pixels to
//! equal pixels and so keep wrap-equal borders equal for free, while the
//! spatial ops (blur, noise) explicitly treat a wrap-equal axis as periodic
//! — filtering the core circularly, tying the noise field across the
//! duplicated border — so the seam gap stays at exactly zero.

use ndarray::{Array2, Array3, Axis, Slice, Zip};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::img::{ImageError, ImageResult, TextureImage, MIN_SIDE};

use super::RngState;

/// Per-channel affine remap `v -> clamp(a*v + b)` with `a`, `b` drawn per
/// channel from the given ranges.
pub(super) fn color_jitter(
    img: &TextureImage,
    rng: &mut RngState,
    scale: (f64, f64),
    shift: (f64, f64),
) -> TextureImage {
    let c = img.channels();
    let coeffs: Vec<(f64, f64)> = (0..c)
        .map(|_| {
            (
                if scale.0 == scale.1 {
                    scale.0
                } else {
                    rng.random_range(scale.0..scale.1)
                },
                if shift.0 == shift.1 {
                    shift.0
                } else {
                    rng.random_range(shift.0..shift.1)
                },
            )
        })
        .collect();
    let mut data = img.data().clone();
    for (ch, &(a, b)) in coeffs.iter().enumerate() {
        data.index_axis_mut(Axis(2), ch)
            .mapv_inplace(|v| (a * v + b).clamp(0.0, 1.0));
    }
    TextureImage::new(data).expect("clamped affine keeps pixels valid")
}

/// Power-law intensity remap.
pub(super) fn apply_gamma(img: &TextureImage, gamma: f64) -> TextureImage {
    let data = img.data().mapv(|v| v.powf(gamma));
    TextureImage::new_clamped(data).expect("gamma of [0,1] stays in [0,1]")
}

pub(super) fn flip(img: &TextureImage, horizontal: bool) -> TextureImage {
    let axis = if horizontal { Axis(1) } else { Axis(0) };
    let data = img
        .data()
        .slice_axis(axis, Slice::new(0, None, -1))
        .to_owned();
    TextureImage::new(data).expect("flip keeps pixels valid")
}

/// Per-channel histogram equalization over 256 bins. Equal input values map
/// to equal output values, so border equality is untouched. A channel whose
/// values all share one bin is left unchanged.
pub fn equalize(img: &TextureImage) -> TextureImage {
    const BINS: usize = 256;
    let mut data = img.data().clone();
    let total = (img.height() * img.width()) as f64;
    for ch in 0..img.channels() {
        let mut plane = data.index_axis_mut(Axis(2), ch);
        let mut hist = [0u64; BINS];
        for &v in plane.iter() {
            hist[bin_of(v)] += 1;
        }
        let mut cdf = [0.0f64; BINS];
        let mut acc = 0u64;
        for (b, &count) in hist.iter().enumerate() {
            acc += count;
            cdf[b] = acc as f64;
        }
        let cdf_min = hist
            .iter()
            .position(|&c| c > 0)
            .map(|b| cdf[b])
            .unwrap_or(0.0);
        let denom = total - cdf_min;
        if denom <= 0.0 {
            continue;
        }
        plane.mapv_inplace(|v| ((cdf[bin_of(v)] - cdf_min) / denom).clamp(0.0, 1.0));
    }
    TextureImage::new(data).expect("equalized values stay in [0,1]")
}

fn bin_of(v: f64) -> usize {
    ((v * 256.0) as usize).min(255)
}

/// Separable Gaussian blur, truncated at three standard deviations. On an
/// axis whose borders are wrap-equal the filter runs circularly over the
/// periodic core and the duplicated border is restored afterwards; other
/// axes use replicate padding.
pub fn gaussian_blur(img: &TextureImage, sigma: f64) -> TextureImage {
    if sigma < 1e-6 {
        return img.clone();
    }
    let radius = ((3.0 * sigma).ceil() as usize).max(1);
    let mut kernel = Vec::with_capacity(2 * radius + 1);
    for k in 0..=2 * radius {
        let d = k as f64 - radius as f64;
        kernel.push((-0.5 * d * d / (sigma * sigma)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for w in &mut kernel {
        *w /= norm;
    }
    let d = img.data();
    let (h, w, _) = d.dim();
    let wrap_y = h > MIN_SIDE && d.index_axis(Axis(0), 0) == d.index_axis(Axis(0), h - 1);
    let wrap_x = w > MIN_SIDE && d.index_axis(Axis(1), 0) == d.index_axis(Axis(1), w - 1);
    let mut out = d.clone();
    blur_axis(&mut out, Axis(1), &kernel, wrap_x);
    blur_axis(&mut out, Axis(0), &kernel, wrap_y);
    TextureImage::new_clamped(out).expect("blur of valid pixels stays finite")
}

fn blur_axis(data: &mut Array3<f64>, axis: Axis, kernel: &[f64], wrap: bool) {
    let n = data.len_of(axis);
    let radius = kernel.len() / 2;
    let mut scratch = vec![0.0f64; n];
    for mut lane in data.lanes_mut(axis) {
        scratch.clear();
        scratch.extend(lane.iter());
        if wrap {
            // filter the periodic core; the duplicated border tracks index 0
            let m = n - 1;
            for (i, slot) in lane.iter_mut().enumerate().take(m) {
                let mut acc = 0.0;
                for (k, &wk) in kernel.iter().enumerate() {
                    let src = ((i + k) as isize - radius as isize).rem_euclid(m as isize);
                    acc += wk * scratch[src as usize];
                }
                *slot = acc;
            }
            let first = lane[0];
            lane[m] = first;
        } else {
            for (i, slot) in lane.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (k, &wk) in kernel.iter().enumerate() {
                    let src = ((i + k) as isize - radius as isize).clamp(0, n as isize - 1);
                    acc += wk * scratch[src as usize];
                }
                *slot = acc;
            }
        }
    }
}

/// Additive Gaussian pixel noise, clamped back to `[0,1]`. On wrap-equal
/// axes the noise field itself is tiled across the duplicated border so the
/// image stays wrap-equal.
pub(super) fn add_noise(img: &TextureImage, rng: &mut RngState, sigma: f64) -> TextureImage {
    if sigma < 1e-12 {
        return img.clone();
    }
    let d = img.data();
    let (h, w, c) = d.dim();
    let wrap_y = h > MIN_SIDE && d.index_axis(Axis(0), 0) == d.index_axis(Axis(0), h - 1);
    let wrap_x = w > MIN_SIDE && d.index_axis(Axis(1), 0) == d.index_axis(Axis(1), w - 1);
    let (fh, fw) = (
        if wrap_y { h - 1 } else { h },
        if wrap_x { w - 1 } else { w },
    );
    let mut field = Array3::<f64>::zeros((fh, fw, c));
    for v in field.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v = sigma * z;
    }
    let mut out = d.clone();
    Zip::indexed(&mut out).for_each(|(y, x, ch), v| {
        let fy = if wrap_y && y == h - 1 { 0 } else { y };
        let fx = if wrap_x && x == w - 1 { 0 } else { x };
        *v = (*v + field[(fy, fx, ch)]).clamp(0.0, 1.0);
    });
    TextureImage::new(out).expect("clamped noise keeps pixels valid")
}

/// Shears the image along one axis (bilinear) and crops away the slanted
/// margins so no padding enters the output. Always breaks axis-aligned
/// periodicity for non-trivial factors.
pub fn shear_center_crop(
    img: &TextureImage,
    factor: f64,
    horizontal: bool,
) -> ImageResult<TextureImage> {
    let d = img.data();
    let (h, w, c) = d.dim();
    if horizontal {
        // x_src = x_out + margin + factor * (y - (h-1)/2)
        let margin = (factor.abs() * (h - 1) as f64 / 2.0).ceil() as usize;
        if w <= 2 * margin + MIN_SIDE {
            return Err(ImageError::TooSmall {
                h,
                w: w.saturating_sub(2 * margin),
            });
        }
        let ow = w - 2 * margin;
        let cy = (h - 1) as f64 / 2.0;
        let mut out = Array3::<f64>::zeros((h, ow, c));
        for y in 0..h {
            let shift = factor * (y as f64 - cy) + margin as f64;
            for xo in 0..ow {
                let xs = (xo as f64 + shift).clamp(0.0, (w - 1) as f64);
                let x0 = xs.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let f = xs - x0 as f64;
                for ch in 0..c {
                    out[(y, xo, ch)] = (1.0 - f) * d[(y, x0, ch)] + f * d[(y, x1, ch)];
                }
            }
        }
        TextureImage::new_clamped(out)
    } else {
        let margin = (factor.abs() * (w - 1) as f64 / 2.0).ceil() as usize;
        if h <= 2 * margin + MIN_SIDE {
            return Err(ImageError::TooSmall {
                h: h.saturating_sub(2 * margin),
                w,
            });
        }
        let oh = h - 2 * margin;
        let cx = (w - 1) as f64 / 2.0;
        let mut out = Array3::<f64>::zeros((oh, w, c));
        for yo in 0..oh {
            for x in 0..w {
                let shift = factor * (x as f64 - cx) + margin as f64;
                let ys = (yo as f64 + shift).clamp(0.0, (h - 1) as f64);
                let y0 = ys.floor() as usize;
                let y1 = (y0 + 1).min(h - 1);
                let f = ys - y0 as f64;
                for ch in 0..c {
                    out[(yo, x, ch)] = (1.0 - f) * d[(y0, x, ch)] + f * d[(y1, x, ch)];
                }
            }
        }
        TextureImage::new_clamped(out)
    }
}

/// Luminance plane of an image (mean over channels), used by tests.
#[allow(dead_code)]
pub(super) fn luminance(img: &TextureImage) -> Array2<f64> {
    img.data()
        .mean_axis(Axis(2))
        .expect("images have at least one channel")
}
