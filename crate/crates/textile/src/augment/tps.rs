//! Thin-plate-spline image warping.
//!
//! Control points sit on an `n x n` grid over the image; each is displaced
//! by a caller-supplied offset. The spline interpolates those displacements
//! smoothly across the plane (radial kernel `U(r) = r^2 ln r` plus an affine
//! part), and the image is resampled through the resulting backward map.

use nalgebra::DMatrix;
use ndarray::Array3;

use crate::img::TextureImage;

/// Warps `img` by a thin-plate spline with `grid_n * grid_n` control points
/// displaced by `offsets` (in pixels, `(dy, dx)` per point, row-major grid
/// order). All-zero offsets return the input unchanged.
pub fn tps_warp(img: &TextureImage, grid_n: usize, offsets: &[(f64, f64)]) -> TextureImage {
    assert!(grid_n >= 2, "need at least a 2x2 control grid");
    assert_eq!(
        offsets.len(),
        grid_n * grid_n,
        "one offset per control point"
    );
    if offsets.iter().all(|&(dy, dx)| dy == 0.0 && dx == 0.0) {
        return img.clone();
    }
    let d = img.data();
    let (h, w, c) = d.dim();
    let n = grid_n * grid_n;
    let mut points = Vec::with_capacity(n);
    for gy in 0..grid_n {
        for gx in 0..grid_n {
            points.push((
                gy as f64 * (h - 1) as f64 / (grid_n - 1) as f64,
                gx as f64 * (w - 1) as f64 / (grid_n - 1) as f64,
            ));
        }
    }

    // interpolation system: [K P; P^T 0] [w; a] = [v; 0], one RHS per
    // displacement component
    let mut l = DMatrix::<f64>::zeros(n + 3, n + 3);
    for i in 0..n {
        for j in 0..n {
            let dy = points[i].0 - points[j].0;
            let dx = points[i].1 - points[j].1;
            l[(i, j)] = kernel((dy * dy + dx * dx).sqrt());
        }
        l[(i, n)] = 1.0;
        l[(i, n + 1)] = points[i].0;
        l[(i, n + 2)] = points[i].1;
        l[(n, i)] = 1.0;
        l[(n + 1, i)] = points[i].0;
        l[(n + 2, i)] = points[i].1;
    }
    let mut rhs = DMatrix::<f64>::zeros(n + 3, 2);
    for (i, &(dy, dx)) in offsets.iter().enumerate() {
        rhs[(i, 0)] = dy;
        rhs[(i, 1)] = dx;
    }
    let solution = l
        .lu()
        .solve(&rhs)
        .expect("TPS system is nonsingular for distinct control points");

    let mut out = Array3::<f64>::zeros((h, w, c));
    let mut kernels = vec![0.0f64; n];
    for yo in 0..h {
        for xo in 0..w {
            let (py, px) = (yo as f64, xo as f64);
            for (k, &(cy, cx)) in points.iter().enumerate() {
                let dy = py - cy;
                let dx = px - cx;
                kernels[k] = kernel((dy * dy + dx * dx).sqrt());
            }
            let mut disp = [0.0f64; 2];
            for (comp, slot) in disp.iter_mut().enumerate() {
                let mut acc = solution[(n, comp)]
                    + solution[(n + 1, comp)] * py
                    + solution[(n + 2, comp)] * px;
                for (k, &kv) in kernels.iter().enumerate() {
                    acc += solution[(k, comp)] * kv;
                }
                *slot = acc;
            }
            let sy = (py + disp[0]).clamp(0.0, (h - 1) as f64);
            let sx = (px + disp[1]).clamp(0.0, (w - 1) as f64);
            let y0 = sy.floor() as usize;
            let x0 = sx.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let x1 = (x0 + 1).min(w - 1);
            let fy = sy - y0 as f64;
            let fx = sx - x0 as f64;
            for ch in 0..c {
                let v = (1.0 - fy) * ((1.0 - fx) * d[(y0, x0, ch)] + fx * d[(y0, x1, ch)])
                    + fy * ((1.0 - fx) * d[(y1, x0, ch)] + fx * d[(y1, x1, ch)]);
                out[(yo, xo, ch)] = v.clamp(0.0, 1.0);
            }
        }
    }
    TextureImage::new(out).expect("warp samples valid pixels")
}

fn kernel(r: f64) -> f64 {
    if r < 1e-12 {
        0.0
    } else {
        r * r * r.ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::img::TextureImage;

    fn sample() -> TextureImage {
        TextureImage::from_fn(40, 40, 3, |y, x, c| {
            0.5 + 0.4 * ((y as f64 * 0.4).sin() * (x as f64 * 0.3 + c as f64).cos())
        })
        .unwrap()
    }

    #[test]
    fn zero_offsets_reproduce_input_exactly() {
        let img = sample();
        let out = tps_warp(&img, 5, &vec![(0.0, 0.0); 25]);
        assert_eq!(out, img);
    }

    #[test]
    fn near_zero_offsets_reproduce_input_through_the_solver() {
        let img = sample();
        let mut offsets = vec![(0.0, 0.0); 25];
        offsets[7] = (1e-9, -1e-9);
        let out = tps_warp(&img, 5, &offsets);
        let max_err = img
            .data()
            .iter()
            .zip(out.data().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err < 1e-6, "near-identity warp deviated by {max_err}");
    }

    #[test]
    fn displaced_grid_moves_pixels() {
        let img = sample();
        let mut offsets = vec![(0.0, 0.0); 25];
        for o in offsets.iter_mut() {
            *o = (1.5, -1.0);
        }
        // uniform displacement = pure translation by (1.5, -1.0)
        let out = tps_warp(&img, 5, &offsets);
        let v = out.data()[(10, 10, 0)];
        let expect = 0.5 * (img.data()[(11, 9, 0)] + img.data()[(12, 9, 0)]);
        assert!((v - expect).abs() < 1e-8, "got {v}, expected {expect}");
    }
}
