//! Self-contained PNG charts: score curves as polylines and score surfaces
//! or correlation matrices as heatmaps. Pure-raster drawing with no text —
//! axes, ticks, and colored series only — so the crate carries no font or
//! plotting dependency. Numeric labels belong in the CSV files written next
//! to the images.

use std::path::Path;

use image::{Rgb, RgbImage};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("nothing to plot: {0}")]
    Empty(String),
    #[error("image encode: {0}")]
    Encode(#[from] image::ImageError),
}

const WIDTH: u32 = 720;
const HEIGHT: u32 = 480;
const MARGIN: u32 = 48;
const BACKGROUND: Rgb<u8> = Rgb([252, 252, 250]);
const AXIS: Rgb<u8> = Rgb([40, 40, 40]);

/// Distinguishable series colors, reused cyclically.
const PALETTE: [Rgb<u8>; 6] = [
    Rgb([31, 119, 180]),
    Rgb([255, 127, 14]),
    Rgb([44, 160, 44]),
    Rgb([214, 39, 40]),
    Rgb([148, 103, 189]),
    Rgb([23, 190, 207]),
];

fn draw_line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), color: Rgb<u8>) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let (x0, y0, x1, y1) = (a.0, a.1, b.0, b.1);
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let x = (x0 + t * (x1 - x0)).round() as i64;
        let y = (y0 + t * (y1 - y0)).round() as i64;
        if (0..w).contains(&x) && (0..h).contains(&y) {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

fn finite_bounds(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo <= hi).then(|| {
        if lo == hi {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    })
}

/// Draws one polyline per series over shared axes and writes a PNG. Series
/// are colored from a fixed palette in order, with a color swatch per series
/// in the top-right corner as a legend.
pub fn line_chart(series: &[Vec<(f64, f64)>], path: impl AsRef<Path>) -> Result<(), PlotError> {
    let points = || series.iter().flatten();
    let (x_lo, x_hi) = finite_bounds(points().map(|p| p.0))
        .ok_or_else(|| PlotError::Empty("no finite x values".into()))?;
    let (y_lo, y_hi) = finite_bounds(points().map(|p| p.1))
        .ok_or_else(|| PlotError::Empty("no finite y values".into()))?;

    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, BACKGROUND);
    let (m, w, h) = (MARGIN as f64, WIDTH as f64, HEIGHT as f64);
    let to_px = |(x, y): (f64, f64)| {
        let tx = (x - x_lo) / (x_hi - x_lo);
        let ty = (y - y_lo) / (y_hi - y_lo);
        (m + tx * (w - 2.0 * m), (h - m) - ty * (h - 2.0 * m))
    };

    draw_line(&mut img, (m, h - m), (w - m, h - m), AXIS);
    draw_line(&mut img, (m, m), (m, h - m), AXIS);
    for i in 0..=4 {
        let t = f64::from(i) / 4.0;
        let x = m + t * (w - 2.0 * m);
        let y = (h - m) - t * (h - 2.0 * m);
        draw_line(&mut img, (x, h - m), (x, h - m + 5.0), AXIS);
        draw_line(&mut img, (m - 5.0, y), (m, y), AXIS);
    }

    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        for pair in s.windows(2) {
            if pair.iter().all(|p| p.0.is_finite() && p.1.is_finite()) {
                draw_line(&mut img, to_px(pair[0]), to_px(pair[1]), color);
            }
        }
        // legend swatch
        let sy = MARGIN / 2 + 10 * si as u32;
        for dx in 0..24u32 {
            for dy in 0..6u32 {
                let (x, y) = (WIDTH - MARGIN - 30 + dx, sy + dy);
                if x < WIDTH && y < HEIGHT {
                    img.put_pixel(x, y, color);
                }
            }
        }
    }
    img.save(path.as_ref())?;
    Ok(())
}

/// Maps a normalized value in `[0, 1]` through a dark-blue -> teal -> yellow
/// ramp; non-finite values render gray.
fn ramp(t: f64) -> Rgb<u8> {
    if !t.is_finite() {
        return Rgb([128, 128, 128]);
    }
    let t = t.clamp(0.0, 1.0);
    let stops = [
        (24.0, 32.0, 92.0),
        (38.0, 148.0, 144.0),
        (250.0, 220.0, 60.0),
    ];
    let (a, b, f) = if t < 0.5 {
        (stops[0], stops[1], t * 2.0)
    } else {
        (stops[1], stops[2], t * 2.0 - 1.0)
    };
    let lerp = |x: f64, y: f64| (x + f * (y - x)).round() as u8;
    Rgb([lerp(a.0, b.0), lerp(a.1, b.1), lerp(a.2, b.2)])
}

/// Renders a matrix as a color grid and writes a PNG. `values[i][j]` becomes
/// the cell at row `i`, column `j`; rows may not be empty and must share one
/// length. The color scale spans the finite min..max of the data.
pub fn heatmap(values: &[Vec<f64>], path: impl AsRef<Path>) -> Result<(), PlotError> {
    let rows = values.len();
    let cols = values.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 || values.iter().any(|r| r.len() != cols) {
        return Err(PlotError::Empty(
            "heatmap needs a non-empty rectangular matrix".into(),
        ));
    }
    let (lo, hi) = finite_bounds(values.iter().flatten().copied())
        .ok_or_else(|| PlotError::Empty("no finite cells".into()))?;

    let cell = (512 / rows.max(cols)).clamp(4, 48) as u32;
    let gap = 1u32;
    let w = cols as u32 * (cell + gap) + gap;
    let h = rows as u32 * (cell + gap) + gap;
    let mut img = RgbImage::from_pixel(w, h, Rgb([230, 230, 228]));
    for (i, row) in values.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let color = ramp((v - lo) / (hi - lo));
            let (x0, y0) = (j as u32 * (cell + gap) + gap, i as u32 * (cell + gap) + gap);
            for dx in 0..cell {
                for dy in 0..cell {
                    img.put_pixel(x0 + dx, y0 + dy, color);
                }
            }
        }
    }
    img.save(path.as_ref())?;
    Ok(())
}
