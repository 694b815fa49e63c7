//! Grid searches over geometric hypotheses: the rotation that best aligns a
//! texture with the pixel lattice, and the crop size whose 2x2 tiling scores
//! highest. Both are exhaustive scans — the grids are small, every candidate
//! is evaluated, and the full curve or surface is returned alongside the
//! argmax so callers can plot or post-process it.

use super::{AppError, Scorer};
use crate::img::{self, TextureImage};

/// Inclusive rotation grid in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentQuery {
    pub min_deg: f64,
    pub max_deg: f64,
    pub step_deg: f64,
}

impl Default for AlignmentQuery {
    fn default() -> Self {
        AlignmentQuery {
            min_deg: -45.0,
            max_deg: 45.0,
            step_deg: 1.0,
        }
    }
}

impl AlignmentQuery {
    pub fn validate(&self) -> Result<(), AppError> {
        if !(self.min_deg.is_finite() && self.max_deg.is_finite() && self.step_deg.is_finite()) {
            return Err(AppError::BadQuery(
                "rotation grid bounds must be finite".into(),
            ));
        }
        if self.step_deg <= 0.0 {
            return Err(AppError::BadQuery(format!(
                "rotation step must be positive, got {}",
                self.step_deg
            )));
        }
        if self.min_deg > self.max_deg {
            return Err(AppError::BadQuery(format!(
                "empty rotation range [{}, {}]",
                self.min_deg, self.max_deg
            )));
        }
        Ok(())
    }

    /// The evaluated angles: `min, min + step, ...` up to and including
    /// `max` (with a small tolerance so fractional steps still land on it).
    pub fn angles(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut i = 0u32;
        loop {
            let theta = self.min_deg + f64::from(i) * self.step_deg;
            if theta > self.max_deg + 1e-9 {
                break;
            }
            out.push(theta);
            i += 1;
        }
        out
    }
}

/// Result of a rotation scan: the winning angle and the full score curve in
/// grid order.
#[derive(Debug, Clone)]
pub struct RotationScan {
    pub best_theta: f64,
    pub curve: Vec<(f64, f64)>,
}

/// Scores `rotate_center_crop(img, theta)` for every angle on the grid and
/// returns the argmax. Exact ties go to the angle with the smallest
/// magnitude, so an already-aligned texture reports 0 rather than an
/// arbitrary equivalent angle.
pub fn align_rotation(
    img: &TextureImage,
    scorer: &dyn Scorer,
    query: &AlignmentQuery,
) -> Result<RotationScan, AppError> {
    query.validate()?;
    let angles = query.angles();
    let mut curve = Vec::with_capacity(angles.len());
    let mut best: Option<(f64, f64)> = None;
    for theta in angles {
        let rotated = img::rotate_center_crop(img, theta)?;
        let score = scorer.score(&rotated)?;
        curve.push((theta, score));
        let better = match best {
            None => true,
            Some((bt, bs)) => score > bs || (score == bs && theta.abs() < bt.abs()),
        };
        if better {
            best = Some((theta, score));
        }
    }
    let (best_theta, _) = best.expect("validated grid is non-empty");
    Ok(RotationScan { best_theta, curve })
}

/// The surviving interior size after rotating by `theta` degrees and
/// cropping, applied twice — the geometry of scoring a rotation hypothesis
/// on an image that was itself produced by [`img::rotate_center_crop`].
pub fn double_rotation_interior(h: usize, w: usize, theta: f64) -> (usize, usize) {
    let (h1, w1) = img::rotated_interior(h, w, theta);
    img::rotated_interior(h1, w1, theta)
}

/// Grid of candidate repeat sizes, applied independently per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RepeatQuery {
    pub min_size: usize,
    pub step: usize,
    /// Upper bound on candidate sizes; `None` means up to the image extent.
    pub max_size: Option<usize>,
}

impl Default for RepeatQuery {
    fn default() -> Self {
        RepeatQuery {
            min_size: 64,
            step: 8,
            max_size: None,
        }
    }
}

impl RepeatQuery {
    pub const SMALLEST_MIN_SIZE: usize = 16;

    pub fn validate(&self) -> Result<(), AppError> {
        if self.min_size < Self::SMALLEST_MIN_SIZE {
            return Err(AppError::BadQuery(format!(
                "minimum repeat size {} below the supported floor of {}",
                self.min_size,
                Self::SMALLEST_MIN_SIZE
            )));
        }
        if self.step == 0 {
            return Err(AppError::BadQuery("repeat step must be positive".into()));
        }
        if let Some(max) = self.max_size {
            if max < self.min_size {
                return Err(AppError::BadQuery(format!(
                    "empty repeat range [{}, {max}]",
                    self.min_size
                )));
            }
        }
        Ok(())
    }

    fn sizes_up_to(&self, limit: usize) -> Vec<usize> {
        let cap = self.max_size.map_or(limit, |m| m.min(limit));
        (self.min_size..=cap).step_by(self.step).collect()
    }
}

/// Result of a repeat-size scan: the winning crop size, the candidate lists
/// per axis, and the score surface with `surface[i][j]` the score of crop
/// size `(heights[i], widths[j])`.
#[derive(Debug, Clone)]
pub struct RepeatScan {
    pub best: (usize, usize),
    pub heights: Vec<usize>,
    pub widths: Vec<usize>,
    pub surface: Vec<Vec<f64>>,
}

/// Scores `tile(center_crop(img, (h, w)), (2, 2))` for every candidate size
/// and returns the argmax. Exact ties go to the smallest crop area (then to
/// the lexicographically smaller pair), so a texture that repeats every `p`
/// pixels reports the fundamental period `p` rather than a multiple of it.
pub fn find_repeat(
    img: &TextureImage,
    scorer: &dyn Scorer,
    query: &RepeatQuery,
) -> Result<RepeatScan, AppError> {
    query.validate()?;
    let heights = query.sizes_up_to(img.height());
    let widths = query.sizes_up_to(img.width());
    if heights.is_empty() || widths.is_empty() {
        return Err(AppError::BadQuery(format!(
            "no candidate sizes: minimum {} exceeds the {}x{} image",
            query.min_size,
            img.height(),
            img.width()
        )));
    }
    let mut surface = Vec::with_capacity(heights.len());
    let mut best: Option<((usize, usize), f64)> = None;
    for &h in &heights {
        let mut row = Vec::with_capacity(widths.len());
        for &w in &widths {
            let crop = img::center_crop(img, (h, w))?;
            let tiled = img::tile(&crop, (2, 2))?;
            let score = scorer.score(&tiled)?;
            row.push(score);
            let better = match best {
                None => true,
                Some(((bh, bw), bs)) => {
                    score > bs || (score == bs && (h * w, (h, w)) < (bh * bw, (bh, bw)))
                }
            };
            if better {
                best = Some(((h, w), score));
            }
        }
        surface.push(row);
    }
    let (best, _) = best.expect("candidate grid is non-empty");
    Ok(RepeatScan {
        best,
        heights,
        widths,
        surface,
    })
}
