//! Applications driven by a tileability score: texture synthesis, border
//! outpainting, rotation alignment, repeat-size detection, and batch
//! benchmarking.
//!
//! Everything here is written against the [`Scorer`] abstraction rather than
//! a concrete model, so the same search and descent code runs under the
//! learned metric ([`TexTileScorer`]) and under the cheap seam-gap baseline
//! ([`SeamGapOracle`]). The guarantees the applications rely on are part of
//! the trait contract: scores live in `(0, 1)`, higher means more tileable,
//! and repeat calls on the same image return the same value.

mod bench;
mod search;
mod synthesis;


pub use bench::{bench_directories, BenchReport, DirStats, ScorerStats};
pub use search::{
    align_rotation, double_rotation_interior, find_repeat, AlignmentQuery, RepeatQuery, RepeatScan,
    RotationScan,
};
pub use synthesis::{
    outpaint, style_distance, synthesize, InitMode, SynthesisConfig, SynthesisResult,
};

use ndarray::Array3;
use thiserror::Error;

use crate::img::{self, ImageError, TextureImage};
use crate::metric::{textile_score, textile_score_with_grad, MetricConfig, MetricError};
use crate::net::Network;

#[derive(Debug, Error)]
pub enum AppError {
    /// A pixel gradient was requested from a scorer that cannot provide one.
    #[error("scorer `{0}` does not provide pixel gradients")]
    NotDifferentiable(String),
    /// A search grid or optimization config that cannot be run as given.
    #[error("bad query: {0}")]
    BadQuery(String),
    /// The descent produced a non-finite loss and cannot continue.
    #[error("optimization diverged at iteration {iteration}: loss {loss}")]
    Diverged { iteration: usize, loss: f64 },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// A no-reference tileability score: a deterministic map from an image to a
/// value in `(0, 1]`, higher for images closer to tiling seamlessly.
///
/// Implementations that can also differentiate the score with respect to the
/// input pixels report it via [`Scorer::differentiable`] and implement
/// [`Scorer::score_with_grad`]; gradient-free scorers keep the default, and
/// optimization-based applications reject them up front.
pub trait Scorer {
    /// Stable identifier used in reports, file names, and error messages.
    fn name(&self) -> &str;

    fn score(&self, img: &TextureImage) -> Result<f64, AppError>;

    fn differentiable(&self) -> bool {
        false
    }

    /// The score together with its gradient with respect to the pixels,
    /// shaped like `img`. Only meaningful when [`Scorer::differentiable`]
    /// returns true.
    fn score_with_grad(&self, _img: &TextureImage) -> Result<(f64, Array3<f64>), AppError> {
        Err(AppError::NotDifferentiable(self.name().to_string()))
    }
}

/// Closed-form baseline: `exp(-seam_gap)`. Equal to 1 exactly when opposite
/// borders match pixel-for-pixel, strictly below 1 otherwise, and cheap
/// enough to run inside dense grid searches.
#[derive(Debug, Clone, Copy, Default)]
pub struct SeamGapOracle;

impl Scorer for SeamGapOracle {
    fn name(&self) -> &str {
        "seam-gap-oracle"
    }

    fn score(&self, img: &TextureImage) -> Result<f64, AppError> {
        Ok((-img::seam_gap(img)).exp())
    }

    fn differentiable(&self) -> bool {
        true
    }

    fn score_with_grad(&self, img: &TextureImage) -> Result<(f64, Array3<f64>), AppError> {
        let d = img.data();
        let (h, w, c) = d.dim();
        let gap = img::seam_gap(img);
        let score = (-gap).exp();
        let norm = ((h + w) * c) as f64;
        // The gap is a mean of absolute border differences, so its gradient
        // is a signed indicator on the border pixels; everywhere the two
        // sides already agree the subgradient is taken as zero.
        let sign = |diff: f64| {
            if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            }
        };
        let mut grad = Array3::<f64>::zeros((h, w, c));
        for y in 0..h {
            for ch in 0..c {
                let s = sign(d[(y, 0, ch)] - d[(y, w - 1, ch)]);
                grad[(y, 0, ch)] += s;
                grad[(y, w - 1, ch)] -= s;
            }
        }
        for x in 0..w {
            for ch in 0..c {
                let s = sign(d[(0, x, ch)] - d[(h - 1, x, ch)]);
                grad[(0, x, ch)] += s;
                grad[(h - 1, x, ch)] -= s;
            }
        }
        // score = exp(-gap), so d(score) = -score * d(gap).
        grad.mapv_inplace(|g| -score * g / norm);
        Ok((score, grad))
    }
}

/// The learned metric as a scorer: wraps a trained network and the scoring
/// config (tiling reps, logistic scale, optional resize).
pub struct TexTileScorer {
    net: Network,
    cfg: MetricConfig,
}

impl TexTileScorer {
    pub fn new(net: Network, cfg: MetricConfig) -> Result<Self, AppError> {
        cfg.validate()?;
        Ok(TexTileScorer { net, cfg })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn config(&self) -> &MetricConfig {
        &self.cfg
    }
}

impl Scorer for TexTileScorer {
    fn name(&self) -> &str {
        "textile"
    }

    fn score(&self, img: &TextureImage) -> Result<f64, AppError> {
        Ok(textile_score(&self.net, img, &self.cfg)?.value)
    }

    fn differentiable(&self) -> bool {
        true
    }

    fn score_with_grad(&self, img: &TextureImage) -> Result<(f64, Array3<f64>), AppError> {
        let (score, grad) = textile_score_with_grad(&self.net, img, &self.cfg)?;
        Ok((score.value, grad))
    }
}
