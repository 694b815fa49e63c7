//! The tileability score: tile the input across both axes, run it through
//! the network, and squash the resulting logit into a calibrated value in
//! (0, 1). The squash is strictly monotone, so rankings are identical
//! whether taken over logits or values; the scale factor only spreads
//! scores away from the endpoints.
//!
//! [`textile_score`] is the inference entry point, [`textile_score_with_grad`]
//! the differentiable one (pixel gradients for synthesis and outpainting),
//! [`textile_loss`] the `1 - score` complement minimized by generators, and
//! [`score_batch`] the bulk scorer behind benchmarking and the CLI.

use std::path::Path;

use ndarray::{Array3, ArrayD};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use textile_autograd::{concat, Tape};
use thiserror::Error;

use crate::img::{self, ImageError, TextureImage};
use crate::net::{NetError, Network};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("bad metric config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// How an image is turned into a score: the logistic scale, the tiling
/// repetitions fed to the network, and an optional fixed inference
/// resolution. By default images are scored at their native resolution;
/// setting `resize_before_tiling` rescales the shorter side to
/// `inference_size` first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub lambda_logistic: f64,
    pub reps: (usize, usize),
    pub inference_size: usize,
    pub resize_before_tiling: bool,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            lambda_logistic: 0.25,
            reps: (2, 2),
            inference_size: 512,
            resize_before_tiling: false,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<(), MetricError> {
        if !(self.lambda_logistic > 0.0) {
            return Err(MetricError::BadConfig(format!(
                "logistic scale must be positive, got {}",
                self.lambda_logistic
            )));
        }
        if self.reps.0 < 1 || self.reps.1 < 1 {
            return Err(MetricError::BadConfig(format!(
                "tiling repetitions must be at least (1, 1), got {:?}",
                self.reps
            )));
        }
        if self.resize_before_tiling && self.inference_size < img::MIN_SIDE {
            return Err(MetricError::BadConfig(format!(
                "inference size {} is below the minimum image side {}",
                self.inference_size,
                img::MIN_SIDE
            )));
        }
        Ok(())
    }

    /// Stable hex digest of the configuration, recorded alongside batch
    /// scores so result files are self-describing.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// A scored image: the raw network output and its squashed value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TileabilityScore {
    pub logit: f64,
    pub value: f64,
}

/// The scaled logistic `1 / (1 + exp(-lambda * logit))`. Maps 0 to exactly
/// 0.5, is strictly increasing in the logit, and rescaling `lambda` never
/// reorders a fixed candidate set.
pub fn squash_logit(logit: f64, lambda: f64) -> f64 {
    1.0 / (1.0 + (-lambda * logit).exp())
}

impl TileabilityScore {
    fn from_logit(logit: f64, cfg: &MetricConfig) -> Self {
        Self {
            logit,
            value: squash_logit(logit, cfg.lambda_logistic),
        }
    }
}

/// Scores one image: optional fixed-resolution resize, tile by `cfg.reps`,
/// forward pass, logistic squash. Single-channel images are promoted to
/// three channels by replication so grayscale textures score directly.
pub fn textile_score(
    net: &Network,
    img: &TextureImage,
    cfg: &MetricConfig,
) -> Result<TileabilityScore, MetricError> {
    cfg.validate()?;
    let prepared = prepare(img, net, cfg)?;
    let tiled = img::tile(&prepared, cfg.reps)?;
    let logit = net.logits(std::slice::from_ref(&tiled))?[0];
    Ok(TileabilityScore::from_logit(logit, cfg))
}

/// The complement `1 - textile_score(...)`: minimizing it maximizes
/// tileability, and it stays in (0, 1) for any finite logit so a unit
/// weight keeps it commensurate with other unit-scale losses.
pub fn textile_loss(
    net: &Network,
    img: &TextureImage,
    cfg: &MetricConfig,
) -> Result<f64, MetricError> {
    Ok(1.0 - textile_score(net, img, cfg)?.value)
}

/// Scores one image and returns the gradient of the squashed value with
/// respect to the input pixels (shape `[H, W, C]`, matching `img`). The
/// whole pipeline — channel promotion, optional resize, tiling, network,
/// squash — runs on one tape, so the gradient is exact for the same value
/// [`textile_score`] reports.
pub fn textile_score_with_grad(
    net: &Network,
    img: &TextureImage,
    cfg: &MetricConfig,
) -> Result<(TileabilityScore, Array3<f64>), MetricError> {
    cfg.validate()?;
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let tape = Tape::new();
    let leaf = tape.leaf(img.data().clone().into_dyn());

    let mut x = leaf;
    if c == 1 && net.config().backbone.input_channels == 3 {
        x = concat(2, &[x, x, x]);
    }
    if cfg.resize_before_tiling {
        let (th, tw) = shorter_side_to(h, w, cfg.inference_size);
        x = x.resize_bilinear(th, tw);
    }
    x = x.repeat_axis(0, cfg.reps.0).repeat_axis(1, cfg.reps.1);
    let shape = x.shape();
    let batch = x.reshape(&[1, shape[0], shape[1], shape[2]]);
    let out = net.forward_var(&tape, batch)?;
    let value = out.logits.scale(cfg.lambda_logistic).sigmoid();

    let logit = out.logits.value()[[0]];
    let mut grads = tape.backward(value.sum_all());
    let grad: ArrayD<f64> = grads.take(leaf).expect("input participates in the score");
    let grad = grad
        .into_dimensionality::<ndarray::Ix3>()
        .expect("input rank preserved");
    Ok((TileabilityScore::from_logit(logit, cfg), grad))
}

/// One successfully scored file in a batch run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchEntry {
    pub path: String,
    pub logit: f64,
    pub score: f64,
    pub height: usize,
    pub width: usize,
}

/// One file that could not be scored, with the reason.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchFailure {
    pub path: String,
    pub message: String,
}

/// Batch scoring output: entries in input order, failures collected
/// rather than aborting the run, and the config digest that produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchReport {
    pub config_hash: String,
    pub entries: Vec<BatchEntry>,
    pub failures: Vec<BatchFailure>,
}

/// Scores every readable image under the given paths. Unreadable or
/// invalid files become failure records; scoring order follows input order.
pub fn score_batch<P: AsRef<Path>>(net: &Network, paths: &[P], cfg: &MetricConfig) -> BatchReport {
    let mut report = BatchReport {
        config_hash: cfg.hash(),
        entries: Vec::with_capacity(paths.len()),
        failures: Vec::new(),
    };
    for p in paths {
        let path = p.as_ref().display().to_string();
        let result = img::load_texture(p.as_ref())
            .map_err(MetricError::from)
            .and_then(|image| Ok((textile_score(net, &image, cfg)?, image)));
        match result {
            Ok((score, image)) => report.entries.push(BatchEntry {
                path,
                logit: score.logit,
                score: score.value,
                height: image.height(),
                width: image.width(),
            }),
            Err(err) => report.failures.push(BatchFailure {
                path,
                message: err.to_string(),
            }),
        }
    }
    report
}

impl BatchReport {
    /// Writes entries as CSV (`path,logit,score,height,width,config_hash`).
    /// Failure records have no natural place in a flat table and are only
    /// part of the JSON form.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), MetricError> {
        let mut wtr = csv::Writer::from_path(path)?;
        wtr.write_record(["path", "logit", "score", "height", "width", "config_hash"])?;
        for e in &self.entries {
            wtr.write_record([
                e.path.as_str(),
                &e.logit.to_string(),
                &e.score.to_string(),
                &e.height.to_string(),
                &e.width.to_string(),
                self.config_hash.as_str(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Writes the full report (entries and failures) as pretty JSON.
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<(), MetricError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Promotes grayscale to the network's channel count and applies the
/// optional fixed-resolution resize.
fn prepare(
    img: &TextureImage,
    net: &Network,
    cfg: &MetricConfig,
) -> Result<TextureImage, MetricError> {
    let mut out = if img.channels() == 1 && net.config().backbone.input_channels == 3 {
        let d = img.data();
        let (h, w) = (img.height(), img.width());
        TextureImage::new(Array3::from_shape_fn((h, w, 3), |(y, x, _)| d[(y, x, 0)]))?
    } else {
        img.clone()
    };
    if cfg.resize_before_tiling {
        let (th, tw) = shorter_side_to(out.height(), out.width(), cfg.inference_size);
        out = img::resize(&out, (th, tw))?;
    }
    Ok(out)
}

/// Target size that brings the shorter side to `size`, preserving aspect
/// ratio (rounded to nearest, at least one pixel).
fn shorter_side_to(h: usize, w: usize, size: usize) -> (usize, usize) {
    if h <= w {
        let tw = ((w as f64) * size as f64 / h as f64).round().max(1.0) as usize;
        (size, tw)
    } else {
        let th = ((h as f64) * size as f64 / w as f64).round().max(1.0) as usize;
        (th, size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{build_network, AttentionConfig, BackboneConfig, NetworkConfig};
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_net() -> Network {
        let config = NetworkConfig {
            backbone: BackboneConfig {
                preset: "tiny".into(),
                stage_depths: vec![1, 1, 1, 1],
                stage_widths: vec![8, 8, 16, 16],
                input_channels: 3,
                layerscale_init: 1.0,
            },
            attention: AttentionConfig {
                heads: 2,
                proj_dim: 4,
                ..AttentionConfig::default()
            },
            ln_eps: 1e-6,
        };
        build_network(config, 11).unwrap()
    }

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> TextureImage {
        TextureImage::new(Array3::from_shape_fn((h, w, c), |_| {
            rng.random_range(0.0..1.0)
        }))
        .unwrap()
    }

    #[test]
    fn squash_hits_frozen_values() {
        assert_eq!(squash_logit(0.0, 0.25), 0.5);
        assert_eq!(squash_logit(0.0, 1.7), 0.5);
        // 1 / (1 + e^-2)
        assert!((squash_logit(8.0, 0.25) - 0.880_797_077_977_882_3).abs() < 1e-6);
    }

    #[test]
    fn squash_is_strictly_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let a: f64 = rng.random_range(-40.0..40.0);
            let b: f64 = rng.random_range(-40.0..40.0);
            if a == b {
                continue;
            }
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            assert!(
                squash_logit(lo, 0.25) < squash_logit(hi, 0.25),
                "{lo} vs {hi}"
            );
        }
    }

    #[test]
    fn rescaling_lambda_never_changes_the_argmax() {
        // Scales are kept where the logistic stays representably below 1:
        // once lambda * logit exceeds ~36, f64 rounds the value to exactly
        // 1.0 and ordering among the saturated candidates is lost.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let logits: Vec<f64> = (0..10).map(|_| rng.random_range(-30.0..30.0)).collect();
            let argmax = |lambda: f64| {
                logits
                    .iter()
                    .enumerate()
                    .max_by(|a, b| {
                        squash_logit(*a.1, lambda).total_cmp(&squash_logit(*b.1, lambda))
                    })
                    .unwrap()
                    .0
            };
            assert_eq!(argmax(0.25), argmax(0.1));
            assert_eq!(argmax(0.25), argmax(1.0));
        }
    }

    #[test]
    fn score_matches_manual_mosaic_forward() {
        let net = tiny_net();
        let cfg = MetricConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let image = random_image(&mut rng, 16, 16, 3);

        let score = textile_score(&net, &image, &cfg).unwrap();
        let mosaic = img::tile(&image, (2, 2)).unwrap();
        let logit = net.logits(&[mosaic]).unwrap()[0];
        assert_eq!(score.logit, logit);
        assert_eq!(score.value, squash_logit(logit, cfg.lambda_logistic));
    }

    #[test]
    fn grad_path_reports_the_same_score() {
        let net = tiny_net();
        let cfg = MetricConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let image = random_image(&mut rng, 16, 16, 3);

        let plain = textile_score(&net, &image, &cfg).unwrap();
        let (scored, grad) = textile_score_with_grad(&net, &image, &cfg).unwrap();
        assert_eq!(plain.logit, scored.logit);
        assert_eq!(plain.value, scored.value);
        assert_eq!(grad.shape(), &[16, 16, 3]);
    }

    #[test]
    fn pixel_gradient_matches_finite_differences() {
        let net = tiny_net();
        let cfg = MetricConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let image = random_image(&mut rng, 16, 16, 3);
        let (_, grad) = textile_score_with_grad(&net, &image, &cfg).unwrap();

        let h = 1e-6;
        for _ in 0..5 {
            let (y, x, ch) = (
                rng.random_range(0..16usize),
                rng.random_range(0..16usize),
                rng.random_range(0..3usize),
            );
            let mut plus = image.data().clone();
            plus[(y, x, ch)] += h;
            let mut minus = image.data().clone();
            minus[(y, x, ch)] -= h;
            let vp = textile_score(&net, &TextureImage::new(plus).unwrap(), &cfg)
                .unwrap()
                .value;
            let vm = textile_score(&net, &TextureImage::new(minus).unwrap(), &cfg)
                .unwrap()
                .value;
            let fd = (vp - vm) / (2.0 * h);
            let analytic = grad[(y, x, ch)];
            let rel = (analytic - fd).abs() / fd.abs().max(1e-8);
            assert!(
                rel <= 1e-4,
                "pixel ({y},{x},{ch}): analytic {analytic} vs fd {fd}"
            );
        }
    }

    #[test]
    fn loss_is_the_score_complement() {
        let net = tiny_net();
        let cfg = MetricConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let image = random_image(&mut rng, 16, 16, 3);
        let score = textile_score(&net, &image, &cfg).unwrap();
        let loss = textile_loss(&net, &image, &cfg).unwrap();
        assert_eq!(loss, 1.0 - score.value);
        assert!(loss > 0.0 && loss < 1.0);
    }

    #[test]
    fn grayscale_is_promoted_by_replication() {
        let net = tiny_net();
        let cfg = MetricConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let gray = random_image(&mut rng, 16, 16, 1);
        let rgb = TextureImage::new(Array3::from_shape_fn((16, 16, 3), |(y, x, _)| {
            gray.data()[(y, x, 0)]
        }))
        .unwrap();
        let a = textile_score(&net, &gray, &cfg).unwrap();
        let b = textile_score(&net, &rgb, &cfg).unwrap();
        assert_eq!(a.logit, b.logit);

        let (scored, grad) = textile_score_with_grad(&net, &gray, &cfg).unwrap();
        assert_eq!(scored.logit, a.logit);
        assert_eq!(grad.shape(), &[16, 16, 1]);
    }

    #[test]
    fn fixed_resolution_mode_resizes_before_tiling() {
        let net = tiny_net();
        let cfg = MetricConfig {
            inference_size: 24,
            resize_before_tiling: true,
            ..MetricConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let image = random_image(&mut rng, 16, 20, 3);

        let resized = img::resize(&image, (24, 30)).unwrap();
        let mosaic = img::tile(&resized, (2, 2)).unwrap();
        let expected = net.logits(&[mosaic]).unwrap()[0];
        let score = textile_score(&net, &image, &cfg).unwrap();
        assert_eq!(score.logit, expected);

        let (scored, grad) = textile_score_with_grad(&net, &image, &cfg).unwrap();
        assert_eq!(scored.logit, expected);
        assert_eq!(grad.shape(), &[16, 20, 3]);
    }

    #[test]
    fn config_validation_rejects_nonsense() {
        let net = tiny_net();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let image = random_image(&mut rng, 16, 16, 3);
        let bad_lambda = MetricConfig {
            lambda_logistic: 0.0,
            ..MetricConfig::default()
        };
        assert!(matches!(
            textile_score(&net, &image, &bad_lambda),
            Err(MetricError::BadConfig(_))
        ));
        let bad_reps = MetricConfig {
            reps: (0, 2),
            ..MetricConfig::default()
        };
        assert!(matches!(
            textile_score(&net, &image, &bad_reps),
            Err(MetricError::BadConfig(_))
        ));
    }

    #[test]
    fn batch_scoring_collects_failures_and_preserves_order() {
        let net = tiny_net();
        let cfg = MetricConfig::default();
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);

        let a = dir.path().join("a.png");
        let b = dir.path().join("b.png");
        crate::img::save_texture(&random_image(&mut rng, 16, 16, 3), &a).unwrap();
        crate::img::save_texture(&random_image(&mut rng, 16, 16, 3), &b).unwrap();
        let missing = dir.path().join("missing.png");

        let report = score_batch(&net, &[a.clone(), missing, b, a], &cfg);
        assert_eq!(report.entries.len(), 3);
        assert_eq!(report.failures.len(), 1);
        assert!(report.failures[0].path.ends_with("missing.png"));
        assert_eq!(report.entries[0].logit, report.entries[2].logit);
        assert_eq!(report.config_hash, cfg.hash());

        let csv_path = dir.path().join("scores.csv");
        let json_path = dir.path().join("scores.json");
        report.write_csv(&csv_path).unwrap();
        report.write_json(&json_path).unwrap();
        let csv_text = std::fs::read_to_string(&csv_path).unwrap();
        assert_eq!(csv_text.lines().count(), 4);
        let parsed: BatchReport =
            serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
        assert_eq!(parsed.entries.len(), 3);
        assert_eq!(parsed.failures.len(), 1);
    }

    #[test]
    fn empty_batch_gives_empty_report() {
        let net = tiny_net();
        let report = score_batch::<std::path::PathBuf>(&net, &[], &MetricConfig::default());
        assert!(report.entries.is_empty());
        assert!(report.failures.is_empty());
    }
}
