//! Synthetic texture corpus generation: a desk-scale stand-in for a real
//! texture dataset. Three generator families produce positives that wrap
//! around both axes exactly — the periodic coordinate is indexed modulo
//! `resolution - 1`, so the duplicated border row/column repeats the same
//! computation bit for bit and survives the 8-bit PNG round trip with a
//! seam gap of exactly zero. Negatives run a fresh positive through a
//! tileability-breaking transform and are kept only when the resulting
//! seam gap clears the breaking threshold with margin to spare.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{load_manifest, DatasetManifest, Split};
use super::TrainError;
use crate::augment::{apply_breaking, AugmentPolicy, RngState};
use crate::img::{self, TextureImage};

/// The three positive generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// Mixtures of integer-frequency sinusoid gratings.
    Sinusoids,
    /// Sigmoid-sharpened products of two gratings: soft checkerboards.
    Checkerboard,
    /// Smoothly interpolated random value grids on a torus.
    TorusNoise,
}

impl Family {
    pub fn slug(self) -> &'static str {
        match self {
            Family::Sinusoids => "sinusoids",
            Family::Checkerboard => "checkerboard",
            Family::TorusNoise => "torus-noise",
        }
    }
}

/// What to generate: which families, how many images per class in each
/// split, the square resolution, and the seed that makes the corpus
/// bit-reproducible.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticCorpusConfig {
    pub families: Vec<Family>,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub resolution: usize,
    pub seed: u64,
}

impl Default for SyntheticCorpusConfig {
    fn default() -> Self {
        Self {
            families: vec![Family::Sinusoids, Family::Checkerboard, Family::TorusNoise],
            train_per_class: 100,
            val_per_class: 20,
            test_per_class: 50,
            resolution: 128,
            seed: 0,
        }
    }
}

impl SyntheticCorpusConfig {
    fn validate(&self) -> Result<(), TrainError> {
        if self.families.is_empty() {
            return Err(TrainError::Manifest(
                "corpus config lists no generator families".into(),
            ));
        }
        if self.resolution < 16 {
            return Err(TrainError::Manifest(format!(
                "corpus resolution {} is too small (need at least 16)",
                self.resolution
            )));
        }
        if self.train_per_class + self.val_per_class + self.test_per_class == 0 {
            return Err(TrainError::Manifest(
                "corpus config generates no images".into(),
            ));
        }
        Ok(())
    }
}

/// Generates images and a `manifest.csv` under `out_dir`, then loads the
/// manifest back through the validating loader. Regenerating with the
/// same config produces byte-identical files.
pub fn generate_synthetic_corpus(
    cfg: &SyntheticCorpusConfig,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest, TrainError> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    let image_dir = out_dir.join("images");
    std::fs::create_dir_all(&image_dir)?;
    let policy = AugmentPolicy::default();

    let mut rows = String::from("path,label,split,source\n");
    let mut stream = 0u64;
    let splits = [
        (Split::Train, cfg.train_per_class),
        (Split::Val, cfg.val_per_class),
        (Split::Test, cfg.test_per_class),
    ];
    for (split, count) in splits {
        for i in 0..count {
            let family = cfg.families[i % cfg.families.len()];
            let mut rng = RngState::for_stream(cfg.seed, stream);
            stream += 1;
            let positive = generate_positive(family, cfg.resolution, &mut rng);
            debug_assert!(positive.is_wrap_equal());
            let name = format!("{split}_pos_{i:04}.png");
            img::save_texture(&positive, image_dir.join(&name))?;
            writeln!(rows, "images/{name},1,{split},{}", family.slug()).expect("string write");
        }
        for i in 0..count {
            let family = cfg.families[i % cfg.families.len()];
            let mut rng = RngState::for_stream(cfg.seed, stream);
            stream += 1;
            let negative = generate_negative(family, cfg.resolution, &mut rng, &policy)?;
            let name = format!("{split}_neg_{i:04}.png");
            img::save_texture(&negative, image_dir.join(&name))?;
            writeln!(rows, "images/{name},0,{split},{}-broken", family.slug())
                .expect("string write");
        }
    }

    let manifest_path = out_dir.join("manifest.csv");
    std::fs::write(&manifest_path, rows)?;
    load_manifest(&manifest_path)
}

/// One exactly wrap-equal texture from the given family.
pub fn generate_positive(family: Family, resolution: usize, rng: &mut RngState) -> TextureImage {
    match family {
        Family::Sinusoids => sinusoid_mixture(resolution, rng),
        Family::Checkerboard => checkerboard(resolution, rng),
        Family::TorusNoise => torus_noise(resolution, rng),
    }
}

/// A non-tileable counterpart: a fresh positive pushed through a breaking
/// transform and resized back to the corpus resolution. Candidates are
/// redrawn until the seam gap clears the breaking threshold with enough
/// margin to survive 8-bit quantization.
fn generate_negative(
    family: Family,
    resolution: usize,
    rng: &mut RngState,
    policy: &AugmentPolicy,
) -> Result<TextureImage, TrainError> {
    // 2x the breaking threshold: quantization moves the mean gap by well
    // under 1/255 per border pixel, so this margin keeps reloaded
    // negatives safely above the threshold.
    let target_gap = (policy.break_gap * 2.0).max(0.02);
    let mut best: Option<(f64, TextureImage)> = None;
    for _ in 0..32 {
        let source = generate_positive(family, resolution, rng);
        let broken = apply_breaking(&source, rng, policy);
        let resized = img::resize(&broken, (resolution, resolution))?;
        let gap = img::seam_gap(&resized);
        if gap >= target_gap {
            return Ok(resized);
        }
        if best.as_ref().is_none_or(|(g, _)| gap > *g) {
            best = Some((gap, resized));
        }
    }
    let (gap, image) = best.expect("at least one candidate was drawn");
    log::warn!("negative kept with seam gap {gap:.4} below the target {target_gap:.4}");
    Ok(image)
}

/// Periodic coordinate in [0, 1): the duplicated border index maps back
/// to 0 so opposite borders repeat bit-exactly.
fn wrap_coord(i: usize, resolution: usize) -> f64 {
    let period = resolution - 1;
    (i % period) as f64 / period as f64
}

fn sinusoid_mixture(res: usize, rng: &mut RngState) -> TextureImage {
    // per channel: three gratings with random amplitude, integer frequency
    // pair (random sign on the vertical one), and phase
    let mut terms = [[(0.0, 0.0, 0.0, 0.0); 3]; 3];
    for channel in terms.iter_mut() {
        for term in channel.iter_mut() {
            let amp = rng.random_range(0.3..1.0);
            let sign = if rng.random_bool(0.5) { -1.0 } else { 1.0 };
            let p = sign * rng.random_range(1..=4) as f64;
            let q = rng.random_range(1..=4) as f64;
            let phase = rng.random_range(0.0..TAU);
            *term = (amp, p, q, phase);
        }
    }
    let mut data = Array3::zeros((res, res, 3));
    for y in 0..res {
        let fy = wrap_coord(y, res);
        for x in 0..res {
            let fx = wrap_coord(x, res);
            for c in 0..3 {
                let v: f64 = terms[c]
                    .iter()
                    .map(|&(amp, p, q, phase)| amp * (TAU * (p * fy + q * fx) + phase).sin())
                    .sum();
                data[(y, x, c)] = v;
            }
        }
    }
    // affine-normalize each channel into [0.05, 0.95]; one shared affine
    // map per channel keeps wrap-equality intact
    for c in 0..3 {
        let channel = data.index_axis(ndarray::Axis(2), c);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in channel.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let scale = if hi > lo { 0.9 / (hi - lo) } else { 0.0 };
        let mut channel = data.index_axis_mut(ndarray::Axis(2), c);
        channel.mapv_inplace(|v| 0.05 + (v - lo) * scale + if scale == 0.0 { 0.45 } else { 0.0 });
    }
    TextureImage::new(data).expect("generated image is valid")
}

fn checkerboard(res: usize, rng: &mut RngState) -> TextureImage {
    let ky = rng.random_range(2..=5) as f64;
    let kx = rng.random_range(2..=5) as f64;
    let sharpness = rng.random_range(6.0..16.0);
    let mut c0 = [0.0; 3];
    let mut c1 = [0.0; 3];
    for c in 0..3 {
        c0[c] = rng.random_range(0.05..0.95);
        c1[c] = rng.random_range(0.05..0.95);
    }
    TextureImage::from_fn(res, res, 3, |y, x, c| {
        let fy = wrap_coord(y, res);
        let fx = wrap_coord(x, res);
        let field = (TAU * ky * fy).sin() * (TAU * kx * fx).sin();
        let v = 1.0 / (1.0 + (-sharpness * field).exp());
        c0[c] + v * (c1[c] - c0[c])
    })
    .expect("generated image is valid")
}

fn torus_noise(res: usize, rng: &mut RngState) -> TextureImage {
    let grid = rng.random_range(4..=7usize);
    let mut values = vec![0.0f64; grid * grid * 3];
    for v in values.iter_mut() {
        *v = rng.random_range(0.0..1.0);
    }
    let at = |i: usize, j: usize, c: usize| values[(i % grid) * grid * 3 + (j % grid) * 3 + c];
    TextureImage::from_fn(res, res, 3, |y, x, c| {
        let u = wrap_coord(y, res) * grid as f64;
        let w = wrap_coord(x, res) * grid as f64;
        let (i, j) = (u.floor() as usize, w.floor() as usize);
        let (mut tu, mut tw) = (u - u.floor(), w - w.floor());
        // smoothstep the blend for C1-continuous blobs
        tu = tu * tu * (3.0 - 2.0 * tu);
        tw = tw * tw * (3.0 - 2.0 * tw);
        let top = at(i, j, c) * (1.0 - tw) + at(i, j + 1, c) * tw;
        let bottom = at(i + 1, j, c) * (1.0 - tw) + at(i + 1, j + 1, c) * tw;
        let v = top * (1.0 - tu) + bottom * tu;
        0.05 + 0.9 * v
    })
    .expect("generated image is valid")
}
