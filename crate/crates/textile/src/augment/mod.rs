//! Label-aware augmentation: turns a pool of tileable / non-tileable source
//! textures into labeled training samples.
//!
//! Ops fall into three categories. *Preserving* ops (color, gamma, flips,
//! torus shifts, equalization, blur, noise, anisotropic rescale, unfold)
//! keep a tileable input tileable — on wrap-equal images they act on the
//! periodic core so the border equality survives exactly. *Breaking* ops
//! (rotation, shear, off-center crops, thin-plate-spline warps) destroy
//! periodicity; the sampler redraws parameters until the output demonstrably
//! fails the seam check, so "breaking" is a guarantee, not a hope.
//! *Tiling* repeats a sample 1–5 times per axis with a rescale and crop.

mod ops;
mod tps;

pub use ops::{equalize, gaussian_blur, shear_center_crop};
pub use tps::tps_warp;

use ndarray::{Array3, Axis, Slice};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::img::{
    self, circular_shift, crop, resize, rotate_center_crop, seam_gap, tile, unfold, CropSpec,
    TextureImage, MIN_SIDE,
};

/// Deterministic RNG with named streams: the same `(seed, stream)` pair
/// always yields the same draw sequence, and per-sample streams let callers
/// generate samples in any order (or in parallel) without coupling.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self::for_stream(seed, 0)
    }

    /// The `stream`-th independent sequence derived from `seed`.
    pub fn for_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngState { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// A fresh child stream; advances this state's own counter so repeated
    /// forks are independent of one another.
    pub fn fork(&mut self) -> Self {
        let child = self.rng.next_u64();
        Self::for_stream(self.seed ^ child, self.stream.wrapping_add(1))
    }
}

impl RngCore for RngState {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
}

/// Where a sample came from, which fixes its label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    /// Tileable source, preserving ops only.
    Tileable,
    /// Tileable source deliberately broken — a hard negative.
    TileableBroken,
    /// Non-tileable source kept as a negative.
    NonTileable,
    /// Non-tileable source shown untiled as a "repetition-free" positive.
    NonTileableAsPositive,
}

impl Provenance {
    /// The label this provenance implies: 1.0 tileable, 0.0 not.
    pub fn label(self) -> f64 {
        match self {
            Provenance::Tileable | Provenance::NonTileableAsPositive => 1.0,
            Provenance::TileableBroken | Provenance::NonTileable => 0.0,
        }
    }
}

/// An augmented training image with its binary label and provenance.
#[derive(Debug, Clone)]
pub struct LabeledSample {
    pub image: TextureImage,
    pub label: f64,
    pub provenance: Provenance,
}

/// All augmentation knobs: per-op toggles, parameter ranges, and the path
/// probabilities of [`make_sample`]. Serializes to JSON so training runs can
/// log the exact policy they used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentPolicy {
    /// Output side length of generated samples.
    pub train_size: usize,
    /// Probability of each individual preserving op being applied.
    pub p_op: f64,
    /// Probability that a tileable source is broken into a negative.
    pub q_tf: f64,
    /// Probability that a non-tileable source becomes an untiled positive.
    pub q_ff: f64,
    pub color_enabled: bool,
    /// Per-channel multiplicative range for color jitter.
    pub color_scale: (f64, f64),
    /// Per-channel additive range for color jitter.
    pub color_shift: (f64, f64),
    pub gamma_enabled: bool,
    pub gamma_range: (f64, f64),
    pub flip_enabled: bool,
    pub shift_enabled: bool,
    pub equalize_enabled: bool,
    pub blur_enabled: bool,
    pub blur_sigma: (f64, f64),
    pub noise_enabled: bool,
    pub noise_sigma: (f64, f64),
    pub rescale_enabled: bool,
    /// Per-axis resize factor range (anisotropic).
    pub rescale_range: (f64, f64),
    /// Probability of mirroring the sample into its 2Hx2W unfolding.
    pub unfold_prob: f64,
    /// Breaking rotation magnitude range in degrees.
    pub rotation_range: (f64, f64),
    /// Breaking shear factor range.
    pub shear_range: (f64, f64),
    /// Area fraction range of the breaking off-center crop.
    pub crop_area: (f64, f64),
    /// Control points per axis of the thin-plate-spline warp.
    pub tps_grid: usize,
    /// Min/max control-point displacement as a fraction of image size.
    pub tps_disp: (f64, f64),
    /// Minimum tiling repetitions per axis.
    pub tiling_reps_min: usize,
    /// Maximum tiling repetitions per axis (drawn from the min up to this).
    pub tiling_reps: usize,
    /// Rescale factor range inside random tiling.
    pub tiling_scale: (f64, f64),
    /// A breaking op must leave at least this much seam gap behind.
    pub break_gap: f64,
    /// Parameter redraws allowed before falling back to a large rotation.
    pub break_redraws: usize,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            train_size: 64,
            p_op: 0.5,
            q_tf: 0.5,
            q_ff: 0.25,
            color_enabled: true,
            color_scale: (0.8, 1.2),
            color_shift: (-0.1, 0.1),
            gamma_enabled: true,
            gamma_range: (0.7, 1.4),
            flip_enabled: true,
            shift_enabled: true,
            equalize_enabled: true,
            blur_enabled: true,
            blur_sigma: (0.0, 2.0),
            noise_enabled: true,
            noise_sigma: (0.0, 0.05),
            rescale_enabled: true,
            rescale_range: (0.5, 2.0),
            unfold_prob: 0.1,
            rotation_range: (3.0, 45.0),
            shear_range: (0.05, 0.3),
            crop_area: (0.5, 0.9),
            tps_grid: 5,
            tps_disp: (0.005, 0.05),
            tiling_reps_min: 1,
            tiling_reps: 5,
            tiling_scale: (0.5, 1.5),
            break_gap: 0.02,
            break_redraws: 8,
        }
    }
}

impl AugmentPolicy {
    /// Stable hex digest of the serialized policy, embedded in checkpoints
    /// so a model remembers what data distribution it was trained on.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("policy serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_json_file(&self, path: impl AsRef<std::path::Path>) -> std::io::Result<()> {
        let json = serde_json::to_string_pretty(self).expect("policy serializes");
        std::fs::write(path, json)
    }

    pub fn from_json_file(path: impl AsRef<std::path::Path>) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }
}

fn uniform(rng: &mut RngState, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.random_range(range.0..range.1)
    }
}

/// Applies a random subset of the tileability-preserving ops. When
/// `allow_unfold` is false the mirroring op is skipped — unfolding makes
/// *any* input tileable, which would silently flip the label of a negative.
pub fn apply_preserving(
    img: &TextureImage,
    rng: &mut RngState,
    policy: &AugmentPolicy,
    allow_unfold: bool,
) -> TextureImage {
    let mut out = img.clone();
    if policy.color_enabled && rng.random_bool(policy.p_op) {
        out = ops::color_jitter(&out, rng, policy.color_scale, policy.color_shift);
    }
    if policy.gamma_enabled && rng.random_bool(policy.p_op) {
        let gamma = uniform(rng, policy.gamma_range);
        out = ops::apply_gamma(&out, gamma);
    }
    if policy.equalize_enabled && rng.random_bool(policy.p_op) {
        out = equalize(&out);
    }
    if policy.flip_enabled && rng.random_bool(policy.p_op) {
        let horizontal = rng.random_bool(0.5);
        out = ops::flip(&out, horizontal);
    }
    if policy.shift_enabled && rng.random_bool(policy.p_op) {
        let dy = rng.random_range(0..out.height()) as isize;
        let dx = rng.random_range(0..out.width()) as isize;
        out = wrap_aware_shift(&out, dy, dx);
    }
    if policy.blur_enabled && rng.random_bool(policy.p_op) {
        let sigma = uniform(rng, policy.blur_sigma);
        out = gaussian_blur(&out, sigma);
    }
    if policy.noise_enabled && rng.random_bool(policy.p_op) {
        let sigma = uniform(rng, policy.noise_sigma);
        out = ops::add_noise(&out, rng, sigma);
    }
    if policy.rescale_enabled && rng.random_bool(policy.p_op) {
        let fy = uniform(rng, policy.rescale_range);
        let fx = uniform(rng, policy.rescale_range);
        let oh = ((out.height() as f64 * fy).round() as usize).max(MIN_SIDE);
        let ow = ((out.width() as f64 * fx).round() as usize).max(MIN_SIDE);
        out = resize(&out, (oh, ow)).expect("sizes clamped to minimum");
    }
    if allow_unfold && rng.random_bool(policy.unfold_prob) {
        out = unfold(&out);
    }
    out
}

/// Torus translation that respects border duplication: on an axis where the
/// opposite borders are pixel-equal, the roll acts on the periodic core and
/// the border is re-duplicated afterwards, so the output stays wrap-equal.
/// On other axes it is a plain circular shift.
pub fn wrap_aware_shift(img: &TextureImage, dy: isize, dx: isize) -> TextureImage {
    let d = img.data();
    let (h, w, _) = d.dim();
    // the core must itself be a valid image, so tiny images take the plain path
    let wrap_y = h > MIN_SIDE && d.index_axis(Axis(0), 0) == d.index_axis(Axis(0), h - 1);
    let wrap_x = w > MIN_SIDE && d.index_axis(Axis(1), 0) == d.index_axis(Axis(1), w - 1);
    if !wrap_y && !wrap_x {
        return circular_shift(img, dy, dx);
    }
    let mut core = d.clone();
    if wrap_y {
        core = core.slice_axis(Axis(0), Slice::from(0..h - 1)).to_owned();
    }
    if wrap_x {
        core = core.slice_axis(Axis(1), Slice::from(0..w - 1)).to_owned();
    }
    let rolled = img::circular_shift(
        &TextureImage::new(core).expect("core keeps valid pixels"),
        if wrap_y { dy } else { 0 },
        if wrap_x { dx } else { 0 },
    );
    let mut out = rolled.into_data();
    if !wrap_y || !wrap_x {
        // mixed case: the non-periodic axis still gets its plain roll
        let plain = circular_shift(
            &TextureImage::new(out).expect("roll keeps valid pixels"),
            if wrap_y { 0 } else { dy },
            if wrap_x { 0 } else { dx },
        );
        out = plain.into_data();
    }
    if wrap_y {
        out = duplicate_border(&out, Axis(0));
    }
    if wrap_x {
        out = duplicate_border(&out, Axis(1));
    }
    TextureImage::new(out).expect("re-bordered roll keeps valid pixels")
}

/// Appends a copy of the first row/column along `axis`, closing the torus.
fn duplicate_border(data: &Array3<f64>, axis: Axis) -> Array3<f64> {
    let first = data.slice_axis(axis, Slice::from(0..1));
    ndarray::concatenate(axis, &[data.view(), first]).expect("border slice shape matches")
}

/// The individual tileability-breaking transforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BreakingOp {
    Rotation,
    Shear,
    OffCenterCrop,
    TpsWarp,
}

fn apply_breaking_once(
    img: &TextureImage,
    rng: &mut RngState,
    policy: &AugmentPolicy,
    op: BreakingOp,
) -> TextureImage {
    match op {
        BreakingOp::Rotation => {
            let magnitude = uniform(rng, policy.rotation_range);
            let theta = if rng.random_bool(0.5) {
                magnitude
            } else {
                -magnitude
            };
            rotate_center_crop(img, theta).unwrap_or_else(|_| img.clone())
        }
        BreakingOp::Shear => {
            let magnitude = uniform(rng, policy.shear_range);
            let factor = if rng.random_bool(0.5) {
                magnitude
            } else {
                -magnitude
            };
            let horizontal = rng.random_bool(0.5);
            shear_center_crop(img, factor, horizontal).unwrap_or_else(|_| img.clone())
        }
        BreakingOp::OffCenterCrop => {
            let area = uniform(rng, policy.crop_area);
            let side = area.sqrt();
            let ch = ((img.height() as f64 * side).round() as usize).max(MIN_SIDE);
            let cw = ((img.width() as f64 * side).round() as usize).max(MIN_SIDE);
            let top = rng.random_range(0..=img.height() - ch);
            let left = rng.random_range(0..=img.width() - cw);
            let spec = CropSpec {
                top,
                left,
                height: ch,
                width: cw,
            };
            crop(img, spec).expect("crop bounds checked above")
        }
        BreakingOp::TpsWarp => {
            let n = policy.tps_grid;
            let scale = img.height().min(img.width()) as f64;
            let (lo, hi) = policy.tps_disp;
            // redraw until at least one control point moves noticeably, so
            // the warp can never degenerate to the identity
            loop {
                let mut offsets = Vec::with_capacity(n * n);
                let mut max_disp = 0.0f64;
                for _ in 0..n * n {
                    let dy = rng.random_range(-hi..hi) * scale;
                    let dx = rng.random_range(-hi..hi) * scale;
                    max_disp = max_disp.max(dy.hypot(dx));
                    offsets.push((dy, dx));
                }
                if max_disp >= lo * scale {
                    return tps_warp(img, n, &offsets);
                }
            }
        }
    }
}

/// Applies one randomly chosen breaking op. Parameters are redrawn until the
/// output's seam gap exceeds the policy threshold (so a lucky draw — say an
/// off-center crop landing exactly on a period boundary — cannot produce a
/// tileable "negative"); after `break_redraws` failures it falls back to a
/// large rotation, which always breaks axis-aligned periodicity.
///
/// Constant images are the one degenerate input: no geometric transform can
/// un-flatten them, so the fallback result is returned as-is.
pub fn apply_breaking(
    img: &TextureImage,
    rng: &mut RngState,
    policy: &AugmentPolicy,
) -> TextureImage {
    const OPS: [BreakingOp; 4] = [
        BreakingOp::Rotation,
        BreakingOp::Shear,
        BreakingOp::OffCenterCrop,
        BreakingOp::TpsWarp,
    ];
    for _ in 0..=policy.break_redraws {
        let op = OPS[rng.random_range(0..OPS.len())];
        let out = apply_breaking_once(img, rng, policy, op);
        if seam_gap(&out) > policy.break_gap {
            return out;
        }
    }
    let theta = rng.random_range(10.0..45.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    rotate_center_crop(img, theta).unwrap_or_else(|_| img.clone())
}

/// Breaks a tileable source and tiles the result, redrawing the whole
/// pipeline while the finished sample's seam gap sits under the policy
/// floor. The last resort rotates the tiled sample itself, which leaves
/// a diagonal discontinuity no rescale can average away.
fn break_and_tile(
    source: &TextureImage,
    rng: &mut RngState,
    policy: &AugmentPolicy,
) -> TextureImage {
    let mut out = random_tiling(&apply_breaking(source, rng, policy), rng, policy);
    for _ in 0..policy.break_redraws {
        if seam_gap(&out) > policy.break_gap {
            return out;
        }
        out = random_tiling(&apply_breaking(source, rng, policy), rng, policy);
    }
    if seam_gap(&out) <= policy.break_gap {
        let theta = rng.random_range(15.0..40.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        if let Ok(turned) = rotate_center_crop(&out, theta) {
            out = fit_resize(&turned, policy.train_size);
        }
    }
    out
}

/// Repeats `img` a random number of times per axis, rescales, and fits the
/// result to `policy.train_size`. Wrap-equal inputs take an exact path —
/// phase shift on the periodic core, per-period rescale, repetition,
/// corner-aligned resize — so their border equality survives bit-for-bit
/// and the label stays honest. Other inputs go through the same
/// roll/rescale/repeat/resize construction applied literally; both classes
/// therefore share scale and repetition statistics, and the junction seams
/// the literal tiling leaves behind are the only evidence that separates a
/// negative from a positive.
pub fn random_tiling(
    img: &TextureImage,
    rng: &mut RngState,
    policy: &AugmentPolicy,
) -> TextureImage {
    let reps = (
        rng.random_range(policy.tiling_reps_min..=policy.tiling_reps),
        rng.random_range(policy.tiling_reps_min..=policy.tiling_reps),
    );
    let scale = uniform(rng, policy.tiling_scale);
    let offset = (
        rng.random_range(0..img.height()),
        rng.random_range(0..img.width()),
    );
    random_tiling_with(img, reps, scale, offset, policy.train_size)
}

/// Deterministic core of [`random_tiling`]; `offset` selects the circular
/// phase of the repeated unit (the periodic core for wrap-equal inputs,
/// the raw pixels otherwise). With reps `(1,1)`, scale `1.0`, offset
/// `(0,0)` and `out_size` equal to the input size, this is the identity.
pub fn random_tiling_with(
    img: &TextureImage,
    reps: (usize, usize),
    scale: f64,
    offset: (usize, usize),
    out_size: usize,
) -> TextureImage {
    let d = img.data();
    let (h, w, _) = d.dim();
    let wrap = h > MIN_SIDE && w > MIN_SIDE && img.is_wrap_equal();
    if wrap {
        // phase shift on the (H-1)x(W-1) periodic core, keeping borders equal
        let shifted = wrap_aware_shift(img, -(offset.0 as isize), -(offset.1 as isize));
        // rescale one period (corner-aligned, so wrap equality is exact)
        let ph = (((h - 1) as f64 * scale).round() as usize).max(MIN_SIDE);
        let pw = (((w - 1) as f64 * scale).round() as usize).max(MIN_SIDE);
        let period = resize(&shifted, (ph + 1, pw + 1)).expect("period above minimum");
        // repeat the core, then close the torus with one duplicated border
        let core = period
            .data()
            .slice_axis(Axis(0), Slice::from(0..ph))
            .slice_axis(Axis(1), Slice::from(0..pw))
            .to_owned();
        let core = TextureImage::new(core).expect("core keeps valid pixels");
        let tiled = tile(&core, reps).expect("reps at least 1");
        let mut data = tiled.into_data();
        data = duplicate_border(&data, Axis(0));
        data = duplicate_border(&data, Axis(1));
        let closed = TextureImage::new(data).expect("tiling keeps valid pixels");
        if closed.height() == out_size && closed.width() == out_size {
            return closed;
        }
        return resize(&closed, (out_size, out_size)).expect("out_size above minimum");
    }
    // Mirror the wrap-equal construction step for step — roll, rescale the
    // unit, repeat, resize — so the two label classes share their scale and
    // repetition statistics and differ only in junction continuity.
    let rolled = circular_shift(img, -(offset.0 as isize), -(offset.1 as isize));
    let rh = (((h as f64) * scale).round() as usize).max(MIN_SIDE);
    let rw = (((w as f64) * scale).round() as usize).max(MIN_SIDE);
    let unit = if (rh, rw) == (h, w) {
        rolled
    } else {
        resize(&rolled, (rh, rw)).expect("unit above minimum")
    };
    let tiled = tile(&unit, reps).expect("reps at least 1");
    if tiled.height() == out_size && tiled.width() == out_size {
        return tiled;
    }
    resize(&tiled, (out_size, out_size)).expect("out_size above minimum")
}

/// Fits an image to `size` x `size` without tiling it: a deterministic
/// corner-aligned resize. Used for the untiled "repetition-free" positives.
fn fit_resize(img: &TextureImage, size: usize) -> TextureImage {
    if img.height() == size && img.width() == size {
        img.clone()
    } else {
        resize(img, (size, size)).expect("train size above minimum")
    }
}

/// Draws one labeled training sample from a source texture.
///
/// A tileable source either survives with preserving ops (label 1) or is
/// broken on purpose (probability `q_tf`, label 0). A non-tileable source
/// is usually kept as a negative under preserving plus an optional breaking
/// op, but with probability `q_ff` it is shown *untiled* as a positive: a
/// single texture with no repetition carries no seam evidence, and teaching
/// the network that keeps it from conflating "textured" with "non-tileable".
/// All negatives and all tileable positives then pass through
/// [`random_tiling`] so the network always sees the repeated view.
///
/// Deliberately broken samples are re-checked *after* tiling: the tiling
/// rescale can average a marginal seam back down, so the gap floor is
/// enforced on the image that actually gets the negative label.
pub fn make_sample(
    source: &TextureImage,
    source_tileable: bool,
    rng: &mut RngState,
    policy: &AugmentPolicy,
) -> LabeledSample {
    let (image, provenance) = if source_tileable {
        if rng.random_bool(policy.q_tf) {
            (
                break_and_tile(source, rng, policy),
                Provenance::TileableBroken,
            )
        } else {
            let kept = apply_preserving(source, rng, policy, true);
            (random_tiling(&kept, rng, policy), Provenance::Tileable)
        }
    } else if rng.random_bool(policy.q_ff) {
        let mut out = apply_preserving(source, rng, policy, true);
        if rng.random_bool(policy.p_op) {
            out = apply_breaking(&out, rng, policy);
        }
        (
            fit_resize(&out, policy.train_size),
            Provenance::NonTileableAsPositive,
        )
    } else {
        let mut out = apply_preserving(source, rng, policy, false);
        if rng.random_bool(policy.p_op) {
            out = apply_breaking(&out, rng, policy);
        }
        (random_tiling(&out, rng, policy), Provenance::NonTileable)
    };
    LabeledSample {
        label: provenance.label(),
        image,
        provenance,
    }
}

#[cfg(test)]
mod tests;
