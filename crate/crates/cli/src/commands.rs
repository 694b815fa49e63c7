//! The subcommand implementations. Each one follows the same shape: resolve
//! the config (defaults <- config file <- flags), log it together with the
//! seed, check that the inputs exist, call into the library, and write the
//! results plus a `manifest.json` into the run directory.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use ndarray::Array3;
use serde::Serialize;

use textile::apps::{
    align_rotation, bench_directories, find_repeat, outpaint as outpaint_band, synthesize,
    AlignmentQuery, AppError, InitMode, RepeatQuery, Scorer, SeamGapOracle, SynthesisConfig,
    TexTileScorer,
};
use textile::augment::AugmentPolicy;
use textile::img::{self, TextureImage};
use textile::metric::{score_batch, MetricConfig, MetricError};
use textile::net::{build_network, load_checkpoint, Network, NetworkConfig};
use textile::plot;
use textile::trainer::{
    evaluate, generate_synthetic_corpus, load_manifest, train as train_network, Split,
    SyntheticCorpusConfig, TrainConfig, TrainError,
};

use crate::run::{read_json, require_exists, RunDir};
use crate::CliError;

fn map_metric(err: MetricError) -> CliError {
    match err {
        MetricError::BadConfig(msg) => CliError::Config(msg),
        other => CliError::Run(other.to_string()),
    }
}

fn map_app(err: AppError) -> CliError {
    match err {
        AppError::BadQuery(msg) => CliError::Config(msg),
        AppError::NotDifferentiable(name) => CliError::Config(format!(
            "scorer `{name}` provides no gradients for optimization"
        )),
        other => CliError::Run(other.to_string()),
    }
}

fn map_train(err: TrainError) -> CliError {
    match err {
        TrainError::BadConfig(msg) => CliError::Config(msg),
        other => CliError::Run(other.to_string()),
    }
}

fn map_plot(err: textile::plot::PlotError) -> CliError {
    CliError::Run(err.to_string())
}

fn load_input_image(path: &Path) -> Result<TextureImage, CliError> {
    require_exists("image", path)?;
    img::load_texture(path).map_err(|e| CliError::Unreadable {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn load_net(path: &Path) -> Result<Network, CliError> {
    require_exists("checkpoint", path)?;
    load_checkpoint(path).map_err(|e| CliError::Run(format!("checkpoint: {e}")))
}

fn save_image(img: &TextureImage, path: &Path) -> Result<(), CliError> {
    img::save_texture(img, path).map_err(|e| CliError::Run(format!("cannot write image: {e}")))
}

fn write_json_file(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Run(format!("serialization: {e}")))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn log_config(command: &str, seed: Option<u64>, cfg: &impl Serialize) {
    let rendered = serde_json::to_string(cfg).unwrap_or_else(|_| "<unserializable>".into());
    match seed {
        Some(seed) => log::info!("{command}: seed {seed}, resolved config {rendered}"),
        None => log::info!("{command}: resolved config {rendered}"),
    }
}

// ---- shared flag groups ----

#[derive(Args)]
pub struct MetricFlags {
    /// Metric config as JSON (partial files fill in defaults).
    #[arg(long)]
    metric_config: Option<PathBuf>,
    /// Logistic scale applied to the logit.
    #[arg(long)]
    lambda: Option<f64>,
    /// Vertical repetitions of the input before scoring.
    #[arg(long)]
    reps_y: Option<usize>,
    /// Horizontal repetitions of the input before scoring.
    #[arg(long)]
    reps_x: Option<usize>,
    /// Resize the shorter side to this length before tiling.
    #[arg(long)]
    inference_size: Option<usize>,
    /// Enable the fixed-resolution resize before tiling.
    #[arg(long)]
    resize: bool,
}

impl MetricFlags {
    fn resolve(&self) -> Result<MetricConfig, CliError> {
        let mut cfg: MetricConfig = match &self.metric_config {
            Some(path) => read_json("metric config", path)?,
            None => MetricConfig::default(),
        };
        if let Some(v) = self.lambda {
            cfg.lambda_logistic = v;
        }
        if let Some(v) = self.reps_y {
            cfg.reps.0 = v;
        }
        if let Some(v) = self.reps_x {
            cfg.reps.1 = v;
        }
        if let Some(v) = self.inference_size {
            cfg.inference_size = v;
        }
        if self.resize {
            cfg.resize_before_tiling = true;
        }
        cfg.validate().map_err(map_metric)?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScorerKind {
    /// The learned metric when a checkpoint is given, else the oracle.
    Auto,
    /// Closed-form seam-gap baseline, no checkpoint needed.
    Oracle,
    /// The learned metric (requires --checkpoint).
    Textile,
}

#[derive(Args)]
pub struct ScorerFlags {
    /// Which scorer drives the run.
    #[arg(long, value_enum, default_value_t = ScorerKind::Auto)]
    scorer: ScorerKind,
    /// Trained model checkpoint for the learned scorer.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    metric: MetricFlags,
}

impl ScorerFlags {
    fn build(&self) -> Result<Box<dyn Scorer>, CliError> {
        let want_textile = match self.scorer {
            ScorerKind::Oracle => false,
            ScorerKind::Textile => true,
            ScorerKind::Auto => self.checkpoint.is_some(),
        };
        if !want_textile {
            return Ok(Box::new(SeamGapOracle));
        }
        let path = self
            .checkpoint
            .as_ref()
            .ok_or_else(|| CliError::Config("the learned scorer needs --checkpoint".into()))?;
        let net = load_net(path)?;
        let scorer = TexTileScorer::new(net, self.metric.resolve()?).map_err(map_app)?;
        Ok(Box::new(scorer))
    }
}

// ---- score ----

#[derive(Args)]
pub struct ScoreArgs {
    /// Images to score.
    #[arg(required = true)]
    images: Vec<PathBuf>,
    /// Trained model checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    metric: MetricFlags,
    /// Run directory for the report.
    #[arg(long, default_value = "runs/score")]
    out: PathBuf,
}

pub fn score(args: ScoreArgs) -> Result<(), CliError> {
    let cfg = args.metric.resolve()?;
    log_config("score", None, &cfg);
    for image in &args.images {
        require_exists("image", image)?;
    }
    let net = load_net(&args.checkpoint)?;
    let report = score_batch(&net, &args.images, &cfg);
    if report.entries.is_empty() {
        if let Some(first) = report.failures.first() {
            return Err(CliError::Unreadable {
                path: PathBuf::from(&first.path),
                message: first.message.clone(),
            });
        }
    }
    for failure in &report.failures {
        log::warn!("failed to score {}: {}", failure.path, failure.message);
    }
    let mut run = RunDir::create(&args.out)?;
    report
        .write_csv(run.file("scores.csv"))
        .map_err(map_metric)?;
    report
        .write_json(run.file("scores.json"))
        .map_err(map_metric)?;
    for entry in &report.entries {
        println!("{}\t{:.6}", entry.path, entry.score);
    }
    run.finish("score", None, &cfg)
}

// ---- train ----

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset manifest CSV (path,label,split,source).
    #[arg(long)]
    manifest: PathBuf,
    /// Training config as JSON (partial files fill in defaults).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Network architecture as JSON; defaults to the standard preset.
    #[arg(long)]
    net_config: Option<PathBuf>,
    /// Augmentation policy as JSON; defaults to the standard policy.
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    initial_lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Square crop size samples are augmented to.
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory for checkpoint, history, and summary.
    #[arg(long, default_value = "runs/train")]
    out: PathBuf,
}

#[derive(Serialize)]
struct TrainSummary {
    epochs_run: usize,
    best_val_bce: Option<f64>,
    final_train_loss: Option<f64>,
    checkpoint: String,
    history: String,
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let mut cfg: TrainConfig = match &args.config {
        Some(path) => read_json("train config", path)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.initial_lr {
        cfg.initial_lr = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.resolution {
        cfg.train_resolution = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    let net_config: NetworkConfig = match &args.net_config {
        Some(path) => read_json("network config", path)?,
        None => NetworkConfig::toy(),
    };
    let policy: AugmentPolicy = match &args.policy {
        Some(path) => read_json("augmentation policy", path)?,
        None => AugmentPolicy::default(),
    };

    let mut run = RunDir::create(&args.out)?;
    cfg.checkpoint_path = Some(run.file("checkpoint.ttck"));
    cfg.history_path = Some(run.file("history.jsonl"));
    log_config("train", Some(cfg.seed), &cfg);

    require_exists("manifest", &args.manifest)?;
    let manifest = load_manifest(&args.manifest).map_err(map_train)?;
    let mut net = build_network(net_config, cfg.seed)
        .map_err(|e| CliError::Config(format!("network: {e}")))?;
    let outcome = train_network(&mut net, &manifest, &policy, &cfg).map_err(map_train)?;

    let summary = TrainSummary {
        epochs_run: outcome.history.len(),
        best_val_bce: outcome.best_val_bce,
        final_train_loss: outcome.history.last().map(|r| r.train_loss),
        checkpoint: "checkpoint.ttck".into(),
        history: "history.jsonl".into(),
    };
    write_json_file(&run.file("summary.json"), &summary)?;
    let curve: Vec<(f64, f64)> = outcome
        .history
        .iter()
        .map(|r| (r.epoch as f64, r.train_loss))
        .collect();
    if curve.len() > 1 {
        plot::line_chart(&[curve], run.file("loss_curve.png")).map_err(map_plot)?;
    }
    println!(
        "{}",
        serde_json::json!({
            "epochs_run": summary.epochs_run,
            "best_val_bce": summary.best_val_bce,
        })
    );
    run.finish("train", Some(cfg.seed), &cfg)
}

// ---- eval ----

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Which split of the manifest to evaluate.
    #[arg(long, default_value = "test")]
    split: String,
    #[command(flatten)]
    metric: MetricFlags,
    #[arg(long, default_value = "runs/eval")]
    out: PathBuf,
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let split = Split::parse(&args.split)
        .ok_or_else(|| CliError::Config(format!("unknown split `{}`", args.split)))?;
    let cfg = args.metric.resolve()?;
    log_config("eval", None, &cfg);
    require_exists("manifest", &args.manifest)?;
    let manifest = load_manifest(&args.manifest).map_err(map_train)?;
    let net = load_net(&args.checkpoint)?;
    let report = evaluate(&net, &manifest, split, &cfg).map_err(map_train)?;

    let mut run = RunDir::create(&args.out)?;
    write_json_file(&run.file("eval.json"), &report)?;
    println!(
        "{}",
        serde_json::json!({
            "split": split.as_str(),
            "bce_error": report.bce_error,
            "accuracy": report.accuracy,
            "f1": report.f1,
            "auc": report.auc,
        })
    );
    run.finish("eval", None, &cfg)
}

// ---- synthesis-family shared flags ----

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InitFlag {
    Noise,
    ExemplarPlusNoise,
}

#[derive(Args)]
pub struct SynthesisFlags {
    /// Synthesis config as JSON (partial files fill in defaults).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    style_weight: Option<f64>,
    #[arg(long)]
    textile_weight: Option<f64>,
    #[arg(long)]
    step_size: Option<f64>,
    /// Random projection directions per pyramid level.
    #[arg(long)]
    slices: Option<usize>,
    #[arg(long, value_enum)]
    init: Option<InitFlag>,
    #[arg(long)]
    seed: Option<u64>,
}

impl SynthesisFlags {
    fn resolve(&self) -> Result<SynthesisConfig, CliError> {
        let mut cfg: SynthesisConfig = match &self.config {
            Some(path) => read_json("synthesis config", path)?,
            None => SynthesisConfig::default(),
        };
        if let Some(v) = self.iterations {
            cfg.iterations = v;
        }
        if let Some(v) = self.resolution {
            cfg.resolution = v;
        }
        if let Some(v) = self.style_weight {
            cfg.style_weight = v;
        }
        if let Some(v) = self.textile_weight {
            cfg.textile_weight = v;
        }
        if let Some(v) = self.step_size {
            cfg.step_size = v;
        }
        if let Some(v) = self.slices {
            cfg.slices = v;
        }
        if let Some(v) = self.init {
            cfg.init = match v {
                InitFlag::Noise => InitMode::Noise,
                InitFlag::ExemplarPlusNoise => InitMode::ExemplarPlusNoise,
            };
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct SynthSummary {
    style_loss: f64,
    score: f64,
    seam_gap: f64,
    iterations: usize,
}

// ---- synth ----

#[derive(Args)]
pub struct SynthArgs {
    /// Style exemplar image.
    #[arg(long)]
    exemplar: PathBuf,
    #[command(flatten)]
    scorer: ScorerFlags,
    #[command(flatten)]
    synthesis: SynthesisFlags,
    #[arg(long, default_value = "runs/synth")]
    out: PathBuf,
}

pub fn synth(args: SynthArgs) -> Result<(), CliError> {
    let cfg = args.synthesis.resolve()?;
    log_config("synth", Some(cfg.seed), &cfg);
    let exemplar = load_input_image(&args.exemplar)?;
    let scorer = args.scorer.build()?;
    let result = synthesize(&exemplar, scorer.as_ref(), &cfg).map_err(map_app)?;

    let mut run = RunDir::create(&args.out)?;
    save_image(&result.image, &run.file("synthesized.png"))?;
    let summary = SynthSummary {
        style_loss: result.style_loss,
        score: result.score,
        seam_gap: img::seam_gap(&result.image),
        iterations: result.loss_curve.len(),
    };
    write_json_file(&run.file("result.json"), &summary)?;
    if result.loss_curve.len() > 1 {
        let curve: Vec<(f64, f64)> = result
            .loss_curve
            .iter()
            .enumerate()
            .map(|(i, &l)| (i as f64, l))
            .collect();
        plot::line_chart(&[curve], run.file("loss_curve.png")).map_err(map_plot)?;
    }
    println!(
        "{}",
        serde_json::json!({"score": summary.score, "seam_gap": summary.seam_gap})
    );
    run.finish("synth", Some(cfg.seed), &cfg)
}

// ---- outpaint ----

#[derive(Args)]
pub struct OutpaintArgs {
    #[arg(long)]
    image: PathBuf,
    /// Width in pixels of the border band to re-optimize.
    #[arg(long)]
    border: usize,
    #[command(flatten)]
    scorer: ScorerFlags,
    #[command(flatten)]
    synthesis: SynthesisFlags,
    #[arg(long, default_value = "runs/outpaint")]
    out: PathBuf,
}

pub fn outpaint(args: OutpaintArgs) -> Result<(), CliError> {
    let cfg = args.synthesis.resolve()?;
    log_config("outpaint", Some(cfg.seed), &cfg);
    let image = load_input_image(&args.image)?;
    let scorer = args.scorer.build()?;
    let before = img::seam_gap(&image);
    let result = outpaint_band(&image, args.border, scorer.as_ref(), &cfg).map_err(map_app)?;

    let mut run = RunDir::create(&args.out)?;
    save_image(&result.image, &run.file("outpainted.png"))?;
    let summary = serde_json::json!({
        "style_loss": result.style_loss,
        "score": result.score,
        "seam_gap_before": before,
        "seam_gap_after": img::seam_gap(&result.image),
        "border": args.border,
    });
    write_json_file(&run.file("result.json"), &summary)?;
    println!("{summary}");
    run.finish("outpaint", Some(cfg.seed), &cfg)
}

// ---- align ----

#[derive(Args)]
pub struct AlignArgs {
    #[arg(long)]
    image: PathBuf,
    #[command(flatten)]
    scorer: ScorerFlags,
    #[arg(long, default_value_t = -45.0, allow_hyphen_values = true)]
    min_deg: f64,
    #[arg(long, default_value_t = 45.0, allow_hyphen_values = true)]
    max_deg: f64,
    #[arg(long, default_value_t = 1.0)]
    step_deg: f64,
    #[arg(long, default_value = "runs/align")]
    out: PathBuf,
}

pub fn align(args: AlignArgs) -> Result<(), CliError> {
    let query = AlignmentQuery {
        min_deg: args.min_deg,
        max_deg: args.max_deg,
        step_deg: args.step_deg,
    };
    log_config(
        "align",
        None,
        &serde_json::json!({
            "min_deg": query.min_deg, "max_deg": query.max_deg, "step_deg": query.step_deg,
        }),
    );
    let image = load_input_image(&args.image)?;
    let scorer = args.scorer.build()?;
    let scan = align_rotation(&image, scorer.as_ref(), &query).map_err(map_app)?;

    let mut run = RunDir::create(&args.out)?;
    let mut writer =
        csv::Writer::from_path(run.file("curve.csv")).map_err(|e| CliError::Run(e.to_string()))?;
    writer
        .write_record(["theta_deg", "score"])
        .map_err(|e| CliError::Run(e.to_string()))?;
    for (theta, score) in &scan.curve {
        writer
            .write_record([theta.to_string(), score.to_string()])
            .map_err(|e| CliError::Run(e.to_string()))?;
    }
    writer.flush()?;
    plot::line_chart(&[scan.curve.clone()], run.file("curve.png")).map_err(map_plot)?;
    let aligned = img::rotate_center_crop(&image, scan.best_theta)
        .map_err(|e| CliError::Run(e.to_string()))?;
    save_image(&aligned, &run.file("aligned.png"))?;
    println!("{}", serde_json::json!({"best_theta_deg": scan.best_theta}));
    run.finish(
        "align",
        None,
        &serde_json::json!({
            "min_deg": query.min_deg, "max_deg": query.max_deg, "step_deg": query.step_deg,
            "best_theta_deg": scan.best_theta,
        }),
    )
}

// ---- repeat ----

#[derive(Args)]
pub struct RepeatArgs {
    #[arg(long)]
    image: PathBuf,
    #[command(flatten)]
    scorer: ScorerFlags,
    #[arg(long, default_value_t = 64)]
    min_size: usize,
    #[arg(long, default_value_t = 8)]
    step: usize,
    #[arg(long)]
    max_size: Option<usize>,
    #[arg(long, default_value = "runs/repeat")]
    out: PathBuf,
}

pub fn repeat(args: RepeatArgs) -> Result<(), CliError> {
    let query = RepeatQuery {
        min_size: args.min_size,
        step: args.step,
        max_size: args.max_size,
    };
    log_config(
        "repeat",
        None,
        &serde_json::json!({
            "min_size": query.min_size, "step": query.step, "max_size": query.max_size,
        }),
    );
    let image = load_input_image(&args.image)?;
    let scorer = args.scorer.build()?;
    let scan = find_repeat(&image, scorer.as_ref(), &query).map_err(map_app)?;

    let mut run = RunDir::create(&args.out)?;
    let mut writer = csv::Writer::from_path(run.file("surface.csv"))
        .map_err(|e| CliError::Run(e.to_string()))?;
    writer
        .write_record(["height", "width", "score"])
        .map_err(|e| CliError::Run(e.to_string()))?;
    for (i, &h) in scan.heights.iter().enumerate() {
        for (j, &w) in scan.widths.iter().enumerate() {
            writer
                .write_record([h.to_string(), w.to_string(), scan.surface[i][j].to_string()])
                .map_err(|e| CliError::Run(e.to_string()))?;
        }
    }
    writer.flush()?;
    plot::heatmap(&scan.surface, run.file("surface.png")).map_err(map_plot)?;
    let patch = img::center_crop(&image, scan.best).map_err(|e| CliError::Run(e.to_string()))?;
    save_image(&patch, &run.file("patch.png"))?;
    println!(
        "{}",
        serde_json::json!({"best_height": scan.best.0, "best_width": scan.best.1})
    );
    run.finish(
        "repeat",
        None,
        &serde_json::json!({
            "min_size": query.min_size, "step": query.step, "max_size": query.max_size,
            "best": [scan.best.0, scan.best.1],
        }),
    )
}

// ---- saliency ----

#[derive(Args)]
pub struct SaliencyArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long, default_value = "runs/saliency")]
    out: PathBuf,
}

pub fn saliency(args: SaliencyArgs) -> Result<(), CliError> {
    log_config(
        "saliency",
        None,
        &serde_json::json!({"image": args.image.display().to_string()}),
    );
    let image = load_input_image(&args.image)?;
    let net = load_net(&args.checkpoint)?;
    let map = textile::net::saliency(&net, &image)
        .map_err(|e| CliError::Run(format!("saliency: {e}")))?;

    let (lo, hi) = map
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (h, w) = map.dim();
    let gray = Array3::from_shape_fn((h, w, 1), |(y, x, _)| (map[(y, x)] - lo) / span);
    let rendered = TextureImage::new(gray).map_err(|e| CliError::Run(e.to_string()))?;

    let mut run = RunDir::create(&args.out)?;
    save_image(&rendered, &run.file("saliency.png"))?;
    write_json_file(
        &run.file("stats.json"),
        &serde_json::json!({"min": lo, "max": hi, "height": h, "width": w}),
    )?;
    println!("{}", serde_json::json!({"min": lo, "max": hi}));
    run.finish(
        "saliency",
        None,
        &serde_json::json!({"image": args.image.display().to_string()}),
    )
}

// ---- bench ----

#[derive(Args)]
pub struct BenchArgs {
    /// Directories of images, typically one per synthesis method.
    #[arg(required = true)]
    dirs: Vec<PathBuf>,
    /// Add the learned scorer alongside the seam-gap oracle.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    metric: MetricFlags,
    #[arg(long, default_value = "runs/bench")]
    out: PathBuf,
}

pub fn bench(args: BenchArgs) -> Result<(), CliError> {
    for dir in &args.dirs {
        require_exists("image directory", dir)?;
    }
    let learned = match &args.checkpoint {
        Some(path) => {
            let net = load_net(path)?;
            Some(TexTileScorer::new(net, args.metric.resolve()?).map_err(map_app)?)
        }
        None => None,
    };
    let mut scorers: Vec<&dyn Scorer> = vec![&SeamGapOracle];
    if let Some(s) = &learned {
        scorers.push(s);
    }
    log_config(
        "bench",
        None,
        &serde_json::json!({
            "dirs": args.dirs.iter().map(|d| d.display().to_string()).collect::<Vec<_>>(),
            "scorers": scorers.iter().map(|s| s.name()).collect::<Vec<_>>(),
        }),
    );

    let report = bench_directories(&args.dirs, &scorers).map_err(map_app)?;
    for dir in &report.empty_dirs {
        log::warn!("directory `{dir}` contributed no readable images");
    }

    let mut run = RunDir::create(&args.out)?;
    report
        .write_scores_csv(run.file("scores.csv"))
        .map_err(map_app)?;
    report
        .write_summary_csv(run.file("summary.csv"))
        .map_err(map_app)?;
    report
        .write_correlation_csv(run.file("correlation.csv"))
        .map_err(map_app)?;
    plot::heatmap(&report.correlation, run.file("correlation.png")).map_err(map_plot)?;
    let mean_series: Vec<Vec<(f64, f64)>> = (0..report.scorer_names.len())
        .map(|s| {
            report
                .methods
                .iter()
                .enumerate()
                .map(|(m, stats)| (m as f64, stats.per_scorer[s].mean))
                .collect()
        })
        .collect();
    if report.methods.len() > 1 {
        plot::line_chart(&mean_series, run.file("means.png")).map_err(map_plot)?;
    }
    println!(
        "{}",
        serde_json::json!({
            "methods": report.methods.len(),
            "images": report.rows.len(),
            "empty_dirs": report.empty_dirs,
        })
    );
    run.finish(
        "bench",
        None,
        &serde_json::json!({
            "dirs": args.dirs.iter().map(|d| d.display().to_string()).collect::<Vec<_>>(),
        }),
    )
}

// ---- gen-corpus ----

#[derive(Args)]
pub struct GenCorpusArgs {
    /// Corpus config as JSON (partial files fill in defaults).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train_per_class: Option<usize>,
    #[arg(long)]
    val_per_class: Option<usize>,
    #[arg(long)]
    test_per_class: Option<usize>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory the images and manifest are generated into.
    #[arg(long, default_value = "runs/corpus")]
    out: PathBuf,
}

pub fn gen_corpus(args: GenCorpusArgs) -> Result<(), CliError> {
    let mut cfg: SyntheticCorpusConfig = match &args.config {
        Some(path) => read_json("corpus config", path)?,
        None => SyntheticCorpusConfig::default(),
    };
    if let Some(v) = args.train_per_class {
        cfg.train_per_class = v;
    }
    if let Some(v) = args.val_per_class {
        cfg.val_per_class = v;
    }
    if let Some(v) = args.test_per_class {
        cfg.test_per_class = v;
    }
    if let Some(v) = args.resolution {
        cfg.resolution = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    log_config("gen-corpus", Some(cfg.seed), &cfg);

    let mut run = RunDir::create(&args.out)?;
    let manifest = generate_synthetic_corpus(&cfg, run.root()).map_err(map_train)?;
    run.file("manifest.csv");
    run.file("images");
    let pos = manifest.entries.iter().filter(|e| e.is_positive()).count();
    let neg = manifest.entries.len() - pos;
    println!(
        "{}",
        serde_json::json!({"images": manifest.entries.len(), "positives": pos, "negatives": neg})
    );
    run.finish("gen-corpus", Some(cfg.seed), &cfg)
}
