//! The `crydet` command line: one subcommand per pipeline stage.

mod config;

pub use config::{default_note, spec_for, KeySpec, RunConfig, CONFIG_ENV, SCHEMA};

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::audio::{
    frame_clip, load_manifest, read_wav, resample, spectrograms_for_clip, summary_features,
    AudioClip, Label, LogMel, MelProfile, Spectrogram, Split,
};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::eval::{compute_report, emit_report, read_scores_csv};
use crate::mil::{load_bag_dir, write_bag_dir, FeatureBag, LossConfig, LossVariant, BAG_META_FILE};
use crate::model::{label_at, load_weights, save_weights, AnomalyHead, BlazeNet, FEATURE_DIM};
use crate::synth::{write_bag_corpus, write_corpus};
use crate::train::{
    mine_topt, train_anomaly, train_backbone, write_log_csv, write_mined_csv, AnomalyHyper,
    BackboneHyper,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

fn help_for(key: &str) -> String {
    let k = spec_for(key).expect("documented key");
    format!("{} {}", k.help, default_note(key))
}

#[derive(Debug, Parser)]
#[command(
    name = "crydet",
    version,
    about = "Baby-cry detection: BlazeNet classifier, weakly supervised anomaly head and segment mining",
    after_help = "Settings come from flags, then the file given by --config or $CRYDET_CONFIG, then defaults.\n\
                  Exit codes: 0 success, 1 runtime failure, 2 usage or config error."
)]
pub struct Cli {
    /// Flat key = value config file; defaults to $CRYDET_CONFIG when set.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "LEVEL", help = help_for("log_level"))]
    pub log_level: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic labeled WAV corpus with a manifest.
    Synth(SynthArgs),
    /// Turn a manifest's audio into per-file CRYF frame features and bag tables.
    Featurize(FeaturizeArgs),
    /// Train the BlazeNet cry/non-cry classifier.
    TrainBackbone(TrainBackboneArgs),
    /// Train the anomaly head on weakly labeled feature bags.
    TrainHead(TrainHeadArgs),
    /// Keep the top-t scoring frames of every file.
    Mine(MineArgs),
    /// Score every frame of a WAV file.
    Detect(DetectArgs),
    /// Compute accuracy, F1-max and ROC/AUC from a scores CSV.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory (WAV files under wav/, manifest.csv at the top).
    #[arg(long)]
    pub out: PathBuf,
    /// Number of cry clips (abnormal bags with --bags). [default: 200] (chosen)
    #[arg(long, hide_default_value = true, default_value_t = 200)]
    pub cry: usize,
    /// Number of non-cry clips (normal bags with --bags). [default: 200] (chosen)
    #[arg(long, hide_default_value = true, default_value_t = 200)]
    pub other: usize,
    /// Sample rate in Hz. [default: 8000]
    #[arg(long, hide_default_value = true, default_value_t = 8000)]
    pub rate: u32,
    /// Clip length in seconds. [default: 1.0]
    #[arg(long, hide_default_value = true, default_value_t = 1.0)]
    pub duration: f64,
    /// Write multi-segment files with one planted cry per abnormal file.
    #[arg(long)]
    pub bags: bool,
    /// Segments per file with --bags. [default: 5]
    #[arg(long, hide_default_value = true, default_value_t = 5)]
    pub segments: usize,
    #[arg(long, help = help_for("seed"))]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("mode").required(true).args(["backbone", "raw_spectrogram", "summary"]))]
pub struct FeaturizeArgs {
    /// Manifest CSV with columns path,label,split.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory; one subdirectory per split holding bags.csv and CRYF files.
    #[arg(long)]
    pub out: PathBuf,
    /// Backbone weights: emit the 224-D BlazeNet feature of every frame.
    #[arg(long, value_name = "WEIGHTS")]
    pub backbone: Option<PathBuf>,
    /// Emit flattened log-Mel spectrogram frames.
    #[arg(long)]
    pub raw_spectrogram: bool,
    /// Emit per-band mean and standard deviation of every frame (2 x mels values).
    #[arg(long)]
    pub summary: bool,
    #[arg(long, help = help_for("profile"))]
    pub profile: Option<String>,
    #[arg(long, help = help_for("hop_s"))]
    pub hop: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainBackboneArgs {
    /// Manifest CSV with train and val splits.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output weight file (CRYD).
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch training log CSV.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, help = help_for("backbone.lr"))]
    pub lr: Option<f64>,
    #[arg(long, help = help_for("backbone.momentum"))]
    pub momentum: Option<f64>,
    #[arg(long, help = help_for("backbone.epochs"))]
    pub epochs: Option<usize>,
    #[arg(long, help = help_for("backbone.decay_factor"))]
    pub decay_factor: Option<f64>,
    #[arg(long, help = help_for("backbone.decay_every"))]
    pub decay_every: Option<usize>,
    #[arg(long, help = help_for("backbone.batch"))]
    pub batch: Option<usize>,
    #[arg(long, help = help_for("threshold"))]
    pub threshold: Option<f64>,
    #[arg(long, help = help_for("seed"))]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainHeadArgs {
    /// Feature directory from `featurize` (train/ and val/ subdirectories).
    #[arg(long)]
    pub features: PathBuf,
    /// Output weight file (CRYD).
    #[arg(long)]
    pub out: PathBuf,
    /// Training log CSV, one row per validation check.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, help = help_for("head.lr"))]
    pub lr: Option<f64>,
    #[arg(long, help = help_for("head.steps"))]
    pub steps: Option<usize>,
    #[arg(long, help = help_for("head.batch"))]
    pub batch: Option<usize>,
    #[arg(long, help = help_for("head.segments"))]
    pub segments: Option<usize>,
    #[arg(long, help = help_for("head.k"))]
    pub k: Option<usize>,
    #[arg(long, help = help_for("head.margin"))]
    pub margin: Option<f64>,
    #[arg(long, help = help_for("head.alpha"))]
    pub alpha: Option<f64>,
    #[arg(long, help = help_for("head.lambda1"))]
    pub lambda1: Option<f64>,
    #[arg(long, help = help_for("head.lambda2"))]
    pub lambda2: Option<f64>,
    #[arg(long, help = help_for("head.variant"))]
    pub variant: Option<String>,
    #[arg(long, help = help_for("head.dropout"))]
    pub dropout: Option<f64>,
    #[arg(long, help = help_for("head.val_every"))]
    pub val_every: Option<usize>,
    #[arg(long, help = help_for("threshold"))]
    pub threshold: Option<f64>,
    #[arg(long, help = help_for("seed"))]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct MineArgs {
    /// Bag directory (with bags.csv) or a featurize output root.
    #[arg(long)]
    pub features: PathBuf,
    /// Trained head weights.
    #[arg(long)]
    pub head: PathBuf,
    /// Output CSV: source,frame_start_s,score,label,origin.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, help = help_for("mine.t"))]
    pub t: Option<usize>,
    #[arg(long, help = help_for("hop_s"))]
    pub hop: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Backbone weights.
    #[arg(long)]
    pub weights: PathBuf,
    /// Optional anomaly head on the 224-D backbone feature; without it the
    /// backbone's cry probability is reported.
    #[arg(long)]
    pub head: Option<PathBuf>,
    /// Input WAV file.
    #[arg(long)]
    pub wav: PathBuf,
    /// Output CSV (start_s,score,label); stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, help = help_for("hop_s"))]
    pub hop: Option<f64>,
    #[arg(long, help = help_for("threshold"))]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Scores CSV with columns id,score,label.
    #[arg(long)]
    pub scores: PathBuf,
    /// Output directory for metrics.json and roc.csv.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, help = help_for("threshold"))]
    pub threshold: Option<f64>,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn init_logging(level: &str) -> Result<()> {
    let filter: log::LevelFilter = level
        .parse()
        .map_err(|_| Error::Config(format!("unknown log level '{level}'")))?;
    let _ = env_logger::Builder::new()
        .filter_level(filter)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::discover(cli.config.as_deref())?;
    init_logging(&cfg.resolve::<String>("log_level", cli.log_level.clone())?)?;
    if let Some(p) = cfg.origin() {
        log::info!("config from {}", p.display());
    }
    match cli.command {
        Command::Synth(a) => cmd_synth(&cfg, a),
        Command::Featurize(a) => cmd_featurize(&cfg, a),
        Command::TrainBackbone(a) => cmd_train_backbone(&cfg, a),
        Command::TrainHead(a) => cmd_train_head(&cfg, a),
        Command::Mine(a) => cmd_mine(&cfg, a),
        Command::Detect(a) => cmd_detect(&cfg, a),
        Command::Eval(a) => cmd_eval(&cfg, a),
    }
}

fn require_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be > 0, got {v}")))
    }
}

pub fn cmd_synth(cfg: &RunConfig, a: SynthArgs) -> Result<()> {
    let seed = cfg.resolve("seed", a.seed)?;
    if a.rate == 0 {
        return Err(Error::Config("rate must be > 0".into()));
    }
    require_positive("duration", a.duration)?;
    if a.bags {
        if a.segments == 0 {
            return Err(Error::Config("segments must be >= 1".into()));
        }
        let (m, planted) = write_bag_corpus(&a.out, a.cry, a.other, a.segments, a.rate, seed)?;
        let mut text = String::from("path,planted_segment\n");
        for (e, p) in m.entries.iter().zip(planted) {
            let p = p.map_or(String::new(), |p| p.to_string());
            text.push_str(&format!("{},{p}\n", e.path.display()));
        }
        let path = a.out.join("planted.csv");
        std::fs::write(&path, text)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        println!("wrote {} bag files to {}", m.len(), a.out.display());
    } else {
        let m = write_corpus(&a.out, a.cry, a.other, a.rate, a.duration, seed)?;
        println!("wrote {} clips to {}", m.len(), a.out.display());
    }
    Ok(())
}

enum FeatureMode {
    Backbone(Box<BlazeNet>),
    Raw,
    Summary,
}

fn profile_named(name: &str) -> Result<MelProfile> {
    MelProfile::by_name(name).ok_or_else(|| {
        Error::Config(format!(
            "unknown profile '{name}' (blazenet, blazenet_5s or embedding)"
        ))
    })
}

/// Spectrogram frames of `clip` at the profile rate with the given hop.
fn frames_with_hop(clip: &AudioClip, front: &LogMel, hop_s: f64) -> Result<Vec<Spectrogram>> {
    if (hop_s - front.profile().example_hop_s).abs() < 1e-12 {
        return spectrograms_for_clip(clip, front);
    }
    let p = front.profile();
    let clip = resample(clip, p.sample_rate)?;
    frame_clip(&clip, p.example_window_s, hop_s)?
        .iter()
        .map(|f| front.compute(f))
        .collect()
}

fn featurize_file(
    path: &Path,
    mode: &FeatureMode,
    front: &LogMel,
    hop_s: f64,
) -> Result<Tensor<f32>> {
    let clip = read_wav(path)?;
    let features = match mode {
        FeatureMode::Summary if hop_s == front.profile().example_hop_s => {
            summary_features(&clip, front)?
        }
        _ => {
            let specs = frames_with_hop(&clip, front, hop_s)?;
            if specs.is_empty() {
                return Err(Error::Validation(format!(
                    "{}: shorter than one {} s frame",
                    path.display(),
                    front.profile().example_window_s
                )));
            }
            match mode {
                FeatureMode::Backbone(net) => {
                    let refs: Vec<&Spectrogram> = specs.iter().collect();
                    let out = net.forward_batch(&refs)?;
                    let data = out.into_iter().flat_map(|o| o.feature).collect();
                    Tensor::new(&[specs.len(), FEATURE_DIM], data)?
                }
                FeatureMode::Raw => {
                    let dim = specs[0].data().len();
                    let data = specs
                        .iter()
                        .flat_map(|s| s.data().data().iter().copied())
                        .collect();
                    Tensor::new(&[specs.len(), dim], data)?
                }
                FeatureMode::Summary => {
                    let data: Vec<f32> = specs
                        .iter()
                        .flat_map(crate::audio::spectral_summary)
                        .collect();
                    Tensor::new(&[specs.len(), 2 * front.profile().n_mels], data)?
                }
            }
        }
    };
    if features.shape()[0] == 0 {
        return Err(Error::Validation(format!(
            "{}: shorter than one frame",
            path.display()
        )));
    }
    Ok(features)
}

/// Unique, path-safe id for every file: its stem, suffixed on collision.
fn source_ids(paths: &[&Path]) -> Vec<String> {
    let mut seen = std::collections::HashMap::<String, usize>::new();
    paths
        .iter()
        .map(|p| {
            let stem: String = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "file".into())
                .chars()
                .map(|c| {
                    if c.is_alphanumeric() || "-_.".contains(c) {
                        c
                    } else {
                        '_'
                    }
                })
                .collect();
            let n = seen.entry(stem.clone()).or_insert(0);
            *n += 1;
            if *n == 1 {
                stem
            } else {
                format!("{stem}_{n}")
            }
        })
        .collect()
}

pub fn cmd_featurize(cfg: &RunConfig, a: FeaturizeArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest).map_err(|e| match e {
        Error::Io { .. } | Error::Parse { .. } => Error::Config(e.to_string()),
        other => other,
    })?;
    if manifest.is_empty() {
        return Err(Error::Config(format!(
            "manifest {} has no entries",
            a.manifest.display()
        )));
    }
    let hop_s: f64 = cfg.resolve("hop_s", a.hop)?;
    require_positive("hop_s", hop_s)?;
    let mode = match (&a.backbone, a.raw_spectrogram, a.summary) {
        (Some(w), false, false) => {
            FeatureMode::Backbone(Box::new(BlazeNet::try_from(load_weights(w)?)?))
        }
        (None, true, false) => FeatureMode::Raw,
        (None, false, true) => FeatureMode::Summary,
        _ => {
            return Err(Error::Config(
                "choose exactly one of --backbone, --raw-spectrogram, --summary".into(),
            ))
        }
    };
    let profile_name: String = cfg.resolve("profile", a.profile)?;
    let profile = profile_named(&profile_name)?;
    if matches!(mode, FeatureMode::Backbone(_))
        && profile.target_shape != MelProfile::blazenet().target_shape
    {
        return Err(Error::Config(format!(
            "--backbone needs a 64x64 profile, '{profile_name}' gives {:?}",
            profile.target_shape
        )));
    }
    let front = LogMel::new(profile)?;
    let mut failures = 0;
    for split in Split::ALL {
        let entries: Vec<_> = manifest.split(split).collect();
        if entries.is_empty() {
            continue;
        }
        let paths: Vec<&Path> = entries.iter().map(|e| e.path.as_path()).collect();
        let mut bags = Vec::new();
        for (e, id) in entries.iter().zip(source_ids(&paths)) {
            match featurize_file(&e.path, &mode, &front, hop_s)
                .and_then(|f| FeatureBag::new(f, e.label, id))
            {
                Ok(b) => bags.push(b),
                Err(err) => {
                    log::error!("{}: {err}", e.path.display());
                    failures += 1;
                }
            }
        }
        let dir = a.out.join(split.as_str());
        write_bag_dir(&dir, &bags)?;
        log::info!("{}: {} files featurized", dir.display(), bags.len());
    }
    if failures > 0 {
        return Err(Error::Validation(format!(
            "{failures} file(s) failed to featurize"
        )));
    }
    println!(
        "featurized {} files into {}",
        manifest.len(),
        a.out.display()
    );
    Ok(())
}

pub fn backbone_hyper(cfg: &RunConfig, a: &TrainBackboneArgs) -> Result<BackboneHyper> {
    let h = BackboneHyper {
        lr: cfg.resolve("backbone.lr", a.lr)?,
        momentum: cfg.resolve("backbone.momentum", a.momentum)?,
        epochs: cfg.resolve("backbone.epochs", a.epochs)?,
        decay_factor: cfg.resolve("backbone.decay_factor", a.decay_factor)?,
        decay_every: cfg.resolve("backbone.decay_every", a.decay_every)?,
        batch: cfg.resolve("backbone.batch", a.batch)?,
        seed: cfg.resolve("seed", a.seed)?,
        threshold: cfg.resolve("threshold", a.threshold)?,
    };
    h.validate()?;
    Ok(h)
}

pub fn cmd_train_backbone(cfg: &RunConfig, a: TrainBackboneArgs) -> Result<()> {
    let h = backbone_hyper(cfg, &a)?;
    let manifest = load_manifest(&a.manifest).map_err(|e| match e {
        Error::Io { .. } | Error::Parse { .. } => Error::Config(e.to_string()),
        other => other,
    })?;
    let run = train_backbone(&manifest, &h)?;
    save_weights(&run.net.weights(), &a.out)?;
    if let Some(p) = &a.log {
        write_log_csv(p, &run.log)?;
    }
    match (run.best_val_acc, run.best_epoch) {
        (Some(acc), Some(ep)) => println!(
            "best val_acc {acc:.4} at epoch {ep}; weights in {}",
            a.out.display()
        ),
        _ => println!("no epochs run; initial weights in {}", a.out.display()),
    }
    Ok(())
}

pub fn head_hyper(cfg: &RunConfig, a: &TrainHeadArgs) -> Result<AnomalyHyper> {
    let variant: String = cfg.resolve("head.variant", a.variant.clone())?;
    let h = AnomalyHyper {
        lr: cfg.resolve("head.lr", a.lr)?,
        steps: cfg.resolve("head.steps", a.steps)?,
        batch: cfg.resolve("head.batch", a.batch)?,
        segments: cfg.resolve("head.segments", a.segments)?,
        loss: LossConfig {
            margin: cfg.resolve("head.margin", a.margin)?,
            alpha: cfg.resolve("head.alpha", a.alpha)?,
            lambda1: cfg.resolve("head.lambda1", a.lambda1)?,
            lambda2: cfg.resolve("head.lambda2", a.lambda2)?,
            k: cfg.resolve("head.k", a.k)?,
            variant: variant.parse::<LossVariant>()?,
        },
        seed: cfg.resolve("seed", a.seed)?,
        dropout: cfg.resolve("head.dropout", a.dropout)?,
        val_every: cfg.resolve("head.val_every", a.val_every)?,
        threshold: cfg.resolve("threshold", a.threshold)?,
    };
    h.validate()?;
    Ok(h)
}

pub fn cmd_train_head(cfg: &RunConfig, a: TrainHeadArgs) -> Result<()> {
    let h = head_hyper(cfg, &a)?;
    let probe = load_bag_dir(&a.features.join(Split::Train.as_str()))?;
    let dim = probe
        .first()
        .map(FeatureBag::dim)
        .ok_or_else(|| Error::Validation("no training bags".into()))?;
    let run = train_anomaly(&a.features, &h, dim)?;
    save_weights(&run.head.weights(), &a.out)?;
    if let Some(p) = &a.log {
        write_log_csv(p, &run.log)?;
    }
    match (run.best_val_acc, run.best_step) {
        (Some(acc), Some(step)) => println!(
            "best bag val_acc {acc:.4} at step {step}; weights in {}",
            a.out.display()
        ),
        _ => println!("no steps run; initial weights in {}", a.out.display()),
    }
    Ok(())
}

/// Bags of a directory with `bags.csv`, or of every split subdirectory.
fn load_features(dir: &Path) -> Result<Vec<FeatureBag>> {
    if dir.join(BAG_META_FILE).exists() {
        return load_bag_dir(dir);
    }
    let mut all = Vec::new();
    for split in Split::ALL {
        let sub = dir.join(split.as_str());
        if sub.join(BAG_META_FILE).exists() {
            all.extend(load_bag_dir(&sub)?);
        }
    }
    if all.is_empty() {
        return Err(Error::Validation(format!(
            "no {BAG_META_FILE} under {}",
            dir.display()
        )));
    }
    Ok(all)
}

pub fn cmd_mine(cfg: &RunConfig, a: MineArgs) -> Result<()> {
    let t: usize = cfg.resolve("mine.t", a.t)?;
    if t == 0 {
        return Err(Error::Config("t must be >= 1".into()));
    }
    let hop_s: f64 = cfg.resolve("hop_s", a.hop)?;
    require_positive("hop_s", hop_s)?;
    let head = AnomalyHead::try_from(load_weights(&a.head)?)?;
    let files = load_features(&a.features)?;
    let mined = mine_topt(&head, &files, t, hop_s)?;
    write_mined_csv(&a.out, &mined)?;
    println!(
        "mined {} frames from {} files into {}",
        mined.records.len(),
        files.len(),
        a.out.display()
    );
    Ok(())
}

pub fn cmd_detect(cfg: &RunConfig, a: DetectArgs) -> Result<()> {
    let hop_s: f64 = cfg.resolve("hop_s", a.hop)?;
    require_positive("hop_s", hop_s)?;
    let threshold: f64 = cfg.resolve("threshold", a.threshold)?;
    let net = BlazeNet::try_from(load_weights(&a.weights)?)?;
    let head = match &a.head {
        Some(p) => {
            let h = AnomalyHead::try_from(load_weights(p)?)?;
            if h.input_dim() != FEATURE_DIM {
                return Err(Error::Dimension(format!(
                    "head takes {}-D features, the backbone produces {FEATURE_DIM}",
                    h.input_dim()
                )));
            }
            Some(h)
        }
        None => None,
    };
    let front = LogMel::new(MelProfile::blazenet())?;
    let clip = read_wav(&a.wav)?;
    let specs = frames_with_hop(&clip, &front, hop_s)?;
    let refs: Vec<&Spectrogram> = specs.iter().collect();
    let outs = net.forward_batch(&refs)?;
    let scores: Vec<f32> = match &head {
        Some(h) => {
            let data: Vec<f32> = outs
                .iter()
                .flat_map(|o| o.feature.iter().copied())
                .collect();
            h.forward(&Tensor::new(&[outs.len(), FEATURE_DIM], data)?)?
                .scores
        }
        None => outs.iter().map(|o| o.cry_score()).collect(),
    };
    let mut text = String::from("start_s,score,label\n");
    for (i, s) in scores.iter().enumerate() {
        let label: Label = label_at(*s, threshold as f32);
        text.push_str(&format!("{:.3},{s:.6},{label}\n", i as f64 * hop_s));
    }
    match &a.out {
        Some(p) => {
            std::fs::write(p, text).map_err(|e| Error::io(format!("writing {}", p.display()), e))?
        }
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("writing stdout", e))?,
    }
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, a: EvalArgs) -> Result<()> {
    let threshold: f64 = cfg.resolve("threshold", a.threshold)?;
    let set = read_scores_csv(&a.scores)?;
    let report = compute_report(&set, threshold)?;
    emit_report(&report, &a.out)?;
    println!(
        "n {} accuracy@{threshold} {:.4} f1_max {:.4} (threshold {:.6}) auc {:.4}",
        report.n, report.accuracy_at_default, report.f1_max, report.f1_max_threshold, report.auc
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn source_ids_are_unique() {
        let p = [
            Path::new("a/x.wav"),
            Path::new("b/x.wav"),
            Path::new("c/y z.wav"),
        ];
        assert_eq!(source_ids(&p), vec!["x", "x_2", "y_z"]);
    }

    #[test]
    fn k_above_segments_is_usage_error() {
        let cli = Cli::try_parse_from([
            "crydet",
            "train-head",
            "--features",
            "f",
            "--out",
            "o",
            "--k",
            "6",
            "--segments",
            "5",
        ])
        .unwrap();
        let Command::TrainHead(a) = cli.command else {
            panic!()
        };
        let err = head_hyper(&RunConfig::default(), &a).unwrap_err();
        assert!(err.is_usage(), "{err}");
    }

    #[test]
    fn flags_override_config() {
        let cfg = RunConfig::parse("backbone.epochs = 3\nseed = 4\n", None).unwrap();
        let cli = Cli::try_parse_from([
            "crydet",
            "train-backbone",
            "--manifest",
            "m",
            "--out",
            "o",
            "--seed",
            "9",
        ])
        .unwrap();
        let Command::TrainBackbone(a) = cli.command else {
            panic!()
        };
        let h = backbone_hyper(&cfg, &a).unwrap();
        assert_eq!((h.epochs, h.seed, h.lr), (3, 9, 0.001));
    }
}
