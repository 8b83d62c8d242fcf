//! `sonarpipe` — acoustic-camera fish detection from the command line.
//!
//! One subcommand per pipeline stage (`preprocess`, `detect`, `track-filter`,
//! `eval-model`, `eval-eco`, `synth`) plus `run`, which drives whole clips
//! end to end with clip-level parallelism.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use sonarpipe::background::{BackgroundModel, BackgroundParams};
use sonarpipe::clipio::{self, Camera, ClipManifest};
use sonarpipe::detect::{self, BaselineParams, Connectivity, ConfidenceRule, Detection};
use sonarpipe::eval_eco::{self, ClipEcoInput, DEFAULT_TOLERANCE_S};
use sonarpipe::eval_model::{self, EvalImage, Interpolation, ModelEvalConfig};
use sonarpipe::maskpipe::{self, ComposeMode};
use sonarpipe::pipeline::{self, DetectorChoice, DumpOptions, PipelineConfig};
use sonarpipe::synth::{self, NoiseParams, SynthConfig};
use sonarpipe::tracks::{self, TrackRecord};

#[derive(Parser)]
#[command(
    name = "sonarpipe",
    about = "Fish detection on acoustic-camera clips: segment, denoise, detect, track, validate",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run background segmentation and mask denoising, dumping artifacts
    Preprocess(PreprocessArgs),
    /// Produce per-frame detections (built-in baseline or an external log)
    Detect(DetectArgs),
    /// Reject flash detections and assemble multi-frame tracks
    TrackFilter(TrackFilterArgs),
    /// Frame-level model validation against annotation files
    EvalModel(EvalModelArgs),
    /// Passage-level ecological validation against an operator log
    EvalEco(EvalEcoArgs),
    /// Generate a synthetic clip with exact ground truth
    Synth(SynthArgs),
    /// Full pipeline over one or more clips, with optional validation
    Run(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Didson,
    Aris,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    R,
    Rb,
    RbF,
    RbbF,
}

impl From<ModeArg> for ComposeMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::R => ComposeMode::R,
            ModeArg::Rb => ComposeMode::Rb,
            ModeArg::RbF => ComposeMode::RbF,
            ModeArg::RbbF => ComposeMode::RbbF,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ConfidenceRuleArg {
    AreaSaturating,
    MeanIntensity,
}

#[derive(Clone, Copy, ValueEnum)]
enum InterpolationArg {
    AllPoint,
    ElevenPoint,
}

/// Background-model knobs shared by every stage that segments.
#[derive(Args, Clone)]
struct BackgroundArgs {
    /// Camera preset for the variance threshold (didson: 130, aris: 10);
    /// defaults to the camera named in the manifest
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    /// Explicit foreground decision threshold, overriding any preset
    #[arg(long)]
    var_threshold: Option<f64>,
    #[arg(long, default_value_t = 500)]
    history: u32,
    #[arg(long, default_value_t = 5)]
    max_components: usize,
    #[arg(long, default_value_t = 0.9)]
    background_ratio: f64,
    #[arg(long, default_value_t = 15.0)]
    initial_variance: f64,
    #[arg(long, default_value_t = 4.0)]
    var_min: f64,
}

impl BackgroundArgs {
    fn params_for(&self, camera: Camera) -> BackgroundParams {
        let mut params = match (self.preset, camera) {
            (Some(PresetArg::Didson), _) | (None, Camera::Didson) => BackgroundParams::didson(),
            (Some(PresetArg::Aris), _) | (None, Camera::Aris) => BackgroundParams::aris(),
        };
        if let Some(t) = self.var_threshold {
            params.var_threshold = t;
        }
        params.history = self.history;
        params.max_components = self.max_components;
        params.background_ratio = self.background_ratio;
        params.initial_variance = self.initial_variance;
        params.var_min = self.var_min;
        params
    }
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    background: BackgroundArgs,
    #[arg(long, value_enum, default_value = "rbb-f")]
    mode: ModeArg,
    /// Write b masks as <clip>_<index>_b.pgm into this directory
    #[arg(long)]
    dump_masks: Option<PathBuf>,
    /// Write composed frames as <clip>_<index>_<mode>.png into this directory
    #[arg(long)]
    dump_composed: Option<PathBuf>,
}

#[derive(Args)]
struct DetectorArgs {
    /// Use the connected-component baseline over the b_f mask
    #[arg(long, conflicts_with = "external")]
    baseline: bool,
    /// Ingest an external JSON-lines detection log instead
    #[arg(long)]
    external: Option<PathBuf>,
    #[arg(long, default_value_t = 25)]
    min_area: u32,
    #[arg(long, value_parser = parse_connectivity, default_value = "8")]
    connectivity: Connectivity,
    #[arg(long, value_enum, default_value = "area-saturating")]
    confidence_rule: ConfidenceRuleArg,
}

fn parse_connectivity(s: &str) -> Result<Connectivity, String> {
    match s {
        "4" => Ok(Connectivity::Four),
        "8" => Ok(Connectivity::Eight),
        _ => Err("connectivity must be 4 or 8".into()),
    }
}

impl DetectorArgs {
    fn choice(&self) -> Result<DetectorChoice> {
        if let Some(path) = &self.external {
            let map = detect::load_detections(path)
                .with_context(|| format!("[detect] loading external log {}", path.display()))?;
            Ok(DetectorChoice::External(map))
        } else {
            Ok(DetectorChoice::Baseline(BaselineParams {
                min_area_px: self.min_area,
                connectivity: self.connectivity,
                confidence_rule: match self.confidence_rule {
                    ConfidenceRuleArg::AreaSaturating => ConfidenceRule::AreaSaturating,
                    ConfidenceRuleArg::MeanIntensity => ConfidenceRule::MeanIntensity,
                },
            }))
        }
    }
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    background: BackgroundArgs,
    #[command(flatten)]
    detector: DetectorArgs,
    /// Confidence threshold applied to the written log
    #[arg(long, default_value_t = 0.25)]
    tau: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrackFilterArgs {
    /// JSON-lines detection log (may span several clips)
    #[arg(long)]
    detections: PathBuf,
    /// Minimum IoU for two boxes to count as overlapping
    #[arg(long, default_value_t = 0.0)]
    track_iou: f64,
    /// Track log to write
    #[arg(long)]
    out: PathBuf,
    /// Also write the detections that survived the flash filter
    #[arg(long)]
    surviving: Option<PathBuf>,
}

#[derive(Args)]
struct EvalModelArgs {
    /// JSON-lines detection log
    #[arg(long)]
    pred: PathBuf,
    /// Annotation directory (flat, or one subdirectory per clip id)
    #[arg(long)]
    gt: PathBuf,
    /// Manifest of every clip under evaluation
    #[arg(long, required = true)]
    manifest: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    /// Confidence threshold for the point metrics (AP sweeps everything)
    #[arg(long, default_value_t = 0.25)]
    tau: f64,
    #[arg(long, value_enum, default_value = "all-point")]
    interpolation: InterpolationArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalEcoArgs {
    /// JSON-lines track log
    #[arg(long)]
    tracks: PathBuf,
    /// Operator passage log (CSV)
    #[arg(long)]
    passages: PathBuf,
    /// Manifest of every clip under evaluation
    #[arg(long, required = true)]
    manifest: Vec<PathBuf>,
    /// Surviving-detection log, used for TN% on empty clips
    #[arg(long)]
    detections: Option<PathBuf>,
    /// File listing fish-free clip ids, one per line
    #[arg(long)]
    empty_clips: Option<PathBuf>,
    /// Temporal matching tolerance in seconds
    #[arg(long, default_value_t = DEFAULT_TOLERANCE_S)]
    tolerance: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "synth")]
    clip_id: String,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 300)]
    frames: u32,
    /// Number of fish; specs are drawn deterministically from the seed
    #[arg(long, default_value_t = 5)]
    fish: usize,
    #[arg(long, default_value_t = 256)]
    width: u32,
    #[arg(long, default_value_t = 160)]
    height: u32,
    #[arg(long, default_value_t = 5.0)]
    fps: f64,
    #[arg(long, value_enum, default_value = "didson")]
    camera: PresetArg,
    #[arg(long, default_value_t = 40.0)]
    noise_mean: f64,
    #[arg(long, default_value_t = 6.0)]
    noise_std: f64,
    #[arg(long, default_value_t = 0.002)]
    salt_pepper: f64,
    #[arg(long, default_value_t = 4.0)]
    px_per_cm: f64,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, required = true)]
    manifest: Vec<PathBuf>,
    #[command(flatten)]
    background: BackgroundArgs,
    #[arg(long, value_enum, default_value = "rbb-f")]
    mode: ModeArg,
    #[command(flatten)]
    detector: DetectorArgs,
    #[arg(long, default_value_t = 0.25)]
    tau: f64,
    #[arg(long, default_value_t = 0.0)]
    track_iou: f64,
    /// Annotation directory; enables the frame-level report
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    #[arg(long, value_enum, default_value = "all-point")]
    interpolation: InterpolationArg,
    /// Operator passage log; enables the ecological report
    #[arg(long)]
    passages: Option<PathBuf>,
    #[arg(long)]
    empty_clips: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE_S)]
    tolerance: f64,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    dump_masks: bool,
    #[arg(long)]
    dump_composed: bool,
    /// Clips processed in parallel (SONARPIPE_JOBS overrides)
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn main() {
    if let Err(err) = run(Cli::parse()) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess(args) => cmd_preprocess(args),
        Command::Detect(args) => cmd_detect(args),
        Command::TrackFilter(args) => cmd_track_filter(args),
        Command::EvalModel(args) => cmd_eval_model(args),
        Command::EvalEco(args) => cmd_eval_eco(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Run(args) => cmd_run(args),
    }
}

fn load_clip(path: &Path) -> Result<(ClipManifest, Vec<sonarpipe::Frame>)> {
    clipio::load_clip(path).with_context(|| format!("[clipio] loading {}", path.display()))
}

fn cmd_preprocess(args: PreprocessArgs) -> Result<()> {
    let (manifest, frames) = load_clip(&args.manifest)?;
    let params = args.background.params_for(manifest.camera);
    let mode: ComposeMode = args.mode.into();
    let mut model = BackgroundModel::new(params, manifest.width_px, manifest.height_px)
        .with_context(|| format!("[background] clip {}", manifest.clip_id))?;

    if let Some(dir) = &args.dump_masks {
        fs::create_dir_all(dir)?;
    }
    if let Some(dir) = &args.dump_composed {
        fs::create_dir_all(dir)?;
    }
    for frame in &frames {
        let b = model
            .apply(frame)
            .with_context(|| format!("[background] clip {}", manifest.clip_id))?;
        let b_f = maskpipe::open_cross3x3(&maskpipe::median3x3(&b));
        if let Some(dir) = &args.dump_masks {
            let path = dir.join(format!("{}_{:06}_b.pgm", frame.clip_id, frame.index));
            clipio::write_pgm(&path, b.width, b.height, &b.to_gray8())
                .with_context(|| format!("[maskpipe] clip {}", manifest.clip_id))?;
        }
        if let Some(dir) = &args.dump_composed {
            let composed = maskpipe::compose(frame, Some(&b), Some(&b_f), mode)
                .with_context(|| format!("[maskpipe] clip {}", manifest.clip_id))?;
            let path = dir.join(format!("{}_{:06}_{}.png", frame.clip_id, frame.index, mode));
            clipio::write_rgb_png(&path, composed.width, composed.height, &composed.to_rgb8())
                .with_context(|| format!("[maskpipe] clip {}", manifest.clip_id))?;
        }
    }
    println!(
        "preprocessed {} frames of clip {} (var_threshold {})",
        frames.len(),
        manifest.clip_id,
        model.params().var_threshold
    );
    Ok(())
}

fn cmd_detect(args: DetectArgs) -> Result<()> {
    let (manifest, frames) = load_clip(&args.manifest)?;
    let cfg = PipelineConfig {
        background: args.background.params_for(manifest.camera),
        mode: ComposeMode::RbbF,
        detector: args.detector.choice()?,
        confidence_tau: args.tau,
        track_min_iou: 0.0,
    };
    let run = pipeline::run_clip(&manifest, &frames, &cfg, &DumpOptions::default())
        .with_context(|| format!("[detect] clip {}", manifest.clip_id))?;
    let flat: Vec<Detection> = run.detections.values().flatten().cloned().collect();
    detect::save_detections(&args.out, &flat)
        .with_context(|| format!("[detect] writing {}", args.out.display()))?;
    println!(
        "clip {}: {} detections at tau {} -> {}",
        manifest.clip_id,
        flat.len(),
        args.tau,
        args.out.display()
    );
    Ok(())
}

fn cmd_track_filter(args: TrackFilterArgs) -> Result<()> {
    let map = detect::load_detections(&args.detections)
        .with_context(|| format!("[tracks] loading {}", args.detections.display()))?;
    let per_clip = tracks::group_by_clip(map.into_values().flatten());

    let mut all_tracks: Vec<TrackRecord> = Vec::new();
    let mut all_surviving: Vec<Detection> = Vec::new();
    let (mut n_in, mut n_kept) = (0usize, 0usize);
    for (clip_id, per_frame) in per_clip {
        n_in += per_frame.values().map(Vec::len).sum::<usize>();
        let surviving = tracks::flash_filter(&per_frame, args.track_iou);
        n_kept += surviving.values().map(Vec::len).sum::<usize>();
        all_tracks.extend(
            tracks::build_tracks(&surviving, args.track_iou)
                .iter()
                .map(|t| t.to_record()),
        );
        all_surviving.extend(surviving.into_values().flatten());
        let _ = clip_id;
    }
    tracks::save_tracks(&args.out, &all_tracks)
        .with_context(|| format!("[tracks] writing {}", args.out.display()))?;
    if let Some(path) = &args.surviving {
        detect::save_detections(path, &all_surviving)
            .with_context(|| format!("[tracks] writing {}", path.display()))?;
    }
    println!(
        "flash filter kept {n_kept}/{n_in} detections; {} tracks -> {}",
        all_tracks.len(),
        args.out.display()
    );
    Ok(())
}

/// Annotation directory for one clip: `<gt>/<clip_id>/` when present,
/// otherwise the flat `<gt>/` directory.
fn annotation_dir_for(gt: &Path, clip_id: &str) -> PathBuf {
    let per_clip = gt.join(clip_id);
    if per_clip.is_dir() {
        per_clip
    } else {
        gt.to_path_buf()
    }
}

fn cmd_eval_model(args: EvalModelArgs) -> Result<()> {
    let dets = detect::load_detections(&args.pred)
        .with_context(|| format!("[eval-model] loading {}", args.pred.display()))?;
    let mut images: Vec<EvalImage> = Vec::new();
    for manifest_path in &args.manifest {
        let manifest = clipio::load_manifest(manifest_path)
            .with_context(|| format!("[eval-model] loading {}", manifest_path.display()))?;
        let dir = annotation_dir_for(&args.gt, &manifest.clip_id);
        let annotations =
            clipio::load_annotations(&dir, manifest.width_px, manifest.height_px, true)
                .with_context(|| format!("[eval-model] clip {}", manifest.clip_id))?;
        let clip_dets: Vec<Detection> = dets
            .iter()
            .filter(|((clip, _), _)| *clip == manifest.clip_id)
            .flat_map(|(_, v)| v.iter().cloned())
            .collect();
        images.extend(pipeline::eval_images_for_clip(&annotations, &clip_dets));
    }

    let config = ModelEvalConfig {
        iou_thresh: args.iou,
        confidence_tau: args.tau,
        interpolation: match args.interpolation {
            InterpolationArg::AllPoint => Interpolation::AllPoint,
            InterpolationArg::ElevenPoint => Interpolation::ElevenPoint,
        },
    };
    let report = eval_model::evaluate_model(&images, &config)
        .context("[eval-model] computing metrics")?;
    write_json(&args.out, &report)?;
    let ap_text = if report.degenerate.iter().any(|d| d == "ap50") {
        "n/a".to_string()
    } else {
        format!("{:.2}", report.ap50_x100)
    };
    println!(
        "images {} | P {:.4} R {:.4} F1 {:.4} | AP@{:.2} {ap_text} | kappa {:.4}",
        report.images, report.precision, report.recall, report.f1, args.iou, report.kappa
    );
    println!("report -> {}", args.out.display());
    Ok(())
}

fn read_empty_clips(path: Option<&PathBuf>) -> Result<BTreeSet<String>> {
    let Some(path) = path else {
        return Ok(BTreeSet::new());
    };
    let text = fs::read_to_string(path)
        .with_context(|| format!("[eval-eco] reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

fn cmd_eval_eco(args: EvalEcoArgs) -> Result<()> {
    let all_tracks = tracks::load_tracks(&args.tracks)
        .with_context(|| format!("[eval-eco] loading {}", args.tracks.display()))?;
    let all_passages = clipio::load_passages(&args.passages)
        .with_context(|| format!("[eval-eco] loading {}", args.passages.display()))?;
    let surviving = match &args.detections {
        Some(path) => detect::load_detections(path)
            .with_context(|| format!("[eval-eco] loading {}", path.display()))?,
        None => BTreeMap::new(),
    };
    let empty_clips = read_empty_clips(args.empty_clips.as_ref())?;

    let mut inputs: Vec<ClipEcoInput> = Vec::new();
    for manifest_path in &args.manifest {
        let manifest = clipio::load_manifest(manifest_path)
            .with_context(|| format!("[eval-eco] loading {}", manifest_path.display()))?;
        let clip_tracks: Vec<TrackRecord> = all_tracks
            .iter()
            .filter(|t| t.clip_id == manifest.clip_id)
            .cloned()
            .collect();
        let clip_passages: Vec<_> = all_passages
            .iter()
            .filter(|p| p.clip_id == manifest.clip_id)
            .cloned()
            .collect();
        let (matches, unmatched) = eval_eco::match_passages(
            &clip_tracks,
            &clip_passages,
            manifest.frame_rate_hz,
            args.tolerance,
        )
        .with_context(|| format!("[eval-eco] clip {}", manifest.clip_id))?;
        let frames_with_detections = surviving
            .keys()
            .filter(|(clip, _)| *clip == manifest.clip_id)
            .count() as u32;
        inputs.push(ClipEcoInput {
            clip_id: manifest.clip_id.clone(),
            camera: manifest.camera,
            total_frames: manifest.n_frames(),
            declared_empty: empty_clips.contains(&manifest.clip_id),
            matches,
            unmatched_tracks: unmatched,
            frames_with_detections,
        });
    }

    let report = eval_eco::eco_report(&inputs, args.tolerance)
        .context("[eval-eco] aggregating report")?;
    write_json(&args.out, &report)?;
    print!("{}", eval_eco::render_table(&report));
    println!("report -> {}", args.out.display());
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        clip_id: args.clip_id,
        camera: match args.camera {
            PresetArg::Didson => Camera::Didson,
            PresetArg::Aris => Camera::Aris,
        },
        width: args.width,
        height: args.height,
        n_frames: args.frames,
        frame_rate_hz: args.fps,
        noise: NoiseParams {
            salt_pepper_rate: args.salt_pepper,
            background_mean: args.noise_mean,
            background_std: args.noise_std,
        },
        fish: synth::sample_fish_specs(args.fish, args.width, args.frames, args.seed),
        seed: args.seed,
        px_per_cm: args.px_per_cm,
    };
    let clip = synth::gen_clip(&cfg).context("[synth] generating clip")?;
    let manifest_path = synth::write_clip(&args.out, &clip).context("[synth] writing clip")?;
    println!(
        "clip {} ({} frames, {} fish, {} passages) -> {}",
        clip.manifest.clip_id,
        clip.frames.len(),
        cfg.fish.len(),
        clip.passages.len(),
        manifest_path.display()
    );
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

struct ClipResult {
    manifest: ClipManifest,
    run: sonarpipe::ClipRun,
}

fn cmd_run(args: RunArgs) -> Result<()> {
    fs::create_dir_all(&args.out_dir)?;
    let detector = args.detector.choice()?;
    let jobs = std::env::var("SONARPIPE_JOBS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(args.jobs)
        .max(1);

    let dumps = DumpOptions {
        masks_dir: args.dump_masks.then(|| args.out_dir.join("masks")),
        composed_dir: args.dump_composed.then(|| args.out_dir.join("composed")),
    };

    let process = |manifest_path: &PathBuf| -> Result<ClipResult> {
        let (manifest, frames) = load_clip(manifest_path)?;
        let cfg = PipelineConfig {
            background: args.background.params_for(manifest.camera),
            mode: args.mode.into(),
            detector: detector.clone(),
            confidence_tau: args.tau,
            track_min_iou: args.track_iou,
        };
        let run = pipeline::run_clip(&manifest, &frames, &cfg, &dumps)
            .with_context(|| format!("[pipeline] clip {}", manifest.clip_id))?;
        Ok(ClipResult { manifest, run })
    };

    let mut results: Vec<ClipResult> = if jobs == 1 {
        args.manifest.iter().map(process).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .context("building worker pool")?;
        pool.install(|| {
            use rayon::prelude::*;
            args.manifest.par_iter().map(process).collect::<Result<_>>()
        })?
    };
    results.sort_by(|a, b| a.manifest.clip_id.cmp(&b.manifest.clip_id));

    // record the effective configuration next to the reports
    let effective: Vec<serde_json::Value> = results
        .iter()
        .map(|r| {
            serde_json::json!({
                "clip_id": r.manifest.clip_id,
                "camera": r.manifest.camera.as_str(),
                "background": args.background.params_for(r.manifest.camera),
            })
        })
        .collect();
    let detector_json = match &detector {
        DetectorChoice::Baseline(p) => serde_json::json!({"baseline": p}),
        DetectorChoice::External(_) => serde_json::json!({
            "external": args.detector.external.as_ref().map(|p| p.display().to_string()),
        }),
    };
    write_json(
        &args.out_dir.join("run_config.json"),
        &serde_json::json!({
            "clips": effective,
            "mode": ComposeMode::from(args.mode).as_str(),
            "detector": detector_json,
            "confidence_tau": args.tau,
            "track_iou": args.track_iou,
            "eval": {
                "iou_thresh": args.iou,
                "interpolation": match args.interpolation {
                    InterpolationArg::AllPoint => "all_point",
                    InterpolationArg::ElevenPoint => "eleven_point",
                },
                "tolerance_s": args.tolerance,
            },
            "jobs": jobs,
        }),
    )?;

    // artifacts
    let mut detections = Vec::new();
    let mut surviving = Vec::new();
    let mut track_records = Vec::new();
    for r in &results {
        detections.extend(r.run.detections.values().flatten().cloned());
        surviving.extend(r.run.surviving.values().flatten().cloned());
        track_records.extend(r.run.tracks.iter().map(|t| t.to_record()));
    }
    detect::save_detections(&args.out_dir.join("detections.jsonl"), &detections)?;
    detect::save_detections(&args.out_dir.join("surviving.jsonl"), &surviving)?;
    tracks::save_tracks(&args.out_dir.join("tracks.jsonl"), &track_records)?;
    println!(
        "{} clips: {} detections, {} surviving, {} tracks",
        results.len(),
        detections.len(),
        surviving.len(),
        track_records.len()
    );

    if let Some(gt) = &args.gt {
        let mut images = Vec::new();
        for r in &results {
            let dir = annotation_dir_for(gt, &r.manifest.clip_id);
            let annotations = clipio::load_annotations(
                &dir,
                r.manifest.width_px,
                r.manifest.height_px,
                true,
            )
            .with_context(|| format!("[eval-model] clip {}", r.manifest.clip_id))?;
            images.extend(pipeline::eval_images_for_clip(
                &annotations,
                &r.run.detections_all,
            ));
        }
        let config = ModelEvalConfig {
            iou_thresh: args.iou,
            confidence_tau: args.tau,
            interpolation: match args.interpolation {
                InterpolationArg::AllPoint => Interpolation::AllPoint,
                InterpolationArg::ElevenPoint => Interpolation::ElevenPoint,
            },
        };
        let report =
            eval_model::evaluate_model(&images, &config).context("[eval-model] computing metrics")?;
        write_json(&args.out_dir.join("model_report.json"), &report)?;
        let ap_text = if report.degenerate.iter().any(|d| d == "ap50") {
            "n/a".to_string()
        } else {
            format!("{:.2}", report.ap50_x100)
        };
        println!(
            "model: P {:.4} R {:.4} F1 {:.4} AP {ap_text} kappa {:.4}",
            report.precision, report.recall, report.f1, report.kappa
        );
    }

    if let Some(passages_path) = &args.passages {
        let all_passages = clipio::load_passages(passages_path)
            .with_context(|| format!("[eval-eco] loading {}", passages_path.display()))?;
        let empty_clips = read_empty_clips(args.empty_clips.as_ref())?;
        let mut inputs = Vec::new();
        for r in &results {
            let clip_passages: Vec<_> = all_passages
                .iter()
                .filter(|p| p.clip_id == r.manifest.clip_id)
                .cloned()
                .collect();
            inputs.push(
                pipeline::eco_input_for_clip(
                    &r.run,
                    &r.manifest,
                    &clip_passages,
                    empty_clips.contains(&r.manifest.clip_id),
                    args.tolerance,
                )
                .with_context(|| format!("[eval-eco] clip {}", r.manifest.clip_id))?,
            );
        }
        let report =
            eval_eco::eco_report(&inputs, args.tolerance).context("[eval-eco] aggregating report")?;
        write_json(&args.out_dir.join("eco_report.json"), &report)?;
        print!("{}", eval_eco::render_table(&report));
    }

    Ok(())
}
