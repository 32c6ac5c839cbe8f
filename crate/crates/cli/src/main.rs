//! `aosa` command line: train, explain, eval, render, selftest.

mod config;
mod render;

use std::ffi::OsString;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use aosa::flow::{track_anchors_with_flow, DenseFlow};
use aosa::mask::{place_anchor_grid, MaskConfig};
use aosa::metrics::{self, EvalRow};
use aosa::model::cnn::Normalization;
use aosa::model::{
    argmax, train_toy, ExternalModel, ScoreMode, ScoreModel, Tiny3DCnn, TrainConfig,
};
use aosa::saliency::pipeline::{
    compute_tracks, cuboid_osa_map, explain_with_tracks, CuboidConfig, FillMode, SaliencyConfig,
    SaliencyMap, Target,
};
use aosa::synthetic::{direction_dataset, NUM_DIRECTIONS};
use aosa::tensor_io::{load_video, save_video, write_atomic, RawTensor};
use aosa::{Error, GroundTruthBoxes, VideoDims, VideoTensor};

#[derive(Parser)]
#[command(name = "aosa", version, about = "Flow-adaptive occlusion saliency for video classifiers")]
#[command(args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the reference 3D CNN on synthetic moving-square clips.
    Train(TrainArgs),
    /// Compute a saliency map for one video.
    Explain(ExplainArgs),
    /// Compare AOSA, cuboid occlusion and random maps over a dataset.
    Eval(EvalArgs),
    /// Write per-frame heatmap overlays as PPM images.
    Render(RenderArgs),
    /// Run the built-in oracles.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Output model file (JSON).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    frames: usize,
    #[arg(long, default_value_t = 32)]
    height: usize,
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    per_class: usize,
    /// Motion speed in pixels per frame.
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write held-out clips (video + boxes) to this directory.
    #[arg(long)]
    export: Option<PathBuf>,
    /// Clips per class to export.
    #[arg(long, default_value_t = 2)]
    export_per_class: usize,
}

/// Model selection shared by explain and eval.
#[derive(Args)]
struct ModelArgs {
    /// Trained model file (JSON).
    #[arg(long, required_unless_present = "external")]
    model: Option<PathBuf>,
    /// External model program speaking the subprocess protocol.
    #[arg(long, conflicts_with = "model")]
    external: Option<String>,
    /// Argument passed to the external program (repeatable).
    #[arg(long = "external-arg", allow_hyphen_values = true)]
    external_args: Vec<String>,
    /// Class count of the external model.
    #[arg(long, default_value_t = NUM_DIRECTIONS)]
    classes: usize,
    #[arg(long, default_value_t = 30_000)]
    timeout_ms: u64,
    /// Normalization mean for external models, applied per channel.
    #[arg(long)]
    norm_mean: Option<f64>,
    #[arg(long)]
    norm_std: Option<f64>,
}

#[derive(Args)]
struct SaliencyArgs {
    #[arg(long, default_value = "exact", value_parser = ["exact", "approx"])]
    method: String,
    #[arg(long, default_value = "const", value_parser = ["const", "cond"])]
    fill: String,
    #[arg(long = "fill-value", default_value_t = 0.0, allow_negative_numbers = true)]
    fill_value: f64,
    /// Anchor spacing in pixels.
    #[arg(long = "s", default_value_t = 8)]
    spacing: usize,
    #[arg(long = "occ-h", default_value_t = 16)]
    occ_h: usize,
    #[arg(long = "occ-w", default_value_t = 16)]
    occ_w: usize,
    /// Co-occurring masks merged into each mask.
    #[arg(long = "K", default_value_t = 5)]
    k: usize,
    #[arg(long, default_value = "prob", value_parser = ["prob", "logit"])]
    score: String,
    /// Target class id, or "argmax".
    #[arg(long, default_value = "argmax")]
    class: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "normalize-coverage")]
    normalize_coverage: bool,
    #[arg(long = "no-adjust")]
    no_adjust: bool,
    /// Monte Carlo samples per mask for exact conditional fill.
    #[arg(long = "mc-samples", default_value_t = 8)]
    mc_samples: usize,
}

impl SaliencyArgs {
    fn config(&self) -> Result<SaliencyConfig, CliError> {
        Ok(SaliencyConfig {
            method: self.method.parse()?,
            fill: match self.fill.as_str() {
                "cond" => FillMode::Conditional,
                _ => FillMode::Constant(self.fill_value),
            },
            mask: MaskConfig {
                spacing: self.spacing,
                occ_height: self.occ_h,
                occ_width: self.occ_w,
                integrate: self.k,
            },
            target: self.class.parse()?,
            normalize_coverage: self.normalize_coverage,
            mc_samples: self.mc_samples,
            seed: self.seed,
            adjust: !self.no_adjust,
            ..SaliencyConfig::default()
        })
    }

    fn score_mode(&self) -> Result<ScoreMode, CliError> {
        Ok(self.score.parse()?)
    }
}

#[derive(Args)]
struct ExplainArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Input video tensor, values in [0, 1].
    #[arg(long)]
    video: PathBuf,
    /// Output map tensor; metadata goes to `<out>.meta`.
    #[arg(long)]
    out: PathBuf,
    /// Dense flow fields (H x W x 2), one per frame pair, in order.
    #[arg(long, num_args = 1..)]
    flow: Vec<PathBuf>,
    #[command(flatten)]
    saliency: SaliencyArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Directory of `NAME.aost` clips with optional `NAME.boxes` files.
    #[arg(long, required_unless_present = "synthetic")]
    dataset: Option<PathBuf>,
    /// Evaluate on this many generated clips instead of a directory.
    #[arg(long, conflicts_with = "dataset")]
    synthetic: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    /// Seed of the generated clips.
    #[arg(long, default_value_t = 1000)]
    data_seed: u64,
    /// Comma-separated methods among aosa, cuboid, random.
    #[arg(long, default_value = "aosa,cuboid,random")]
    methods: String,
    /// Temporal depth and stride of baseline cuboids.
    #[arg(long = "cuboid-t", default_value_t = 8)]
    cuboid_t: usize,
    #[arg(long = "cuboid-stride-t", default_value_t = 2)]
    cuboid_stride_t: usize,
    #[arg(long, default_value_t = 28)]
    steps: usize,
    #[arg(long, default_value_t = 7)]
    radius: usize,
    #[arg(long)]
    workers: Option<usize>,
    /// CSV output path.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    saliency: SaliencyArgs,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    map: PathBuf,
    /// Video tensor the map belongs to, values in [0, 1].
    #[arg(long)]
    video: PathBuf,
    /// Output directory for `frame_NNN.ppm`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Error with its process exit code.
struct CliError {
    code: u8,
    msg: String,
}

impl CliError {
    fn new(code: u8, msg: impl Into<String>) -> Self {
        Self { code, msg: msg.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::DimMismatch { .. } => 3,
            Error::Io(io) if io.kind() == io::ErrorKind::NotFound => 2,
            _ => 1,
        };
        CliError::new(code, e.to_string())
    }
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::new(2, format!("{what} not found: {}", path.display())))
    }
}

/// A loaded model plus the normalization its inputs need.
struct LoadedModel {
    model: Box<dyn ScoreModel>,
    norm: Option<Normalization>,
}

impl LoadedModel {
    fn prepare(&self, raw: &VideoTensor) -> Result<VideoTensor, CliError> {
        match &self.norm {
            Some(n) => Ok(raw.normalize(&n.mean, &n.std)?),
            None => Ok(raw.clone()),
        }
    }
}

fn load_model(args: &ModelArgs, mode: ScoreMode, dims: VideoDims) -> Result<LoadedModel, CliError> {
    if let Some(path) = &args.model {
        require_file(path, "model")?;
        let m = Tiny3DCnn::load(path)?.with_mode(mode);
        let norm = m.normalization.clone();
        return Ok(LoadedModel { model: Box::new(m), norm });
    }
    let program = args.external.as_deref().expect("clap enforces model or external");
    let norm = match (args.norm_mean, args.norm_std) {
        (Some(m), Some(s)) => Some(Normalization {
            mean: vec![m; dims.channels],
            std: vec![s; dims.channels],
        }),
        (None, None) => None,
        _ => return Err(CliError::new(1, "--norm-mean and --norm-std go together")),
    };
    let m = ExternalModel::spawn(
        program,
        &args.external_args,
        args.classes,
        Some(dims),
        mode,
        Duration::from_millis(args.timeout_ms),
    )?;
    Ok(LoadedModel { model: Box::new(m), norm })
}

fn cmd_train(a: &TrainArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let norm = Normalization {
        mean: vec![0.5; 3],
        std: vec![0.5; 3],
    };
    let samples = direction_dataset(a.per_class, a.frames, a.height, a.width, a.speed, a.seed)?;
    let data: Vec<(VideoTensor, usize)> = samples
        .into_iter()
        .map(|s| Ok((s.video.normalize(&norm.mean, &norm.std)?, s.class)))
        .collect::<Result<_, Error>>()?;
    let cfg = TrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch,
        seed: a.seed,
    };
    let mut out = train_toy(&data, NUM_DIRECTIONS, &cfg)?;
    out.model.normalization = Some(norm);
    out.model.save(&a.out)?;
    for (e, l) in out.losses.iter().enumerate() {
        println!("epoch {:>3}  loss {l:.6}", e + 1);
    }
    if let Some(dir) = &a.export {
        fs::create_dir_all(dir).map_err(Error::from)?;
        let held_out = direction_dataset(a.export_per_class, a.frames, a.height, a.width, a.speed, a.seed ^ 0xE7A1)?;
        for (i, s) in held_out.iter().enumerate() {
            let stem = format!("clip_{i:04}_c{}", s.class);
            save_video(&s.video, dir.join(format!("{stem}.aost")))?;
            write_atomic(&dir.join(format!("{stem}.boxes")), s.boxes.to_text().as_bytes())?;
        }
        println!("exported {} clips to {}", held_out.len(), dir.display());
    }
    println!(
        "trained on {} clips: accuracy {:.4}, final loss {:.6}, {:.1}s",
        data.len(),
        out.accuracy,
        out.losses.last().copied().unwrap_or(f64::NAN),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn load_flow(paths: &[PathBuf]) -> Result<Option<DenseFlow>, CliError> {
    if paths.is_empty() {
        return Ok(None);
    }
    let tensors = paths
        .iter()
        .map(|p| {
            require_file(p, "flow file")?;
            Ok(RawTensor::load(p)?)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(Some(DenseFlow::from_tensors(tensors)?))
}

fn cmd_explain(a: &ExplainArgs) -> Result<(), CliError> {
    require_file(&a.video, "video")?;
    let cfg = a.saliency.config()?;
    cfg.validate()?;
    let flow = load_flow(&a.flow)?;
    let raw = load_video(&a.video)?;
    let loaded = load_model(&a.model, a.saliency.score_mode()?, raw.dims())?;
    let video = loaded.prepare(&raw)?;
    aosa::model::check_input(loaded.model.as_ref(), &video)?;

    let started = Instant::now();
    let tracks = match &flow {
        Some(f) => {
            let d = video.dims();
            cfg.mask.validate(d.height, d.width)?;
            let anchors = place_anchor_grid(d.height, d.width, cfg.mask.spacing)?;
            track_anchors_with_flow(f, d.frames, &anchors)?
        }
        None => compute_tracks(&video, &cfg)?,
    };
    let map = explain_with_tracks(&video, loaded.model.as_ref(), &cfg, &tracks)?;
    map.save(&a.out)?;
    let adjusted = map.records.iter().filter(|r| r.adjusted).count();
    println!(
        "method={} masks={} class={} score={:.6} forwards={} backwards={} adjusted={} time={:.3}s",
        map.meta.method,
        map.meta.masks,
        map.meta.class,
        map.meta.base_score,
        map.meta.forwards,
        map.meta.backwards,
        adjusted,
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

/// One clip to evaluate: raw video, boxes, id.
struct Clip {
    id: String,
    video: VideoTensor,
    boxes: Option<GroundTruthBoxes>,
}

fn load_dataset(dir: &Path) -> Result<Vec<Clip>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::new(2, format!("dataset directory not found: {}", dir.display())));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(Error::from)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "aost"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let video = load_video(&p)?;
            let d = video.dims();
            let box_path = p.with_extension("boxes");
            let boxes = if box_path.is_file() {
                let text = fs::read_to_string(&box_path).map_err(Error::from)?;
                Some(GroundTruthBoxes::parse(&text, d.frames, d.height, d.width)?)
            } else {
                None
            };
            let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok(Clip { id, video, boxes })
        })
        .collect()
}

fn synthetic_clips(count: usize, dims: VideoDims, speed: f64, seed: u64) -> Result<Vec<Clip>, CliError> {
    let per_class = count.div_ceil(NUM_DIRECTIONS);
    let samples = direction_dataset(per_class, dims.frames, dims.height, dims.width, speed, seed)?;
    Ok(samples
        .into_iter()
        .take(count)
        .enumerate()
        .map(|(i, s)| Clip {
            id: format!("synthetic_{i:04}"),
            video: s.video,
            boxes: Some(s.boxes),
        })
        .collect())
}

fn cmd_eval(a: &EvalArgs) -> Result<(), CliError> {
    let cfg = a.saliency.config()?;
    cfg.validate()?;
    let methods: Vec<String> = a.methods.split(',').map(|m| m.trim().to_string()).collect();
    if let Some(bad) = methods.iter().find(|m| !["aosa", "cuboid", "random"].contains(&m.as_str())) {
        return Err(CliError::new(1, format!("unknown method {bad:?}")));
    }
    if let Some(p) = &a.model.model {
        require_file(p, "model")?;
    }
    let clips = match (&a.dataset, a.synthetic) {
        (Some(dir), _) => load_dataset(dir)?,
        (None, Some(n)) => {
            let dims = match &a.model.model {
                Some(p) => Tiny3DCnn::load(p)?.input,
                None => return Err(CliError::new(1, "--synthetic with an external model needs a dataset")),
            };
            synthetic_clips(n, dims, a.speed, a.data_seed)?
        }
        (None, None) => unreachable!("clap requires one of them"),
    };
    if clips.is_empty() {
        return Err(CliError::new(2, "dataset is empty"));
    }
    let dims = clips[0].video.dims();
    if let Some(c) = clips.iter().find(|c| c.video.dims() != dims) {
        return Err(CliError::new(3, format!("clip {} has dims {}, expected {dims}", c.id, c.video.dims())));
    }
    let loaded = load_model(&a.model, a.saliency.score_mode()?, dims)?;
    aosa::model::check_input(loaded.model.as_ref(), &loaded.prepare(&clips[0].video)?)?;
    let cuboid = CuboidConfig {
        occ_t: a.cuboid_t,
        occ_h: cfg.mask.occ_height,
        occ_w: cfg.mask.occ_width,
        stride_t: a.cuboid_stride_t,
        stride_s: cfg.mask.spacing,
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.workers.unwrap_or(0))
        .build()
        .map_err(|e| CliError::new(1, e.to_string()))?;
    let per_clip: Vec<Vec<EvalRow>> = pool.install(|| {
        clips
            .par_iter()
            .enumerate()
            .map(|(i, clip)| eval_clip(clip, i as u64, &loaded, &cfg, &cuboid, &methods, a))
            .collect::<Result<_, CliError>>()
    })?;
    // Rows grouped by method, clips in dataset order.
    let rows: Vec<EvalRow> = methods
        .iter()
        .flat_map(|m| per_clip.iter().flatten().filter(move |r| &r.method == m).cloned())
        .collect();
    print!("{}", metrics::to_table(&rows));
    if let Some(path) = &a.csv {
        write_atomic(path, metrics::to_csv(&rows).as_bytes())?;
    }
    Ok(())
}

fn eval_clip(
    clip: &Clip,
    index: u64,
    loaded: &LoadedModel,
    cfg: &SaliencyConfig,
    cuboid: &CuboidConfig,
    methods: &[String],
    a: &EvalArgs,
) -> Result<Vec<EvalRow>, CliError> {
    let model = loaded.model.as_ref();
    let video = loaded.prepare(&clip.video)?;
    let d = video.dims();
    let class = match cfg.target {
        Target::Class(c) => c,
        Target::Predicted => argmax(&model.forward(&video)?),
    };
    let cfg = SaliencyConfig {
        target: Target::Class(class),
        ..cfg.clone()
    };
    let mut rows = Vec::new();
    for m in methods {
        let map: SaliencyMap = match m.as_str() {
            "aosa" => {
                let tracks = compute_tracks(&video, &cfg)?;
                explain_with_tracks(&video, model, &cfg, &tracks)?
            }
            "cuboid" => cuboid_osa_map(&video, model, cuboid, &cfg)?,
            _ => metrics::random_saliency(d.frames, d.height, d.width, cfg.seed.wrapping_add(index)),
        };
        let del = metrics::deletion_auc(&video, &map, model, class, a.steps)?;
        let ins = metrics::insertion_auc(&video, &map, model, class, a.steps)?;
        let spt = match &clip.boxes {
            Some(b) => metrics::spt_video(&map, b, a.radius as f64)?.hit_rate,
            None => f64::NAN,
        };
        rows.push(EvalRow {
            method: m.clone(),
            video: clip.id.clone(),
            auc_del: del.auc,
            auc_ins: ins.auc,
            spt,
        });
    }
    Ok(rows)
}

fn cmd_render(a: &RenderArgs) -> Result<(), CliError> {
    require_file(&a.map, "map")?;
    require_file(&a.video, "video")?;
    let map = SaliencyMap::load(&a.map)?;
    let video = load_video(&a.video)?;
    let d = video.dims();
    if !map.matches(d) {
        return Err(CliError::new(
            3,
            format!("map {}x{}x{} does not match video {d}", map.frames, map.height, map.width),
        ));
    }
    fs::create_dir_all(&a.out).map_err(Error::from)?;
    let norm = render::normalized(&map);
    for t in 0..d.frames {
        let rgb = render::overlay_frame(&video, &norm, t);
        write_atomic(&a.out.join(format!("frame_{t:03}.ppm")), &render::ppm(d.width, d.height, &rgb))?;
    }
    println!("wrote {} frames to {}", d.frames, a.out.display());
    Ok(())
}

fn cmd_selftest(a: &SelftestArgs) -> Result<(), CliError> {
    let outcomes = aosa::selftest::run_all(a.seed);
    for o in &outcomes {
        println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
    }
    if outcomes.iter().all(|o| o.passed) {
        Ok(())
    } else {
        Err(CliError::new(1, "selftest failed"))
    }
}

fn main() -> ExitCode {
    let args: Vec<OsString> = std::env::args_os().collect();
    let args = match config::expand_args(args) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Explain(a) => cmd_explain(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Render(a) => cmd_render(a),
        Command::Selftest(a) => cmd_selftest(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}
