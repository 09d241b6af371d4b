//! `dfm`: synthesize subjects, train decoders, compile projects, render
//! previews, evaluate and serve.
//!
//! Exit codes: 0 success, 2 usage, 3 bad input data, 4 numeric failure.

use std::fmt;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dfm_core::dataset::{load_dataset, split_dataset, SplitMode};
use dfm_core::decoder::{load_weights, mean_predictor_rmse, save_weights, train, DecoderConfig};
use dfm_core::eval::{self_reenact_eval, EvalConfig};
use dfm_core::face3d::{make_synthetic_model, render_with_masks, BlendshapeModel};
use dfm_core::project::{compile_project, export_track, import_baseline, Project};
use dfm_core::synth::{synth_dataset, synth_subject};
use dfm_core::{CoeffTrack, ErrorKind};
use dfm_service::{AppState, PathOverrides, ServiceConfig};
use serde_json::json;

#[derive(Parser)]
#[command(name = "dfm", version, about = "Semantic facial-expression editing from valence-arousal edits")]
struct Cli {
    /// Report errors as a JSON object on stderr.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    /// Reduced network, 100 epochs.
    Desk,
    /// Full-size network, 1000 epochs.
    Paper,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Shuffled,
    TemporalPrefix,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset, subject video, baseline track, face model and project.
    SynthSubject {
        #[arg(long)]
        seed: u64,
        /// Frames in the subject video (and in the project).
        #[arg(long)]
        frames: usize,
        #[arg(long)]
        out: PathBuf,
        /// Training pairs in dataset.jsonl.
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// Standard deviation of coefficient noise in the dataset.
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        /// Requested vertex count of the face model.
        #[arg(long, default_value_t = 5000)]
        vertices: usize,
        /// Subject VA keypoint spacing in frames.
        #[arg(long, default_value_t = 30)]
        frames_per_key: usize,
    },
    /// Train a decoder on a dataset file.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Weights file to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Profile::Desk)]
        profile: Profile,
        /// Override the profile's epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fraction of the data held out for validation.
        #[arg(long, default_value_t = 0.1)]
        val_fraction: f64,
        #[arg(long, value_enum, default_value_t = SplitArg::Shuffled)]
        split: SplitArg,
        /// Per-epoch CSV report (default: weights path with `.csv`).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compile a project's edits into a coefficient track.
    Compile {
        #[arg(long)]
        project: PathBuf,
        /// Override the project's weights path.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Track JSONL to write.
        #[arg(long)]
        out: PathBuf,
        /// Provenance JSON (default: track path with `.provenance.json`).
        #[arg(long)]
        provenance: Option<PathBuf>,
    },
    /// Render one frame of a track as PPM.
    Preview {
        #[arg(long)]
        track: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        frame: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 256)]
        width: usize,
        #[arg(long, default_value_t = 256)]
        height: usize,
        /// Also write the face/mouth mask as PGM.
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Self-reenactment evaluation (types A and B) on a subject file.
    Eval {
        #[arg(long)]
        subject: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        /// Face model (default: model.dfm3 next to the subject file).
        #[arg(long)]
        model: Option<PathBuf>,
        /// JSON report to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 128)]
        width: usize,
        #[arg(long, default_value_t = 128)]
        height: usize,
        #[arg(long, default_value_t = dfm_core::semantics::DEFAULT_LAMBDA)]
        lambda: f64,
        #[arg(long, default_value_t = 0.7)]
        train_fraction: f64,
    },
    /// Serve the HTTP API for a project.
    Serve {
        #[arg(long)]
        project: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Subject file enabling POST /api/eval.
        #[arg(long)]
        subject: Option<PathBuf>,
        #[arg(long, default_value_t = 256)]
        preview_size: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Failure {
    Usage,
    Data,
    Numeric,
}

impl Failure {
    fn code(self) -> u8 {
        match self {
            Self::Usage => 2,
            Self::Data => 3,
            Self::Numeric => 4,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::Usage => "usage",
            Self::Data => "data",
            Self::Numeric => "numeric",
        }
    }
}

#[derive(Debug)]
struct CliError {
    kind: Failure,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            kind: Failure::Usage,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Self {
            kind: Failure::Data,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl<E: Into<dfm_core::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        let e: dfm_core::Error = e.into();
        Self {
            kind: match e.kind() {
                ErrorKind::Data => Failure::Data,
                ErrorKind::Numeric => Failure::Numeric,
            },
            message: e.to_string(),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::data(format!("{}: {e}", path.display()))
}

/// Prefixes a load error with the offending path.
fn at<T, E: Into<dfm_core::Error>>(path: &Path, r: Result<T, E>) -> CliResult<T> {
    r.map_err(|e| {
        let mut err = CliError::from(e);
        err.message = format!("{}: {}", path.display(), err.message);
        err
    })
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn synth_cmd(
    seed: u64,
    frames: usize,
    out: &Path,
    samples: usize,
    noise: f64,
    vertices: usize,
    frames_per_key: usize,
) -> CliResult {
    if frames == 0 || samples == 0 {
        return Err(CliError::usage("--frames and --samples must be positive"));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(CliError::usage("--noise must be a finite non-negative number"));
    }
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    synth_dataset(seed, samples, noise).save(out.join("dataset.jsonl"))?;
    let subject = synth_subject(seed, frames, frames_per_key);
    subject.save(out.join("subject.jsonl"))?;
    export_track(&CoeffTrack { frames: subject.exprs() }, out.join("baseline.jsonl"))?;
    let model = make_synthetic_model(seed, vertices)?;
    model.save(out.join("model.dfm3"))?;
    let mut project = Project::new(frames);
    project.baseline = Some("baseline.jsonl".into());
    project.model = Some("model.dfm3".into());
    project.weights = Some("weights.dfmw".into());
    project.save(out.join("project.json"))?;
    println!(
        "wrote {samples} training pairs, {frames} subject frames and a {}-vertex model to {}",
        model.n_vertices(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train_cmd(
    data: &Path,
    out: &Path,
    profile: Profile,
    epochs: Option<usize>,
    seed: u64,
    val_fraction: f64,
    split: SplitArg,
    report: Option<PathBuf>,
) -> CliResult {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(CliError::usage("--val-fraction must lie strictly between 0 and 1"));
    }
    let d = at(data, load_dataset(data))?;
    let mode = match split {
        SplitArg::Shuffled => SplitMode::Shuffled,
        SplitArg::TemporalPrefix => SplitMode::TemporalPrefix,
    };
    let (d_train, d_val) = split_dataset(&d, 1.0 - val_fraction, mode, seed)?;
    let mut cfg = match profile {
        Profile::Desk => DecoderConfig::desk(),
        Profile::Paper => DecoderConfig::paper(),
    };
    cfg.seed = seed;
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    let (weights, rep) = train::<f32>(&d_train, &d_val, &cfg)?;
    save_weights(&weights, out)?;
    let report_path = report.unwrap_or_else(|| out.with_extension("csv"));
    std::fs::write(&report_path, rep.to_csv()).map_err(io_err(&report_path))?;
    let baseline = mean_predictor_rmse(&d_train, &d_val)?;
    let last = rep.val_rmse.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained {} epochs on {} pairs: val RMSE {last:.5} (mean predictor {baseline:.5}); weights {}, report {}",
        rep.epochs_run(),
        d_train.len(),
        out.display(),
        report_path.display()
    );
    Ok(())
}

fn compile_cmd(project_path: &Path, weights: Option<PathBuf>, out: &Path, provenance: Option<PathBuf>) -> CliResult {
    let project = at(project_path, Project::load(project_path))?;
    let dir = project_path.parent().unwrap_or(Path::new("."));
    let weights = weights
        .or_else(|| project.weights.as_ref().map(|p| Project::resolve(dir, p)))
        .ok_or_else(|| CliError::usage("project names no weights; pass --weights"))?;
    let decoder = at(&weights, load_weights(&weights))?;
    let baseline = project.load_baseline(dir)?;
    let result = compile_project(&project, &baseline, &decoder)?;
    export_track(&result.track, out)?;
    let prov_path = provenance.unwrap_or_else(|| with_suffix(out, ".provenance.json"));
    let segments: Vec<_> = result
        .segments
        .iter()
        .map(|s| json!({"edit": s.edit, "start_frame": s.start_frame, "end_frame": s.end_frame, "va": s.trajectory.points}))
        .collect();
    let prov = json!({ "frames": result.provenance, "segments": segments });
    let mut text = serde_json::to_string(&prov).map_err(|e| CliError::data(e.to_string()))?;
    text.push('\n');
    std::fs::write(&prov_path, text).map_err(io_err(&prov_path))?;
    println!(
        "compiled {} edits over {} frames: track {}, provenance {}",
        project.edits.len(),
        result.track.len(),
        out.display(),
        prov_path.display()
    );
    Ok(())
}

fn preview_cmd(
    track: &Path,
    model: &Path,
    frame: usize,
    out: &Path,
    width: usize,
    height: usize,
    mask: Option<PathBuf>,
) -> CliResult {
    let track = at(track, import_baseline(track))?;
    if frame >= track.len() {
        return Err(CliError::usage(format!("--frame {frame} outside track of {} frames", track.len())));
    }
    let model = at(model, BlendshapeModel::load(model))?;
    let mesh = model.eval_mesh(&track.frames[frame]);
    let (render, m) = render_with_masks(&model, &mesh, width, height)?;
    render.frame.save_ppm(out)?;
    if let Some(p) = mask {
        m.save_pgm(p)?;
    }
    if render.is_degenerate() {
        eprintln!("warning: frame {frame} projects outside the view (all background)");
    }
    println!("wrote {} ({}x{}, {} face pixels)", out.display(), width, height, render.covered_pixels);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval_cmd(
    subject: &Path,
    weights: &Path,
    model: Option<PathBuf>,
    out: &Path,
    width: usize,
    height: usize,
    lambda: f64,
    train_fraction: f64,
) -> CliResult {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(CliError::usage("--lambda must be finite and >= 0"));
    }
    let model_path = model.unwrap_or_else(|| subject.parent().unwrap_or(Path::new(".")).join("model.dfm3"));
    let subject = at(subject, load_dataset(subject))?;
    let decoder = at(weights, load_weights(weights))?;
    let model = at(&model_path, BlendshapeModel::load(&model_path))?;
    let cfg = EvalConfig {
        width,
        height,
        lambda,
        train_fraction,
    };
    let report = self_reenact_eval(&subject, &model, &decoder, &cfg)?;
    let mut text = serde_json::to_string_pretty(&report).map_err(|e| CliError::data(e.to_string()))?;
    text.push('\n');
    std::fs::write(out, text).map_err(io_err(out))?;
    print!("{}", report.table());
    println!("{} test frames at {width}x{height}; report {}", report.test_frames, out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn serve_cmd(
    project: &Path,
    host: IpAddr,
    port: u16,
    weights: Option<PathBuf>,
    model: Option<PathBuf>,
    subject: Option<PathBuf>,
    preview_size: usize,
) -> CliResult {
    let overrides = PathOverrides { weights, model, subject };
    let mut cfg = ServiceConfig::from_project_file(project, overrides).map_err(|e| match e {
        dfm_service::SetupError::Core(c) => CliError::from(c),
        other => CliError::usage(other.to_string()),
    })?;
    cfg.preview_width = preview_size;
    cfg.preview_height = preview_size;
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::data(e.to_string()))?;
    rt.block_on(dfm_service::serve(AppState::new(cfg), SocketAddr::new(host, port)))
        .map_err(|e| CliError::data(format!("server: {e}")))
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::SynthSubject {
            seed,
            frames,
            out,
            samples,
            noise,
            vertices,
            frames_per_key,
        } => synth_cmd(seed, frames, &out, samples, noise, vertices, frames_per_key),
        Command::Train {
            data,
            out,
            profile,
            epochs,
            seed,
            val_fraction,
            split,
            report,
        } => train_cmd(&data, &out, profile, epochs, seed, val_fraction, split, report),
        Command::Compile {
            project,
            weights,
            out,
            provenance,
        } => compile_cmd(&project, weights, &out, provenance),
        Command::Preview {
            track,
            model,
            frame,
            out,
            width,
            height,
            mask,
        } => preview_cmd(&track, &model, frame, &out, width, height, mask),
        Command::Eval {
            subject,
            weights,
            model,
            out,
            width,
            height,
            lambda,
            train_fraction,
        } => eval_cmd(&subject, &weights, model, &out, width, height, lambda, train_fraction),
        Command::Serve {
            project,
            port,
            host,
            weights,
            model,
            subject,
            preview_size,
        } => serve_cmd(&project, host, port, weights, model, subject, preview_size),
    }
}

fn report(err: &CliError, json: bool) -> ExitCode {
    if json {
        let v = json!({ "error": { "kind": err.kind.name(), "exit_code": err.kind.code(), "message": err.message } });
        eprintln!("{v}");
    } else {
        eprintln!("error: {}", err.message);
    }
    ExitCode::from(err.kind.code())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let json = std::env::args().any(|a| a == "--json");
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) if json => return report(&CliError::usage(e.to_string().trim_end()), true),
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(Failure::Usage.code());
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e, json),
    }
}
