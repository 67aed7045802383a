//! Command-line surface: `synth`, `train`, `evaluate`, `validate`, `run`.
//!
//! Exit status is 0 on success, 1 for invalid arguments, configuration or
//! unreadable inputs, and 2 for failures while doing the work.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use crate::alerts::{AlertSink, FileSink, WebhookSink};
use crate::dataset::{write_dataset, DatasetReader, ImageFormat};
use crate::detector::{
    default_training_config, train, DetectorError, LabeledPatch, SigmoidClassifier,
};
use crate::geometry::BoundingBox;
use crate::metrics::{
    confusion, cross_validate, metrics, roc, write_metrics_csv, write_training_csv, MetricsError,
};
use crate::pipeline::{run_pipeline, training_patches, ClockConfig, Pipeline, PipelineConfig};
use crate::plot::{history_plot, line_plot, Series};
use crate::synth::{render_sequence, ObjectKind, SceneConfig};
use crate::validator::{offline_validate, ValidatorConfig};

#[derive(Debug, Parser)]
#[command(name = "vbsf", version, about = "Drone detection in low-light video")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Pgm,
    Png,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset from a scene description.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "pgm")]
        format: FormatArg,
    },
    /// Train the patch classifier on one or more datasets.
    Train {
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        pso_seed: u64,
        #[arg(long, default_value_t = 50)]
        iterations: usize,
        /// Pipeline config whose front end produces the training patches.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        negatives_per_frame: usize,
    },
    /// Score a model on a dataset: metrics, ROC and optional k-fold cross-validation.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        kfold: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        pso_seed: u64,
        #[arg(long, default_value_t = 50)]
        iterations: usize,
        #[arg(long, default_value_t = 2)]
        negatives_per_frame: usize,
    },
    /// Offline per-frame IoU validation of predictions against ground truth.
    Validate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = 0.9)]
        threshold: f64,
        /// Per-frame results CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the scheduled detection and alerting loop over a dataset.
    Run {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        alert_file: Option<PathBuf>,
        #[arg(long)]
        alert_url: Option<String>,
        /// Use simulated time advancing this many seconds per frame.
        #[arg(long)]
        virtual_clock: Option<f64>,
        /// Report JSON destination; stdout when absent.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Per-frame detections as CSV (frame,x,y,w,h,score).
        #[arg(long)]
        pred_out: Option<PathBuf>,
    },
}

#[derive(Debug)]
pub enum CliError {
    Invalid(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Invalid(m) | CliError::Runtime(m) => m,
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Invalid(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn write_out(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn load_pipeline_config(path: Option<&Path>) -> Result<PipelineConfig, CliError> {
    match path {
        None => Ok(PipelineConfig::default()),
        Some(p) => {
            let text =
                fs::read_to_string(p).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
            PipelineConfig::from_json(&text).map_err(|e| invalid(format!("{}: {e}", p.display())))
        }
    }
}

fn load_model(path: &Path) -> Result<SigmoidClassifier, CliError> {
    SigmoidClassifier::load(path).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn open_dataset(dir: &Path) -> Result<DatasetReader, CliError> {
    DatasetReader::open(dir).map_err(invalid)
}

/// Patches from every dataset. Fails with the single-class diagnostic when
/// the annotations do not contain both drones and other objects.
fn collect_patches(
    dirs: &[PathBuf],
    cfg: &PipelineConfig,
    negatives_per_frame: usize,
    seed: u64,
) -> Result<Vec<LabeledPatch>, CliError> {
    let mut kinds = (false, false);
    let mut out = Vec::new();
    for (i, dir) in dirs.iter().enumerate() {
        let seq = open_dataset(dir)?.into_sequence().map_err(invalid)?;
        for a in seq.annotations.iter().flatten() {
            if a.kind == ObjectKind::Drone {
                kinds.0 = true;
            } else {
                kinds.1 = true;
            }
        }
        out.extend(
            training_patches(&seq, cfg, negatives_per_frame, seed.wrapping_add(i as u64))
                .map_err(runtime)?,
        );
    }
    if !(kinds.0 && kinds.1) {
        return Err(invalid(DetectorError::SingleClass));
    }
    Ok(out)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    path.with_file_name(format!("{stem}{suffix}"))
}

fn cmd_synth(config: &Path, out: &Path, format: FormatArg) -> Result<(), CliError> {
    let text =
        fs::read_to_string(config).map_err(|e| invalid(format!("{}: {e}", config.display())))?;
    let scene: SceneConfig =
        serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", config.display())))?;
    let seq = render_sequence(&scene).map_err(invalid)?;
    let format = match format {
        FormatArg::Pgm => ImageFormat::Pgm,
        FormatArg::Png => ImageFormat::Png,
    };
    write_dataset(&seq, out, format).map_err(runtime)?;
    println!("wrote {} frames to {}", seq.frames.len(), out.display());
    Ok(())
}

fn cmd_train(
    data: &[PathBuf],
    out: &Path,
    pso_seed: u64,
    iterations: usize,
    config: Option<&Path>,
    negatives_per_frame: usize,
) -> Result<(), CliError> {
    let cfg = load_pipeline_config(config)?;
    let patches = collect_patches(data, &cfg, negatives_per_frame, pso_seed)?;
    let positives = patches.iter().filter(|p| p.label == 1).count();
    log::info!("training on {} patches ({positives} drone)", patches.len());
    let pso = default_training_config()
        .with_iterations(iterations)
        .with_seed(pso_seed);
    let outcome = train(&patches, &pso).map_err(|e| match e {
        DetectorError::SingleClass => invalid(e),
        other => runtime(other),
    })?;
    outcome.classifier.save(out).map_err(runtime)?;
    let mut csv = create(&sibling(out, "_training.csv"))?;
    write_training_csv(&outcome.loss_history, &outcome.accuracy_history, &mut csv)
        .map_err(runtime)?;
    csv.flush().map_err(runtime)?;
    write_out(
        &sibling(out, "_loss.svg"),
        history_plot("Training loss", "loss", &outcome.loss_history).as_bytes(),
    )?;
    write_out(
        &sibling(out, "_accuracy.svg"),
        history_plot("Training accuracy", "accuracy", &outcome.accuracy_history).as_bytes(),
    )?;
    println!(
        "loss={:.6} accuracy={:.6} patches={}",
        outcome.loss_history.last().copied().unwrap_or(f64::NAN),
        outcome.accuracy_history.last().copied().unwrap_or(f64::NAN),
        patches.len()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_evaluate(
    data: &Path,
    model: &Path,
    kfold: Option<usize>,
    config: Option<&Path>,
    out: &Path,
    pso_seed: u64,
    iterations: usize,
    negatives_per_frame: usize,
) -> Result<(), CliError> {
    let cfg = load_pipeline_config(config)?;
    let classifier = load_model(model)?;
    let patches = collect_patches(&[data.to_path_buf()], &cfg, negatives_per_frame, pso_seed)?;
    fs::create_dir_all(out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;

    let scores: Vec<f64> = patches
        .iter()
        .map(|p| classifier.predict(&p.features))
        .collect();
    let labels: Vec<u8> = patches.iter().map(|p| p.label).collect();
    let counts = confusion(&scores, &labels, cfg.score_threshold).map_err(runtime)?;
    let m = metrics(&counts);
    let mut w = create(&out.join("metrics.csv"))?;
    write_metrics_csv(&counts, &m, &mut w).map_err(runtime)?;
    w.flush().map_err(runtime)?;

    let curve = roc(&scores, &labels).map_err(runtime)?;
    let mut w = create(&out.join("roc.csv"))?;
    curve.write_csv(&mut w).map_err(runtime)?;
    w.flush().map_err(runtime)?;
    let points = curve.points.iter().map(|p| (p.fpr, p.tpr)).collect();
    let svg = line_plot(
        &format!("ROC (AUC {:.4})", curve.auc),
        "false positive rate",
        "true positive rate",
        &[
            Series {
                name: "classifier",
                points,
            },
            Series {
                name: "chance",
                points: vec![(0.0, 0.0), (1.0, 1.0)],
            },
        ],
        Some((0.0, 1.0)),
        Some((0.0, 1.0)),
    );
    write_out(&out.join("roc.svg"), svg.as_bytes())?;
    println!(
        "accuracy={:.6} precision={:.6} recall={:.6} f1={:.6} auc={:.6}",
        m.accuracy, m.precision, m.recall, m.f1, curve.auc
    );

    if let Some(k) = kfold {
        let pso = default_training_config()
            .with_iterations(iterations)
            .with_seed(pso_seed);
        let cv = cross_validate(&patches, k, &pso).map_err(|e| match e {
            MetricsError::TooFewFolds(_)
            | MetricsError::TooFewSamples { .. }
            | MetricsError::SingleClassFold { .. } => invalid(e),
            other => runtime(other),
        })?;
        let mut w = create(&out.join("crossval.csv"))?;
        cv.write_csv(&mut w).map_err(runtime)?;
        w.flush().map_err(runtime)?;
        println!(
            "kfold={k} accuracy={:.6}±{:.6} f1={:.6}±{:.6}",
            cv.accuracy.mean, cv.accuracy.std, cv.f1.mean, cv.f1.std
        );
    }
    Ok(())
}

#[derive(Debug, serde::Deserialize)]
struct PredictionRow {
    frame: usize,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    #[allow(dead_code)]
    score: Option<f64>,
}

/// Reads `frame,x,y,w,h,score` rows into per-frame box lists.
pub fn read_predictions(path: &Path, frame_count: usize) -> Result<Vec<Vec<BoundingBox>>, String> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| format!("{}: {e}", path.display()))?;
    let mut out = vec![Vec::new(); frame_count];
    for (i, row) in reader.deserialize::<PredictionRow>().enumerate() {
        let row = row.map_err(|e| format!("{}: {e}", path.display()))?;
        if row.frame >= frame_count {
            return Err(format!(
                "{}: row {} references frame {} but the ground truth has {frame_count} frames",
                path.display(),
                i + 2,
                row.frame
            ));
        }
        let b = BoundingBox::new(row.x, row.y, row.w, row.h)
            .map_err(|e| format!("{}: row {}: {e}", path.display(), i + 2))?;
        out[row.frame].push(b);
    }
    Ok(out)
}

fn cmd_validate(
    pred: &Path,
    gt: &Path,
    threshold: f64,
    out: Option<&Path>,
) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(invalid(format!("threshold {threshold} outside [0, 1]")));
    }
    let reader = open_dataset(gt)?;
    let truth: Vec<Vec<BoundingBox>> = reader
        .annotations
        .iter()
        .map(|anns| {
            anns.iter()
                .filter(|a| a.kind == ObjectKind::Drone)
                .map(|a| a.bbox)
                .collect()
        })
        .collect();
    let predictions = read_predictions(pred, reader.len()).map_err(invalid)?;
    let cfg = ValidatorConfig {
        offline_iou_threshold: threshold,
        ..Default::default()
    };
    let report = offline_validate(&predictions, &truth, &cfg).map_err(runtime)?;
    if let Some(path) = out {
        let mut w = create(path)?;
        report.write_csv(&mut w).map_err(runtime)?;
        w.flush().map_err(runtime)?;
    }
    println!("{}", report.summary());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    data: &Path,
    model: &Path,
    config: Option<&Path>,
    alert_file: Option<&Path>,
    alert_url: Option<&str>,
    virtual_clock: Option<f64>,
    report_path: Option<&Path>,
    pred_out: Option<&Path>,
) -> Result<(), CliError> {
    let mut cfg = load_pipeline_config(config)?;
    if let Some(step) = virtual_clock {
        cfg.clock = ClockConfig::Virtual { step };
        cfg.validate().map_err(invalid)?;
    }
    let classifier = load_model(model)?;
    let reader = open_dataset(data)?;
    let mut sinks: Vec<Box<dyn AlertSink>> = Vec::new();
    if let Some(p) = alert_file {
        sinks.push(Box::new(
            FileSink::new(p).map_err(|e| invalid(format!("{}: {e}", p.display())))?,
        ));
    }
    if let Some(u) = alert_url {
        let timeout = Duration::from_millis(cfg.delivery.timeout_ms);
        sinks.push(Box::new(WebhookSink::new(u, timeout).map_err(invalid)?));
    }
    let mut preds = match pred_out {
        Some(p) => {
            let mut w = create(p)?;
            writeln!(w, "frame,x,y,w,h,score").map_err(runtime)?;
            Some(w)
        }
        None => None,
    };
    let mut write_err = None;
    let mut pipeline = Pipeline::new(cfg, classifier).map_err(invalid)?;
    let source = (0..reader.len()).map(|i| reader.frame(i));
    let report = run_pipeline(source, &mut pipeline, sinks, |o| {
        if let Some(w) = preds.as_mut() {
            for d in &o.detections {
                let b = d.bbox;
                if let Err(e) =
                    writeln!(w, "{},{},{},{},{},{}", o.index, b.x, b.y, b.w, b.h, d.score)
                {
                    write_err.get_or_insert(e);
                }
            }
        }
    })
    .map_err(runtime)?;
    if let Some(e) = write_err {
        return Err(runtime(e));
    }
    if let Some(mut w) = preds {
        w.flush().map_err(runtime)?;
    }
    let t = report.timings;
    log::info!(
        "stage ms: grayscale {:.1}, super-resolution {:.1}, denoise {:.1}, dehaze {:.1}, background {:.1}, detection {:.1}, validation {:.1}",
        t.grayscale_ms, t.super_resolution_ms, t.denoise_ms, t.dehaze_ms, t.background_ms, t.detection_ms, t.validation_ms
    );
    let json = report.to_json();
    match report_path {
        Some(p) => write_out(p, format!("{json}\n").as_bytes())?,
        None => println!("{json}"),
    }
    Ok(())
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth {
            config,
            out,
            format,
        } => cmd_synth(&config, &out, format),
        Command::Train {
            data,
            out,
            pso_seed,
            iterations,
            config,
            negatives_per_frame,
        } => cmd_train(
            &data,
            &out,
            pso_seed,
            iterations,
            config.as_deref(),
            negatives_per_frame,
        ),
        Command::Evaluate {
            data,
            model,
            kfold,
            config,
            out,
            pso_seed,
            iterations,
            negatives_per_frame,
        } => cmd_evaluate(
            &data,
            &model,
            kfold,
            config.as_deref(),
            &out,
            pso_seed,
            iterations,
            negatives_per_frame,
        ),
        Command::Validate {
            pred,
            gt,
            threshold,
            out,
        } => cmd_validate(&pred, &gt, threshold, out.as_deref()),
        Command::Run {
            data,
            model,
            config,
            alert_file,
            alert_url,
            virtual_clock,
            report,
            pred_out,
        } => cmd_run(
            &data,
            &model,
            config.as_deref(),
            alert_file.as_deref(),
            alert_url.as_deref(),
            virtual_clock,
            report.as_deref(),
            pred_out.as_deref(),
        ),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status. Diagnostics go to stderr as a single line.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let rendered = e.to_string();
            let line = rendered
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid arguments");
            eprintln!("vbsf: {}", line.trim_start_matches("error: "));
            return 1;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("vbsf: {}", e.message().replace('\n', " "));
            e.exit_code()
        }
    }
}
