//! Command-line entry points: synthetic data generation, training,
//! matching, and evaluation.
//!
//! Exit codes: 0 success, 2 usage error, 3 numeric failure, 4 missing
//! artifact, 5 empty input.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use linematch::config::Config;
use linematch::datagen::synthetic::generate_synthetic_pair;
use linematch::datagen::{filter_pairs, manifest};
use linematch::eval::{plot, SweepAxis};
use linematch::imgio;
use linematch::trainer::{
    self, evaluate_records, match_images, train_log_csv, Checkpoint, TrainRecord,
};
use linematch::types::{GroundTruth, LineSegment};
use linematch::{viz, Error};

#[derive(Parser)]
#[command(name = "linematch", version, about = "Line segment matching pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic homography pairs with rendered images and a manifest
    Gen {
        /// Output directory for images and manifest.jsonl
        #[arg(long)]
        out: PathBuf,
        /// Number of pairs to keep after filtering
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Generation seed (overrides the config)
        #[arg(long)]
        seed: Option<u64>,
        /// TOML config file
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train on a manifest; writes per-epoch checkpoints and a CSV log
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory for checkpoints and the log
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override train.epochs
        #[arg(long)]
        epochs: Option<usize>,
        /// Override train.batch_size
        #[arg(long)]
        batch_size: Option<usize>,
        /// Override train.lr
        #[arg(long)]
        lr: Option<f64>,
        /// Override train.seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Match two images given their line segments and a trained checkpoint
    Match {
        #[arg(long)]
        image_a: PathBuf,
        #[arg(long)]
        image_b: PathBuf,
        /// JSON file with the first image's line segments
        #[arg(long)]
        lines_a: PathBuf,
        /// JSON file with the second image's line segments
        #[arg(long)]
        lines_b: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output JSON file for the match set
        #[arg(long)]
        out: PathBuf,
        /// Optional overlay PNG
        #[arg(long)]
        overlay: Option<PathBuf>,
        /// Optional ground-truth JSON for overlay correctness colors
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evaluate a checkpoint over a manifest; optional robustness sweeps
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory for metrics, sweep CSVs, and plots
        #[arg(long)]
        out: PathBuf,
        /// Sweep axes to run (repeatable)
        #[arg(long, value_enum)]
        sweep: Vec<SweepArg>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SweepArg {
    Rotation,
    Blur,
    Scale,
}

impl SweepArg {
    fn axis(self) -> SweepAxis {
        match self {
            SweepArg::Rotation => SweepAxis::RotationDeg,
            SweepArg::Blur => SweepAxis::BlurSigma,
            SweepArg::Scale => SweepAxis::Scale,
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::NonFinite(_) => 3,
        Error::MissingArtifact(_) => 4,
        Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => 4,
        _ => 1,
    }
}

/// Error for empty manifests; mapped to exit code 5.
struct EmptyInput;

enum CliError {
    Lib(Error),
    Empty,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<EmptyInput> for CliError {
    fn from(_: EmptyInput) -> Self {
        CliError::Empty
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Empty) => {
            eprintln!("error: input manifest contains no records");
            ExitCode::from(5)
        }
        Err(CliError::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<Config, Error> {
    let cfg = match path {
        Some(p) => {
            if !p.exists() {
                return Err(Error::MissingArtifact(format!("config {}", p.display())));
            }
            Config::load(p)?
        }
        None => Config::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Gen { out, count, seed, config } => cmd_gen(&out, count, seed, config.as_deref()),
        Cmd::Train { manifest, out, config, epochs, batch_size, lr, seed } => {
            cmd_train(&manifest, &out, config.as_deref(), epochs, batch_size, lr, seed)
        }
        Cmd::Match {
            image_a,
            image_b,
            lines_a,
            lines_b,
            checkpoint,
            out,
            overlay,
            gt,
            config,
        } => cmd_match(
            &image_a,
            &image_b,
            &lines_a,
            &lines_b,
            &checkpoint,
            &out,
            overlay.as_deref(),
            gt.as_deref(),
            config.as_deref(),
        ),
        Cmd::Eval { manifest, checkpoint, out, sweep, config } => {
            cmd_eval(&manifest, &checkpoint, &out, &sweep, config.as_deref())
        }
    }
}

fn cmd_gen(
    out: &Path,
    count: usize,
    seed: Option<u64>,
    config: Option<&Path>,
) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    println!("config hash: {}", cfg.hash());
    let mut dg = cfg.datagen.clone();
    if let Some(s) = seed {
        dg.seed = s;
    }
    std::fs::create_dir_all(out).map_err(Error::from)?;
    let mut records = Vec::with_capacity(count);
    let mut discarded = 0usize;
    let mut attempt = 0u64;
    let max_attempts = 60 * count.max(1) as u64;
    while records.len() < count {
        if attempt >= max_attempts {
            return Err(Error::invalid(format!(
                "gave up after {attempt} attempts: filters discarded too many pairs"
            ))
            .into());
        }
        let pair_seed = dg.seed.wrapping_add(attempt);
        attempt += 1;
        let pair = generate_synthetic_pair(&dg, pair_seed)?;
        let idx = records.len();
        let name_a = format!("pair_{idx:05}_a.png");
        let name_b = format!("pair_{idx:05}_b.png");
        let (img_a, img_b) = (pair.image_a.clone(), pair.image_b.clone());
        let record = pair.into_record(name_a.clone(), name_b.clone(), &dg);
        if !filter_pairs(&record, dg.min_matches, dg.max_overlap, dg.match_ratio_range) {
            discarded += 1;
            continue;
        }
        imgio::save_gray_png(out.join(&name_a), &img_a)?;
        imgio::save_gray_png(out.join(&name_b), &img_b)?;
        records.push(record);
    }
    manifest::write_manifest(&out.join("manifest.jsonl"), &records)?;
    println!("generated {} pairs ({discarded} discarded by filters)", records.len());
    Ok(())
}

fn load_records(manifest_path: &Path) -> Result<Vec<TrainRecord>, CliError> {
    if !manifest_path.exists() {
        return Err(Error::MissingArtifact(format!("manifest {}", manifest_path.display())).into());
    }
    let raw = manifest::read_manifest(manifest_path)?;
    if raw.is_empty() {
        return Err(EmptyInput.into());
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut records = Vec::with_capacity(raw.len());
    for r in &raw {
        records.push(TrainRecord::from_manifest_record(r, base)?);
    }
    Ok(records)
}

fn cmd_train(
    manifest_path: &Path,
    out: &Path,
    config: Option<&Path>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let mut cfg = load_config(config)?;
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(l) = lr {
        cfg.train.lr = l;
    }
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    println!("config hash: {}", cfg.hash());
    let records = load_records(manifest_path)?;
    std::fs::create_dir_all(out).map_err(Error::from)?;
    let outcome = trainer::train(&records, &cfg, Some(out))?;
    outcome.checkpoint.save(&out.join("checkpoint.json"))?;
    std::fs::write(
        out.join("train_log.csv"),
        train_log_csv(&cfg.hash(), &outcome.steps),
    )
    .map_err(Error::from)?;
    let last = outcome.steps.last();
    println!(
        "trained {} epochs over {} records ({} skipped); final loss {}",
        cfg.train.epochs,
        records.len(),
        outcome.skipped_records,
        last.map(|s| format!("{:.4}", s.total)).unwrap_or_else(|| "n/a".into()),
    );
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T, Error> {
    if !path.exists() {
        return Err(Error::MissingArtifact(format!("{what} {}", path.display())));
    }
    let data = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&data)?)
}

#[allow(clippy::too_many_arguments)]
fn cmd_match(
    image_a: &Path,
    image_b: &Path,
    lines_a: &Path,
    lines_b: &Path,
    checkpoint: &Path,
    out: &Path,
    overlay: Option<&Path>,
    gt: Option<&Path>,
    config: Option<&Path>,
) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    println!("config hash: {}", cfg.hash());
    let ckpt = Checkpoint::load(checkpoint)?;
    if ckpt.config_hash != cfg.hash() {
        eprintln!(
            "warning: checkpoint was trained under config {} but resolved config is {}",
            ckpt.config_hash,
            cfg.hash()
        );
    }
    for p in [image_a, image_b] {
        if !p.exists() {
            return Err(Error::MissingArtifact(format!("image {}", p.display())).into());
        }
    }
    let img_a = imgio::load_gray_png(image_a)?;
    let img_b = imgio::load_gray_png(image_b)?;
    let segs_a: Vec<LineSegment> = read_json(lines_a, "line file")?;
    let segs_b: Vec<LineSegment> = read_json(lines_b, "line file")?;
    let gt_data: Option<GroundTruth> = match gt {
        Some(p) => Some(read_json(p, "ground truth")?),
        None => None,
    };
    let matches = match_images(&ckpt.params, &img_a, &img_b, &segs_a, &segs_b, &cfg)?;
    let json = serde_json::to_string_pretty(&matches).map_err(Error::from)?;
    std::fs::write(out, json).map_err(Error::from)?;
    if let Some(overlay_path) = overlay {
        viz::save_overlay(
            overlay_path,
            &img_a,
            &img_b,
            &segs_a,
            &segs_b,
            &matches,
            gt_data.as_ref(),
        )?;
    }
    println!(
        "matched {} pairs ({} A lines unmatched, {} B lines unmatched)",
        matches.matches.len(),
        matches.unmatched_a.len(),
        matches.unmatched_b.len()
    );
    Ok(())
}

fn cmd_eval(
    manifest_path: &Path,
    checkpoint: &Path,
    out: &Path,
    sweeps: &[SweepArg],
    config: Option<&Path>,
) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    println!("config hash: {}", cfg.hash());
    let ckpt = Checkpoint::load(checkpoint)?;
    let records = load_records(manifest_path)?;
    std::fs::create_dir_all(out).map_err(Error::from)?;

    let (agg, per_record) = evaluate_records(&ckpt.params, &records, &cfg)?;
    let metrics_json = serde_json::json!({
        "aggregate": agg,
        "per_record": per_record,
    });
    std::fs::write(
        out.join("metrics.json"),
        serde_json::to_string_pretty(&metrics_json).map_err(Error::from)?,
    )
    .map_err(Error::from)?;
    let mut csv = String::from("record,precision,recall,f_measure,true_positives,predicted,gt_matches\n");
    for (i, m) in per_record.iter().enumerate() {
        csv.push_str(&format!(
            "{i},{:.4},{:.4},{:.4},{},{},{}\n",
            m.precision, m.recall, m.f_measure, m.true_positives, m.predicted, m.gt_matches
        ));
    }
    csv.push_str(&format!(
        "aggregate,{:.4},{:.4},{:.4},{},{},{}\n",
        agg.precision, agg.recall, agg.f_measure, agg.true_positives, agg.predicted, agg.gt_matches
    ));
    std::fs::write(out.join("metrics.csv"), csv).map_err(Error::from)?;
    println!(
        "aggregate over {} records: precision {:.2}% recall {:.2}% f {:.2}%",
        records.len(),
        agg.precision,
        agg.recall,
        agg.f_measure
    );

    for sweep in sweeps {
        let axis = sweep.axis();
        let values = match axis {
            SweepAxis::RotationDeg => cfg.eval.rotation_sweep_deg.clone(),
            SweepAxis::BlurSigma => cfg.eval.blur_sweep_sigma.clone(),
            SweepAxis::Scale => cfg.eval.scale_sweep.clone(),
        };
        let result = trainer::sweep_records(&ckpt.params, &records, axis, &values, &cfg)?;
        std::fs::write(out.join(format!("sweep_{axis}.csv")), result.to_csv())
            .map_err(Error::from)?;
        plot::sweep_chart(&out.join(format!("sweep_{axis}.png")), &result)?;
        println!("sweep {axis}: {} points", result.points.len());
    }
    Ok(())
}
