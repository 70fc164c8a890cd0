//! `issp`: train, evaluate, export and benchmark sparse super-resolution
//! models.

mod error;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use issp_core::checkpoint::{write_atomic, Checkpoint, CheckpointError};
use issp_core::config::RunConfig;
use issp_core::data::load_manifest;
use issp_core::eval::{evaluate, EvalReport};
use issp_core::experiment::Datasets;
use issp_core::gradcheck::{run_gradcheck, Fault};
use issp_core::metrics::{fmt_sig9, CsvSink, MetricRow, MetricSink};
use issp_core::pruning::{pruned_count, rank_select, run_training, zero_at, Method};
use issp_core::rng::Rng;
use issp_core::sparse::{bench_compare, bench_matmul, CsrMatrix, SparseModel, DEFAULT_REPS};
use issp_core::tensor::Tensor;

use crate::error::CliError;

/// Environment variable that overrides the config seed.
const SEED_ENV: &str = "ISSP_SEED";

#[derive(Parser)]
#[command(name = "issp", version, about = "Sparse super-resolution training from random initialization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write final.ckpt, metrics.csv and config.resolved.
    Train(TrainArgs),
    /// Score a checkpoint on held-out or listed images (Y-channel PSNR/SSIM).
    Eval(EvalArgs),
    /// Convert a frozen checkpoint into a CSR sparse model file.
    ExportSparse(ExportArgs),
    /// Check sparse against dense inference, then time both.
    Bench(BenchArgs),
    /// Finite-difference check of every layer's backward pass (64-bit).
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// JSON config; missing fields come from its "preset" key or desk.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Start from a named preset instead of a file.
    #[arg(long, value_parser = ["desk", "full"])]
    preset: Option<String>,
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    /// Pruning ratio in [0, 1].
    #[arg(long)]
    r: Option<f64>,
    /// ISS-P attenuation factor in (0, 1).
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    eta0: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    k_eta: Option<u64>,
    /// Pruning iterations; the fine-tune length is kept.
    #[arg(long)]
    k_p: Option<u64>,
    /// Total iterations; the fine-tune length becomes K - K_p.
    #[arg(long)]
    k: Option<u64>,
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Image manifest; replaces the synthetic set.
    #[arg(long, conflicts_with = "synthetic")]
    manifest: Option<PathBuf>,
    /// Number of synthetic images; replaces any manifest.
    #[arg(long)]
    synthetic: Option<usize>,
    /// Print progress to stderr every N iterations (0 disables).
    #[arg(long, default_value_t = 500)]
    progress: u64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Images to score; defaults to the held-out split of the training data.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Expected model scale; a mismatch is an error.
    #[arg(long)]
    scale: Option<usize>,
    /// Border crop before PSNR; defaults to the checkpoint's setting.
    #[arg(long)]
    crop: Option<usize>,
    /// CSV destination; defaults to eval.csv beside the checkpoint.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Destination; defaults to sparse.bin beside the checkpoint.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Sparse model file from export-sparse.
    #[arg(long, required_unless_present = "matmul")]
    model: Option<PathBuf>,
    /// Benchmark the CSR product alone on a random square layer of this size.
    #[arg(long, conflicts_with = "model")]
    matmul: Option<usize>,
    /// Pruning ratio of the random layer in matmul mode.
    #[arg(long, default_value_t = 0.99)]
    r: f64,
    /// Timed repetitions per side; at least 3.
    #[arg(long, default_value_t = DEFAULT_REPS)]
    reps: usize,
    /// Input side for model mode (ignored by mini_mlp, which uses its patch).
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    Conv2d,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Corrupt one analytic gradient on purpose.
    #[arg(long, hide = true)]
    inject_fault: Option<FaultArg>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: issp_core::pruning::PruneError| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::ExportSparse(a) => export(a),
        Command::Bench(a) => bench(a),
        Command::Gradcheck(a) => gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// flags > ISSP_SEED > config file > preset defaults.
fn resolve_config(a: &TrainArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match (&a.config, &a.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => RunConfig::desk(),
    };
    if let Ok(s) = std::env::var(SEED_ENV) {
        cfg.seed = s
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={s:?} is not an unsigned integer")))?;
    }
    let p = &mut cfg.prune;
    if let Some(m) = a.method {
        p.method = m;
    }
    if let Some(v) = a.r {
        p.r = v;
    }
    if let Some(v) = a.alpha {
        p.alpha = v;
    }
    if let Some(v) = a.eta0 {
        p.eta0 = v;
    }
    if let Some(v) = a.delta {
        p.delta = v;
    }
    if let Some(v) = a.k_eta {
        p.k_eta = v;
    }
    if let Some(v) = a.k_p {
        p.k_p = v;
    }
    if let Some(k) = a.k {
        p.k_ft = k
            .checked_sub(p.k_p)
            .ok_or_else(|| CliError::Usage(format!("--k {k} is smaller than K_p = {}", p.k_p)))?;
    }
    cfg.schedule.k = p.k_p + p.k_ft;
    if let Some(v) = a.lr0 {
        cfg.schedule.lr0 = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = &a.output {
        cfg.output = v.clone();
    }
    if let Some(v) = &a.manifest {
        cfg.data.manifest = Some(v.clone());
        cfg.data.synthetic = None;
    }
    if let Some(v) = a.synthetic {
        cfg.data.synthetic = Some(v);
        cfg.data.manifest = None;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Forwards rows and reports progress every `every` iterations.
struct Progress<S> {
    inner: S,
    every: u64,
    total: u64,
}

impl<S: MetricSink> MetricSink for Progress<S> {
    fn record(&mut self, row: &MetricRow) -> std::io::Result<()> {
        if self.every > 0 && (row.k.is_multiple_of(self.every) || row.k == self.total) {
            eprintln!("k {:>7}/{}  loss {}  lr {}", row.k, self.total, fmt_sig9(row.loss), fmt_sig9(row.lr));
        }
        self.inner.record(row)
    }
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    let cfg = resolve_config(&a)?;
    let mut data = Datasets::from_config(&cfg)?;
    let mut sink = Progress {
        inner: CsvSink::new(Vec::new()).map_err(CliError::io("metrics.csv"))?,
        every: a.progress,
        total: cfg.schedule.k,
    };
    let state = run_training(&cfg, &mut data.train, &mut sink)?;
    let report = if data.val.is_empty() {
        None
    } else {
        Some(data.evaluate(&state, &cfg)?)
    };

    let dir = &cfg.output;
    std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let ckpt = Checkpoint { config: cfg.clone(), state };
    save(&dir.join("final.ckpt"), &ckpt.to_bytes())?;
    save(&dir.join("metrics.csv"), &sink.inner.into_inner())?;
    save(&dir.join("config.resolved"), cfg.to_json().as_bytes())?;

    println!("method {} r {} seed {} K {}", cfg.prune.method, cfg.prune.r, cfg.seed, cfg.schedule.k);
    if let Some(report) = report {
        println!(
            "held-out PSNR {} dB  SSIM {}  ({} images)",
            fmt_sig9(report.mean_psnr()),
            fmt_sig9(report.mean_ssim()),
            report.images.len()
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}

/// Atomic write; failures are I/O errors, not corrupt inputs.
fn save(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    write_atomic(path, bytes).map_err(|e| match e {
        CheckpointError::Io { path, source } => CliError::Write { path, source },
        other => CliError::Checkpoint(other),
    })
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    Ok(Checkpoint::load(path)?)
}

fn beside(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

fn print_table(report: &EvalReport) {
    let width = report.images.iter().map(|s| s.id.len()).max().unwrap_or(0).max(5);
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{:<width$}  {:>12}  {:>10}", "image", "psnr_db", "ssim");
    for s in &report.images {
        let _ = writeln!(out, "{:<width$}  {:>12}  {:>10}", s.id, fmt_psnr(s.psnr), format!("{:.6}", s.ssim));
    }
    let _ = writeln!(
        out,
        "{:<width$}  {:>12}  {:>10}",
        "mean",
        fmt_psnr(report.mean_psnr()),
        format!("{:.6}", report.mean_ssim())
    );
}

fn fmt_psnr(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.4}")
    } else {
        fmt_sig9(v)
    }
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let cfg = &ckpt.config;
    let model = &ckpt.state.model;
    if let Some(s) = a.scale {
        if s != model.config.scale {
            return Err(CliError::Usage(format!("--scale {s} but the checkpoint model has scale {}", model.config.scale)));
        }
    }
    let images = match &a.manifest {
        Some(path) => load_manifest(path)?,
        None => Datasets::from_config(cfg)?.val,
    };
    let crop = a.crop.unwrap_or_else(|| cfg.eval_crop());
    let report = evaluate(model, &images, crop, cfg.data.filter)?;
    print_table(&report);
    let csv = a.csv.unwrap_or_else(|| beside(&a.checkpoint, "eval.csv"));
    save(&csv, report.to_csv().as_bytes())?;
    Ok(())
}

fn export(a: ExportArgs) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let sparse = SparseModel::from_checkpoint(&ckpt)?;
    let out = a.output.unwrap_or_else(|| beside(&a.checkpoint, "sparse.bin"));
    save(&out, &sparse.to_bytes())?;
    println!(
        "{} of {} weights kept ({}); wrote {}",
        sparse.nnz(),
        sparse.num_weights(),
        fmt_sig9(sparse.nnz() as f64 / sparse.num_weights().max(1) as f64),
        out.display()
    );
    Ok(())
}

fn bench(a: BenchArgs) -> Result<(), CliError> {
    if a.reps < 3 {
        return Err(CliError::Usage(format!("--reps must be at least 3, got {}", a.reps)));
    }
    let mut rng = Rng::new(a.seed);
    let report = if let Some(n) = a.matmul {
        if !(0.0..=1.0).contains(&a.r) {
            return Err(CliError::Usage(format!("--r must lie in [0, 1], got {}", a.r)));
        }
        let mut w = rng.uniform(-1.0, 1.0, n * n)?;
        let sel = rank_select(w.data(), a.r)?;
        zero_at(w.data_mut(), &sel.pruned);
        debug_assert_eq!(sel.pruned.len(), pruned_count(n * n, a.r));
        let csr = CsrMatrix::from_dense(w.data(), n, n);
        let b = rng.uniform(-1.0, 1.0, n * n)?.reshape(&[n, n])?;
        bench_matmul(&csr, &b, a.reps)?
    } else {
        let path = a.model.expect("clap requires --model without --matmul");
        let sparse = SparseModel::load(&path)?;
        let dense = sparse.to_dense_model()?;
        let side = match sparse.config.arch {
            issp_core::nn::Arch::MiniMlp => sparse.config.mlp_patch,
            issp_core::nn::Arch::MiniEdsr => a.size,
        };
        let input: Tensor<f32> = rng.uniform(0.0, 1.0, 3 * side * side)?.reshape(&[1, 3, side, side])?;
        bench_compare(&dense, &sparse, &input, a.reps)?
    };
    let json = serde_json::to_string(&report).expect("report serializes");
    println!("{json}");
    if let Some(path) = &a.report {
        save(path, format!("{json}\n").as_bytes())?;
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<(), CliError> {
    let fault = match a.inject_fault {
        Some(FaultArg::Conv2d) => Fault::ConvBackward,
        None => Fault::None,
    };
    let report = run_gradcheck(a.seed, fault)?;
    for c in &report.checks {
        println!(
            "{:<16} max rel err {:>10.3e}  tol {:.0e}  {:>5} entries  {}",
            c.name,
            c.max_rel_err,
            c.tolerance,
            c.entries,
            if c.passed() { "ok" } else { "FAIL" }
        );
    }
    if report.passed() {
        Ok(())
    } else {
        let w = report.worst();
        Err(CliError::Gradcheck {
            layer: w.name.clone(),
            err: w.max_rel_err,
            tol: w.tolerance,
        })
    }
}
