//! `seqbox` command-line tool.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage, configuration
//! or input-format error, 3 I/O error.

use clap::{Args, Parser, Subcommand, ValueEnum};
use seqbox::decoder::{decoder_demo, DemoConfig, MaskMode};
use seqbox::io::{gt_as_predictions, read_dataset, read_predictions, to_canonical_json, write_predictions, Split};
use seqbox::losses::{format_losscheck, run_losscheck, LossCheckRow, LossKind};
use seqbox::metrics::{evaluate, MetricsConfig};
use seqbox::pipeline::{annotate, generate, AnnotateConfig, GenerateConfig};
use serde::de::DeserializeOwned;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Relative-error bound of the loss gradient check.
const GRAD_TOL: f64 = 1e-4;

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] seqbox::Error),
    #[error("{0}")]
    Usage(String),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Core(seqbox::Error::Io { .. }) => 3,
            CliError::Core(_) | CliError::Usage(_) => 2,
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "seqbox", version, about = "Synthetic 4D detection datasets, losses, decoder checks and metrics")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize scenes, render camera walks and write an annotated dataset.
    Generate(GenerateArgs),
    /// Re-run filtering and box adaptation over an existing raw dataset.
    Annotate(AnnotateArgs),
    /// Score predictions against a dataset's annotations.
    Eval(EvalArgs),
    /// Compare analytic loss gradients with central differences.
    Losscheck(LossCheckArgs),
    /// Run the decoder on a synthetic clip and verify causality and gradients.
    DecoderDemo(DemoArgs),
    /// Write a dataset's annotations as a prediction file.
    ExportGt(ExportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_scenes: Option<usize>,
    #[arg(long)]
    n_objects: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    #[command(flatten)]
    annotate: AnnotateFlags,
}

#[derive(Args)]
struct AnnotateFlags {
    #[arg(long)]
    clip_len: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Farthest box center kept, in meters.
    #[arg(long)]
    depth_max: Option<f64>,
    /// Fewest visible pixels kept.
    #[arg(long)]
    min_pixels: Option<usize>,
}

impl AnnotateFlags {
    fn apply(&self, cfg: &mut AnnotateConfig) {
        set(&mut cfg.clip_len, self.clip_len);
        set(&mut cfg.stride, self.stride);
        set(&mut cfg.val_fraction, self.val_fraction);
        set(&mut cfg.annotation.depth_max, self.depth_max);
        set(&mut cfg.annotation.min_pixels, self.min_pixels);
    }
}

#[derive(Args)]
struct AnnotateArgs {
    /// Dataset directory holding `raw/`; clips and manifest are rewritten.
    #[arg(long)]
    root: PathBuf,
    /// TOML annotation configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: AnnotateFlags,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset directory with ground-truth clips.
    #[arg(long)]
    root: PathBuf,
    /// Prediction file (JSON lines).
    #[arg(long)]
    predictions: PathBuf,
    /// Directory receiving report.json and metrics.tsv.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    /// TOML metrics configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    score_min: Option<f64>,
    #[arg(long)]
    per_category: bool,
}

#[derive(Args)]
struct LossCheckArgs {
    /// Random points per loss.
    #[arg(long, default_value_t = 100)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    /// Restrict to these losses (repeatable).
    #[arg(long = "loss", value_parser = parse_loss)]
    losses: Vec<LossKind>,
    /// Print every point instead of a per-loss summary.
    #[arg(long)]
    full: bool,
    /// Corrupts the analytic gradients (exercises the failure path).
    #[arg(long, hide = true)]
    inject_gradient_error: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskArg {
    FrameBlock,
    TokenCausal,
}

#[derive(Args)]
struct DemoArgs {
    /// TOML demo configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long, value_enum)]
    mask: Option<MaskArg>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    root: PathBuf,
    /// Output prediction file (JSON lines).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    LossKind::parse(s).ok_or_else(|| format!("unknown loss `{s}`; expected one of {}", LossKind::ALL.map(|k| k.name()).join(", ")))
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| seqbox::Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| seqbox::Error::Config(format!("{}: {e}", path.display())).into())
}

fn write_file(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text).map_err(|e| seqbox::Error::io(path, e).into())
}

fn run_generate(args: &GenerateArgs) -> CliResult {
    let mut cfg: GenerateConfig = load_config(args.config.as_deref())?;
    set(&mut cfg.seed, args.seed);
    set(&mut cfg.n_scenes, args.n_scenes);
    set(&mut cfg.scene.n_objects, args.n_objects);
    set(&mut cfg.frames_per_sequence, args.frames);
    args.annotate.apply(&mut cfg.annotate);
    let m = generate(&cfg, &args.out)?;
    let objects: usize = read_dataset(&args.out, None)?.iter().map(|c| c.object_counts().iter().sum::<usize>()).sum();
    println!("{} raw sequences, {} clips, {} annotations -> {}", m.raw.len(), m.sequences.len(), objects, args.out.display());
    Ok(())
}

fn run_annotate(args: &AnnotateArgs) -> CliResult {
    let mut cfg: AnnotateConfig = load_config(args.config.as_deref())?;
    args.flags.apply(&mut cfg);
    let m = annotate(&args.root, &cfg)?;
    println!("{} clips from {} raw sequences", m.sequences.len(), m.raw.len());
    Ok(())
}

fn run_eval(args: &EvalArgs) -> CliResult {
    let mut cfg: MetricsConfig = load_config(args.config.as_deref())?;
    set(&mut cfg.score_min, args.score_min);
    cfg.per_category |= args.per_category;
    let clips = read_dataset(&args.root, args.split.map(Split::from))?;
    let known: BTreeSet<&str> = clips.iter().map(|c| c.sequence_id.as_str()).collect();
    let all = read_predictions(&args.predictions)?;
    let preds: Vec<_> = all.iter().filter(|p| known.contains(p.sequence_id.as_str())).cloned().collect();
    if preds.len() < all.len() {
        log::warn!("ignoring {} predictions for sequences outside the evaluated set", all.len() - preds.len());
    }
    let report = evaluate(&preds, &clips, &cfg)?;
    let table = report.table();
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out).map_err(|e| seqbox::Error::io(out, e))?;
        write_file(&out.join("report.json"), &to_canonical_json(&report))?;
        write_file(&out.join("metrics.tsv"), &table)?;
    }
    print!("{table}");
    Ok(())
}

fn summarize(rows: &[LossCheckRow]) -> String {
    let mut s = format!("{:<10} {:>7} {:>13} {:>12} {:>8}  result\n", "loss", "points", "max_at_target", "max_rel_err", "flagged");
    for kind in LossKind::ALL {
        let rs: Vec<&LossCheckRow> = rows.iter().filter(|r| r.kind == kind).collect();
        if rs.is_empty() {
            continue;
        }
        let err = rs.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
        let at = rs.iter().map(|r| r.value_at_target).fold(0.0, f64::max);
        let flagged: usize = rs.iter().map(|r| r.flagged).sum();
        let verdict = if err < GRAD_TOL { "PASS" } else { "FAIL" };
        s.push_str(&format!("{:<10} {:>7} {:>13.3e} {:>12.3e} {:>8}  {verdict}\n", kind.name(), rs.len(), at, err, flagged));
    }
    s
}

fn run_losscheck_cmd(args: &LossCheckArgs) -> CliResult {
    if args.points == 0 || args.step.is_nan() || args.step <= 0.0 {
        return Err(CliError::Usage("points and step must be positive".into()));
    }
    let kinds: Vec<LossKind> = if args.losses.is_empty() { LossKind::ALL.to_vec() } else { args.losses.clone() };
    let mut corrupt = |g: Vec<f64>| g.into_iter().map(|v| v * 1.05 + 1e-3).collect::<Vec<f64>>();
    let tamper: Option<&mut dyn FnMut(Vec<f64>) -> Vec<f64>> = if args.inject_gradient_error { Some(&mut corrupt) } else { None };
    let rows = run_losscheck(&kinds, args.points, args.seed, args.step, tamper);
    print!("{}", if args.full { format_losscheck(&rows) } else { summarize(&rows) });
    let failed: Vec<&str> = kinds.iter().filter(|k| rows.iter().any(|r| r.kind == **k && r.max_rel_err >= GRAD_TOL)).map(|k| k.name()).collect();
    if failed.is_empty() {
        println!("result: PASS");
        Ok(())
    } else {
        println!("result: FAIL");
        Err(CliError::Verification(format!("gradient mismatch for {}", failed.join(", "))))
    }
}

fn run_demo(args: &DemoArgs) -> CliResult {
    let mut cfg: DemoConfig = load_config(args.config.as_deref())?;
    set(&mut cfg.seed, args.seed);
    set(&mut cfg.decoder.dim, args.dim);
    set(&mut cfg.trials, args.trials);
    set(&mut cfg.max_len, args.max_len);
    if let Some(m) = args.mask {
        cfg.decoder.mask = match m {
            MaskArg::FrameBlock => MaskMode::FrameBlock,
            MaskArg::TokenCausal => MaskMode::TokenCausal,
        };
    }
    let report = decoder_demo(&cfg)?;
    print!("{}", report.format());
    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        Err(CliError::Verification(failed.join(", ")))
    }
}

fn run_export(args: &ExportArgs) -> CliResult {
    let clips = read_dataset(&args.root, args.split.map(Split::from))?;
    let preds: Vec<_> = clips.iter().flat_map(gt_as_predictions).collect();
    write_predictions(&args.out, &preds)?;
    println!("{} records -> {}", preds.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    let result = match &cli.command {
        Command::Generate(a) => run_generate(a),
        Command::Annotate(a) => run_annotate(a),
        Command::Eval(a) => run_eval(a),
        Command::Losscheck(a) => run_losscheck_cmd(a),
        Command::DecoderDemo(a) => run_demo(a),
        Command::ExportGt(a) => run_export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
