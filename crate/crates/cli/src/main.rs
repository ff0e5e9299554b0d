use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use scst_core::bench::{block_bench, rows_to_csv, ssm_bench, BlockVariant};
use scst_core::metrics::{psnr, warping_error};
use scst_core::moco::{moco_demo, MocoDemoConfig};
use scst_core::numerics::{tensor_read_any, tensor_write};
use scst_core::scan::{continuity_report, generate_path, sweep_path, Direction, ScanPath, ScanPattern, VolumeShape};
use scst_core::selftest::{gradient_suite, selftest, Check};
use scst_core::train::{load_model, run_stage, save_model, ToyModel, TrainConfig};
use scst_core::{Error, Rng};

/// Continuous volume scans, selective state-space kernels, patch contrastive
/// learning and a toy staged denoiser.
///
/// Exit status: 0 on success, 1 on invalid input or usage, 2 on internal
/// failure (including a failed self-check).
#[derive(Parser, Debug)]
#[command(name = "scst", version)]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true, env = "SCST_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate or check voxel scan paths.
    #[command(subcommand)]
    Scan(ScanCmd),
    /// Selective-scan kernels.
    #[command(subcommand)]
    Ssm(SsmCmd),
    /// The scan block and its comparators.
    #[command(subcommand)]
    Block(BlockCmd),
    /// Momentum-contrast toy loop.
    #[command(subcommand)]
    Moco(MocoCmd),
    /// Staged toy training.
    #[command(subcommand)]
    Train(TrainCmd),
    /// Reference-based quality metrics.
    #[command(subcommand)]
    Metrics(MetricsCmd),
    /// Run every invariant suite and print a JSON report.
    Selftest {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[command(flatten)]
        out: Out,
    },
}

#[derive(Args, Debug)]
struct Out {
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum ScanCmd {
    /// Build a path. With --out, writes it as an SCST f64 index vector;
    /// otherwise prints it as JSON.
    Gen {
        /// Volume extents, `TxHxW`.
        #[arg(long)]
        shape: String,
        /// `{t,h,w}-{forward,reversed}`, or `sweep-forward` / `sweep-reversed`.
        #[arg(long)]
        pattern: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Continuity report for a path file, or for a generated pattern.
    Check {
        #[arg(long)]
        shape: String,
        /// Path file written by `scan gen --out`.
        #[arg(long, conflicts_with = "pattern", required_unless_present = "pattern")]
        path: Option<PathBuf>,
        #[arg(long)]
        pattern: Option<String>,
        #[command(flatten)]
        out: Out,
    },
}

#[derive(Subcommand, Debug)]
enum SsmCmd {
    /// Time the sequential and parallel scans; CSV.
    Bench {
        #[arg(long, default_value_t = 4096)]
        len: usize,
        #[arg(long, default_value_t = 16)]
        state: usize,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: Out,
    },
}

#[derive(Subcommand, Debug)]
enum BlockCmd {
    /// Time block variants on one random volume; CSV.
    Bench {
        /// `CxTxHxW`.
        #[arg(long, default_value = "8x4x16x16")]
        shape: String,
        /// Comma-separated subset of stcm, sweep, attn.
        #[arg(long, default_value = "stcm,sweep,attn")]
        variants: String,
        #[arg(long, default_value_t = 4)]
        state: usize,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: Out,
    },
    /// Finite-difference checks of every backward pass; JSON.
    Check {
        #[arg(long)]
        grad: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: Out,
    },
}

#[derive(Subcommand, Debug)]
enum MocoCmd {
    /// Contrastive loss per step as CSV.
    Demo {
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        momentum: Option<f64>,
        #[command(flatten)]
        out: Out,
    },
}

#[derive(Subcommand, Debug)]
enum TrainCmd {
    /// Run one stage; prints the per-step log as CSV.
    Toy {
        /// 1, 2 or 3; overrides the config.
        #[arg(long)]
        stage: Option<u8>,
        /// TOML training config.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config step count.
        #[arg(long)]
        steps: Option<usize>,
        /// Start from a saved model directory.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Save the trained model here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the CSV log here instead of stdout.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Add a wall_ms column (not reproducible).
        #[arg(long)]
        timing: bool,
    },
}

#[derive(Subcommand, Debug)]
enum MetricsCmd {
    /// PSNR between two tensor files; JSON.
    Psnr {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        peak: f64,
        #[command(flatten)]
        out: Out,
    },
    /// Warping error of a C×T×H×W video under (T−1)×2×H×W flows; JSON.
    We {
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        flows: PathBuf,
        #[command(flatten)]
        out: Out,
    },
}

enum Failure {
    Core(Error),
    /// A self-check ran but did not pass.
    ChecksFailed(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type CmdResult = Result<(), Failure>;

fn parse_dims<const N: usize>(text: &str) -> Result<[usize; N], Error> {
    let parts: Vec<&str> = text.split('x').collect();
    let bad = || Error::Invalid(format!("expected {N} extents separated by 'x', got {text:?}"));
    if parts.len() != N {
        return Err(bad());
    }
    let mut out = [0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|_| bad())?;
    }
    Ok(out)
}

fn parse_shape(text: &str) -> Result<VolumeShape, Error> {
    let [t, h, w] = parse_dims::<3>(text)?;
    VolumeShape::new(t, h, w)
}

fn build_path(shape: VolumeShape, pattern: &str) -> Result<ScanPath, Error> {
    match pattern {
        "sweep-forward" => sweep_path(shape, Direction::Forward),
        "sweep-reversed" => sweep_path(shape, Direction::Reversed),
        name => generate_path(shape, ScanPattern::parse(name)?),
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), Error> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Error::Io { path: path.into(), source: e }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn emit_json(value: &impl Serialize, out: &Out) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    emit(&text, out.out.as_deref())
}

#[derive(Serialize)]
struct PathJson<'a> {
    shape: [usize; 3],
    pattern: &'a str,
    len: usize,
    order: &'a [usize],
}

#[derive(Serialize)]
struct CheckJson {
    shape: [usize; 3],
    len: usize,
    violations: usize,
    max_jump: usize,
}

#[derive(Serialize)]
struct SuiteJson<'a> {
    seed: u64,
    passed: bool,
    checks: &'a [Check],
}

fn run_scan(cmd: ScanCmd) -> CmdResult {
    match cmd {
        ScanCmd::Gen { shape, pattern, out } => {
            let vs = parse_shape(&shape)?;
            let path = build_path(vs, &pattern)?;
            match out {
                Some(file) => tensor_write(&path.to_tensor(), file)?,
                None => {
                    let json = PathJson { shape: [vs.t, vs.h, vs.w], pattern: &pattern, len: path.len(), order: path.order() };
                    println!("{}", serde_json::to_string(&json).expect("path serializes"));
                }
            }
        }
        ScanCmd::Check { shape, path, pattern, out } => {
            let vs = parse_shape(&shape)?;
            let p = match (path, pattern) {
                (Some(file), _) => ScanPath::from_tensor(&tensor_read_any(file)?)?,
                (None, Some(name)) => build_path(vs, &name)?,
                (None, None) => unreachable!("clap requires one of --path / --pattern"),
            };
            let r = continuity_report(&p, vs)?;
            emit_json(
                &CheckJson { shape: [vs.t, vs.h, vs.w], len: p.len(), violations: r.violations, max_jump: r.max_jump },
                &out,
            )?;
        }
    }
    Ok(())
}

fn run_block(cmd: BlockCmd) -> CmdResult {
    match cmd {
        BlockCmd::Bench { shape, variants, state, reps, seed, out } => {
            let dims = parse_dims::<4>(&shape)?;
            if dims.contains(&0) {
                return Err(Error::Invalid(format!("shape {shape} has a zero extent")).into());
            }
            let vs = variants.split(',').map(|v| BlockVariant::parse(v.trim())).collect::<Result<Vec<_>, _>>()?;
            let rows = block_bench(dims, &vs, state, reps, seed)?;
            emit(&rows_to_csv("shape", &rows), out.out.as_deref())?;
        }
        BlockCmd::Check { grad, seed, out } => {
            if !grad {
                return Err(Error::Invalid("nothing to check; pass --grad".into()).into());
            }
            let checks = gradient_suite(seed)?;
            let passed = checks.iter().all(|c| c.passed);
            emit_json(&SuiteJson { seed, passed, checks: &checks }, &out)?;
            if !passed {
                return Err(Failure::ChecksFailed("gradient suite failed".into()));
            }
        }
    }
    Ok(())
}

fn run_train(cmd: TrainCmd) -> CmdResult {
    let TrainCmd::Toy { stage, config, seed, steps, init, out, log, timing } = cmd;
    let mut cfg = match &config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            TrainConfig::from_toml(&text)?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = stage {
        cfg.stage = s;
    }
    if let Some(s) = steps {
        cfg.steps = s;
    }
    let seed = seed.unwrap_or(cfg.seed);
    cfg.seed = seed;
    cfg.validate()?;
    let mut model = match &init {
        Some(dir) => load_model(dir)?,
        None => ToyModel::init(cfg.dims(), cfg.momentum, &mut Rng::new(seed).fork(0xd0))?,
    };
    let result = run_stage(&mut model, &cfg, seed)?;
    emit(&result.to_csv(timing), log.as_deref())?;
    if let Some(dir) = out {
        save_model(&model, dir)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct MetricJson {
    value: f64,
    n_valid: usize,
}

fn run(cli: Cli) -> CmdResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Invalid("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Scan(c) => run_scan(c)?,
        Command::Ssm(SsmCmd::Bench { len, state, reps, seed, out }) => {
            emit(&rows_to_csv("len", &ssm_bench(len, state, reps, seed)?), out.out.as_deref())?;
        }
        Command::Block(c) => run_block(c)?,
        Command::Moco(MocoCmd::Demo { steps, seed, lr, momentum, out }) => {
            let mut cfg = MocoDemoConfig { steps, ..Default::default() };
            if let Some(v) = lr {
                cfg.lr = v;
            }
            if let Some(v) = momentum {
                cfg.momentum = v;
            }
            let losses = moco_demo(&cfg, seed)?;
            let mut csv = String::from("step,loss\n");
            for (i, l) in losses.iter().enumerate() {
                csv.push_str(&format!("{i},{l}\n"));
            }
            emit(&csv, out.out.as_deref())?;
        }
        Command::Train(c) => run_train(c)?,
        Command::Metrics(MetricsCmd::Psnr { a, b, peak, out }) => {
            let m = psnr(&tensor_read_any(a)?, &tensor_read_any(b)?, peak)?;
            emit_json(&MetricJson { value: m.value, n_valid: m.n_valid }, &out)?;
        }
        Command::Metrics(MetricsCmd::We { video, flows, out }) => {
            let m = warping_error(&tensor_read_any(video)?, &tensor_read_any(flows)?)?;
            emit_json(&MetricJson { value: m.value, n_valid: m.n_valid }, &out)?;
        }
        Command::Selftest { seed, out } => {
            let report = selftest(seed)?;
            emit_json(&report, &out)?;
            if !report.passed {
                let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
                return Err(Failure::ChecksFailed(format!("failed checks: {}", failed.join(", "))));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
        Err(Failure::ChecksFailed(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
