use std::alloc::{GlobalAlloc, Layout, System};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use spiralx::corruptions::Level;
use spiralx::pipeline::bench::{bench_csv, complexity_check, spiral_bench, DEFAULT_SHAPES};
use spiralx::pipeline::{self, robustness, Model};
use spiralx::synth::{self, Split};
use spiralx::{par, RunConfig};

/// Counts every allocated byte so `spiral-bench` can report allocations per call.
struct Counting;

static ALLOCATED: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        ALLOCATED.fetch_add(layout.size(), Ordering::Relaxed);
        unsafe { System.alloc(layout) }
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) }
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        ALLOCATED.fetch_add(new_size, Ordering::Relaxed);
        unsafe { System.realloc(ptr, layout, new_size) }
    }
}

#[global_allocator]
static GLOBAL: Counting = Counting;

const SEED_ENV: &str = "SPIRALX_SEED";
const EXIT_NUMERICAL: u8 = 2;
const EXIT_INPUT: u8 = 3;

#[derive(Parser)]
#[command(
    name = "spiralx",
    version,
    about = "Train, evaluate and stress-test the spiral-pooling detector"
)]
struct Cli {
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// Overrides the config seed (and SPIRALX_SEED).
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a run directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Drop one component.
        #[arg(long, value_enum)]
        ablate: Option<Ablate>,
        /// Train the full model and both ablations and write a comparison table.
        #[arg(long, conflicts_with = "ablate")]
        compare: bool,
        /// Dataset directory written by `gen-data`; overrides the config.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Run directory; defaults to `<output_dir>/<model name>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint on one split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Directory for metrics.csv and confusion.csv; stdout only when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint on the corrupted test split.
    Robustness {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated severity levels.
        #[arg(long, default_value = "low,mild,high,extreme", value_delimiter = ',')]
        levels: Vec<String>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time the spiral rearrangement over a sweep of shapes.
    SpiralBench {
        /// Comma-separated `ROWSxCOLS` shapes.
        #[arg(long, value_delimiter = ',')]
        shapes: Vec<String>,
        /// Minimum timing window per shape, in milliseconds.
        #[arg(long, default_value_t = 200)]
        min_time_ms: u64,
        /// Also write the CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset directory.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Ablate {
    Stem,
    Spiral,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_INPUT)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let threads = cli.threads;
    match par::with_threads(threads, || run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Numerical failures exit with 2, everything else is an input problem.
fn exit_code(e: &anyhow::Error) -> u8 {
    let numerical = e.chain().any(|c| {
        c.downcast_ref::<spiralx::Error>()
            .is_some_and(spiralx::Error::is_numerical)
            || c.downcast_ref::<ComplexityViolation>().is_some()
    });
    if numerical {
        EXIT_NUMERICAL
    } else {
        EXIT_INPUT
    }
}

#[derive(Debug)]
struct ComplexityViolation(String);

impl std::fmt::Display for ComplexityViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ComplexityViolation {}

fn run(cli: Cli) -> Result<()> {
    let seed = seed_override(cli.seed)?;
    match cli.command {
        Command::Train {
            config,
            ablate,
            compare,
            data,
            out,
        } => {
            let mut cfg = load_config(config.as_deref(), seed, data)?;
            match ablate {
                Some(Ablate::Stem) => cfg.stem_block = false,
                Some(Ablate::Spiral) => cfg.spiral_pool = false,
                None => {}
            }
            if compare {
                cmd_compare(&cfg, out)
            } else {
                cmd_train(&cfg, out)
            }
        }
        Command::Evaluate {
            checkpoint,
            split,
            data,
            out,
        } => cmd_evaluate(&checkpoint, &split, seed, data, out.as_deref()),
        Command::Robustness {
            checkpoint,
            levels,
            data,
            out,
        } => cmd_robustness(&checkpoint, &levels, seed, data, &out),
        Command::SpiralBench {
            shapes,
            min_time_ms,
            out,
        } => cmd_spiral_bench(&shapes, min_time_ms, out.as_deref()),
        Command::GenData { config, out } => cmd_gen_data(config.as_deref(), seed, &out),
    }
}

/// `--seed` beats `SPIRALX_SEED`, which beats the config file.
fn seed_override(flag: Option<u64>) -> Result<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| anyhow!("{SEED_ENV}={v:?} is not an unsigned integer")),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => bail!("{SEED_ENV}: {e}"),
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>, data: Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if data.is_some() {
        cfg.data_dir = data;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(cfg: &RunConfig, out: Option<PathBuf>) -> Result<()> {
    let dir = out.unwrap_or_else(|| cfg.output_dir.join(cfg.model_name()));
    let data = pipeline::load_data(cfg)?;
    eprintln!(
        "training {} for {} epochs on {} images -> {}",
        cfg.model_name(),
        cfg.epochs,
        data.train.len(),
        dir.display()
    );
    let outcome = pipeline::train(cfg, &data, Some(&dir), &mut |r| {
        let reward = r
            .reward
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "-".into());
        eprintln!(
            "round {:>4}  detector loss {:.4}  parent score {:.4}  reward {reward}",
            r.round, r.detector_loss, r.parent_score
        );
    })?;
    print_summary(cfg.model_name(), &outcome.test_report);
    println!("run directory: {}", dir.display());
    Ok(())
}

fn cmd_compare(cfg: &RunConfig, out: Option<PathBuf>) -> Result<()> {
    let dir = out.unwrap_or_else(|| cfg.output_dir.join("ablation"));
    let data = pipeline::load_data(cfg)?;
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.cfg"), cfg.render())?;
    let (csv, _) = pipeline::ablation(cfg, &data, Some(&dir))?;
    print!("{csv}");
    println!("run directory: {}", dir.display());
    Ok(())
}

fn print_summary(name: &str, r: &spiralx::metrics::EvalReport) {
    let f = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "nan".into());
    println!(
        "{name}: precision {:.4} recall {:.4} f1 {:.4} ap50 {} map {} mar {}",
        r.prf.precision,
        r.prf.recall,
        r.prf.f1,
        f(r.ap50),
        f(r.map),
        f(r.mar)
    );
}

/// The checkpoint's config with the command-line overrides applied, and
/// the data it describes.
fn checkpoint_inputs(
    checkpoint: &Path,
    seed: Option<u64>,
    data: Option<PathBuf>,
) -> Result<(Model, RunConfig, synth::Dataset)> {
    let model = Model::load(checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let mut cfg = model.config.clone();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if data.is_some() {
        cfg.data_dir = data;
    }
    let ds = pipeline::load_data(&cfg)?;
    Ok((model, cfg, ds))
}

fn cmd_evaluate(
    checkpoint: &Path,
    split: &str,
    seed: Option<u64>,
    data: Option<PathBuf>,
    out: Option<&Path>,
) -> Result<()> {
    let split: Split = split.parse()?;
    let (model, cfg, ds) = checkpoint_inputs(checkpoint, seed, data)?;
    let samples = ds.split(split);
    if samples.is_empty() {
        bail!("split {} is empty", split.name());
    }
    let report = pipeline::evaluate(&model, samples, cfg.score_threshold)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.cfg"), cfg.render())?;
        fs::write(dir.join("metrics.csv"), report.to_csv())?;
        fs::write(dir.join("confusion.csv"), report.confusion_csv())?;
    }
    print!("{}", report.to_csv());
    Ok(())
}

fn cmd_robustness(
    checkpoint: &Path,
    levels: &[String],
    seed: Option<u64>,
    data: Option<PathBuf>,
    out: &Path,
) -> Result<()> {
    let levels: Vec<Level> = levels
        .iter()
        .map(|l| l.trim().parse())
        .collect::<spiralx::Result<_>>()?;
    if levels.is_empty() {
        bail!("no severity levels given");
    }
    let (model, cfg, ds) = checkpoint_inputs(checkpoint, seed, data)?;
    let rows = robustness(&model, &ds.test, &levels, cfg.seed, cfg.score_threshold)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("config.cfg"), cfg.render())?;
    pipeline::robustness::write_robustness(&rows, out)?;
    for r in &rows {
        println!(
            "{:<12} {:<8} precision {:.4} recall {:.4} ap50 {}",
            r.condition(),
            r.level(),
            r.report.prf.precision,
            r.report.prf.recall,
            r.report
                .ap50
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "nan".into())
        );
    }
    Ok(())
}

fn parse_shape(s: &str) -> Result<(usize, usize)> {
    let (r, c) = s
        .trim()
        .split_once('x')
        .ok_or_else(|| anyhow!("shape {s:?} is not ROWSxCOLS"))?;
    let dim = |v: &str| -> Result<usize> {
        match v.parse() {
            Ok(n) if n > 0 => Ok(n),
            _ => bail!("shape {s:?} needs positive integer sides"),
        }
    };
    Ok((dim(r)?, dim(c)?))
}

fn cmd_spiral_bench(shapes: &[String], min_time_ms: u64, out: Option<&Path>) -> Result<()> {
    let shapes = if shapes.is_empty() {
        DEFAULT_SHAPES.to_vec()
    } else {
        shapes
            .iter()
            .map(|s| parse_shape(s))
            .collect::<Result<_>>()?
    };
    let probe = || ALLOCATED.load(Ordering::Relaxed);
    let rows = spiral_bench(&shapes, Duration::from_millis(min_time_ms), Some(&probe))?;
    let csv = bench_csv(&rows);
    print!("{csv}");
    if let Some(path) = out {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, &csv)?;
    }
    let has_pair = [(64, 64), (128, 128)].iter().all(|s| shapes.contains(s));
    if has_pair {
        let (ratio, ok) = complexity_check(&rows, 64)?;
        eprintln!("64x64 -> 128x128 time ratio {ratio:.2} (expected 2 to 8)");
        if !ok {
            return Err(ComplexityViolation(format!(
                "complexity check failed: ratio {ratio:.2} or allocation above 64 bytes per column"
            ))
            .into());
        }
    }
    Ok(())
}

fn cmd_gen_data(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    if out.as_os_str().is_empty() {
        bail!("--out must not be empty");
    }
    let cfg = load_config(config, seed, None)?;
    let ds = synth::generate_dataset(
        cfg.train_samples,
        cfg.val_samples,
        cfg.test_samples,
        cfg.seed,
        cfg.image_size,
    )?;
    let manifest = synth::write_dataset(&ds, out)?;
    fs::write(out.join("config.cfg"), cfg.render())?;
    println!("{}", manifest.display());
    Ok(())
}
