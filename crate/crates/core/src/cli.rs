//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::Parser;

use crate::clock::{ClockKind, ClockModel, CostModel};
use crate::dsl::{self, RunOptions};
use crate::error::{Error, Result};
use crate::measure::{render_results, ResultHeader};
use crate::routines;
use crate::runtime::{ProgressMode, WorldConfig, MIB};

/// Environment variable consulted when `--heap-size` is absent.
pub const HEAP_SIZE_ENV: &str = "SKA_HEAP_SIZE";

pub const DEFAULT_OUTPUT: &str = "skampi.sko";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "ska-shmem",
    version,
    about = "Run .ski benchmark scripts against an in-process one-sided communication runtime"
)]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Benchmark script to run.
    #[arg(
        short,
        long,
        value_name = "FILE",
        required_unless_present = "list_routines"
    )]
    input: Option<PathBuf>,

    /// Result file.
    #[arg(short, long, value_name = "FILE", default_value = DEFAULT_OUTPUT)]
    output: PathBuf,

    /// Number of processing elements.
    #[arg(short, long, default_value_t = 2, value_parser = clap::value_parser!(u32).range(1..))]
    npes: u32,

    /// Symmetric heap size per PE, e.g. 64M or 1G [default: 64M, or $SKA_HEAP_SIZE].
    #[arg(long, value_name = "SIZE", value_parser = parse_size)]
    heap_size: Option<usize>,

    /// Time source: real or virtual.
    #[arg(long, default_value = "real", value_name = "KIND")]
    clock: ClockKind,

    /// Virtual clock: per-message latency in seconds.
    #[arg(long, default_value_t = 0.0, value_parser = non_negative)]
    alpha: f64,

    /// Virtual clock: per-byte cost in seconds.
    #[arg(long, default_value_t = 0.0, value_parser = non_negative)]
    beta: f64,

    /// Virtual clock: local call overhead in seconds.
    #[arg(long, default_value_t = 0.0, value_parser = non_negative)]
    gamma: f64,

    /// Virtual clock: cost of a quiet in seconds.
    #[arg(long, default_value_t = 0.0, value_parser = non_negative)]
    quiet_cost: f64,

    /// Progress engine: async or quiet-only.
    #[arg(long, default_value = "async", value_name = "MODE")]
    progress: ProgressMode,

    /// Seed for test payload patterns.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Print the routine registry and exit.
    #[arg(long)]
    list_routines: bool,
}

/// Everything needed for one invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub output: PathBuf,
    pub npes: usize,
    pub heap_size: usize,
    pub clock: ClockKind,
    pub costs: CostModel,
    pub progress: ProgressMode,
    pub seed: u64,
    pub list_routines: bool,
}

impl RunConfig {
    pub fn world(&self) -> WorldConfig {
        let clock = match self.clock {
            ClockKind::Real => ClockModel::real(),
            ClockKind::Virtual => ClockModel::virtual_clock(self.costs),
        };
        WorldConfig::new(self.npes)
            .heap_size(self.heap_size)
            .clock(clock)
            .progress(self.progress)
    }
}

fn non_negative(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("must be a finite value >= 0, got {s}"))
    }
}

/// Parses a byte count with an optional K, M or G suffix (binary
/// multiples; a trailing `B` or `iB` is accepted).
pub fn parse_size(s: &str) -> std::result::Result<usize, String> {
    let t = s.trim();
    let t = t
        .strip_suffix("iB")
        .or_else(|| t.strip_suffix('B'))
        .unwrap_or(t);
    let (digits, shift) = match t.chars().last() {
        Some('k' | 'K') => (&t[..t.len() - 1], 10),
        Some('m' | 'M') => (&t[..t.len() - 1], 20),
        Some('g' | 'G') => (&t[..t.len() - 1], 30),
        _ => (t, 0),
    };
    let n: usize = digits
        .trim()
        .parse()
        .map_err(|_| format!("invalid size `{s}`"))?;
    n.checked_mul(1usize << shift)
        .ok_or_else(|| format!("size `{s}` is too large"))
}

/// Parses a full argument vector (program name first).
pub fn parse_args<I, T>(argv: I) -> std::result::Result<RunConfig, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv)?;
    let heap_size = match cli.heap_size {
        Some(h) => h,
        None => match std::env::var(HEAP_SIZE_ENV) {
            Ok(v) => parse_size(&v).map_err(|e| {
                clap::Error::raw(
                    clap::error::ErrorKind::ValueValidation,
                    format!("{HEAP_SIZE_ENV}: {e}\n"),
                )
            })?,
            Err(_) => 64 * MIB,
        },
    };
    Ok(RunConfig {
        input: cli.input,
        output: cli.output,
        npes: cli.npes as usize,
        heap_size,
        clock: cli.clock,
        costs: CostModel {
            alpha: cli.alpha,
            beta: cli.beta,
            gamma: cli.gamma,
            quiet: cli.quiet_cost,
        },
        progress: cli.progress,
        seed: cli.seed,
        list_routines: cli.list_routines,
    })
}

fn write_atomically(path: &Path, contents: &str) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents.as_bytes()).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// Runs the script named by `config` and writes the result file. Returns
/// the number of records written.
pub fn run(config: &RunConfig, stop: Option<Arc<AtomicBool>>) -> Result<usize> {
    let input = config
        .input
        .as_ref()
        .ok_or_else(|| Error::Config("no input script given".into()))?;
    let text = std::fs::read_to_string(input).map_err(|source| Error::Io {
        path: input.clone(),
        source,
    })?;
    let located = |e: Error| match e {
        Error::Syntax { line, col, message } => {
            Error::Script(format!("{}:{line}:{col}: {message}", input.display()))
        }
        other => other,
    };
    let ast = dsl::parse(&text).map_err(located)?;
    if config.clock == ClockKind::Real && config.costs != CostModel::ZERO {
        log::warn!("cost parameters only affect the virtual clock");
    }
    let mut opts = RunOptions::new(config.world());
    opts.seed = config.seed;
    opts.stop = stop;
    let expected = dsl::validate(&ast, dsl::Env::new(opts.skampi_buffer))?;
    log::info!("{} measurement(s) on {} PE(s)", expected, config.npes);
    let out = dsl::run_script(&ast, &opts)?;
    if out.records.len() != expected {
        return Err(Error::Script(format!(
            "only {} of {expected} measurements produced a result",
            out.records.len()
        )));
    }
    let header = ResultHeader {
        npes: config.npes,
        unit: out.unit,
        clock: config.clock,
    };
    write_atomically(&config.output, &render_results(&header, &out.records))?;
    Ok(out.records.len())
}

/// Process entry point; returns the exit code.
pub fn main_entry() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let config = match parse_args(std::env::args_os()) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    EXIT_OK
                }
                _ => EXIT_USAGE,
            };
        }
    };
    if config.list_routines {
        print!("{}", routines::listing());
        return EXIT_OK;
    }
    let stop = Arc::new(AtomicBool::new(false));
    let handler_flag = stop.clone();
    if let Err(e) = ctrlc::set_handler(move || handler_flag.store(true, Ordering::SeqCst)) {
        log::warn!("cannot install interrupt handler: {e}");
    }
    match run(&config, Some(stop)) {
        Ok(n) => {
            log::info!("wrote {n} record(s) to {}", config.output.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("ska-shmem: error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            EXIT_FAILURE
        }
    }
}
