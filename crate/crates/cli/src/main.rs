//! `texsynth`: build filter banks, synthesize textures, and measure texture
//! distances from the command line.
//!
//! Exit codes: 0 success, 2 usage error, 3 I/O error, 4 numeric or
//! degenerate input, 5 solver failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use texsynth::{Error, ErrorClass};

#[derive(Parser, Debug)]
#[command(
    name = "texsynth",
    version,
    about = "Texture synthesis with single-layer convolutional models"
)]
struct Cli {
    /// Worker threads; falls back to TEXSYNTH_THREADS, then all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Leave wall-clock times out of outputs so reruns are byte-identical.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Only warnings and errors on standard error.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a filter bank and save it.
    Filters(FiltersArgs),
    /// Synthesize textures matching a reference.
    Synth(SynthArgs),
    /// Print the distance between two images.
    Distance(DistanceArgs),
    /// Run the patch discrimination experiment on a texture directory.
    Confusion(ConfusionArgs),
}

#[derive(Args, Debug)]
pub struct FiltersArgs {
    /// TOML file with a [filters] table.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// fourier363, fourier3267, random363, random3267, random, multiscale,
    /// kmeans, kmeans_nonwhite, kmeans_sample or pca363.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub texture: Option<PathBuf>,
    #[arg(long, conflicts_with = "no_whiten")]
    pub whiten: bool,
    #[arg(long)]
    pub no_whiten: bool,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Patches sampled for the learned kinds.
    #[arg(long)]
    pub patches: Option<usize>,
    /// Lloyd iteration cap.
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// TOML file with a [synth] table.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub texture: Option<PathBuf>,
    #[arg(long)]
    pub bank: Option<PathBuf>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Output size as HEIGHTxWIDTH.
    #[arg(long, value_parser = parse_size)]
    pub size: Option<[usize; 2]>,
    #[arg(long)]
    pub loss_scale: Option<f64>,
    /// Write the current image every K iterations.
    #[arg(long, value_name = "K")]
    pub snapshot_every: Option<usize>,
    /// Channel means as R,G,B.
    #[arg(long, value_parser = parse_means)]
    pub means: Option<[f64; 3]>,
}

#[derive(Args, Debug)]
pub struct DistanceArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    /// TOML file with a [distance] table.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, conflicts_with = "pixel")]
    pub bank: Option<PathBuf>,
    /// Compare raw pixel values instead of Gram matrices.
    #[arg(long)]
    pub pixel: bool,
    #[arg(long, value_parser = parse_means)]
    pub means: Option<[f64; 3]>,
}

#[derive(Args, Debug)]
pub struct ConfusionArgs {
    /// TOML file with a [confusion] table.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub textures: Option<PathBuf>,
    #[arg(long, conflicts_with = "pixel")]
    pub bank: Option<PathBuf>,
    #[arg(long)]
    pub pixel: bool,
    #[arg(long)]
    pub patches: Option<usize>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output prefix.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long, value_parser = parse_means)]
    pub means: Option<[f64; 3]>,
}

fn parse_size(s: &str) -> Result<[usize; 2], String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or("expected HEIGHTxWIDTH")?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok([parse(h)?, parse(w)?])
}

fn parse_means(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err("expected R,G,B".into());
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|e| format!("{p:?}: {e}"))?;
    }
    Ok(out)
}

fn exit_code(err: &Error) -> u8 {
    match err.class() {
        ErrorClass::Usage => 2,
        ErrorClass::Io => 3,
        ErrorClass::Numeric => 4,
        ErrorClass::Solver => 5,
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, Error> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var("TEXSYNTH_THREADS") {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("TEXSYNTH_THREADS={v:?} is not a count")))?,
            Err(_) => return Ok(None),
        },
    };
    if n == 0 {
        return Err(Error::InvalidArgument("thread count must be at least 1".into()));
    }
    Ok(Some(n))
}

fn run(cli: Cli) -> Result<commands::Outcome, Error> {
    if let Some(n) = thread_count(cli.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    let global = commands::Global {
        deterministic: cli.deterministic,
    };
    match cli.command {
        Command::Filters(a) => commands::filters(a, &global),
        Command::Synth(a) => commands::synth(a, &global),
        Command::Distance(a) => commands::distance(a, &global),
        Command::Confusion(a) => commands::confusion(a, &global),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(commands::Outcome::Success) => ExitCode::SUCCESS,
        Ok(commands::Outcome::SolverFailed) => ExitCode::from(5),
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
