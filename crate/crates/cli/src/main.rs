use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser};

mod commands;
mod emit;
mod settings;

use commands::Command;
use emit::Format;
use settings::FileConfig;

/// Default output directory when neither `--out-dir` nor the config file sets one.
pub const OUT_DIR_ENV: &str = "BELL_LAB_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "bell-lab", version, about = "Bell-CHSH simulation laboratory")]
struct Cli {
    #[command(flatten)]
    global: Global,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// TOML configuration file; a `[subcommand]` table overrides top-level keys
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed (default 0)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; results do not depend on this
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Report format
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    /// Output directory (default: $BELL_LAB_OUT_DIR, then the current directory)
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] bell_lab::Error),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn file(path: &Path, source: std::io::Error) -> Self {
        CliError::File {
            path: path.to_path_buf(),
            source,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(bell_lab::Error::Invariant(_)) => 2,
            _ => 1,
        }
    }
}

/// Resolved global settings shared by every subcommand.
pub struct Context {
    pub file: FileConfig,
    pub seed: u64,
    pub format: Format,
    pub out_dir: PathBuf,
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    let g = cli.global;
    let file = FileConfig::load(g.config.as_deref())?;
    let seed = match g.seed {
        Some(s) => s,
        None => file.get("", "seed")?.unwrap_or(0),
    };
    let format = match g.format {
        Some(f) => f,
        None => file.get("", "format")?.unwrap_or(Format::Csv),
    };
    let out_dir = match g.out_dir {
        Some(d) => d,
        None => match file.get::<PathBuf>("", "out_dir")? {
            Some(d) => d,
            None => std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from("."), PathBuf::from),
        },
    };
    let workers = match g.workers {
        Some(w) => Some(w),
        None => file.get("", "workers")?,
    };
    if workers == Some(0) {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    let ctx = Context {
        file,
        seed,
        format,
        out_dir,
    };
    pool.install(|| commands::execute(cli.command, &ctx))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("bell-lab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
