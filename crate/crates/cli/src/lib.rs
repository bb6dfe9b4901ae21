//! Command-line front end: argument parsing, exit codes and the run summary.
//!
//! Every subcommand reads JSONL boxes or binary point files, runs one stage
//! of the pipeline and writes its result to `--output`. A short summary goes
//! to standard output. Failures print a single `ERROR <code>: <message>` line
//! to standard error and exit with 2 (arguments), 3 (input) or 1 (internal).

mod commands;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lidarpost::config::Config;
use lidarpost::Label;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INPUT: i32 = 3;

/// Environment variable capping the worker threads (0 or unset = automatic).
pub const THREADS_ENV: &str = "LIDARPOST_THREADS";

#[derive(Debug, Parser)]
#[command(name = "lidarpost", version, about = "LiDAR detection post-processing toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub shared: Shared,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Shared {
    /// JSON configuration document; missing sections use defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Result file.
    #[arg(long, short = 'o', global = true, value_name = "PATH")]
    pub output: Option<PathBuf>,
    /// Only process boxes of this class.
    #[arg(long = "class", global = true, value_name = "LABEL")]
    pub class: Option<Label>,
    /// Seed for every random choice (used by `concat --augment`).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stack the current and previous frame with a time channel.
    Concat {
        #[arg(long)]
        current: PathBuf,
        #[arg(long)]
        previous: PathBuf,
        /// Seconds between the two frames (config default 0.1).
        #[arg(long)]
        delta: Option<f64>,
        /// Crop to the configured point range.
        #[arg(long)]
        crop: bool,
        /// Apply a seeded random flip/scale/rotation.
        #[arg(long)]
        augment: bool,
    },
    /// Bin a point file into voxels and emit per-voxel counts and means.
    Voxelize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 4)]
        channels: usize,
        #[arg(long, value_enum, default_value_t = VoxelModeArg::Dynamic)]
        mode: VoxelModeArg,
    },
    /// Label anchors against ground truth.
    Assign {
        #[arg(long)]
        anchors: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum, default_value_t = AssignModeArg::Adaptive)]
        mode: AssignModeArg,
        #[arg(long)]
        pos_iou: Option<f64>,
        #[arg(long)]
        neg_iou: Option<f64>,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Greedy non-maximum suppression per frame and class.
    Nms {
        #[arg(long)]
        input: PathBuf,
        /// One threshold for all classes instead of the configured ones.
        #[arg(long)]
        iou: Option<f64>,
    },
    /// Gaussian soft-NMS per frame.
    SoftNms {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        score_floor: Option<f64>,
    },
    /// Refine kept boxes by averaging overlapping pre-suppression boxes.
    Vote {
        /// Pre-suppression pool.
        #[arg(long)]
        input: PathBuf,
        /// Kept boxes; NMS of the pool when omitted.
        #[arg(long)]
        kept: Option<PathBuf>,
        /// NMS threshold used when `--kept` is omitted.
        #[arg(long)]
        iou: Option<f64>,
        #[arg(long)]
        vote_iou: Option<f64>,
    },
    /// Merge several detectors. With `--gt`, score weights are grid-searched
    /// greedily; otherwise every detector gets weight 1.
    Ensemble {
        #[arg(long, num_args = 1.., required = true)]
        input: Vec<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        iou: Option<f64>,
        /// Apply box voting over all sources after suppression.
        #[arg(long)]
        vote: bool,
    },
    /// Track detections frame by frame.
    Track {
        #[arg(long)]
        input: PathBuf,
    },
    /// AP/APH of detections against ground truth.
    EvalDet {
        #[arg(long)]
        dets: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum)]
        level: Option<LevelArg>,
        /// Write the precision/recall curves as CSV.
        #[arg(long)]
        pr_csv: Option<PathBuf>,
    },
    /// MOTA/MOTP of tracks against ground truth with track ids.
    EvalMot {
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// One IoU threshold for all classes instead of the configured ones.
        #[arg(long)]
        iou: Option<f64>,
    },
    /// Print the full default configuration.
    DefaultConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VoxelModeArg {
    Hard,
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AssignModeArg {
    Fixed,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LevelArg {
    L1,
    L2,
}

/// A failed run, carrying its exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Input(String),
    Internal(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Input(_) => EXIT_INPUT,
            Failure::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = match self {
            Failure::Usage(m) | Failure::Input(m) | Failure::Internal(m) => m,
        };
        // Keep the diagnostic on one line.
        let flat: Vec<&str> = msg.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        write!(f, "ERROR {}: {}", self.code(), flat.join(" "))
    }
}

impl From<lidarpost::Error> for Failure {
    fn from(e: lidarpost::Error) -> Self {
        use lidarpost::Error as E;
        match e {
            E::InvalidArgument(_) => Failure::Usage(e.to_string()),
            E::Parse { .. } | E::Validation { .. } | E::InvalidRecord { .. } | E::Format(_) | E::Io { .. } => {
                Failure::Input(e.to_string())
            }
            E::Undefined(_) => Failure::Input(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", Failure::Usage(first.trim_start_matches("error: ").to_owned()));
            return EXIT_USAGE;
        }
    };
    match execute(cli) {
        Ok(summary) => {
            println!("{summary}");
            EXIT_OK
        }
        Err(f) => {
            eprintln!("{f}");
            f.code()
        }
    }
}

/// Runs a parsed command and returns the summary text.
pub fn execute(cli: Cli) -> CliResult<String> {
    let config = match &cli.shared.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    let pool = thread_pool()?;
    pool.install(|| commands::dispatch(&cli.command, &cli.shared, &config))
}

fn thread_pool() -> CliResult<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Failure::Usage(format!("{THREADS_ENV} must be a non-negative integer, got {v:?}")))?,
        _ => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::Internal(format!("cannot start worker threads: {e}")))
}
