//! `megs2`: ingest, convert, prune, compact and inspect Gaussian scenes.

mod commands;
mod config;
mod io;
mod manifest;

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use megs2_core::postprocess::LobeCriterion;
use megs2_core::prune::{OpacityOperator, SharpnessOperator};
use serde::de::DeserializeOwned;

/// Why a command stopped; each class has its own exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or configuration (exit 2).
    Usage(String),
    /// Unreadable, malformed or mismatched input (exit 3).
    Input(String),
    /// Non-finite values during optimization (exit 4).
    Numerical(String),
}

impl Failure {
    pub fn input(path: &Path, e: impl Display) -> Self {
        Failure::Input(format!("{}: {e}", path.display()))
    }

    pub fn from_core(path: &Path, e: megs2_core::Error) -> Self {
        Self::core(e).context(path)
    }

    pub fn core(e: megs2_core::Error) -> Self {
        use megs2_core::Error as E;
        match e {
            E::Config(_) => Failure::Usage(e.to_string()),
            E::NumericalFailure { .. } => Failure::Numerical(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }

    fn context(self, path: &Path) -> Self {
        let add = |m: String| format!("{}: {m}", path.display());
        match self {
            Failure::Usage(m) => Failure::Usage(add(m)),
            Failure::Input(m) => Failure::Input(add(m)),
            Failure::Numerical(m) => Failure::Numerical(add(m)),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Input(_) => 3,
            Failure::Numerical(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Input(m) | Failure::Numerical(m) => m,
        }
    }
}

/// Lets clap accept the same lowercase names as the config file.
fn serde_name<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|e| e.to_string())
}

#[derive(Parser)]
#[command(name = "megs2", version, about = "Memory-efficient Gaussian splatting toolkit")]
struct Cli {
    /// TOML config, or a previous run's manifest to replay it.
    #[arg(long, short = 'c', global = true)]
    config: Option<PathBuf>,
    /// Seed for view order and toy scenes; overrides the config file.
    #[arg(long, global = true, env = "MEGS2_SEED")]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Use 1 for bit-reproducible runs.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read a 3DGS PLY (or any scene file) and write a scene file.
    Ingest {
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Convert an SH scene to spherical-Gaussian color.
    Fit {
        scene: PathBuf,
        #[arg(long)]
        lobes: Option<usize>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Generate a procedural scene, its views, and a trained starting model.
    TrainToy {
        /// Output directory.
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Sparsify opacity and lobes under a memory budget, then clean up.
    Prune {
        scene: PathBuf,
        /// View-set directory with cameras.json and view_NNN.f32 files.
        #[arg(long)]
        views: PathBuf,
        /// Budget in 11N + 7L units.
        #[arg(long, conflicts_with = "keep_ratio")]
        budget: Option<u64>,
        #[arg(long)]
        keep_ratio: Option<f64>,
        #[arg(long)]
        lobe_keep_ratio: Option<f64>,
        #[arg(long, value_parser = serde_name::<OpacityOperator>)]
        opacity_operator: Option<OpacityOperator>,
        #[arg(long, value_parser = serde_name::<SharpnessOperator>)]
        sharpness_operator: Option<SharpnessOperator>,
        #[arg(long, value_parser = serde_name::<LobeCriterion>)]
        lobe_criterion: Option<LobeCriterion>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        prox_every: Option<usize>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        finetune_steps: Option<usize>,
        /// Trace CSV (default: <out>.trace.csv).
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Write the MEGS2 compact binary.
    Compact {
        scene: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Render one view to PNG, or to a float dump when OUT ends in .f32.
    Render {
        scene: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Counts, budget units and static memory; dynamic memory with a camera.
    Stats {
        scene: PathBuf,
        #[arg(long)]
        camera: Option<PathBuf>,
        #[arg(long)]
        json: bool,
        /// Also write the JSON report here.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Time repeated renders.
    Bench {
        scene: PathBuf,
        #[arg(long)]
        camera: Option<PathBuf>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("megs2: error: --workers must be at least 1");
            return ExitCode::from(2);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("thread pool is configured once");
    }
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("megs2: error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}
