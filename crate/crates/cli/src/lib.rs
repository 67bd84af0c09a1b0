//! Command-line driver: datasets, training, evaluation, ablations, the prior
//! experiment and point-cloud export, each run in its own directory.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage or config
//! errors.

pub mod config;
mod error;
mod run;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use error::CliError;
pub use run::{execute, RunDir, OUT_ENV};

use config::{Config, Source};

#[derive(Debug, Parser)]
#[command(
    name = "bundlenet",
    version,
    about = "Train and evaluate bundle networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Output root (defaults to $BUNDLENET_OUT, then ./runs).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args, Default)]
pub struct DataArgs {
    /// Dataset CSV written by make-data (with its JSON sidecar).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Synthetic kind: torus, moebius, sliced_torus, oval.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset or ingest CSV files.
    MakeData {
        #[command(flatten)]
        data: DataArgs,
        /// Raw CSV to ingest (last column is the label by default).
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        wine_red: Option<PathBuf>,
        #[arg(long)]
        wine_white: Option<PathBuf>,
        #[arg(long)]
        test_frac: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model and write its checkpoint.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        q: Option<usize>,
        #[arg(long)]
        lr0: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint in the global and/or fiberwise regime.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        /// global, fiberwise or both.
        #[arg(long)]
        regime: Option<String>,
        #[arg(long)]
        repeats: Option<usize>,
        /// Comma-separated metric names.
        #[arg(long)]
        metrics: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Train and evaluate one model per neighborhood count.
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated neighborhood counts.
        #[arg(long)]
        q_list: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Push gauss1d/gauss2d/circle priors onto an oval and trace W1.
    PriorExperiment {
        /// Comma-separated prior kinds.
        #[arg(long)]
        priors: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        /// Comma-separated seeds.
        #[arg(long)]
        seeds: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Sample points of the fiber over one label from a checkpoint.
    Generate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated label coordinates.
        #[arg(long, allow_hyphen_values = true)]
        y: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::MakeData { .. } => "make-data",
            Self::Train { .. } => "train",
            Self::Eval { .. } => "eval",
            Self::Ablate { .. } => "ablate",
            Self::PriorExperiment { .. } => "prior-experiment",
            Self::Generate { .. } => "generate",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Self::MakeData { common, .. }
            | Self::Train { common, .. }
            | Self::Eval { common, .. }
            | Self::Ablate { common, .. }
            | Self::PriorExperiment { common, .. }
            | Self::Generate { common, .. } => common,
        }
    }

    /// Config sections echoed to `config.resolved`.
    pub fn sections(&self) -> &'static [&'static str] {
        match self {
            Self::MakeData { .. } => &["data"],
            Self::Train { .. } => &["data", "model", "train"],
            Self::Eval { .. } => &["data", "eval"],
            Self::Ablate { .. } => &["data", "model", "train", "eval", "ablate"],
            Self::PriorExperiment { .. } => &["prior"],
            Self::Generate { .. } => &["generate"],
        }
    }

    /// Typed flags as config overrides.
    fn flag_overrides(&self) -> Vec<(&'static str, String)> {
        fn push<T: ToString>(
            out: &mut Vec<(&'static str, String)>,
            key: &'static str,
            v: &Option<T>,
        ) {
            if let Some(v) = v {
                out.push((key, v.to_string()));
            }
        }
        fn path(p: &Option<PathBuf>) -> Option<String> {
            p.as_ref().map(|p| p.display().to_string())
        }
        fn data(out: &mut Vec<(&'static str, String)>, d: &DataArgs) {
            push(out, "data.path", &path(&d.data));
            push(out, "data.kind", &d.kind);
            push(out, "data.n", &d.n);
        }
        let mut out = Vec::new();
        match self {
            Self::MakeData {
                data: d,
                csv,
                wine_red,
                wine_white,
                test_frac,
                ..
            } => {
                data(&mut out, d);
                push(&mut out, "data.csv", &path(csv));
                push(&mut out, "data.wine_red", &path(wine_red));
                push(&mut out, "data.wine_white", &path(wine_white));
                push(&mut out, "data.test_frac", test_frac);
            }
            Self::Train {
                data: d,
                epochs,
                q,
                lr0,
                ..
            } => {
                data(&mut out, d);
                push(&mut out, "train.epochs", epochs);
                push(&mut out, "train.q", q);
                push(&mut out, "train.lr0", lr0);
            }
            Self::Eval {
                checkpoint,
                data: d,
                regime,
                repeats,
                metrics,
                ..
            } => {
                push(&mut out, "eval.checkpoint", &path(checkpoint));
                data(&mut out, d);
                push(&mut out, "eval.regime", regime);
                push(&mut out, "eval.n_repeats", repeats);
                push(&mut out, "eval.metrics", metrics);
            }
            Self::Ablate {
                data: d,
                q_list,
                epochs,
                ..
            } => {
                data(&mut out, d);
                push(&mut out, "ablate.q_list", q_list);
                push(&mut out, "train.epochs", epochs);
            }
            Self::PriorExperiment {
                priors,
                steps,
                seeds,
                ..
            } => {
                push(&mut out, "prior.kinds", priors);
                push(&mut out, "prior.steps", steps);
                push(&mut out, "prior.seeds", seeds);
            }
            Self::Generate {
                checkpoint, y, n, ..
            } => {
                push(&mut out, "generate.checkpoint", &path(checkpoint));
                push(&mut out, "generate.y", y);
                push(&mut out, "generate.n", n);
            }
        }
        out
    }
}

/// Defaults, then the config file, then `--set`, then typed flags.
pub fn resolve(command: &Command) -> Result<Config, CliError> {
    let common = command.common();
    let mut cfg = Config::with_defaults();
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        cfg.apply_file(&text)?;
    }
    for pair in &common.set {
        cfg.apply_override(pair)?;
    }
    if let Some(seed) = common.seed {
        cfg.set("seed", seed.to_string(), Source::Flag)?;
    }
    for (key, value) in command.flag_overrides() {
        cfg.set(key, value, Source::Flag)?;
    }
    Ok(cfg)
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(dir) => {
            println!("{}", dir.path().display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
