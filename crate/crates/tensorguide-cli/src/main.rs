//! `ttguide`: data generation, training, NTK diagnostics, bound calculators,
//! and parameter accounting for tensor-train-generated adapters.
//!
//! Exit codes: 0 success, 2 configuration or validation failure, 3 numeric
//! failure (non-finite loss).

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use config::ExperimentConfig;
use std::path::PathBuf;
use tensorguide::{Error, Result};

#[derive(Parser)]
#[command(name = "ttguide", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigSource {
    /// JSON experiment config file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Built-in experiment preset (e.g. qd-tensor-guide, wide-lora).
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Output directory (overrides TTGUIDE_OUT and the config file).
    #[arg(long, value_name = "DIR")]
    out: Option<String>,
}

#[derive(Args, Clone, Default)]
struct TrainOverrides {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    optimizer: Option<String>,
    /// Training seed; `--seeds` wins when both are given.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    noise: Option<f64>,
    #[arg(long)]
    task_seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset file and its JSON sidecar.
    GenData {
        #[command(flatten)]
        source: ConfigSource,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Train an adapter; writes metrics.csv and summary.json.
    Train {
        #[command(flatten)]
        source: ConfigSource,
        #[command(flatten)]
        overrides: TrainOverrides,
        /// Comma-separated seed batch; runs sequentially.
        #[arg(long, value_name = "A,B,C")]
        seeds: Option<String>,
        /// Read the dataset from a file written by gen-data instead of
        /// generating it.
        #[arg(long, value_name = "FILE")]
        data: Option<PathBuf>,
    },
    /// Empirical NTK spectral report plus bound evaluations.
    Ntk {
        #[command(flatten)]
        source: ConfigSource,
        #[command(flatten)]
        overrides: TrainOverrides,
        /// Number of samples for the kernel.
        #[arg(long, default_value_t = 16)]
        samples: usize,
        /// Logit index the kernel differentiates.
        #[arg(long, default_value_t = 0)]
        output_index: usize,
        /// JSON file of bound constants.
        #[arg(long, value_name = "FILE")]
        constants: Option<PathBuf>,
        /// Report the budget-matched adapter set for the task instead of the
        /// configured adapter.
        #[arg(long)]
        budget_trio: bool,
    },
    /// Trainable-parameter counts and complexity classes.
    Params {
        /// JSON experiment config file.
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// Shape-catalog rows by name (repeatable).
        #[arg(long = "shape", value_name = "NAME")]
        shapes: Vec<String>,
        /// Print the whole shape catalog.
        #[arg(long)]
        catalog: bool,
        /// Count a plain low-rank pair: D,Q,R.
        #[arg(long, value_name = "D,Q,R")]
        lora: Option<String>,
    },
    /// Evaluate the approximation/optimization/generalization bounds.
    Bounds {
        /// JSON file of constants (placeholders fill anything omitted).
        #[arg(long, value_name = "FILE")]
        constants: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: Option<String>,
    },
    /// Run the budget-matched adapter set on one task, side by side.
    Compare {
        #[command(flatten)]
        source: ConfigSource,
        #[command(flatten)]
        overrides: TrainOverrides,
        #[arg(long, value_name = "A,B,C")]
        seeds: Option<String>,
    },
}

fn load_config(source: &ConfigSource, overrides: &TrainOverrides) -> Result<ExperimentConfig> {
    let mut config = match (&source.config, &source.preset) {
        (Some(path), None) => ExperimentConfig::from_file(path)?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (Some(path), Some(_)) => {
            // Flags override file keys; a preset plus a file is ambiguous.
            return Err(Error::InvalidArgument(format!(
                "pass either --config {} or --preset, not both",
                path.display()
            )));
        }
        (None, None) => {
            return Err(Error::InvalidArgument(
                "missing --config or --preset".into(),
            ))
        }
    };
    if let Some(v) = overrides.epochs {
        config.train.epochs = v;
    }
    if let Some(v) = overrides.lr {
        config.train.lr = v;
    }
    if let Some(v) = overrides.batch {
        config.train.batch = v;
    }
    if let Some(v) = &overrides.optimizer {
        config.train.optimizer = v.clone();
    }
    if let Some(v) = overrides.seed {
        config.train.seed = v;
    }
    if let Some(v) = overrides.n {
        config.task.n = v;
    }
    if let Some(v) = overrides.noise {
        config.task.noise_level = v;
    }
    if let Some(v) = overrides.task_seed {
        config.task.seed = v;
    }
    validate_task(&config)?;
    Ok(config)
}

fn validate_task(config: &ExperimentConfig) -> Result<()> {
    if config.task.noise_level < 0.0 || !config.task.noise_level.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise_level {} must be finite and >= 0",
            config.task.noise_level
        )));
    }
    if config.task.n == 0 {
        return Err(Error::InvalidArgument("task.n must be positive".into()));
    }
    Ok(())
}

fn parse_lora_dims(raw: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::InvalidArgument(format!(
            "--lora wants D,Q,R, got {raw:?}"
        )));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::InvalidArgument(format!("bad integer {s:?} in --lora")))
    };
    Ok((parse(parts[0])?, parse(parts[1])?, parse(parts[2])?))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { source, overrides } => {
            let config = load_config(&source, &overrides)?;
            let out = config.output_dir(source.out.as_deref());
            commands::cmd_gen_data(&config, &out)
        }
        Command::Train {
            source,
            overrides,
            seeds,
            data,
        } => {
            let config = load_config(&source, &overrides)?;
            let out = config.output_dir(source.out.as_deref());
            let seeds = match seeds {
                Some(raw) => commands::parse_seeds(&raw)?,
                None => vec![config.train.seed],
            };
            commands::cmd_train(&config, &out, &seeds, data.as_deref())
        }
        Command::Ntk {
            source,
            overrides,
            samples,
            output_index,
            constants,
            budget_trio,
        } => {
            let config = load_config(&source, &overrides)?;
            let out = config.output_dir(source.out.as_deref());
            commands::cmd_ntk(
                &config,
                &out,
                samples,
                output_index,
                constants.as_deref(),
                budget_trio,
            )
        }
        Command::Params {
            config,
            shapes,
            catalog,
            lora,
        } => {
            let experiment = match config {
                Some(path) => Some(ExperimentConfig::from_file(&path)?),
                None => None,
            };
            let lora_dims = match lora {
                Some(raw) => Some(parse_lora_dims(&raw)?),
                None => None,
            };
            commands::cmd_params(experiment.as_ref(), &shapes, catalog, lora_dims)
        }
        Command::Bounds { constants, out } => {
            let dir = out
                .or_else(|| std::env::var("TTGUIDE_OUT").ok().filter(|d| !d.is_empty()))
                .unwrap_or_else(|| "out".to_string());
            commands::cmd_bounds(&constants, std::path::Path::new(&dir))
        }
        Command::Compare {
            source,
            overrides,
            seeds,
        } => {
            let config = load_config(&source, &overrides)?;
            let out = config.output_dir(source.out.as_deref());
            let seeds = match seeds {
                Some(raw) => commands::parse_seeds(&raw)?,
                None => vec![config.train.seed],
            };
            commands::cmd_compare(&config, &out, &seeds)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err {
                Error::NonFinite(_) => 3,
                _ => 2,
            };
            std::process::exit(code);
        }
    }
}
