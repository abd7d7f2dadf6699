//! `cropspec` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or schema error, 3 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cropspec::analysis::GroupBy;
use cropspec::ErrorKind;

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(cropspec::Error),
}

impl From<cropspec::Error> for CliError {
    fn from(e: cropspec::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numerical => 3,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Parser)]
#[command(name = "cropspec", version, about = "Crop classification from hyperspectral reflectance libraries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// TOML run configuration; flags override its keys.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Spectral library CSV.
    #[arg(short, long)]
    dataset: Option<PathBuf>,
    /// Ingest profile (`toolkit`, `ghisaconus`) or ingest TOML path.
    #[arg(long)]
    ingest: Option<String>,
    /// Output directory.
    #[arg(short, long = "out")]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Default)]
struct AlgorithmArgs {
    /// Algorithm descriptor (repeatable), e.g. `lda`, `qda-bayes-mmp:0.5`, `mlp-2hl`, `suite`.
    #[arg(short, long = "algorithm")]
    algorithms: Vec<String>,
    /// Shrinkage parameter for descriptors that omit one.
    #[arg(long)]
    lambda: Option<f64>,
    /// `uniform` or `empirical`.
    #[arg(long)]
    priors: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Load a library and print its summary.
    Validate(Common),
    /// Summarize a library and write summary.json.
    Summarize(Common),
    /// Stratified k-fold cross-validation of one or more algorithms.
    Cv {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        alg: AlgorithmArgs,
        #[arg(short)]
        k: Option<usize>,
    },
    /// Shrinkage grid search for Gaussian discriminant families.
    Grid {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        alg: AlgorithmArgs,
        #[arg(short)]
        k: Option<usize>,
        /// Comma-separated λ values.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// Principal component analysis with score CSV and scatter SVGs.
    Pca {
        #[command(flatten)]
        common: Common,
        #[arg(short = 'n', long)]
        components: Option<usize>,
        /// `crop`, `stage` or `all`.
        #[arg(long)]
        group_by: Option<String>,
        /// One-based components for the scatter axes, e.g. `3,4`.
        #[arg(long, value_delimiter = ',', num_args = 1..=2)]
        axes: Option<Vec<usize>>,
    },
    /// Fit one algorithm on the whole library and write model.json.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        alg: AlgorithmArgs,
        /// `error` or `drop` for joint classes with fewer than two samples.
        #[arg(long)]
        sparse_classes: Option<String>,
    },
    /// Apply a saved model to a library.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(short, long)]
        model: Option<PathBuf>,
    },
    /// Generate a synthetic library from a TOML spec.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        spec: Option<PathBuf>,
    },
}

fn parse_enum<T: serde::de::DeserializeOwned>(flag: &str, value: &str) -> Result<T, CliError> {
    serde_json::from_value(serde_json::Value::String(value.to_ascii_lowercase()))
        .map_err(|_| CliError::Usage(format!("invalid value {value:?} for --{flag}")))
}

fn merge_common(c: Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if c.dataset.is_some() {
        cfg.dataset = c.dataset;
    }
    if c.ingest.is_some() {
        cfg.ingest = c.ingest;
    }
    if c.out.is_some() {
        cfg.output_dir = c.out;
    }
    if c.seed.is_some() {
        cfg.seed = c.seed;
    }
    Ok(cfg)
}

fn merge_alg(cfg: &mut RunConfig, a: AlgorithmArgs) -> Result<(), CliError> {
    if !a.algorithms.is_empty() {
        cfg.algorithms = Some(a.algorithms);
    }
    if a.lambda.is_some() {
        cfg.lambda = a.lambda;
    }
    if let Some(p) = a.priors {
        cfg.priors = Some(parse_enum("priors", &p)?);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Validate(c) => commands::validate(&merge_common(c)?),
        Command::Summarize(c) => commands::summarize(&merge_common(c)?),
        Command::Cv { common, alg, k } => {
            let mut cfg = merge_common(common)?;
            merge_alg(&mut cfg, alg)?;
            cfg.k = k.or(cfg.k);
            commands::cv(&cfg)
        }
        Command::Grid { common, alg, k, grid } => {
            let mut cfg = merge_common(common)?;
            merge_alg(&mut cfg, alg)?;
            cfg.k = k.or(cfg.k);
            cfg.grid = grid.or(cfg.grid);
            commands::grid(&cfg)
        }
        Command::Pca {
            common,
            components,
            group_by,
            axes,
        } => {
            let mut cfg = merge_common(common)?;
            cfg.components = components.or(cfg.components);
            if let Some(g) = group_by {
                cfg.group_by = Some(parse_enum::<GroupBy>("group-by", &g)?);
            }
            if let Some(a) = axes {
                match a[..] {
                    [x, y] => cfg.axes = Some([x, y]),
                    _ => return Err(CliError::Usage("--axes takes two component numbers, e.g. 3,4".into())),
                }
            }
            commands::pca(&cfg)
        }
        Command::Train {
            common,
            alg,
            sparse_classes,
        } => {
            let mut cfg = merge_common(common)?;
            merge_alg(&mut cfg, alg)?;
            if let Some(s) = sparse_classes {
                cfg.sparse_classes = Some(parse_enum("sparse-classes", &s)?);
            }
            commands::train(&cfg)
        }
        Command::Predict { common, model } => {
            let mut cfg = merge_common(common)?;
            cfg.model = model.or(cfg.model);
            commands::predict(&cfg)
        }
        Command::Synth { common, spec } => {
            let mut cfg = merge_common(common)?;
            cfg.spec = spec.or(cfg.spec);
            commands::synth(&cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
