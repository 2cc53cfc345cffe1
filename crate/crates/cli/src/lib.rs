//! Batch front-end: reads an experiment config, runs one task and writes
//! `results.csv` and `summary.json`.
//!
//! Exit codes: 0 success, 2 invalid config or input, 3 pricing refused by the
//! arbitrage screen, 4 hedging infeasible, 5 non-finite or exploding paths.
//! A config that does not parse or validate leaves no files behind; any later
//! failure writes `summary.json` with the error and no `results.csv`.

pub mod config;
pub mod output;
pub mod tasks;

use std::fs;
use std::path::PathBuf;

use thiserror::Error;

use tameflow::presets::MARKET_PRESETS;
use tameflow::claim::CLAIM_PRESETS;

use crate::config::ExperimentConfig;
use crate::output::{sha256_hex, Summary};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Engine(#[from] tameflow::Error),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_REFUSED: i32 = 3;
pub const EXIT_INFEASIBLE: i32 = 4;
pub const EXIT_EXPLOSION: i32 = 5;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use tameflow::Error as E;
        match self {
            CliError::Config(_) | CliError::Io(_) => EXIT_INVALID,
            CliError::Engine(e) => match e {
                E::PricingRefused { .. } => EXIT_REFUSED,
                E::HedgingInfeasible { .. } | E::NoSolution { .. } => EXIT_INFEASIBLE,
                E::Explosion { .. } | E::ModelEvaluation { .. } => EXIT_EXPLOSION,
                E::InvalidInput(_) | E::Unsupported(_) | E::DegenerateBasis(_) | E::WitnessUnavailable | E::Io(_) => {
                    EXIT_INVALID
                }
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        use tameflow::Error as E;
        match self {
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Engine(e) => match e {
                E::InvalidInput(_) => "invalid-input",
                E::NoSolution { .. } => "no-solution",
                E::Unsupported(_) => "unsupported",
                E::ModelEvaluation { .. } => "model-evaluation",
                E::Explosion { .. } => "explosion",
                E::PricingRefused { .. } => "pricing-refused",
                E::HedgingInfeasible { .. } => "hedging-infeasible",
                E::DegenerateBasis(_) => "degenerate-basis",
                E::WitnessUnavailable => "witness-unavailable",
                E::Io(_) => "io",
            },
        }
    }
}

/// Command-line options of `run`.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub paths: Option<usize>,
}

/// Loads the config and applies the command-line overrides.
pub fn load_config(opts: &RunOptions) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(&opts.config).map_err(|e| CliError::Config(format!("{}: {e}", opts.config.display())))?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Some(s) = opts.seed {
        cfg.noise.seed = s;
    }
    if let Some(p) = opts.paths {
        cfg.noise.paths = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs one experiment and returns the process exit code.
pub fn run(opts: &RunOptions) -> i32 {
    let cfg = match load_config(opts) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(opts.threads.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return EXIT_INVALID;
        }
    };
    let outcome = pool.install(|| tasks::run_task(&cfg));
    let market = cfg.market().map(|m| m.name().to_string()).unwrap_or_default();
    let mut summary = Summary {
        task: cfg.task.name.label().into(),
        market,
        claim: cfg.claim.as_ref().map(|c| c.preset.clone()),
        seed: cfg.noise.seed,
        paths: cfg.noise.paths,
        inputs_digest: sha256_hex(cfg.canonical().as_bytes()),
        exit_code: EXIT_OK,
        error: None,
    };
    let written = match &outcome {
        Ok(results) => summary.write(&opts.out, Some(results)),
        Err(e) => {
            eprintln!("error: {e}");
            summary.exit_code = e.exit_code();
            summary.error = Some((e.kind().into(), e.to_string()));
            summary.write(&opts.out, None)
        }
    };
    if let Err(e) = written {
        eprintln!("error: writing outputs: {e}");
        return EXIT_INVALID;
    }
    summary.exit_code
}

/// Text table of the built-in markets and claims.
pub fn list_presets() -> String {
    let mut s = String::from("markets:\n");
    let width = MARKET_PRESETS.iter().map(|(n, _)| n.len()).max().unwrap_or(0);
    for (name, desc) in MARKET_PRESETS {
        s.push_str(&format!("  {name:<width$}  {desc}\n"));
    }
    s.push_str("claims:\n");
    for name in CLAIM_PRESETS {
        s.push_str(&format!("  {name}\n"));
    }
    s
}
