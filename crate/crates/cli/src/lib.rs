//! Config-driven commands: synthetic data generation, training, evaluation
//! and bound certification. Every run writes `<command>.manifest.json` next
//! to its outputs.

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::{Path, PathBuf};

pub use commands::{cmd_eval, cmd_gen_data, cmd_train, cmd_verify_theory};
pub use config::Config;
pub use manifest::{OutputRecord, RunManifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_CERTIFICATION: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error(transparent)]
    Core(#[from] lastraj_core::Error),
    #[error(transparent)]
    Nn(#[from] lastraj_nn::NnError),
    #[error(transparent)]
    Train(lastraj_train::TrainError),
    /// Training hit a non-finite value; the diagnostic was written to `dump`.
    #[error("numerical abort, diagnostic written to {}", dump.display())]
    NumericalAbort { dump: PathBuf },
    #[error("certification failed: {0} checks do not hold")]
    Certification(usize),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::NumericalAbort { .. } => EXIT_NUMERICAL,
            CliError::Certification(_) => EXIT_CERTIFICATION,
            _ => EXIT_CONFIG,
        }
    }
}

impl From<lastraj_train::TrainError> for CliError {
    fn from(e: lastraj_train::TrainError) -> Self {
        match e {
            lastraj_train::TrainError::Core(e) => CliError::Core(e),
            lastraj_train::TrainError::Nn(e) => CliError::Nn(e),
            e => CliError::Train(e),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    GenData,
    Train,
    Eval,
    VerifyTheory,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::VerifyTheory => "verify-theory",
        }
    }

    /// The key `--seed` overrides.
    pub fn seed_key(self) -> &'static str {
        match self {
            Command::GenData => "world.seed",
            Command::Train => "train.seed",
            Command::Eval => "eval.seed",
            Command::VerifyTheory => "theory.seed",
        }
    }
}

/// Loads the config, applies the seed override, creates `out` and runs.
pub fn run(command: Command, config: &Path, seed: Option<u64>, out: &Path) -> Result<RunManifest> {
    let mut cfg = Config::load(config)?;
    if let Some(s) = seed {
        cfg.set(command.seed_key(), s.to_string());
    }
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    match command {
        Command::GenData => cmd_gen_data(&mut cfg, out),
        Command::Train => cmd_train(&mut cfg, out),
        Command::Eval => cmd_eval(&mut cfg, out),
        Command::VerifyTheory => cmd_verify_theory(&mut cfg, out),
    }
}
