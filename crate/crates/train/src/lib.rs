//! Adversarial training of the trajectory generator with random or
//! length-aware batching of the real data.

mod config;
mod history;
pub mod losses;
mod sample;
mod trainer;

pub use config::{anneal_temperature, default_anneal, LossProfile, ModelWidths, ProfileKind, TrainerConfig};
pub use history::{TrainHistory, UpdateRecord};
pub use losses::{time_alignment_losses, PROB_FLOOR};
pub use sample::{sample_trajectories, store_features, to_trajectory};
pub use trainer::{train, train_from, DStep, FakeBatch, GStep, RealBatch, TrainOutput, Trainer};

use lastraj_core::sampling::Batch;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] lastraj_nn::NnError),
    #[error(transparent)]
    Core(#[from] lastraj_core::Error),
    #[error("non-finite loss at update {}: {}", .0.update, .0.reason)]
    NumericalAbort(Box<Diagnostic>),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// State captured when a loss turns non-finite.
#[derive(Debug, Clone)]
pub struct Diagnostic {
    pub update: usize,
    pub epoch: usize,
    pub reason: String,
    pub tau: f64,
    pub batch: Batch,
    pub losses: Vec<(String, f64)>,
    /// Lengths of the generated trajectories in the offending batch.
    pub fake_lengths: Vec<usize>,
}

impl Diagnostic {
    pub fn to_text(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        let _ = writeln!(s, "update = {}", self.update);
        let _ = writeln!(s, "epoch = {}", self.epoch);
        let _ = writeln!(s, "reason = {}", self.reason);
        let _ = writeln!(s, "tau = {}", self.tau);
        let bucket = self.batch.bucket.map_or("RS".to_string(), |b| b.to_string());
        let _ = writeln!(s, "bucket = {bucket}");
        for (k, v) in &self.losses {
            let _ = writeln!(s, "{k} = {v}");
        }
        let idx: Vec<String> = self.batch.indices.iter().map(|i| i.to_string()).collect();
        let _ = writeln!(s, "real_indices = {}", idx.join(" "));
        let lens: Vec<String> = self.fake_lengths.iter().map(|i| i.to_string()).collect();
        let _ = writeln!(s, "fake_lengths = {}", lens.join(" "));
        s
    }
}
