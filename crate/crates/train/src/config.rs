use std::fmt;
use std::str::FromStr;

use lastraj_core::trajectory::DatasetMeta;
use lastraj_nn::{AdamConfig, ModelDims};

use crate::{Result, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileKind {
    Standard,
    TimeAligned,
    FeatureMatching,
    Wasserstein,
}

impl ProfileKind {
    pub fn name(self) -> &'static str {
        match self {
            ProfileKind::Standard => "standard",
            ProfileKind::TimeAligned => "time_aligned",
            ProfileKind::FeatureMatching => "feature_matching",
            ProfileKind::Wasserstein => "wasserstein",
        }
    }
}

impl fmt::Display for ProfileKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProfileKind {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "standard" => Ok(ProfileKind::Standard),
            "time_aligned" | "timealigned" => Ok(ProfileKind::TimeAligned),
            "feature_matching" | "featurematching" => Ok(ProfileKind::FeatureMatching),
            "wasserstein" => Ok(ProfileKind::Wasserstein),
            _ => Err(TrainError::Config(format!("unknown loss profile '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossProfile {
    pub kind: ProfileKind,
    /// Weight of the time-alignment losses; nonzero only for `TimeAligned`.
    pub lambda_time: f64,
}

impl LossProfile {
    pub fn new(kind: ProfileKind, lambda_time: f64) -> Result<Self> {
        let p = LossProfile { kind, lambda_time };
        p.validate()?;
        Ok(p)
    }

    /// A profile of the given kind; `lambda_time` is kept only for
    /// `TimeAligned` and dropped to zero otherwise.
    pub fn with_default_weight(kind: ProfileKind, lambda_time: f64) -> Result<Self> {
        let lambda = if kind == ProfileKind::TimeAligned { lambda_time } else { 0.0 };
        Self::new(kind, lambda)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_time.is_finite() && self.lambda_time >= 0.0) {
            return Err(TrainError::Config("train.lambda_time must be finite and >= 0".into()));
        }
        if self.lambda_time > 0.0 && self.kind != ProfileKind::TimeAligned {
            return Err(TrainError::Config(format!(
                "train.lambda_time > 0 requires the time_aligned profile, got {}",
                self.kind
            )));
        }
        Ok(())
    }
}

/// Layer widths; the data-dependent sizes come from the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelWidths {
    pub embed: usize,
    pub type_embed: usize,
    pub floor_embed: usize,
    pub latent: usize,
    pub hidden: usize,
    pub disc_hidden: usize,
}

impl Default for ModelWidths {
    fn default() -> Self {
        ModelWidths {
            embed: 32,
            type_embed: 16,
            floor_embed: 8,
            latent: 16,
            hidden: 128,
            disc_hidden: 128,
        }
    }
}

impl ModelWidths {
    pub fn dims(&self, meta: &DatasetMeta, neighbor_width: usize, context_width: usize) -> ModelDims {
        ModelDims {
            item_count: meta.item_count,
            categories: meta.category_count().unwrap_or(1).max(1),
            floors: meta.floor_count().unwrap_or(1).max(1),
            neighbor_width,
            context_width,
            embed: self.embed,
            type_embed: self.type_embed,
            floor_embed: self.floor_embed,
            latent: self.latent,
            hidden: self.hidden,
            disc_hidden: self.disc_hidden,
        }
    }
}

pub const MAX_EPOCHS: usize = 18;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    /// Updates per epoch; `None` means one pass worth of batches,
    /// `ceil(n / batch_size)`.
    pub batches_per_epoch: Option<usize>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub tau_init: f64,
    pub tau_min: f64,
    pub anneal: f64,
    pub seed: u64,
    /// Krylov steps of the spectral-norm estimate (Wasserstein only).
    pub spectral_iters: usize,
    /// Show the discriminator the sampled one-hot tokens, with gradients
    /// taken through the relaxation.
    pub straight_through: bool,
    pub model: ModelWidths,
}

/// `α` with `α^(epochs-1) · τ_init = τ_min`, so the floor is reached at the
/// last epoch.
pub fn default_anneal(tau_init: f64, tau_min: f64, epochs: usize) -> f64 {
    if epochs <= 1 {
        return tau_min / tau_init;
    }
    (tau_min / tau_init).powf(1.0 / (epochs - 1) as f64)
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            epochs: MAX_EPOCHS,
            patience: 3,
            batch_size: 128,
            batches_per_epoch: None,
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            tau_init: 1.5,
            tau_min: 0.1,
            anneal: default_anneal(1.5, 0.1, MAX_EPOCHS),
            seed: 0,
            spectral_iters: 64,
            straight_through: true,
            model: ModelWidths::default(),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, why: &str| Err(TrainError::Config(format!("train.{k} {why}")));
        if self.epochs > MAX_EPOCHS {
            return bad("epochs", &format!("must be <= {MAX_EPOCHS}"));
        }
        if self.patience == 0 {
            return bad("patience", "must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1");
        }
        if self.batches_per_epoch == Some(0) {
            return bad("batches_per_epoch", "must be >= 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be positive");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) {
            return bad("beta1", "must lie in (0, 1)");
        }
        if !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("beta2", "must lie in (0, 1)");
        }
        if !(self.tau_min > 0.0 && self.tau_min < self.tau_init && self.tau_init.is_finite()) {
            return bad("tau_min", "must satisfy 0 < tau_min < tau_init");
        }
        if !(self.anneal > 0.0 && self.anneal < 1.0) {
            return bad("anneal", "must lie in (0, 1)");
        }
        if self.spectral_iters == 0 {
            return bad("spectral_iters", "must be >= 1");
        }
        let m = &self.model;
        if [m.embed, m.type_embed, m.floor_embed, m.latent, m.hidden, m.disc_hidden].contains(&0) {
            return Err(TrainError::Config("model widths must be positive".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }
}

pub fn anneal_temperature(tau: f64, alpha: f64, tau_min: f64) -> f64 {
    (alpha * tau).max(tau_min)
}
