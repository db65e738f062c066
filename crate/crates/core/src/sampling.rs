//! Length buckets and mini-batch samplers.
//!
//! Random sampling (RS) draws every index uniformly over the whole dataset.
//! Length-aware sampling (LAS) first picks one length bucket from the bucket
//! weights and then fills the whole batch from that bucket, so every batch
//! covers a single length regime.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::trajectory::TrajectoryDataset;
use crate::{Error, Result};

pub const DEFAULT_K_BUCKETS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Random,
    LengthAware,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Random => "RS",
            Strategy::LengthAware => "LAS",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RS" | "RANDOM" => Ok(Strategy::Random),
            "LAS" | "LENGTH_AWARE" => Ok(Strategy::LengthAware),
            _ => Err(Error::Config(format!("unknown sampler strategy '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BucketWeighting {
    /// `w_k = |D_k| / |D|`.
    #[default]
    Empirical,
    /// `w_k = 1 / K`.
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub strategy: Strategy,
    pub k_buckets: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weighting: BucketWeighting,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            strategy: Strategy::LengthAware,
            k_buckets: DEFAULT_K_BUCKETS,
            batch_size: 128,
            seed: 0,
            weighting: BucketWeighting::Empirical,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_buckets == 0 {
            return Err(Error::Config("sampler.k_buckets must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("sampler.batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// A partition of dataset indices by trajectory length.
///
/// Bucket `k` holds the trajectories whose length lies in
/// `[boundaries[k], boundaries[k + 1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct LengthBuckets {
    pub buckets: Vec<Vec<usize>>,
    pub boundaries: Vec<usize>,
    pub weights: Vec<f64>,
}

impl LengthBuckets {
    /// Quantile buckets over a list of lengths (index `i` has length
    /// `lengths[i]`).
    ///
    /// The `j`-th cut is the lower empirical `j/k` quantile; lengths equal to
    /// a cut go to the lower bucket. Repeated cuts would leave empty buckets,
    /// and those are merged into their right neighbour, so fewer than `k`
    /// buckets may come back.
    pub fn from_lengths(lengths: &[usize], k: usize) -> Result<Self> {
        if k < 1 {
            return Err(Error::Config("k_buckets must be >= 1".into()));
        }
        if lengths.is_empty() {
            return Err(Error::Argument("cannot bucket an empty dataset".into()));
        }
        let n = lengths.len();
        let mut sorted = lengths.to_vec();
        sorted.sort_unstable();

        // Upper-inclusive cut values; dedup performs the rightward merge.
        let mut cuts: Vec<usize> = (1..=k)
            .map(|j| sorted[(j * n).div_ceil(k) - 1])
            .collect();
        cuts.dedup();

        let mut boundaries = Vec::with_capacity(cuts.len() + 1);
        boundaries.push(sorted[0]);
        boundaries.extend(cuts.iter().map(|c| c + 1));

        let mut buckets = vec![Vec::new(); cuts.len()];
        for (i, &len) in lengths.iter().enumerate() {
            let b = cuts.partition_point(|&c| c < len);
            buckets[b].push(i);
        }
        debug_assert!(buckets.iter().all(|b| !b.is_empty()));
        let weights = buckets
            .iter()
            .map(|b| b.len() as f64 / n as f64)
            .collect();
        Ok(LengthBuckets {
            buckets,
            boundaries,
            weights,
        })
    }

    pub fn with_weighting(mut self, weighting: BucketWeighting) -> Self {
        if weighting == BucketWeighting::Uniform {
            let k = self.buckets.len() as f64;
            self.weights = vec![1.0 / k; self.buckets.len()];
        }
        self
    }

    pub fn len(&self) -> usize {
        self.buckets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }

    /// Bucket index for a length, or `None` if it falls outside every bucket.
    pub fn bucket_of_length(&self, len: usize) -> Option<usize> {
        if len < self.boundaries[0] || len >= *self.boundaries.last()? {
            return None;
        }
        Some(self.boundaries[1..].partition_point(|&b| b <= len))
    }

    /// CSV with columns `bucket,lower,upper,size,weight`; `upper` is exclusive.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "bucket,lower,upper,size,weight")?;
        for (k, b) in self.buckets.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{}",
                k,
                self.boundaries[k],
                self.boundaries[k + 1],
                b.len(),
                self.weights[k]
            )?;
        }
        Ok(())
    }
}

pub fn build_buckets(dataset: &TrajectoryDataset, k: usize) -> Result<LengthBuckets> {
    LengthBuckets::from_lengths(&dataset.lengths(), k)
}

/// A mini-batch of dataset indices. `bucket` is set for LAS batches only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub bucket: Option<usize>,
}

/// One LAS draw: a bucket from the categorical over `weights`, then `m`
/// uniform indices inside it (with replacement only when the bucket holds
/// fewer than `m` trajectories).
pub fn sample_batch_las<R: Rng + ?Sized>(buckets: &LengthBuckets, m: usize, rng: &mut R) -> Batch {
    let k = if buckets.len() == 1 {
        0
    } else {
        WeightedIndex::new(&buckets.weights)
            .expect("bucket weights are positive")
            .sample(rng)
    };
    let pool = &buckets.buckets[k];
    let indices = if pool.len() >= m {
        index::sample(rng, pool.len(), m)
            .into_iter()
            .map(|i| pool[i])
            .collect()
    } else {
        (0..m).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
    };
    Batch {
        indices,
        bucket: Some(k),
    }
}

/// One RS draw: `m` independent uniform indices over `0..n`.
pub fn sample_batch_rs<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Batch {
    assert!(n > 0, "cannot sample from an empty dataset");
    Batch {
        indices: (0..m).map(|_| rng.gen_range(0..n)).collect(),
        bucket: None,
    }
}

/// A seeded batch stream. Not meant to be shared between workers; give each
/// worker its own sampler.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    strategy: Strategy,
    buckets: Option<LengthBuckets>,
    n: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(dataset: &TrajectoryDataset, config: &SamplerConfig) -> Result<Self> {
        config.validate()?;
        let buckets = match config.strategy {
            Strategy::LengthAware => {
                Some(build_buckets(dataset, config.k_buckets)?.with_weighting(config.weighting))
            }
            Strategy::Random => None,
        };
        Ok(BatchSampler {
            strategy: config.strategy,
            buckets,
            n: dataset.len(),
            batch_size: config.batch_size,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        })
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn buckets(&self) -> Option<&LengthBuckets> {
        self.buckets.as_ref()
    }

    pub fn next_batch(&mut self) -> Batch {
        match &self.buckets {
            Some(b) => sample_batch_las(b, self.batch_size, &mut self.rng),
            None => sample_batch_rs(self.n, self.batch_size, &mut self.rng),
        }
    }
}
