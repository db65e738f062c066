//! A synthetic ground-truth trajectory process: a Markov walk over items on
//! floors, with category-dependent dwell times and a mixture of length
//! regimes that also scale the dwells.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::trajectory::{DatasetMeta, Step, Trajectory, TrajectoryDataset};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthRegime {
    pub mean: f64,
    pub weight: f64,
    /// Multiplies every dwell time drawn under this regime.
    pub dwell_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub item_count: usize,
    pub floors: usize,
    pub categories: usize,
    pub regimes: Vec<LengthRegime>,
    /// Mean dwell per category, before the regime factor.
    pub dwell_scales: Vec<f64>,
    pub t_max: usize,
    pub b_bound: f64,
    pub context_width: usize,
    /// Probability that the regime is read off `context[0]` rather than
    /// drawn independently of the context.
    pub context_signal: f64,
    /// Length spread: the offset around a regime mean is the difference of
    /// two geometric draws with mean `length_spread * (mean - 1)`.
    pub length_spread: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            item_count: 20,
            floors: 3,
            categories: 5,
            regimes: vec![
                LengthRegime {
                    mean: 3.0,
                    weight: 0.5,
                    dwell_factor: 1.0,
                },
                LengthRegime {
                    mean: 30.0,
                    weight: 0.5,
                    dwell_factor: 1.6,
                },
            ],
            dwell_scales: vec![1.0, 1.5, 2.0, 2.5, 3.0],
            t_max: 50,
            b_bound: 30.0,
            context_width: 4,
            context_signal: 0.8,
            length_spread: 0.1,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.item_count == 0 || self.floors == 0 || self.categories == 0 {
            return err("item, floor and category counts must be positive".into());
        }
        if self.regimes.is_empty() {
            return err("at least one length regime is required".into());
        }
        let total: f64 = self.regimes.iter().map(|r| r.weight).sum();
        if self.regimes.iter().any(|r| !(r.weight >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return err(format!("regime weights must be nonnegative and sum to 1, got {total}"));
        }
        for r in &self.regimes {
            if !(r.mean >= 1.0 && r.mean <= self.t_max as f64) {
                return err(format!("regime mean {} outside [1, {}]", r.mean, self.t_max));
            }
            if !(r.dwell_factor > 0.0 && r.dwell_factor.is_finite()) {
                return err(format!("regime dwell factor {} must be positive", r.dwell_factor));
            }
        }
        if self.dwell_scales.len() != self.categories {
            return err(format!(
                "{} dwell scales for {} categories",
                self.dwell_scales.len(),
                self.categories
            ));
        }
        if self.dwell_scales.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return err("dwell scales must be positive".into());
        }
        if !(self.b_bound >= 1.0 && self.b_bound.is_finite()) {
            return err(format!("b_bound must be >= 1, got {}", self.b_bound));
        }
        if !(0.0..=1.0).contains(&self.context_signal) {
            return err("context_signal must lie in [0, 1]".into());
        }
        if !(self.length_spread >= 0.0 && self.length_spread.is_finite()) {
            return err("length_spread must be nonnegative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthProcess {
    pub config: WorldConfig,
    /// Row-stochastic item transition matrix.
    pub transition: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
    pub item_category: Vec<u32>,
    pub item_floor: Vec<u32>,
}

fn dirichlet_row<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln() + 1e-12).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

fn draw_index<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Geometric count of failures with the given mean.
fn geometric<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> i64 {
    if mean <= 0.0 {
        return 0;
    }
    let q = mean / (1.0 + mean);
    let u: f64 = 1.0 - rng.gen::<f64>();
    (u.ln() / q.ln()).floor() as i64
}

/// Hundredths of a time unit.
fn hundredths(x: f64) -> i64 {
    (x * 100.0).round().max(0.0) as i64
}

pub fn build_world<R: Rng + ?Sized>(config: &WorldConfig, rng: &mut R) -> Result<GroundTruthProcess> {
    config.validate()?;
    let n = config.item_count;
    let transition = (0..n).map(|_| dirichlet_row(rng, n)).collect();
    let initial = dirichlet_row(rng, n);
    let item_category = (0..n).map(|i| (i % config.categories) as u32).collect();
    let item_floor = (0..n).map(|_| rng.gen_range(0..config.floors) as u32).collect();
    Ok(GroundTruthProcess {
        config: config.clone(),
        transition,
        initial,
        item_category,
        item_floor,
    })
}

impl GroundTruthProcess {
    pub fn meta(&self) -> DatasetMeta {
        let mut meta = DatasetMeta::new(self.config.t_max, self.config.b_bound, self.config.item_count);
        meta.categories = Some(self.item_category.clone());
        meta.floors = Some(self.item_floor.clone());
        meta
    }

    pub fn sample_context<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.config.context_width).map(|_| rng.gen()).collect()
    }

    /// Regime for a context: with probability `context_signal` the quantile
    /// of `context[0]` under the regime weights, otherwise an independent
    /// draw. The marginal regime law equals the weights either way.
    pub fn draw_regime<R: Rng + ?Sized>(&self, context: &[f64], rng: &mut R) -> usize {
        let weights: Vec<f64> = self.config.regimes.iter().map(|r| r.weight).collect();
        match context.first() {
            Some(&u) if rng.gen::<f64>() < self.config.context_signal => {
                let mut acc = 0.0;
                for (i, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        return i;
                    }
                }
                weights.len() - 1
            }
            _ => draw_index(rng, &weights),
        }
    }

    /// A trajectory together with the regime it was drawn under.
    pub fn sample_labeled<R: Rng + ?Sized>(&self, context: &[f64], rng: &mut R) -> (Trajectory, usize) {
        let cfg = &self.config;
        let regime = self.draw_regime(context, rng);
        let r = &cfg.regimes[regime];
        let spread = cfg.length_spread * (r.mean - 1.0);
        let len = (r.mean.round() as i64 + geometric(rng, spread) - geometric(rng, spread))
            .clamp(1, cfg.t_max as i64) as usize;

        let cap = hundredths(cfg.b_bound) - 1;
        let mut steps = Vec::with_capacity(len);
        let mut item = draw_index(rng, &self.initial);
        for t in 0..len {
            let next = draw_index(rng, &self.transition[item]);
            let inter_raw = if t + 1 == len {
                -(1.0 - rng.gen::<f64>()).ln()
            } else {
                let hops = self.item_floor[item].abs_diff(self.item_floor[next]) as f64;
                0.3 + hops + 0.5 * -(1.0 - rng.gen::<f64>()).ln()
            };
            let inter = hundredths(inter_raw).min(cap / 3);
            let scale = cfg.dwell_scales[self.item_category[item] as usize] * r.dwell_factor;
            let intra = hundredths(scale * -(1.0 - rng.gen::<f64>()).ln()).min(cap - inter);
            steps.push(Step::new(item as u32, intra as f64 / 100.0, inter as f64 / 100.0));
            item = next;
        }
        (Trajectory::new(String::new(), steps, context.to_vec()), regime)
    }

    pub fn sample_trajectory<R: Rng + ?Sized>(&self, context: &[f64], rng: &mut R) -> Trajectory {
        self.sample_labeled(context, rng).0
    }

    pub fn generate_dataset<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<TrajectoryDataset> {
        if n == 0 {
            return Err(Error::Argument("dataset size must be >= 1".into()));
        }
        let trajectories = (0..n)
            .map(|i| {
                let ctx = self.sample_context(rng);
                let mut t = self.sample_trajectory(&ctx, rng);
                t.id = format!("t{i:05}");
                t
            })
            .collect();
        TrajectoryDataset::new(trajectories, self.meta())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_item_world() {
        let cfg = WorldConfig {
            item_count: 1,
            ..WorldConfig::default()
        };
        let w = build_world(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(w.transition, vec![vec![1.0]]);
    }

    #[test]
    fn rows_are_stochastic_and_seeded() {
        let cfg = WorldConfig::default();
        let a = build_world(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = build_world(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        for row in &a.transition {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bad_weights_rejected() {
        let mut cfg = WorldConfig::default();
        cfg.regimes[0].weight = 0.7;
        assert!(matches!(build_world(&cfg, &mut ChaCha8Rng::seed_from_u64(0)), Err(Error::Config(_))));
    }

    #[test]
    fn unit_mean_regime_gives_unit_lengths() {
        let cfg = WorldConfig {
            regimes: vec![LengthRegime {
                mean: 1.0,
                weight: 1.0,
                dwell_factor: 1.0,
            }],
            ..WorldConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = build_world(&cfg, &mut rng).unwrap();
        let ds = w.generate_dataset(500, &mut rng).unwrap();
        assert!(ds.trajectories.iter().all(|t| t.len() == 1));
    }
}
