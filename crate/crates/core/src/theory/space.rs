//! Finite trajectory spaces carrying a data law and a generator law.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::metrics::DiscreteDistribution;
use crate::sampling::LengthBuckets;
use crate::trajectory::{
    avg_intra, total_time, traj_semimetric_with, InterConvention, Step, Trajectory,
};
use crate::{Error, Result};

/// Derived variables covered by the transport bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DerivedFn {
    /// Total time with inter summed over the first `T - 1` steps.
    Tot,
    /// Mean intra time.
    Avg,
    /// Visit count.
    Vis,
}

impl DerivedFn {
    pub const ALL: [DerivedFn; 3] = [DerivedFn::Tot, DerivedFn::Avg, DerivedFn::Vis];

    pub fn value(self, t: &Trajectory) -> f64 {
        match self {
            DerivedFn::Tot => total_time(t, InterConvention::ExcludeExit),
            DerivedFn::Avg => avg_intra(t),
            DerivedFn::Vis => t.len() as f64,
        }
    }

    /// Diameter bound `C_f` of the variable's range.
    pub fn range_constant(self, t_max: usize, b: f64) -> f64 {
        match self {
            DerivedFn::Tot => b * t_max as f64,
            DerivedFn::Avg => b,
            DerivedFn::Vis => t_max as f64,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DerivedFn::Tot => "tot",
            DerivedFn::Avg => "avg",
            DerivedFn::Vis => "vis",
        }
    }
}

impl fmt::Display for DerivedFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DerivedFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tot" | "total_time" => Ok(DerivedFn::Tot),
            "avg" | "avg_intra" => Ok(DerivedFn::Avg),
            "vis" | "visit_count" => Ok(DerivedFn::Vis),
            other => Err(Error::Argument(format!("unknown derived function '{other}'"))),
        }
    }
}

/// Transport cost used by the bucket-level checks: the trajectory
/// semi-metric on the exit-dropped view, under which all three
/// [`DerivedFn`]s are 1-Lipschitz.
pub fn theory_cost(x: &Trajectory, y: &Trajectory, b: f64) -> f64 {
    traj_semimetric_with(x, y, b, InterConvention::ExcludeExit).expect("positive bound")
}

/// Enumerated trajectories with integer mass counts for the data law `p`
/// and the generator law `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteTrajectorySpace {
    t_max: usize,
    b: f64,
    trajectories: Vec<Trajectory>,
    p_counts: Vec<u32>,
    q_counts: Vec<u32>,
}

/// Largest combined support (`|supp p| + |supp q|`) accepted for exact
/// transport on the full space.
pub const MAX_SUPPORT: usize = 12;

impl FiniteTrajectorySpace {
    pub fn new(
        t_max: usize,
        b: f64,
        trajectories: Vec<Trajectory>,
        p_counts: Vec<u32>,
        q_counts: Vec<u32>,
    ) -> Result<Self> {
        if t_max == 0 || !(b > 0.0) {
            return Err(Error::Config(format!("invalid bounds t_max={t_max}, b={b}")));
        }
        let n = trajectories.len();
        if p_counts.len() != n || q_counts.len() != n {
            return Err(Error::Argument("mass vectors do not match the enumeration".into()));
        }
        if p_counts.iter().all(|&c| c == 0) || q_counts.iter().all(|&c| c == 0) {
            return Err(Error::Argument("mass vector has no mass".into()));
        }
        for (i, t) in trajectories.iter().enumerate() {
            if t.is_empty() || t.len() > t_max {
                return Err(Error::Validation(format!("trajectory {i} has length {}", t.len())));
            }
            for s in &t.steps {
                let ok = s.intra.is_finite()
                    && s.inter.is_finite()
                    && s.intra >= 0.0
                    && s.inter >= 0.0
                    && s.intra + s.inter <= b;
                if !ok {
                    return Err(Error::Validation(format!("trajectory {i} breaks the time bound")));
                }
            }
        }
        Ok(FiniteTrajectorySpace {
            t_max,
            b,
            trajectories,
            p_counts,
            q_counts,
        })
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn p_counts(&self) -> &[u32] {
        &self.p_counts
    }

    pub fn q_counts(&self) -> &[u32] {
        &self.q_counts
    }

    fn normalise(counts: &[u32]) -> Vec<f64> {
        let total: u32 = counts.iter().sum();
        counts.iter().map(|&c| c as f64 / total as f64).collect()
    }

    pub fn p_masses(&self) -> Vec<f64> {
        Self::normalise(&self.p_counts)
    }

    pub fn q_masses(&self) -> Vec<f64> {
        Self::normalise(&self.q_counts)
    }

    pub fn p(&self) -> DiscreteDistribution {
        DiscreteDistribution::from_weights(&self.p_masses()).expect("validated mass")
    }

    pub fn q(&self) -> DiscreteDistribution {
        DiscreteDistribution::from_weights(&self.q_masses()).expect("validated mass")
    }

    /// Combined support size `|supp p| + |supp q|`.
    pub fn support_size(&self) -> usize {
        self.p_counts.iter().filter(|&&c| c > 0).count()
            + self.q_counts.iter().filter(|&&c| c > 0).count()
    }

    /// Length marginals over bins `0..=t_max`.
    pub fn length_marginals(&self) -> (DiscreteDistribution, DiscreteDistribution) {
        let marg = |m: Vec<f64>| {
            let mut bins = vec![0.0; self.t_max + 1];
            for (t, w) in self.trajectories.iter().zip(m) {
                bins[t.len()] += w;
            }
            DiscreteDistribution::from_weights(&bins).expect("validated mass")
        };
        (marg(self.p_masses()), marg(self.q_masses()))
    }

    pub fn pushforward(&self, f: DerivedFn) -> Vec<f64> {
        self.trajectories.iter().map(|t| f.value(t)).collect()
    }

    /// Quantile length buckets over the enumeration; returns the bucket of
    /// every enumerated trajectory.
    pub fn length_bucket_map(&self, k: usize) -> Result<Vec<usize>> {
        let lengths: Vec<usize> = self.trajectories.iter().map(|t| t.len()).collect();
        let buckets = LengthBuckets::from_lengths(&lengths, k)?;
        let mut map = vec![0; lengths.len()];
        for (k, members) in buckets.buckets.iter().enumerate() {
            for &i in members {
                map[i] = k;
            }
        }
        Ok(map)
    }

    /// Random space per `params`; see [`SpaceParams`].
    pub fn random<R: Rng + ?Sized>(rng: &mut R, params: &SpaceParams) -> Result<Self> {
        params.validate()?;
        let t_max = rng.gen_range(1..=params.t_max_ceiling);
        let b = rng.gen_range(2..=params.b_ceiling) as f64;
        let n = rng.gen_range(2..=params.max_trajectories);
        let grid = params.time_grid_max;
        let trajectories: Vec<Trajectory> = (0..n)
            .map(|_| {
                let len = rng.gen_range(1..=t_max);
                let steps = (0..len)
                    .map(|_| loop {
                        let intra = rng.gen_range(0..=grid) as f64;
                        let inter = rng.gen_range(0..=grid) as f64;
                        if intra + inter <= b {
                            break Step::new(rng.gen_range(0..4), intra, inter);
                        }
                    })
                    .collect();
                Trajectory::from_steps(steps)
            })
            .collect();
        let total = params.mass_total;
        let p_counts = random_composition(rng, total, n);
        let q_counts = match rng.gen_range(0..4) {
            0 => p_counts.clone(),
            1 => {
                let mut q = p_counts.clone();
                let from = (0..n).find(|&i| q[i] > 0).expect("positive total");
                q[from] -= 1;
                q[rng.gen_range(0..n)] += 1;
                q
            }
            _ => random_composition(rng, total, n),
        };
        FiniteTrajectorySpace::new(t_max, b, trajectories, p_counts, q_counts)
    }

    /// Random space whose bucket weights agree between `p` and `q`; the
    /// generator law only redistributes mass inside each bucket.
    pub fn random_matched_buckets<R: Rng + ?Sized>(
        rng: &mut R,
        params: &SpaceParams,
        k: usize,
    ) -> Result<(Self, Vec<usize>)> {
        let base = Self::random(rng, params)?;
        let map = base.length_bucket_map(k)?;
        let buckets = map.iter().copied().max().unwrap_or(0) + 1;
        let mut q = vec![0u32; base.len()];
        for bucket in 0..buckets {
            let members: Vec<usize> = (0..base.len()).filter(|&i| map[i] == bucket).collect();
            let mass: u32 = members.iter().map(|&i| base.p_counts[i]).sum();
            for _ in 0..mass {
                q[members[rng.gen_range(0..members.len())]] += 1;
            }
        }
        let space = FiniteTrajectorySpace::new(base.t_max, base.b, base.trajectories, base.p_counts, q)?;
        Ok((space, map))
    }
}

fn random_composition<R: Rng + ?Sized>(rng: &mut R, total: u32, n: usize) -> Vec<u32> {
    let mut counts = vec![0u32; n];
    for _ in 0..total {
        counts[rng.gen_range(0..n)] += 1;
    }
    counts
}

/// Shape of randomly drawn spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceParams {
    pub t_max_ceiling: usize,
    pub b_ceiling: u32,
    pub max_trajectories: usize,
    /// Each law puts `mass_total` unit counts on the enumeration.
    pub mass_total: u32,
    /// Times are drawn from `{0, 1, ..., time_grid_max}`.
    pub time_grid_max: u32,
}

impl Default for SpaceParams {
    fn default() -> Self {
        SpaceParams {
            t_max_ceiling: 4,
            b_ceiling: 10,
            max_trajectories: 6,
            mass_total: 12,
            time_grid_max: 2,
        }
    }
}

impl SpaceParams {
    pub fn validate(&self) -> Result<()> {
        if self.t_max_ceiling < 1 {
            return Err(Error::Config("t_max ceiling must be >= 1".into()));
        }
        if self.b_ceiling < 2 {
            return Err(Error::Config("b ceiling must be >= 2".into()));
        }
        if self.max_trajectories < 2 || 2 * self.max_trajectories > MAX_SUPPORT {
            return Err(Error::Config(format!(
                "trajectory count must lie in 2..={}",
                MAX_SUPPORT / 2
            )));
        }
        if self.mass_total < 1 {
            return Err(Error::Config("mass total must be >= 1".into()));
        }
        Ok(())
    }
}
