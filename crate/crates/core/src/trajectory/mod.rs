//! Trajectories, their derived variables and the trajectory semi-metric.

mod derived;
mod io;

pub use derived::{
    avg_intra, evaluate_derived, total_inter, total_intra, total_time, DerivedValue, DerivedVariable,
    InterConvention,
};
pub use io::{load_dataset, read_dataset, write_dataset, DatasetHeader};

use crate::{Error, Result};

/// One visit: the item id, the dwell time at the item and the transit time
/// to whatever comes next.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub item: u32,
    pub intra: f64,
    pub inter: f64,
}

impl Step {
    pub fn new(item: u32, intra: f64, inter: f64) -> Self {
        Step { item, intra, inter }
    }
}

/// Fixed-width context covariates attached to a trajectory.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContextVector(pub Vec<f64>);

impl ContextVector {
    pub fn width(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// A variable-length visit sequence. The final step's `inter` is the exit
/// walk; whether it counts towards total inter time depends on the
/// [`InterConvention`] used.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: String,
    pub steps: Vec<Step>,
    pub context: ContextVector,
}

impl Trajectory {
    pub fn new(id: impl Into<String>, steps: Vec<Step>, context: Vec<f64>) -> Self {
        Trajectory {
            id: id.into(),
            steps,
            context: ContextVector(context),
        }
    }

    /// Trajectory with an empty id and context; handy in tests and sweeps.
    pub fn from_steps(steps: Vec<Step>) -> Self {
        Trajectory::new("", steps, Vec::new())
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// The final step's transit time, i.e. the walk out after the last visit.
    pub fn exit_walk(&self) -> Option<f64> {
        self.steps.last().map(|s| s.inter)
    }

    /// Copy of this trajectory with the exit walk zeroed. Under the
    /// [`InterConvention::ExcludeExit`] reading, totals and semi-metric
    /// distances are those of this view.
    pub fn without_exit_walk(&self) -> Trajectory {
        let mut t = self.clone();
        if let Some(last) = t.steps.last_mut() {
            last.inter = 0.0;
        }
        t
    }

    pub fn max_step_total(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| s.intra + s.inter)
            .fold(0.0, f64::max)
    }
}

/// Dataset-level constants shared by every trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub t_max: usize,
    pub b_bound: f64,
    pub item_count: usize,
    /// Category id per item, indexed by item id.
    pub categories: Option<Vec<u32>>,
    /// Floor id per item, indexed by item id.
    pub floors: Option<Vec<u32>>,
    /// Precomputed neighbourhood features per item (hop distances, neighbour
    /// category shares and the like).
    pub item_features: Option<Vec<Vec<f64>>>,
}

impl DatasetMeta {
    pub fn new(t_max: usize, b_bound: f64, item_count: usize) -> Self {
        DatasetMeta {
            t_max,
            b_bound,
            item_count,
            categories: None,
            floors: None,
            item_features: None,
        }
    }

    pub fn category_count(&self) -> Option<usize> {
        self.categories
            .as_ref()
            .map(|c| c.iter().map(|&v| v as usize + 1).max().unwrap_or(0))
    }

    pub fn floor_count(&self) -> Option<usize> {
        self.floors
            .as_ref()
            .map(|c| c.iter().map(|&v| v as usize + 1).max().unwrap_or(0))
    }

    /// Check one trajectory against the declared bounds.
    pub fn validate(&self, traj: &Trajectory) -> Result<()> {
        if traj.steps.is_empty() {
            return Err(Error::Validation(format!(
                "trajectory '{}' has no steps",
                traj.id
            )));
        }
        if traj.len() > self.t_max {
            return Err(Error::Validation(format!(
                "trajectory '{}' has length {} > t_max {}",
                traj.id,
                traj.len(),
                self.t_max
            )));
        }
        for (t, s) in traj.steps.iter().enumerate() {
            if !(s.intra.is_finite() && s.intra >= 0.0) {
                return Err(Error::Validation(format!(
                    "trajectory '{}' step {}: field 'intra' must be finite and >= 0, got {}",
                    traj.id, t, s.intra
                )));
            }
            if !(s.inter.is_finite() && s.inter >= 0.0) {
                return Err(Error::Validation(format!(
                    "trajectory '{}' step {}: field 'inter' must be finite and >= 0, got {}",
                    traj.id, t, s.inter
                )));
            }
            if s.intra + s.inter > self.b_bound {
                return Err(Error::Validation(format!(
                    "trajectory '{}' step {}: intra + inter = {} exceeds b_bound {}",
                    traj.id,
                    t,
                    s.intra + s.inter,
                    self.b_bound
                )));
            }
            if s.item as usize >= self.item_count {
                return Err(Error::Validation(format!(
                    "trajectory '{}' step {}: unknown item id {} (item_count {})",
                    traj.id, t, s.item, self.item_count
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub trajectories: Vec<Trajectory>,
    pub meta: DatasetMeta,
}

impl TrajectoryDataset {
    /// Builds a dataset and checks every invariant. Context width must be
    /// constant and the item maps, when present, must cover every item.
    pub fn new(trajectories: Vec<Trajectory>, meta: DatasetMeta) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::Validation("no trajectories".into()));
        }
        if meta.t_max == 0 {
            return Err(Error::Validation("t_max must be positive".into()));
        }
        if !(meta.b_bound > 0.0 && meta.b_bound.is_finite()) {
            return Err(Error::Validation("b_bound must be positive".into()));
        }
        if meta.item_count == 0 {
            return Err(Error::Validation("item_count must be positive".into()));
        }
        for (name, map) in [("categories", &meta.categories), ("floors", &meta.floors)] {
            if let Some(m) = map {
                if m.len() != meta.item_count {
                    return Err(Error::Validation(format!(
                        "{name} map covers {} items, expected {}",
                        m.len(),
                        meta.item_count
                    )));
                }
            }
        }
        if let Some(f) = &meta.item_features {
            if f.len() != meta.item_count {
                return Err(Error::Validation(format!(
                    "item_features covers {} items, expected {}",
                    f.len(),
                    meta.item_count
                )));
            }
            let w = f.first().map(Vec::len).unwrap_or(0);
            if f.iter().any(|r| r.len() != w) {
                return Err(Error::Validation("item_features rows differ in width".into()));
            }
        }
        let width = trajectories[0].context.width();
        for t in &trajectories {
            if t.context.width() != width {
                return Err(Error::Validation(format!(
                    "trajectory '{}' has context width {}, expected {}",
                    t.id,
                    t.context.width(),
                    width
                )));
            }
            meta.validate(t)?;
        }
        Ok(TrajectoryDataset { trajectories, meta })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn context_width(&self) -> usize {
        self.trajectories[0].context.width()
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.trajectories.iter().map(Trajectory::len).collect()
    }

    /// Sub-dataset over the given indices, sharing the metadata.
    pub fn subset(&self, indices: &[usize]) -> Result<TrajectoryDataset> {
        let trajectories = indices
            .iter()
            .map(|&i| self.trajectories[i].clone())
            .collect();
        TrajectoryDataset::new(trajectories, self.meta.clone())
    }
}

/// Trajectory semi-metric: matched-step absolute time differences plus `b`
/// per unit of length gap.
pub fn traj_semimetric(x: &Trajectory, y: &Trajectory, b: f64) -> Result<f64> {
    if !(b > 0.0) {
        return Err(Error::Config(format!("semi-metric bound must be > 0, got {b}")));
    }
    Ok(semimetric_unchecked(&x.steps, &y.steps, b))
}

/// Same as [`traj_semimetric`], evaluated on the view selected by `conv`.
pub fn traj_semimetric_with(
    x: &Trajectory,
    y: &Trajectory,
    b: f64,
    conv: InterConvention,
) -> Result<f64> {
    match conv {
        InterConvention::AllSteps => traj_semimetric(x, y, b),
        InterConvention::ExcludeExit => {
            traj_semimetric(&x.without_exit_walk(), &y.without_exit_walk(), b)
        }
    }
}

pub(crate) fn semimetric_unchecked(x: &[Step], y: &[Step], b: f64) -> f64 {
    let matched: f64 = x
        .iter()
        .zip(y)
        .map(|(s, t)| (s.intra - t.intra).abs() + (s.inter - t.inter).abs())
        .sum();
    matched + b * x.len().abs_diff(y.len()) as f64
}
