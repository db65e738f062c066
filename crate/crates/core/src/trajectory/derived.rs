use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use super::{DatasetMeta, Trajectory};
use crate::{Error, Result};

/// Which transit times count towards total inter time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterConvention {
    /// Sum inter over all `T` steps, exit walk included (reporting).
    AllSteps,
    /// Sum inter over the first `T - 1` steps only (transport bounds).
    ExcludeExit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DerivedVariable {
    TotalTime,
    TotalIntra,
    TotalInter,
    AvgIntra,
    AvgInter,
    VisitCount,
    ItemDiversity,
    CategoryHistogram,
    FloorHistogram,
    TimePerCategory,
}

impl DerivedVariable {
    pub const ALL: [DerivedVariable; 10] = [
        DerivedVariable::TotalTime,
        DerivedVariable::TotalIntra,
        DerivedVariable::TotalInter,
        DerivedVariable::AvgIntra,
        DerivedVariable::AvgInter,
        DerivedVariable::VisitCount,
        DerivedVariable::ItemDiversity,
        DerivedVariable::CategoryHistogram,
        DerivedVariable::FloorHistogram,
        DerivedVariable::TimePerCategory,
    ];

    pub const SCALARS: [DerivedVariable; 7] = [
        DerivedVariable::TotalTime,
        DerivedVariable::TotalIntra,
        DerivedVariable::TotalInter,
        DerivedVariable::AvgIntra,
        DerivedVariable::AvgInter,
        DerivedVariable::VisitCount,
        DerivedVariable::ItemDiversity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DerivedVariable::TotalTime => "total_time",
            DerivedVariable::TotalIntra => "total_intra",
            DerivedVariable::TotalInter => "total_inter",
            DerivedVariable::AvgIntra => "avg_intra",
            DerivedVariable::AvgInter => "avg_inter",
            DerivedVariable::VisitCount => "visit_count",
            DerivedVariable::ItemDiversity => "item_diversity",
            DerivedVariable::CategoryHistogram => "category_histogram",
            DerivedVariable::FloorHistogram => "floor_histogram",
            DerivedVariable::TimePerCategory => "time_per_category",
        }
    }

    pub fn is_histogram(self) -> bool {
        matches!(
            self,
            DerivedVariable::CategoryHistogram
                | DerivedVariable::FloorHistogram
                | DerivedVariable::TimePerCategory
        )
    }
}

impl fmt::Display for DerivedVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DerivedVariable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DerivedVariable::ALL
            .iter()
            .copied()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown derived variable '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DerivedValue {
    Scalar(f64),
    /// Per-bin counts (or intra-time mass), bins in ascending id order.
    Histogram(Vec<f64>),
}

impl DerivedValue {
    pub fn scalar(&self) -> Option<f64> {
        match self {
            DerivedValue::Scalar(v) => Some(*v),
            DerivedValue::Histogram(_) => None,
        }
    }
}

pub fn total_intra(t: &Trajectory) -> f64 {
    t.steps.iter().map(|s| s.intra).sum()
}

pub fn total_inter(t: &Trajectory, conv: InterConvention) -> f64 {
    let n = match conv {
        InterConvention::AllSteps => t.len(),
        InterConvention::ExcludeExit => t.len().saturating_sub(1),
    };
    t.steps[..n].iter().map(|s| s.inter).sum()
}

pub fn total_time(t: &Trajectory, conv: InterConvention) -> f64 {
    total_intra(t) + total_inter(t, conv)
}

pub fn avg_intra(t: &Trajectory) -> f64 {
    total_intra(t) / t.len().max(1) as f64
}

fn histogram_map<'a>(
    map: &'a Option<Vec<u32>>,
    what: &str,
    spec: DerivedVariable,
) -> Result<&'a [u32]> {
    map.as_deref().ok_or_else(|| {
        Error::Config(format!("{spec} needs the dataset's {what} map, which is not declared"))
    })
}

/// Evaluates one derived variable on one trajectory. Total inter time uses the
/// all-steps convention; use [`DerivedVariable`]-specific helpers in
/// [`crate::theory`] for the exit-excluded reading.
pub fn evaluate_derived(
    traj: &Trajectory,
    spec: DerivedVariable,
    meta: &DatasetMeta,
) -> Result<DerivedValue> {
    meta.validate(traj)?;
    let conv = InterConvention::AllSteps;
    let v = match spec {
        DerivedVariable::TotalTime => DerivedValue::Scalar(total_time(traj, conv)),
        DerivedVariable::TotalIntra => DerivedValue::Scalar(total_intra(traj)),
        DerivedVariable::TotalInter => DerivedValue::Scalar(total_inter(traj, conv)),
        DerivedVariable::AvgIntra => DerivedValue::Scalar(avg_intra(traj)),
        DerivedVariable::AvgInter => DerivedValue::Scalar(
            total_inter(traj, conv) / traj.len().saturating_sub(1).max(1) as f64,
        ),
        DerivedVariable::VisitCount => DerivedValue::Scalar(traj.len() as f64),
        DerivedVariable::ItemDiversity => DerivedValue::Scalar(
            traj.steps
                .iter()
                .map(|s| s.item)
                .collect::<BTreeSet<_>>()
                .len() as f64,
        ),
        DerivedVariable::CategoryHistogram
        | DerivedVariable::FloorHistogram
        | DerivedVariable::TimePerCategory => {
            let (map, what) = match spec {
                DerivedVariable::FloorHistogram => (&meta.floors, "floor"),
                _ => (&meta.categories, "category"),
            };
            let map = histogram_map(map, what, spec)?;
            let bins = map.iter().map(|&c| c as usize + 1).max().unwrap_or(0);
            let mut hist = vec![0.0; bins];
            for s in &traj.steps {
                let bin = map[s.item as usize] as usize;
                hist[bin] += if spec == DerivedVariable::TimePerCategory {
                    s.intra
                } else {
                    1.0
                };
            }
            DerivedValue::Histogram(hist)
        }
    };
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::Step;

    fn meta() -> DatasetMeta {
        let mut m = DatasetMeta::new(10, 20.0, 4);
        m.categories = Some(vec![0, 1, 1, 2]);
        m.floors = Some(vec![0, 0, 1, 1]);
        m
    }

    fn traj(steps: &[(u32, f64, f64)]) -> Trajectory {
        Trajectory::from_steps(steps.iter().map(|&(j, a, b)| Step::new(j, a, b)).collect())
    }

    fn scalar(t: &Trajectory, v: DerivedVariable) -> f64 {
        evaluate_derived(t, v, &meta()).unwrap().scalar().unwrap()
    }

    #[test]
    fn single_step_total_time() {
        let t = traj(&[(3, 5.0, 0.0)]);
        assert_eq!(scalar(&t, DerivedVariable::TotalTime), 5.0);
    }

    #[test]
    fn avg_intra_is_mean() {
        let t = traj(&[(1, 3.0, 1.0), (2, 4.0, 2.0)]);
        assert_eq!(scalar(&t, DerivedVariable::AvgIntra), 3.5);
    }

    #[test]
    fn total_time_under_both_conventions() {
        let t = traj(&[(1, 3.0, 1.0), (2, 4.0, 2.0)]);
        // Direct sums over the step list.
        let all: f64 = t.steps.iter().map(|s| s.intra + s.inter).sum();
        let excl: f64 = all - t.steps.last().unwrap().inter;
        assert_eq!(all, 10.0);
        assert_eq!(excl, 8.0);
        assert_eq!(scalar(&t, DerivedVariable::TotalTime), all);
        assert_eq!(total_time(&t, InterConvention::ExcludeExit), excl);
    }

    #[test]
    fn counts_and_averages() {
        let t = traj(&[(1, 3.0, 1.0), (2, 4.0, 2.0), (1, 1.0, 3.0)]);
        assert_eq!(scalar(&t, DerivedVariable::VisitCount), 3.0);
        assert_eq!(scalar(&t, DerivedVariable::ItemDiversity), 2.0);
        assert_eq!(scalar(&t, DerivedVariable::AvgInter), 6.0 / 2.0);
        assert_eq!(scalar(&t, DerivedVariable::TotalInter), 6.0);
        let single = traj(&[(0, 1.0, 4.0)]);
        assert_eq!(scalar(&single, DerivedVariable::AvgInter), 4.0);
    }

    #[test]
    fn histograms() {
        let t = traj(&[(0, 3.0, 1.0), (2, 4.0, 2.0), (1, 1.0, 3.0)]);
        let m = meta();
        assert_eq!(
            evaluate_derived(&t, DerivedVariable::CategoryHistogram, &m).unwrap(),
            DerivedValue::Histogram(vec![1.0, 2.0, 0.0])
        );
        assert_eq!(
            evaluate_derived(&t, DerivedVariable::FloorHistogram, &m).unwrap(),
            DerivedValue::Histogram(vec![2.0, 1.0])
        );
        assert_eq!(
            evaluate_derived(&t, DerivedVariable::TimePerCategory, &m).unwrap(),
            DerivedValue::Histogram(vec![3.0, 5.0, 0.0])
        );
    }

    #[test]
    fn errors() {
        let t = traj(&[(9, 1.0, 1.0)]);
        assert!(matches!(
            evaluate_derived(&t, DerivedVariable::VisitCount, &meta()),
            Err(Error::Validation(_))
        ));
        let ok = traj(&[(0, 1.0, 1.0)]);
        let bare = DatasetMeta::new(10, 20.0, 4);
        assert!(matches!(
            evaluate_derived(&ok, DerivedVariable::FloorHistogram, &bare),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn names_round_trip() {
        for v in DerivedVariable::ALL {
            assert_eq!(v.name().parse::<DerivedVariable>().unwrap(), v);
        }
    }
}
