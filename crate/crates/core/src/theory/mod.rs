//! Numerical certification of the transport bounds relating trajectory-level
//! divergence to derived-variable distances, on small finite spaces.

pub mod bounds;
pub mod buckets;
pub mod ot;
pub mod space;
pub mod sweep;

pub use bounds::{
    certify_bound, check_length_tail, check_matched_step, matched_tail_coupling, measure,
    transport_bound, BoundInputs, Certification, Check, Coupling, SpaceMeasurements, CERT_TOL, C_JS,
};
pub use buckets::{
    bucket_ipm_check, check_length_lower_bound, check_mixture_decomposition, check_nullspace,
    ipm_vertex_sup, LowerBoundCheck, NullspaceGap,
};
pub use ot::{exact_w1_counts, exact_w1_discrete_line, w1_on_points};
pub use space::{theory_cost, DerivedFn, FiniteTrajectorySpace, SpaceParams, MAX_SUPPORT};
pub use sweep::{run_sweep, SweepConfig, SweepReport, SweepRow};

use crate::{Error, Result};

/// Exact W1 between `p` and `q` on `space` under `metric`.
pub fn exact_w1_general<F>(space: &FiniteTrajectorySpace, metric: F) -> Result<f64>
where
    F: Fn(&crate::trajectory::Trajectory, &crate::trajectory::Trajectory) -> f64,
{
    if space.support_size() > MAX_SUPPORT {
        return Err(Error::Capacity(format!(
            "combined support {} exceeds {MAX_SUPPORT}",
            space.support_size()
        )));
    }
    let t = space.trajectories();
    exact_w1_counts(space.p_counts(), space.q_counts(), |i, j| metric(&t[i], &t[j]))
}
