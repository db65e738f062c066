//! The derived-variable closeness bound and its supporting lemmas.

use std::f64::consts::SQRT_2;

use crate::metrics::{js_divergence, tv_discrete};
use crate::trajectory::Trajectory;
use crate::{Error, Result};

use super::ot::{exact_w1_discrete_line, w1_on_points};
use super::space::{DerivedFn, FiniteTrajectorySpace};

/// Tolerance for every inequality certified in this module.
pub const CERT_TOL: f64 = 1e-9;

/// Pinsker-type constant in `TV <= C_JS * sqrt(JS)`.
pub const C_JS: f64 = SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    pub t_max: usize,
    pub b: f64,
    pub eps_intra: f64,
    pub eps_inter: f64,
    pub delta: f64,
    pub c_js: f64,
}

impl BoundInputs {
    pub fn new(t_max: usize, b: f64, eps_intra: f64, eps_inter: f64, delta: f64) -> Self {
        BoundInputs {
            t_max,
            b,
            eps_intra,
            eps_inter,
            delta,
            c_js: C_JS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [self.eps_intra, self.eps_inter, self.delta];
        if self.t_max == 0 || !(self.b > 0.0) || !(self.c_js > 0.0) {
            return Err(Error::Argument("t_max, b and c_js must be positive".into()));
        }
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Argument("epsilons and delta must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Right-hand side of the closeness bound for `f`.
pub fn transport_bound(f: DerivedFn, inputs: &BoundInputs, tv_length: f64) -> Result<f64> {
    inputs.validate()?;
    let t = inputs.t_max as f64;
    let divergence = inputs.b * t * inputs.c_js * inputs.delta.sqrt();
    Ok(match f {
        DerivedFn::Tot => t * (inputs.eps_intra + inputs.eps_inter) + divergence,
        DerivedFn::Avg => inputs.eps_intra + divergence,
        DerivedFn::Vis => {
            if !(0.0..=1.0).contains(&tv_length) {
                return Err(Error::Argument(format!("tv_length {tv_length} outside [0,1]")));
            }
            2.0 * t * tv_length
        }
    })
}

/// A coupling of `p` and `q` as weighted index pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub pairs: Vec<(usize, usize, f64)>,
}

impl Coupling {
    pub fn expect<F: Fn(usize, usize) -> f64>(&self, g: F) -> f64 {
        self.pairs.iter().map(|&(i, j, w)| w * g(i, j)).sum()
    }
}

/// Maximal coupling of the length marginals. Inside each length class the
/// shared mass is paired comonotonically after sorting both sides on `Tot`;
/// the residual mass (length mismatches) is coupled independently.
pub fn matched_tail_coupling(space: &FiniteTrajectorySpace) -> Coupling {
    let (p, q) = (space.p_masses(), space.q_masses());
    let trajs = space.trajectories();
    let tot = space.pushforward(DerivedFn::Tot);
    let mut pairs = Vec::new();
    let mut rp = vec![0.0; p.len()];
    let mut rq = vec![0.0; q.len()];
    for len in 1..=space.t_max() {
        let class: Vec<usize> = (0..trajs.len()).filter(|&i| trajs[i].len() == len).collect();
        let pl: f64 = class.iter().map(|&i| p[i]).sum();
        let ql: f64 = class.iter().map(|&i| q[i]).sum();
        let shared = pl.min(ql);
        let mut sorted = class.clone();
        sorted.sort_by(|&a, &b| tot[a].total_cmp(&tot[b]).then(a.cmp(&b)));
        let take = |m: &[f64], total: f64| -> Vec<(usize, f64)> {
            sorted
                .iter()
                .map(|&i| (i, if total > 0.0 { m[i] * shared / total } else { 0.0 }))
                .filter(|&(_, w)| w > 0.0)
                .collect()
        };
        let (mut a, mut b) = (take(&p, pl), take(&q, ql));
        for &i in &class {
            if pl > 0.0 {
                rp[i] = p[i] * (1.0 - shared / pl);
            }
            if ql > 0.0 {
                rq[i] = q[i] * (1.0 - shared / ql);
            }
        }
        // North-west corner rule on the sorted lists.
        let (mut x, mut y) = (0, 0);
        while x < a.len() && y < b.len() {
            let w = a[x].1.min(b[y].1);
            pairs.push((a[x].0, b[y].0, w));
            a[x].1 -= w;
            b[y].1 -= w;
            if a[x].1 <= 1e-15 {
                x += 1;
            }
            if b[y].1 <= 1e-15 {
                y += 1;
            }
        }
    }
    let residual: f64 = rp.iter().map(|v| v.max(0.0)).sum();
    if residual > 1e-15 {
        for (i, &wi) in rp.iter().enumerate().filter(|(_, w)| **w > 1e-15) {
            for (j, &wj) in rq.iter().enumerate().filter(|(_, w)| **w > 1e-15) {
                pairs.push((i, j, wi * wj / residual));
            }
        }
    }
    Coupling { pairs }
}

fn matched_sum<F: Fn(&crate::trajectory::Step) -> f64>(x: &Trajectory, y: &Trajectory, g: F) -> f64 {
    x.steps.iter().zip(&y.steps).map(|(s, t)| (g(s) - g(t)).abs()).sum()
}

/// Per-step L1 errors under a coupling:
/// `E_π[(1/T_min) Σ_{t <= T_min} |Δ|]` for intra and inter times.
pub fn step_errors(space: &FiniteTrajectorySpace, pi: &Coupling) -> (f64, f64) {
    let t = space.trajectories();
    let per_step = |g: fn(&crate::trajectory::Step) -> f64| {
        pi.expect(|i, j| {
            let tmin = t[i].len().min(t[j].len()) as f64;
            matched_sum(&t[i], &t[j], g) / tmin
        })
    };
    (per_step(|s| s.intra), per_step(|s| s.inter))
}

/// One certified inequality `lhs <= rhs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Check {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl Check {
    pub fn le(lhs: f64, rhs: f64) -> Self {
        Check {
            lhs,
            rhs,
            holds: lhs <= rhs + CERT_TOL,
        }
    }

    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certification {
    pub f: DerivedFn,
    pub check: Check,
    pub inputs: BoundInputs,
    pub tv_length: f64,
}

/// Quantities measured once per space and shared by the bound checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceMeasurements {
    pub coupling: Coupling,
    pub inputs: BoundInputs,
    pub tv_length: f64,
    pub tv_full: f64,
}

pub fn measure(space: &FiniteTrajectorySpace) -> Result<SpaceMeasurements> {
    let coupling = matched_tail_coupling(space);
    let (eps_intra, eps_inter) = step_errors(space, &coupling);
    let delta = js_divergence(&space.p(), &space.q())?;
    let (lp, lq) = space.length_marginals();
    let tv_length = tv_discrete(&lp, &lq)?.min(1.0);
    let tv_full = tv_discrete(&space.p(), &space.q())?;
    Ok(SpaceMeasurements {
        coupling,
        inputs: BoundInputs::new(space.t_max(), space.b(), eps_intra, eps_inter, delta),
        tv_length,
        tv_full,
    })
}

/// W1 between the pushforwards of `p` and `q` under `f`.
pub fn pushforward_w1(space: &FiniteTrajectorySpace, f: DerivedFn) -> Result<f64> {
    if f == DerivedFn::Vis {
        let (lp, lq) = space.length_marginals();
        return exact_w1_discrete_line(&lp, &lq);
    }
    Ok(w1_on_points(&space.pushforward(f), &space.p_masses(), &space.q_masses()))
}

/// Measures the loss levels of `space`, evaluates the bound and compares it
/// with the exact pushforward distance.
pub fn certify_bound(space: &FiniteTrajectorySpace, f: DerivedFn) -> Result<Certification> {
    let m = measure(space)?;
    certify_with(space, f, &m)
}

pub fn certify_with(
    space: &FiniteTrajectorySpace,
    f: DerivedFn,
    m: &SpaceMeasurements,
) -> Result<Certification> {
    let lhs = pushforward_w1(space, f)?;
    let rhs = transport_bound(f, &m.inputs, m.tv_length)?;
    Ok(Certification {
        f,
        check: Check::le(lhs, rhs),
        inputs: m.inputs,
        tv_length: m.tv_length,
    })
}

/// `E_π[Σ matched |Δintra|] <= T_max · ε_intra`.
pub fn check_matched_step(space: &FiniteTrajectorySpace, m: &SpaceMeasurements) -> Check {
    let t = space.trajectories();
    let lhs = m.coupling.expect(|i, j| matched_sum(&t[i], &t[j], |s| s.intra));
    Check::le(lhs, space.t_max() as f64 * m.inputs.eps_intra)
}

/// `E_π[B |T - T̂|] <= B · T_max · TV(length marginals)` and
/// `B · T_max · TV(length marginals) <= B · T_max · C_JS · sqrt(δ)`.
pub fn check_length_tail(space: &FiniteTrajectorySpace, m: &SpaceMeasurements) -> (Check, Check) {
    let t = space.trajectories();
    let b = space.b();
    let scale = b * space.t_max() as f64;
    let tail = m.coupling.expect(|i, j| b * t[i].len().abs_diff(t[j].len()) as f64);
    (
        Check::le(tail, scale * m.tv_length),
        Check::le(scale * m.tv_length, scale * m.inputs.c_js * m.inputs.delta.sqrt()),
    )
}
