//! Bucket-level statements: bucket-only critics, the mixture decomposition,
//! the length-marginal lower bound and the within-bucket critic dual.

use crate::metrics::{tv_discrete, DiscreteDistribution};
use crate::{Error, Result};

use super::bounds::{pushforward_w1, Check, CERT_TOL};
use super::ot::exact_w1_counts;
use super::space::{theory_cost, DerivedFn, FiniteTrajectorySpace};
use super::exact_w1_general;

fn bucket_count(space: &FiniteTrajectorySpace, map: &[usize]) -> Result<usize> {
    if map.len() != space.len() {
        return Err(Error::Argument("bucket map does not cover the enumeration".into()));
    }
    Ok(map.iter().copied().max().map_or(0, |m| m + 1))
}

fn bucket_weights(counts: &[u32], map: &[usize], k: usize) -> Vec<f64> {
    let mut w = vec![0.0; k];
    for (&c, &b) in counts.iter().zip(map) {
        w[b] += c as f64;
    }
    let total: f64 = w.iter().sum();
    w.iter().map(|v| v / total).collect()
}

fn restrict(counts: &[u32], map: &[usize], bucket: usize) -> Vec<u32> {
    counts
        .iter()
        .zip(map)
        .map(|(&c, &b)| if b == bucket { c } else { 0 })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullspaceGap {
    pub max_gap: f64,
    /// Buckets where either conditional law is undefined.
    pub skipped: usize,
}

/// Largest within-bucket mean gap of the bucket-only critic `x -> a[K(x)]`.
pub fn check_nullspace(space: &FiniteTrajectorySpace, map: &[usize], a: &[f64]) -> Result<NullspaceGap> {
    let k = bucket_count(space, map)?;
    if a.len() < k {
        return Err(Error::Argument(format!("critic has {} values for {k} buckets", a.len())));
    }
    let (p, q) = (space.p_masses(), space.q_masses());
    let cond_mean = |m: &[f64], bucket: usize| -> Option<f64> {
        let mass: f64 = (0..m.len()).filter(|&i| map[i] == bucket).map(|i| m[i]).sum();
        (mass > 0.0).then(|| {
            (0..m.len())
                .filter(|&i| map[i] == bucket)
                .map(|i| m[i] * a[map[i]])
                .sum::<f64>()
                / mass
        })
    };
    let mut out = NullspaceGap {
        max_gap: 0.0,
        skipped: 0,
    };
    for bucket in 0..k {
        match (cond_mean(&p, bucket), cond_mean(&q, bucket)) {
            (Some(ep), Some(eq)) => out.max_gap = out.max_gap.max((ep - eq).abs()),
            _ => out.skipped += 1,
        }
    }
    Ok(out)
}

/// Exact within-bucket W1 under [`theory_cost`]; `None` when either side
/// has no mass in the bucket.
pub fn within_bucket_w1(space: &FiniteTrajectorySpace, map: &[usize], bucket: usize) -> Result<Option<f64>> {
    let p = restrict(space.p_counts(), map, bucket);
    let q = restrict(space.q_counts(), map, bucket);
    if p.iter().all(|&c| c == 0) || q.iter().all(|&c| c == 0) {
        return Ok(None);
    }
    let t = space.trajectories();
    let b = space.b();
    exact_w1_counts(&p, &q, |i, j| theory_cost(&t[i], &t[j], b)).map(Some)
}

/// `W1(f#p, f#q) <= Σ_k w_k W1_k + C_f · TV(w, ŵ)`.
pub fn check_mixture_decomposition(
    space: &FiniteTrajectorySpace,
    map: &[usize],
    f: DerivedFn,
) -> Result<Check> {
    let k = bucket_count(space, map)?;
    let w = bucket_weights(space.p_counts(), map, k);
    let w_hat = bucket_weights(space.q_counts(), map, k);
    let mut within = 0.0;
    for bucket in 0..k {
        if let Some(d) = within_bucket_w1(space, map, bucket)? {
            within += w[bucket] * d;
        }
    }
    let tv = tv_discrete(
        &DiscreteDistribution::from_weights(&w)?,
        &DiscreteDistribution::from_weights(&w_hat)?,
    )?;
    let lhs = pushforward_w1(space, f)?;
    Ok(Check::le(lhs, within + f.range_constant(space.t_max(), space.b()) * tv))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowerBoundCheck {
    pub w1_global: f64,
    pub lower: f64,
    pub holds: bool,
}

/// Global W1 under the trajectory semi-metric against `B · TV(w, ŵ)`.
pub fn check_length_lower_bound(space: &FiniteTrajectorySpace, map: &[usize]) -> Result<LowerBoundCheck> {
    let k = bucket_count(space, map)?;
    let w = DiscreteDistribution::from_weights(&bucket_weights(space.p_counts(), map, k))?;
    let w_hat = DiscreteDistribution::from_weights(&bucket_weights(space.q_counts(), map, k))?;
    let lower = space.b() * tv_discrete(&w, &w_hat)?;
    let b = space.b();
    let w1_global = exact_w1_general(space, |x, y| theory_cost(x, y, b))?;
    Ok(LowerBoundCheck {
        w1_global,
        lower,
        holds: w1_global >= lower - CERT_TOL,
    })
}

/// Largest point count accepted by [`ipm_vertex_sup`] after merging.
pub const MAX_IPM_POINTS: usize = 7;

/// `sup { Σ_i (p_i - q_i) φ_i : |φ_i - φ_j| <= d_ij }` over a finite
/// pseudo-metric, by enumerating the vertices of the Lipschitz polytope.
/// Each vertex makes the constraints on some spanning tree tight, so every
/// labelled tree (Prüfer codes) is tried with every edge orientation.
pub fn ipm_vertex_sup(dist: &[Vec<f64>], p: &[f64], q: &[f64]) -> Result<f64> {
    // Points at distance zero must share a critic value: merge them.
    let n0 = dist.len();
    let mut rep: Vec<usize> = (0..n0).collect();
    for i in 0..n0 {
        for j in 0..i {
            if rep[j] == j && dist[i][j] == 0.0 {
                rep[i] = j;
                break;
            }
        }
    }
    let reps: Vec<usize> = (0..n0).filter(|&i| rep[i] == i).collect();
    let n = reps.len();
    if n > MAX_IPM_POINTS {
        return Err(Error::Capacity(format!("{n} points exceed the vertex enumeration limit")));
    }
    let mut mass = vec![0.0; n];
    for i in 0..n0 {
        let r = reps.iter().position(|&x| x == rep[i]).expect("representative");
        mass[r] += p[i] - q[i];
    }
    let d = |a: usize, b: usize| dist[reps[a]][reps[b]];
    if n == 1 {
        return Ok(0.0);
    }
    let mut best = f64::NEG_INFINITY;
    let codes = n.pow((n - 2) as u32);
    for code in 0..codes {
        let edges = prufer_edges(code, n);
        let adj = {
            let mut adj = vec![Vec::new(); n];
            for (e, &(a, b)) in edges.iter().enumerate() {
                adj[a].push((b, e));
                adj[b].push((a, e));
            }
            adj
        };
        for signs in 0u32..(1 << (n - 1)) {
            let mut phi = vec![f64::NAN; n];
            phi[0] = 0.0;
            let mut stack = vec![0usize];
            while let Some(u) = stack.pop() {
                for &(v, e) in &adj[u] {
                    if phi[v].is_nan() {
                        let s = if signs >> e & 1 == 1 { 1.0 } else { -1.0 };
                        phi[v] = phi[u] + s * d(u, v);
                        stack.push(v);
                    }
                }
            }
            let feasible = (0..n).all(|a| (0..a).all(|b| (phi[a] - phi[b]).abs() <= d(a, b) + 1e-12));
            if feasible {
                let value: f64 = mass.iter().zip(&phi).map(|(m, f)| m * f).sum();
                best = best.max(value);
            }
        }
    }
    Ok(best)
}

fn prufer_edges(mut code: usize, n: usize) -> Vec<(usize, usize)> {
    let mut seq = Vec::with_capacity(n - 2);
    for _ in 0..n - 2 {
        seq.push(code % n);
        code /= n;
    }
    let mut degree = vec![1usize; n];
    for &s in &seq {
        degree[s] += 1;
    }
    let mut edges = Vec::with_capacity(n - 1);
    for &s in &seq {
        let leaf = (0..n).find(|&i| degree[i] == 1).expect("leaf exists");
        edges.push((leaf, s));
        degree[leaf] -= 1;
        degree[s] -= 1;
    }
    let rest: Vec<usize> = (0..n).filter(|&i| degree[i] == 1).collect();
    edges.push((rest[0], rest[1]));
    edges
}

/// Primal `Σ_k w_k W1_k` against the dual sup over bucket-separable
/// 1-Lipschitz critics. Requires matched bucket weights. Returns
/// `(primal, dual)`.
pub fn bucket_ipm_check(space: &FiniteTrajectorySpace, map: &[usize]) -> Result<(f64, f64)> {
    let k = bucket_count(space, map)?;
    let w = bucket_weights(space.p_counts(), map, k);
    let w_hat = bucket_weights(space.q_counts(), map, k);
    if w.iter().zip(&w_hat).any(|(a, b)| (a - b).abs() > 1e-12) {
        return Err(Error::Argument("bucket weights of p and q differ".into()));
    }
    let t = space.trajectories();
    let b = space.b();
    let (mut primal, mut dual) = (0.0, 0.0);
    for bucket in 0..k {
        let Some(w1) = within_bucket_w1(space, map, bucket)? else {
            continue;
        };
        let members: Vec<usize> = (0..space.len()).filter(|&i| map[i] == bucket).collect();
        let pc = restrict(space.p_counts(), map, bucket);
        let qc = restrict(space.q_counts(), map, bucket);
        let (tp, tq) = (pc.iter().sum::<u32>() as f64, qc.iter().sum::<u32>() as f64);
        let dist: Vec<Vec<f64>> = members
            .iter()
            .map(|&i| members.iter().map(|&j| theory_cost(&t[i], &t[j], b)).collect())
            .collect();
        let pm: Vec<f64> = members.iter().map(|&i| pc[i] as f64 / tp).collect();
        let qm: Vec<f64> = members.iter().map(|&i| qc[i] as f64 / tq).collect();
        primal += w[bucket] * w1;
        dual += w[bucket] * ipm_vertex_sup(&dist, &pm, &qm)?;
    }
    Ok((primal, dual))
}
