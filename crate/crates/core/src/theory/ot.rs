//! Exact optimal transport on small finite supports.

use crate::metrics::DiscreteDistribution;
use crate::{Error, Result};

/// Largest common atom count accepted by [`exact_w1_counts`].
pub const MAX_ATOMS: u64 = 256;

/// Assignments up to this size are solved by enumerating permutations.
pub const EXHAUSTIVE_LIMIT: usize = 8;

fn check_square(cost: &[Vec<f64>]) -> usize {
    let n = cost.len();
    assert!(cost.iter().all(|row| row.len() == n), "cost matrix must be square");
    n
}

/// Minimum-cost perfect matching by trying every permutation.
/// Returns the cost and `assign[row] = col`.
pub fn assignment_exhaustive(cost: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let n = check_square(cost);
    let mut best = (f64::INFINITY, (0..n).collect::<Vec<_>>());
    let mut perm: Vec<usize> = (0..n).collect();
    fn recurse(k: usize, acc: f64, perm: &mut [usize], cost: &[Vec<f64>], best: &mut (f64, Vec<usize>)) {
        let n = perm.len();
        if k == n {
            if acc < best.0 {
                best.0 = acc;
                best.1.copy_from_slice(perm);
            }
            return;
        }
        for i in k..n {
            perm.swap(k, i);
            let c = acc + cost[k][perm[k]];
            recurse(k + 1, c, perm, cost, best);
            perm.swap(k, i);
        }
    }
    if n == 0 {
        return (0.0, Vec::new());
    }
    recurse(0, 0.0, &mut perm, cost, &mut best);
    best
}

/// Minimum-cost perfect matching by the Hungarian method with potentials,
/// O(n^3). Returns the cost and `assign[row] = col`.
pub fn assignment_hungarian(cost: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let n = check_square(cost);
    if n == 0 {
        return (0.0, Vec::new());
    }
    // 1-based rows/cols; column 0 is the virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        assign[row_of[j] - 1] = j - 1;
    }
    let total = assign.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    (total, assign)
}

/// Dispatches on size between the two assignment solvers.
pub fn min_cost_matching(cost: &[Vec<f64>]) -> f64 {
    if cost.len() <= EXHAUSTIVE_LIMIT {
        assignment_exhaustive(cost).0
    } else {
        assignment_hungarian(cost).0
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Exact W1 between two rational distributions given as integer counts.
/// Each side is expanded into `lcm(total_p, total_q)` equal atoms and the
/// atoms are matched at minimum total cost.
pub fn exact_w1_counts<F>(p: &[u32], q: &[u32], cost: F) -> Result<f64>
where
    F: Fn(usize, usize) -> f64,
{
    let tp: u64 = p.iter().map(|&c| c as u64).sum();
    let tq: u64 = q.iter().map(|&c| c as u64).sum();
    if tp == 0 || tq == 0 {
        return Err(Error::Argument("transport between empty mass vectors".into()));
    }
    let atoms = tp / gcd(tp, tq) * tq;
    if atoms > MAX_ATOMS {
        return Err(Error::Capacity(format!(
            "{atoms} atoms exceeds the exact transport limit of {MAX_ATOMS}"
        )));
    }
    let expand = |counts: &[u32], total: u64| -> Vec<usize> {
        let scale = atoms / total;
        counts
            .iter()
            .enumerate()
            .flat_map(|(i, &c)| std::iter::repeat(i).take((c as u64 * scale) as usize))
            .collect()
    };
    let (ap, aq) = (expand(p, tp), expand(q, tq));
    let matrix: Vec<Vec<f64>> = ap
        .iter()
        .map(|&i| aq.iter().map(|&j| cost(i, j)).collect())
        .collect();
    Ok(min_cost_matching(&matrix) / atoms as f64)
}

/// W1 on the integer line `0..n`: `Σ_{k < n-1} |F_p(k) - F_q(k)|`.
pub fn exact_w1_discrete_line(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
    if p.bins() != q.bins() {
        return Err(Error::Argument(format!(
            "bin count mismatch: {} vs {}",
            p.bins(),
            q.bins()
        )));
    }
    let (fp, fq) = (p.cdf(), q.cdf());
    let n = fp.len();
    Ok(fp[..n - 1]
        .iter()
        .zip(&fq[..n - 1])
        .map(|(a, b)| (a - b).abs())
        .sum())
}

/// W1 between two distributions placed on arbitrary real points:
/// `∫ |F_p - F_q|` over the sorted point grid.
pub fn w1_on_points(points: &[f64], p: &[f64], q: &[f64]) -> f64 {
    assert!(points.len() == p.len() && p.len() == q.len());
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].total_cmp(&points[b]));
    let (mut fp, mut fq, mut total) = (0.0, 0.0, 0.0);
    for w in order.windows(2) {
        fp += p[w[0]];
        fq += q[w[0]];
        total += (fp - fq).abs() * (points[w[1]] - points[w[0]]);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dd(v: &[f64]) -> DiscreteDistribution {
        DiscreteDistribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn line_examples() {
        assert_eq!(exact_w1_discrete_line(&dd(&[0.2, 0.8]), &dd(&[0.2, 0.8])).unwrap(), 0.0);
        assert_eq!(
            exact_w1_discrete_line(&DiscreteDistribution::point(1, 3), &DiscreteDistribution::point(2, 3))
                .unwrap(),
            1.0
        );
        assert_eq!(exact_w1_discrete_line(&dd(&[0.5, 0.0, 0.5]), &dd(&[0.0, 1.0, 0.0])).unwrap(), 1.0);
        assert!(exact_w1_discrete_line(&dd(&[1.0]), &dd(&[0.5, 0.5])).is_err());
    }

    #[test]
    fn counts_match_line_formula() {
        // (0.5, 0, 0.5) vs (0, 1, 0) as counts (1,0,1) and (0,1,0).
        let w = exact_w1_counts(&[1, 0, 1], &[0, 1, 0], |i, j| i.abs_diff(j) as f64).unwrap();
        assert!((w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn point_masses_cost_their_distance() {
        let w = exact_w1_counts(&[3], &[5], |_, _| 2.5).unwrap();
        assert!((w - 2.5).abs() < 1e-12);
    }

    #[test]
    fn three_point_hand_metric() {
        let d = [[0.0, 1.0, 4.0], [1.0, 0.0, 2.0], [4.0, 2.0, 0.0]];
        // p = (1/3,1/3,1/3) vs q = (0,0,1): all mass to point 2 costs (4+2)/3.
        let w = exact_w1_counts(&[1, 1, 1], &[0, 0, 1], |i, j| d[i][j]).unwrap();
        assert!((w - 2.0).abs() < 1e-12);
    }

    #[test]
    fn capacity_limit() {
        let err = exact_w1_counts(&[257], &[256], |_, _| 0.0).unwrap_err();
        assert!(matches!(err, Error::Capacity(_)));
    }

    #[test]
    fn hungarian_agrees_with_exhaustive() {
        let cost = vec![
            vec![4.0, 1.0, 3.0, 2.0],
            vec![2.0, 0.0, 5.0, 3.0],
            vec![3.0, 2.0, 2.0, 4.0],
            vec![1.0, 6.0, 3.0, 5.0],
        ];
        let (a, _) = assignment_exhaustive(&cost);
        let (b, assign) = assignment_hungarian(&cost);
        assert_eq!(a, b);
        let mut seen = assign.clone();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3]);
    }

    #[test]
    fn points_integral() {
        let w = w1_on_points(&[2.0, 0.0, 5.0], &[1.0, 0.0, 0.0], &[0.0, 0.5, 0.5]);
        assert!((w - 2.5).abs() < 1e-12);
    }
}
