//! One-dimensional and discrete distribution distances, plus the
//! derived-variable KS report comparing real and generated trajectory sets.

use std::fmt::Write as _;
use std::io::Write;

use crate::trajectory::{evaluate_derived, DatasetMeta, DerivedValue, DerivedVariable, Trajectory};
use crate::{Error, Result};

/// A nonempty multiset of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalSample(Vec<f64>);

impl EmpiricalSample {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Argument("empirical sample is empty".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("non-finite sample value {v}")));
        }
        Ok(EmpiricalSample(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn sorted(&self) -> Vec<f64> {
        let mut v = self.0.clone();
        v.sort_by(f64::total_cmp);
        v
    }
}

/// Probability masses over bins `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution(Vec<f64>);

pub const MASS_TOLERANCE: f64 = 1e-12;

impl DiscreteDistribution {
    pub fn new(masses: Vec<f64>) -> Result<Self> {
        if masses.is_empty() {
            return Err(Error::Argument("distribution has no bins".into()));
        }
        if let Some(m) = masses.iter().find(|m| !(m.is_finite() && **m >= 0.0)) {
            return Err(Error::Argument(format!("invalid mass {m}")));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Argument(format!("masses sum to {total}, not 1")));
        }
        Ok(DiscreteDistribution(masses))
    }

    /// Normalises nonnegative weights into a distribution.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Argument("weights have no positive mass".into()));
        }
        DiscreteDistribution::new(weights.iter().map(|w| w / total).collect())
    }

    /// Point mass at `bin` over `n` bins.
    pub fn point(bin: usize, n: usize) -> Self {
        let mut m = vec![0.0; n];
        m[bin] = 1.0;
        DiscreteDistribution(m)
    }

    pub fn masses(&self) -> &[f64] {
        &self.0
    }

    pub fn bins(&self) -> usize {
        self.0.len()
    }

    /// Cumulative masses `F(k) = sum_{j <= k} p(j)`.
    pub fn cdf(&self) -> Vec<f64> {
        self.0
            .iter()
            .scan(0.0, |acc, &m| {
                *acc += m;
                Some(*acc)
            })
            .collect()
    }
}

fn same_bins(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<()> {
    if p.bins() != q.bins() {
        return Err(Error::Argument(format!(
            "bin count mismatch: {} vs {}",
            p.bins(),
            q.bins()
        )));
    }
    Ok(())
}

/// Two-sample Kolmogorov–Smirnov statistic `sup_x |F_a(x) - F_b(x)|`,
/// computed exactly by walking the merged sorted samples.
pub fn ks_distance(a: &EmpiricalSample, b: &EmpiricalSample) -> f64 {
    let (xa, xb) = (a.sorted(), b.sorted());
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut best = 0.0f64;
    while i < xa.len() || j < xb.len() {
        let v = match (xa.get(i), xb.get(j)) {
            (Some(&u), Some(&w)) => u.min(w),
            (Some(&u), None) => u,
            (None, Some(&w)) => w,
            (None, None) => unreachable!(),
        };
        while i < xa.len() && xa[i] <= v {
            i += 1;
        }
        while j < xb.len() && xb[j] <= v {
            j += 1;
        }
        best = best.max((i as f64 / na - j as f64 / nb).abs());
    }
    best
}

/// Exact 1-D Wasserstein-1 between the two equal-weight empirical measures.
///
/// Equal sizes use the sorted order-statistic pairing; unequal sizes fall
/// back to [`w1_cdf_integral`].
pub fn w1_empirical_1d(a: &EmpiricalSample, b: &EmpiricalSample) -> f64 {
    if a.len() != b.len() {
        return w1_cdf_integral(a, b);
    }
    let (xa, xb) = (a.sorted(), b.sorted());
    xa.iter().zip(&xb).map(|(u, v)| (u - v).abs()).sum::<f64>() / a.len() as f64
}

/// `∫ |F_a(x) - F_b(x)| dx`, which equals the quantile-function integral
/// `∫_0^1 |F_a^{-1}(u) - F_b^{-1}(u)| du`.
pub fn w1_cdf_integral(a: &EmpiricalSample, b: &EmpiricalSample) -> f64 {
    let (xa, xb) = (a.sorted(), b.sorted());
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let mut grid: Vec<f64> = xa.iter().chain(&xb).copied().collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let (mut i, mut j) = (0usize, 0usize);
    let mut total = 0.0;
    for w in grid.windows(2) {
        while i < xa.len() && xa[i] <= w[0] {
            i += 1;
        }
        while j < xb.len() && xb[j] <= w[0] {
            j += 1;
        }
        total += (i as f64 / na - j as f64 / nb).abs() * (w[1] - w[0]);
    }
    total
}

/// Total variation `½ Σ |p(j) - q(j)|`.
pub fn tv_discrete(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
    same_bins(p, q)?;
    Ok(0.5
        * p.masses()
            .iter()
            .zip(q.masses())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>())
}

fn kl_term(p: f64, m: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * (p / m).ln()
    }
}

/// Jensen–Shannon divergence in nats.
pub fn js_divergence(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
    same_bins(p, q)?;
    let js = p
        .masses()
        .iter()
        .zip(q.masses())
        .map(|(&a, &b)| {
            let m = 0.5 * (a + b);
            0.5 * kl_term(a, m) + 0.5 * kl_term(b, m)
        })
        .sum::<f64>();
    Ok(js.max(0.0))
}

/// KS on cumulative mass functions with bins in ascending id order.
pub fn ks_discrete(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
    same_bins(p, q)?;
    Ok(p
        .cdf()
        .iter()
        .zip(q.cdf())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        .min(1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KsRow {
    pub metric: String,
    pub ks: f64,
    pub n_real: usize,
    pub n_gen: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KsReport {
    pub rows: Vec<KsRow>,
}

impl KsReport {
    /// Mean KS across metric rows.
    pub fn mean(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().map(|r| r.ks).sum::<f64>() / self.rows.len() as f64
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.metric == metric).map(|r| r.ks)
    }

    /// CSV with header `metric,ks,n_real,n_gen` and a trailing `mean` row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "metric,ks,n_real,n_gen")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{}", r.metric, r.ks, r.n_real, r.n_gen)?;
        }
        let (nr, ng) = self
            .rows
            .first()
            .map(|r| (r.n_real, r.n_gen))
            .unwrap_or((0, 0));
        writeln!(w, "mean,{},{},{}", self.mean(), nr, ng)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let width = self
            .rows
            .iter()
            .map(|r| r.metric.len())
            .max()
            .unwrap_or(4)
            .max(4);
        let _ = writeln!(s, "{:<width$}  {:>8}  {:>7}  {:>7}", "metric", "KS", "n_real", "n_gen");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<width$}  {:>8.4}  {:>7}  {:>7}",
                r.metric, r.ks, r.n_real, r.n_gen
            );
        }
        let _ = writeln!(s, "{:<width$}  {:>8.4}", "mean", self.mean());
        s
    }
}

fn scalar_sample(set: &[Trajectory], spec: DerivedVariable, meta: &DatasetMeta) -> Result<EmpiricalSample> {
    let vals = set
        .iter()
        .map(|t| {
            evaluate_derived(t, spec, meta).map(|v| v.scalar().expect("scalar derived variable"))
        })
        .collect::<Result<Vec<_>>>()?;
    EmpiricalSample::new(vals)
}

/// Pooled per-bin mass across a trajectory set.
fn pooled_histogram(set: &[Trajectory], spec: DerivedVariable, meta: &DatasetMeta) -> Result<Vec<f64>> {
    let mut total: Vec<f64> = Vec::new();
    for t in set {
        if let DerivedValue::Histogram(h) = evaluate_derived(t, spec, meta)? {
            if total.len() < h.len() {
                total.resize(h.len(), 0.0);
            }
            for (acc, v) in total.iter_mut().zip(h) {
                *acc += v;
            }
        }
    }
    Ok(total)
}

/// KS per derived variable between a real and a generated trajectory set.
/// Scalar variables compare empirical CDFs; histogram variables pool the
/// per-bin mass over each set and compare cumulative mass functions.
pub fn derived_report(
    real: &[Trajectory],
    generated: &[Trajectory],
    specs: &[DerivedVariable],
    meta: &DatasetMeta,
) -> Result<KsReport> {
    if real.is_empty() || generated.is_empty() {
        return Err(Error::Argument("derived report needs nonempty trajectory sets".into()));
    }
    let mut rows = Vec::with_capacity(specs.len());
    for &spec in specs {
        let ks = if spec.is_histogram() {
            let hr = pooled_histogram(real, spec, meta)?;
            let hg = pooled_histogram(generated, spec, meta)?;
            let (sr, sg) = (hr.iter().sum::<f64>(), hg.iter().sum::<f64>());
            match (sr > 0.0, sg > 0.0) {
                (true, true) => ks_discrete(
                    &DiscreteDistribution::from_weights(&hr)?,
                    &DiscreteDistribution::from_weights(&hg)?,
                )?,
                (false, false) => 0.0,
                _ => 1.0,
            }
        } else {
            ks_distance(&scalar_sample(real, spec, meta)?, &scalar_sample(generated, spec, meta)?)
        };
        rows.push(KsRow {
            metric: spec.name().to_string(),
            ks,
            n_real: real.len(),
            n_gen: generated.len(),
        });
    }
    Ok(KsReport { rows })
}
