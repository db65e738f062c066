use std::io::{Read, Write};

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::{NnError, Result};

const MAGIC: &[u8; 4] = b"LTCK";
const VERSION: u32 = 1;

/// Ordered collection of named parameter tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn push(&mut self, name: &str, t: Tensor) -> usize {
        self.names.push(name.to_string());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Registers every tensor on `tape`, as trainable leaves or constants.
    pub fn on_tape(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }

    /// Order-sensitive checksum over the raw bits of every value.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in &self.tensors {
            for v in &t.data {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Checks that `other` has the same names and shapes.
    pub fn check_layout(&self, other: &ParamSet) -> Result<()> {
        if self.names != other.names {
            return Err(NnError::Integrity("parameter names differ".into()));
        }
        for (n, (a, b)) in self.names.iter().zip(self.tensors.iter().zip(&other.tensors)) {
            if a.shape() != b.shape() {
                return Err(NnError::Integrity(format!(
                    "{n}: shape {:?} vs {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in self.names.iter().zip(&self.tensors) {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rows as u32).to_le_bytes())?;
            w.write_all(&(t.cols as u32).to_le_bytes())?;
            for v in &t.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NnError::Integrity("not a checkpoint file".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(NnError::Integrity(format!("unsupported checkpoint version {version}")));
        }
        let count = read_u32(&mut r)? as usize;
        let mut out = ParamSet::new();
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| NnError::Integrity("parameter name is not UTF-8".into()))?;
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            let mut buf = [0u8; 8];
            for _ in 0..rows * cols {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            out.push(&name, Tensor::new(rows, cols, data)?);
        }
        Ok(out)
    }

    /// One `name rows cols` line per tensor.
    pub fn manifest(&self) -> String {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| format!("{n} {} {}\n", t.rows, t.cols))
            .collect()
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let zeros = || {
            params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.rows, t.cols))
                .collect::<Vec<_>>()
        };
        Adam {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One bias-corrected update. A missing gradient counts as zero.
    pub fn update(&mut self, params: &mut ParamSet, grads: &[Option<Tensor>]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(NnError::Argument(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (p, g) in params.tensors().iter().zip(grads) {
            if let Some(g) = g {
                if g.shape() != p.shape() {
                    return Err(NnError::Argument(format!(
                        "gradient shape {:?} for parameter {:?}",
                        g.shape(),
                        p.shape()
                    )));
                }
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.data.len() {
                let gj = grads[i].as_ref().map_or(0.0, |g| g.data[j]);
                m.data[j] = beta1 * m.data[j] + (1.0 - beta1) * gj;
                v.data[j] = beta2 * v.data[j] + (1.0 - beta2) * gj * gj;
                let mh = m.data[j] / c1;
                let vh = v.data[j] / c2;
                p.data[j] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Largest singular value. The span of the first `iters` power iterates of
/// the smaller Gram matrix is orthonormalized and the top Ritz value taken,
/// which is exact once `iters` reaches the Gram dimension.
pub fn top_singular_value(w: &Tensor, iters: usize) -> f64 {
    let gram = if w.rows <= w.cols {
        let mut g = Tensor::zeros(w.rows, w.rows);
        crate::tensor::gemm(w, false, w, true, &mut g, 0.0);
        g
    } else {
        let mut g = Tensor::zeros(w.cols, w.cols);
        crate::tensor::gemm(w, true, w, false, &mut g, 0.0);
        g
    };
    let n = gram.rows;
    if n == 0 || gram.max_abs() == 0.0 {
        return 0.0;
    }
    let apply = |v: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|r| gram.row_slice(r).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    };
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut v = default_start(n);
    for _ in 0..iters.max(1).min(n) {
        for _ in 0..2 {
            for q in &basis {
                let d: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(x, y)| *x -= d * y);
            }
        }
        let nv = norm(&v);
        if nv <= 1e-14 * gram.max_abs().sqrt() {
            break;
        }
        v.iter_mut().for_each(|x| *x /= nv);
        basis.push(v.clone());
        v = apply(&v);
    }
    let m = basis.len();
    let images: Vec<Vec<f64>> = basis.iter().map(|q| apply(q)).collect();
    let mut t = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            t[i][j] = basis[i].iter().zip(&images[j]).map(|(a, b)| a * b).sum();
        }
    }
    for i in 0..m {
        for j in 0..i {
            let avg = 0.5 * (t[i][j] + t[j][i]);
            t[i][j] = avg;
            t[j][i] = avg;
        }
    }
    symmetric_max_eigenvalue(t).max(0.0).sqrt()
}

/// Largest eigenvalue of a symmetric matrix by cyclic Jacobi rotations.
fn symmetric_max_eigenvalue(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let scale: f64 = a.iter().flatten().map(|x| x * x).sum::<f64>();
    for _ in 0..64 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off <= 1e-30 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in a.iter_mut() {
                    let (kp, kq) = (row[p], row[q]);
                    row[p] = c * kp - s * kq;
                    row[q] = s * kp + c * kq;
                }
                for k in 0..n {
                    let (pk, qk) = (a[p][k], a[q][k]);
                    a[p][k] = c * pk - s * qk;
                    a[q][k] = s * pk + c * qk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).fold(f64::NEG_INFINITY, f64::max)
}

fn default_start(n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|j| 1.0 + 0.37 * ((j * 7919) % 13) as f64 / 13.0).collect();
    let s = norm(&raw);
    raw.into_iter().map(|x| x / s).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Divides `w` by its estimated top singular value. Zero matrices are
/// returned unchanged.
pub fn spectral_normalize(w: &Tensor, iters: usize) -> Result<Tensor> {
    if iters == 0 {
        return Err(NnError::Argument("spectral normalization needs iters >= 1".into()));
    }
    let sigma = top_singular_value(w, iters);
    if sigma == 0.0 {
        return Ok(w.clone());
    }
    Ok(w.scale(1.0 / sigma))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip() {
        let mut p = ParamSet::new();
        p.push("a", Tensor::row(&[1.0, -2.5, f64::MIN_POSITIVE]));
        p.push("b.w", Tensor::zeros(2, 3));
        let mut buf = Vec::new();
        p.write_checkpoint(&mut buf).unwrap();
        let back = ParamSet::read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, p);
        assert_eq!(p.manifest(), "a 1 3\nb.w 2 3\n");
        assert!(ParamSet::read_checkpoint(&b"XXXX"[..]).is_err());
    }

    #[test]
    fn adam_first_step_closed_form() {
        let mut p = ParamSet::new();
        p.push("x", Tensor::row(&[1.0, 2.0]));
        let mut opt = Adam::new(AdamConfig::default(), &p);
        opt.update(&mut p, &[Some(Tensor::row(&[0.5, -3.0]))]).unwrap();
        let lr = 1e-4;
        let expect = [1.0 - lr * 0.5 / (0.5 + 1e-8), 2.0 + lr * 3.0 / (3.0 + 1e-8)];
        for (a, b) in p.get(0).data.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(opt.update(&mut p, &[Some(Tensor::zeros(1, 3))]).is_err());
    }

    #[test]
    fn spectral_examples() {
        let d = Tensor::from_rows(&[vec![3.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let n = spectral_normalize(&d, 50).unwrap();
        assert!((n.get(0, 0) - 1.0).abs() < 1e-12 && (n.get(1, 1) - 1.0 / 3.0).abs() < 1e-12);
        let z = Tensor::zeros(3, 2);
        assert_eq!(spectral_normalize(&z, 5).unwrap(), z);
        assert!(spectral_normalize(&d, 0).is_err());
    }
}
