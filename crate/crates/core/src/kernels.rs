//! Gaussian RBF and ARD-RBF kernels, Gram matrices and their parameter
//! derivatives.
//!
//! The kernel is `k(x, y) = exp(-sum_d w_d^2 (x_d - y_d)^2 / (2 sigma^2))`.
//! Plain RBF is the special case `w_d = 1`. Parameters are stored as
//! logarithms so that gradient-based training is unconstrained.

use serde::{Deserialize, Serialize};

use crate::dataset::{check_pair, check_same_dim, Dataset};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    Rbf,
    ArdRbf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub log_bandwidth: f64,
    /// Empty for [`KernelKind::Rbf`].
    pub log_weights: Vec<f64>,
}

impl KernelSpec {
    pub fn rbf(bandwidth: f64) -> Result<Self> {
        check_bandwidth(bandwidth)?;
        Ok(Self {
            kind: KernelKind::Rbf,
            log_bandwidth: bandwidth.ln(),
            log_weights: Vec::new(),
        })
    }

    /// Weights may be zero (the coordinate is ignored); negative weights are
    /// rejected even though only `w^2` enters the kernel.
    pub fn ard(bandwidth: f64, weights: &[f64]) -> Result<Self> {
        check_bandwidth(bandwidth)?;
        if weights.is_empty() {
            return Err(Error::invalid("ARD kernel needs at least one weight"));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::invalid(format!("ARD weight {w} is not a finite non-negative number")));
        }
        Ok(Self {
            kind: KernelKind::ArdRbf,
            log_bandwidth: bandwidth.ln(),
            log_weights: weights.iter().map(|w| w.ln()).collect(),
        })
    }

    /// ARD kernel with unit weights, equal to `rbf(bandwidth)` entrywise.
    pub fn ard_from_rbf(bandwidth: f64, dim: usize) -> Result<Self> {
        Self::ard(bandwidth, &vec![1.0; dim])
    }

    #[inline]
    pub fn bandwidth(&self) -> f64 {
        self.log_bandwidth.exp()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|lw| lw.exp()).collect()
    }

    /// Number of trainable log-parameters: bandwidth first, then weights.
    pub fn n_params(&self) -> usize {
        1 + self.log_weights.len()
    }

    pub fn params(&self) -> Vec<f64> {
        std::iter::once(self.log_bandwidth)
            .chain(self.log_weights.iter().copied())
            .collect()
    }

    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        if params.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                expected: self.n_params(),
                found: params.len(),
            });
        }
        let spec = Self {
            kind: self.kind,
            log_bandwidth: params[0],
            log_weights: params[1..].to_vec(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        check_bandwidth(self.bandwidth())?;
        match self.kind {
            KernelKind::Rbf if !self.log_weights.is_empty() => {
                Err(Error::invalid("plain RBF kernel carries no weights"))
            }
            KernelKind::ArdRbf if self.log_weights.is_empty() => {
                Err(Error::invalid("ARD kernel needs at least one weight"))
            }
            _ if self.log_weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY) => {
                Err(Error::invalid("ARD log-weights must be finite or -inf"))
            }
            _ => Ok(()),
        }
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if self.kind == KernelKind::ArdRbf && self.log_weights.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: self.log_weights.len(),
                found: dim,
            });
        }
        Ok(())
    }

    fn prepare(&self, dim: usize) -> Result<Prepared> {
        self.validate()?;
        self.check_dim(dim)?;
        let inv_var = (-2.0 * self.log_bandwidth).exp();
        let coefs = match self.kind {
            KernelKind::Rbf => vec![inv_var; dim],
            KernelKind::ArdRbf => self
                .log_weights
                .iter()
                .map(|lw| (2.0 * lw).exp() * inv_var)
                .collect(),
        };
        Ok(Prepared { coefs })
    }
}

fn check_bandwidth(bandwidth: f64) -> Result<()> {
    if !(bandwidth.is_finite() && bandwidth > 0.0) {
        return Err(Error::invalid(format!("bandwidth {bandwidth} must be finite and positive")));
    }
    Ok(())
}

/// Per-dimension coefficients `c_d = w_d^2 / sigma^2`, so `k = exp(-s/2)` with
/// `s = sum_d c_d (x_d - y_d)^2`.
pub(crate) struct Prepared {
    coefs: Vec<f64>,
}

impl Prepared {
    #[inline]
    pub(crate) fn scaled_sq_dist(&self, x: &[f64], y: &[f64]) -> f64 {
        self.coefs
            .iter()
            .zip(x.iter().zip(y))
            .map(|(c, (a, b))| {
                let d = a - b;
                c * d * d
            })
            .sum()
    }

    #[inline]
    pub(crate) fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        (-0.5 * self.scaled_sq_dist(x, y)).exp()
    }
}

pub fn eval_kernel(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    Ok(spec.prepare(x.len())?.eval(x, y))
}

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_vec(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::invalid(format!(
                "matrix buffer has {} values, expected {n}x{n}",
                data.len()
            )));
        }
        Ok(Self { n, data })
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.n, |i, j| self.get(j, i))
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j).to_bits() == self.get(j, i).to_bits()))
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }
}

/// The three sub-matrices of a two-sample Gram computation.
#[derive(Debug, Clone, PartialEq)]
pub struct GramBundle {
    /// `(kxy)_{ij} = k(X_i, Y_j)`.
    pub kxy: SquareMatrix,
    /// `k(X_i, X_j)` off the diagonal, zero on it.
    pub ktxx: SquareMatrix,
    pub ktyy: SquareMatrix,
}

impl GramBundle {
    /// Assembles a bundle from arbitrary matrices; the diagonals of `kxx` and
    /// `kyy` are zeroed. Used to run the estimators on non-RBF kernels.
    pub fn from_parts(kxy: SquareMatrix, mut kxx: SquareMatrix, mut kyy: SquareMatrix) -> Result<Self> {
        let m = kxy.n();
        if kxx.n() != m || kyy.n() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: if kxx.n() != m { kxx.n() } else { kyy.n() },
            });
        }
        if !kxx.is_symmetric() || !kyy.is_symmetric() {
            return Err(Error::invalid("within-sample Gram matrices must be symmetric"));
        }
        for i in 0..m {
            kxx.set(i, i, 0.0);
            kyy.set(i, i, 0.0);
        }
        Ok(Self {
            kxy,
            ktxx: kxx,
            ktyy: kyy,
        })
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.kxy.n()
    }
}

pub fn gram_bundle(spec: &KernelSpec, x: &Dataset, y: &Dataset) -> Result<GramBundle> {
    check_pair(x, y, 2, "Gram bundle")?;
    let prep = spec.prepare(x.dim())?;
    Ok(GramBundle {
        kxy: cross_block(x, y, |a, b| prep.eval(a, b)),
        ktxx: symmetric_block(x, 0.0, |a, b| prep.eval(a, b)),
        ktyy: symmetric_block(y, 0.0, |a, b| prep.eval(a, b)),
    })
}

fn cross_block(x: &Dataset, y: &Dataset, f: impl Fn(&[f64], &[f64]) -> f64 + Sync + Send) -> SquareMatrix {
    let m = x.rows();
    let rows = par::map_range(m, |i| {
        let xi = x.row(i);
        y.iter_rows().map(|yj| f(xi, yj)).collect::<Vec<_>>()
    });
    SquareMatrix {
        n: m,
        data: rows.concat(),
    }
}

/// Evaluates the strict upper triangle once and mirrors it, so the result is
/// symmetric to the last bit.
fn symmetric_block(x: &Dataset, diag: f64, f: impl Fn(&[f64], &[f64]) -> f64 + Sync + Send) -> SquareMatrix {
    let n = x.rows();
    let upper = par::map_range(n, |i| {
        let xi = x.row(i);
        (i + 1..n).map(|j| f(xi, x.row(j))).collect::<Vec<_>>()
    });
    let mut out = SquareMatrix::zeros(n);
    for (i, row) in upper.iter().enumerate() {
        out.set(i, i, diag);
        for (off, &v) in row.iter().enumerate() {
            let j = i + 1 + off;
            out.set(i, j, v);
            out.set(j, i, v);
        }
    }
    out
}

/// Kernel matrix over the pooled sample `Z = [X; Y]` of size `2m`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointGram {
    k: SquareMatrix,
    m: usize,
}

impl JointGram {
    /// Wraps a precomputed pooled kernel matrix. Entries must lie in `[0, 1]`
    /// (the null sampler accumulates them in fixed point) and the matrix must
    /// be exactly symmetric.
    pub fn from_matrix(k: SquareMatrix) -> Result<Self> {
        let n = k.n();
        if n % 2 != 0 || n < 4 {
            return Err(Error::invalid(format!("pooled Gram size {n} must be even and at least 4")));
        }
        if let Some(v) = k.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("pooled Gram entry {v} outside [0, 1]")));
        }
        if !k.is_symmetric() {
            return Err(Error::invalid("pooled Gram matrix is not symmetric"));
        }
        Ok(Self { k, m: n / 2 })
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    /// Pooled size `2m`.
    #[inline]
    pub fn n(&self) -> usize {
        self.k.n()
    }

    #[inline]
    pub fn matrix(&self) -> &SquareMatrix {
        &self.k
    }

    /// Splits back into the bundle used by the estimators.
    pub fn bundle(&self) -> GramBundle {
        let m = self.m;
        GramBundle {
            kxy: SquareMatrix::from_fn(m, |i, j| self.k.get(i, m + j)),
            ktxx: SquareMatrix::from_fn(m, |i, j| if i == j { 0.0 } else { self.k.get(i, j) }),
            ktyy: SquareMatrix::from_fn(m, |i, j| if i == j { 0.0 } else { self.k.get(m + i, m + j) }),
        }
    }
}

pub fn joint_gram(spec: &KernelSpec, x: &Dataset, y: &Dataset) -> Result<JointGram> {
    let m = check_pair(x, y, 2, "joint Gram")?;
    let prep = spec.prepare(x.dim())?;
    let z = x.stack(y)?;
    Ok(JointGram {
        k: symmetric_block(&z, 1.0, |a, b| prep.eval(a, b)),
        m,
    })
}

/// Kernel matrix between two arbitrary point sets (sizes may differ).
pub fn cross_gram(spec: &KernelSpec, a: &Dataset, b: &Dataset) -> Result<Vec<Vec<f64>>> {
    check_same_dim(a, b)?;
    let prep = spec.prepare(a.dim())?;
    Ok(par::map_range(a.rows(), |i| {
        let ai = a.row(i);
        b.iter_rows().map(|bj| prep.eval(ai, bj)).collect()
    }))
}

/// Gram bundle together with `dK/dtheta` for every log-parameter, in the order
/// of [`KernelSpec::params`]. Derivative bundles have zero diagonals on the
/// within-sample blocks, like the bundle itself.
pub fn gram_with_gradients(spec: &KernelSpec, x: &Dataset, y: &Dataset) -> Result<(GramBundle, Vec<GramBundle>)> {
    let m = check_pair(x, y, 2, "Gram gradients")?;
    let d = x.dim();
    let prep = spec.prepare(d)?;
    let p = spec.n_params();
    let ard = spec.kind == KernelKind::ArdRbf;

    // Per pair: value followed by p derivatives.
    let entry = |a: &[f64], b: &[f64], out: &mut [f64]| {
        let mut s = 0.0;
        for (dd, c) in prep.coefs.iter().enumerate() {
            let diff = a[dd] - b[dd];
            let t = c * diff * diff;
            s += t;
            if ard {
                out[2 + dd] = t;
            }
        }
        let k = (-0.5 * s).exp();
        out[0] = k;
        // d k / d log sigma = k * s
        out[1] = k * s;
        if ard {
            // d k / d log w_d = -k * c_d * diff_d^2
            for v in &mut out[2..] {
                *v *= -k;
            }
        }
    };

    let width = 1 + p;
    let block = |a: &Dataset, b: &Dataset, symmetric: bool| -> Vec<SquareMatrix> {
        let rows = par::map_range(m, |i| {
            let mut buf = vec![0.0; m * width];
            let ai = a.row(i);
            let start = if symmetric { i + 1 } else { 0 };
            for j in start..m {
                entry(ai, b.row(j), &mut buf[j * width..(j + 1) * width]);
            }
            buf
        });
        let mut mats: Vec<SquareMatrix> = (0..width).map(|_| SquareMatrix::zeros(m)).collect();
        for (i, row) in rows.iter().enumerate() {
            let start = if symmetric { i + 1 } else { 0 };
            for j in start..m {
                for (q, mat) in mats.iter_mut().enumerate() {
                    let v = row[j * width + q];
                    mat.set(i, j, v);
                    if symmetric {
                        mat.set(j, i, v);
                    }
                }
            }
        }
        mats
    };

    let mut kxy = block(x, y, false).into_iter();
    let mut kxx = block(x, x, true).into_iter();
    let mut kyy = block(y, y, true).into_iter();
    let mut next = || GramBundle {
        kxy: kxy.next().unwrap(),
        ktxx: kxx.next().unwrap(),
        ktyy: kyy.next().unwrap(),
    };
    let values = next();
    let grads = (0..p).map(|_| next()).collect();
    Ok((values, grads))
}

pub fn gram_gradients(spec: &KernelSpec, x: &Dataset, y: &Dataset) -> Result<Vec<GramBundle>> {
    gram_with_gradients(spec, x, y).map(|(_, g)| g)
}
