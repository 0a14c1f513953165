//! Unbiased quadratic-time MMD², its unbiased variance estimator, the
//! variance-normalized t-statistic, and the asymptotic power approximation.
//!
//! Everything is expressed through a handful of scalar contractions of the
//! Gram bundle (row-sum norms, Frobenius norms, grand sums and two mixed
//! products), so the gradient of the t-statistic only needs the directional
//! derivatives of those same contractions.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::kernels::{GramBundle, SquareMatrix};

/// Lower bound applied to the variance estimate before dividing by its root.
pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-8;

/// Pairwise (cascade) summation; bounds rounding growth to `O(log n)`.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 64;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let (a, b) = values.split_at(values.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let prods: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    pairwise_sum(&prods)
}

fn row_sums(k: &SquareMatrix) -> Vec<f64> {
    (0..k.n()).map(|i| pairwise_sum(k.row(i))).collect()
}

/// Row sums skipping the diagonal. Used for every block entering MMD², so that
/// identical samples produce bit-identical sums and cancel exactly.
fn offdiag_row_sums(k: &SquareMatrix) -> Vec<f64> {
    (0..k.n())
        .map(|i| {
            let row = k.row(i);
            pairwise_sum(&row[..i]) + pairwise_sum(&row[i + 1..])
        })
        .collect()
}

/// Row `i` of `k` minus `shift`, with the diagonal entry dropped when `skip_diag`.
fn shifted_row(k: &SquareMatrix, i: usize, shift: f64, skip_diag: bool) -> Vec<f64> {
    k.row(i)
        .iter()
        .enumerate()
        .filter(|&(j, _)| !(skip_diag && j == i))
        .map(|(_, v)| v - shift)
        .collect()
}

fn shifted_row_sums(k: &SquareMatrix, shift: f64, skip_diag: bool) -> Vec<f64> {
    (0..k.n()).map(|i| pairwise_sum(&shifted_row(k, i, shift, skip_diag))).collect()
}

fn shifted_col_sums(k: &SquareMatrix, shift: f64) -> Vec<f64> {
    let n = k.n();
    let mut out = vec![0.0; n];
    for i in 0..n {
        for (o, v) in out.iter_mut().zip(k.row(i)) {
            *o += v - shift;
        }
    }
    out
}

/// `sum_ij (a_ij - shift) b_ij`, accumulated per row then pairwise across rows.
fn shifted_inner(a: &SquareMatrix, shift: f64, b: &SquareMatrix, skip_diag: bool) -> f64 {
    let per_row: Vec<f64> = (0..a.n())
        .map(|i| dot(&shifted_row(a, i, shift, skip_diag), &shifted_row(b, i, 0.0, skip_diag)))
        .collect();
    pairwise_sum(&per_row)
}

fn shifted_fro(a: &SquareMatrix, shift: f64, skip_diag: bool) -> f64 {
    let per_row: Vec<f64> = (0..a.n())
        .map(|i| {
            let r = shifted_row(a, i, shift, skip_diag);
            dot(&r, &r)
        })
        .collect();
    pairwise_sum(&per_row)
}

/// Row and column sums of the three blocks, every kernel value (diagonals
/// of the within-sample blocks excluded) reduced by `shift`.
struct Marginals {
    shift: f64,
    xx: Vec<f64>,
    yy: Vec<f64>,
    xy_rows: Vec<f64>,
    xy_cols: Vec<f64>,
    xy_offdiag: Vec<f64>,
}

impl Marginals {
    fn of(g: &GramBundle, shift: f64) -> Self {
        Self {
            shift,
            xx: shifted_row_sums(&g.ktxx, shift, true),
            yy: shifted_row_sums(&g.ktyy, shift, true),
            xy_rows: shifted_row_sums(&g.kxy, shift, false),
            xy_cols: shifted_col_sums(&g.kxy, shift),
            xy_offdiag: shifted_row_sums(&g.kxy, shift, true),
        }
    }

    /// Both estimators are unchanged when one constant is subtracted from
    /// every kernel value, so the contractions are taken about the mean of
    /// `Kxy`; this keeps the terms of the variance formula small.
    fn centered(g: &GramBundle) -> Self {
        let m = g.m() as f64;
        let mean = pairwise_sum(&row_sums(&g.kxy)) / (m * m);
        Self::of(g, mean)
    }
}

/// The scalar contractions both estimators are built from. The same struct
/// holds their directional derivatives when produced by
/// [`Contractions::directional`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Contractions {
    /// `|K~xx e|^2`
    pub xx_row_sq: f64,
    /// `|K~xx|_F^2`
    pub xx_fro: f64,
    /// `e' K~xx e`
    pub xx_sum: f64,
    pub yy_row_sq: f64,
    pub yy_fro: f64,
    pub yy_sum: f64,
    /// `|Kxy e|^2`
    pub xy_row_sq: f64,
    /// `|Kxy' e|^2`
    pub xy_col_sq: f64,
    pub xy_fro: f64,
    pub xy_sum: f64,
    /// `e' Kxy e - tr Kxy`
    pub xy_offdiag_sum: f64,
    /// `e' K~xx Kxy e`
    pub xx_xy: f64,
    /// `e' K~yy Kxy' e`
    pub yy_yx: f64,
}

impl Contractions {
    pub fn of(g: &GramBundle) -> Self {
        Self::with_marginals(g, &Marginals::centered(g))
    }

    fn with_marginals(g: &GramBundle, mg: &Marginals) -> Self {
        Self {
            xx_row_sq: dot(&mg.xx, &mg.xx),
            xx_fro: shifted_fro(&g.ktxx, mg.shift, true),
            xx_sum: pairwise_sum(&mg.xx),
            yy_row_sq: dot(&mg.yy, &mg.yy),
            yy_fro: shifted_fro(&g.ktyy, mg.shift, true),
            yy_sum: pairwise_sum(&mg.yy),
            xy_row_sq: dot(&mg.xy_rows, &mg.xy_rows),
            xy_col_sq: dot(&mg.xy_cols, &mg.xy_cols),
            xy_fro: shifted_fro(&g.kxy, mg.shift, false),
            xy_sum: pairwise_sum(&mg.xy_rows),
            xy_offdiag_sum: pairwise_sum(&mg.xy_offdiag),
            xx_xy: dot(&mg.xx, &mg.xy_rows),
            yy_yx: dot(&mg.yy, &mg.xy_cols),
        }
    }

    /// Derivative of every contraction along the direction `dg` (for example
    /// `dK/dtheta` from [`crate::kernels::gram_with_gradients`]).
    fn directional(g: &GramBundle, mg: &Marginals, dg: &GramBundle) -> Self {
        let d = Marginals::of(dg, 0.0);
        Self {
            xx_row_sq: 2.0 * dot(&mg.xx, &d.xx),
            xx_fro: 2.0 * shifted_inner(&g.ktxx, mg.shift, &dg.ktxx, true),
            xx_sum: pairwise_sum(&d.xx),
            yy_row_sq: 2.0 * dot(&mg.yy, &d.yy),
            yy_fro: 2.0 * shifted_inner(&g.ktyy, mg.shift, &dg.ktyy, true),
            yy_sum: pairwise_sum(&d.yy),
            xy_row_sq: 2.0 * dot(&mg.xy_rows, &d.xy_rows),
            xy_col_sq: 2.0 * dot(&mg.xy_cols, &d.xy_cols),
            xy_fro: 2.0 * shifted_inner(&g.kxy, mg.shift, &dg.kxy, false),
            xy_sum: pairwise_sum(&d.xy_rows),
            xy_offdiag_sum: pairwise_sum(&d.xy_offdiag),
            xx_xy: dot(&d.xx, &mg.xy_rows) + dot(&mg.xx, &d.xy_rows),
            yy_yx: dot(&d.yy, &mg.xy_cols) + dot(&mg.yy, &d.xy_cols),
        }
    }

    fn mmd2(&self, m: f64) -> f64 {
        (self.xx_sum + self.yy_sum - 2.0 * self.xy_offdiag_sum) / (m * (m - 1.0))
    }

    /// Gradient of `mmd2` with respect to each contraction, dotted with `d`.
    fn mmd2_linear(&self, d: &Contractions, m: f64) -> f64 {
        // mmd2 is linear in the contractions.
        d.mmd2(m)
    }

    fn variance(&self, m: f64) -> f64 {
        let c = VarianceCoefs::new(m);
        let s = self.xy_sum;
        c.norms * (2.0 * self.xx_row_sq - self.xx_fro + 2.0 * self.yy_row_sq - self.yy_fro)
            - c.sums_sq * (self.xx_sum * self.xx_sum + self.yy_sum * self.yy_sum)
            + c.cross_rows * (self.xy_row_sq + self.xy_col_sq)
            - c.cross_fro * self.xy_fro
            - c.cross_sum_sq * s * s
            + c.mixed * ((self.xx_sum + self.yy_sum) * s / m - self.xx_xy - self.yy_yx)
    }

    /// Directional derivative of `variance` along `d`.
    fn variance_linear(&self, d: &Contractions, m: f64) -> f64 {
        let c = VarianceCoefs::new(m);
        let s = self.xy_sum;
        c.norms * (2.0 * d.xx_row_sq - d.xx_fro + 2.0 * d.yy_row_sq - d.yy_fro)
            - c.sums_sq * 2.0 * (self.xx_sum * d.xx_sum + self.yy_sum * d.yy_sum)
            + c.cross_rows * (d.xy_row_sq + d.xy_col_sq)
            - c.cross_fro * d.xy_fro
            - c.cross_sum_sq * 2.0 * s * d.xy_sum
            + c.mixed
                * (((d.xx_sum + d.yy_sum) * s + (self.xx_sum + self.yy_sum) * d.xy_sum) / m
                    - d.xx_xy
                    - d.yy_yx)
    }
}

/// Coefficients of the compact variance formula for sample size `m`.
struct VarianceCoefs {
    norms: f64,
    sums_sq: f64,
    cross_rows: f64,
    cross_fro: f64,
    cross_sum_sq: f64,
    mixed: f64,
}

impl VarianceCoefs {
    fn new(m: f64) -> Self {
        let m1 = m - 1.0;
        let m2 = m * m;
        let m3 = m2 * m;
        Self {
            norms: 2.0 / (m2 * m1 * m1),
            sums_sq: (4.0 * m - 6.0) / (m3 * m1 * m1 * m1),
            cross_rows: 4.0 * (m - 2.0) / (m3 * m1 * m1),
            cross_fro: 4.0 * (m - 3.0) / (m3 * m1 * m1),
            cross_sum_sq: (8.0 * m - 12.0) / (m3 * m2 * m1),
            mixed: 8.0 / (m3 * m1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatorOutput {
    pub mmd2: f64,
    /// Unfloored variance estimate; can be negative.
    pub variance: f64,
    pub t_stat: f64,
    pub m: usize,
}

fn require(g: &GramBundle, needed: usize, what: &'static str) -> Result<f64> {
    if g.m() < needed {
        return Err(Error::TooFewSamples {
            what,
            needed,
            got: g.m(),
        });
    }
    Ok(g.m() as f64)
}

fn check_floor(floor: f64) -> Result<()> {
    if !(floor.is_finite() && floor > 0.0) {
        return Err(Error::invalid(format!("variance floor {floor} must be positive")));
    }
    Ok(())
}

pub fn mmd2_u(g: &GramBundle) -> Result<f64> {
    let m = require(g, 2, "MMD estimate")?;
    let xx = pairwise_sum(&offdiag_row_sums(&g.ktxx));
    let yy = pairwise_sum(&offdiag_row_sums(&g.ktyy));
    let xy = pairwise_sum(&offdiag_row_sums(&g.kxy));
    let num = xx + yy - 2.0 * xy;
    Ok(num / (m * (m - 1.0)))
}

pub fn variance_hat(g: &GramBundle) -> Result<f64> {
    let m = require(g, 4, "variance estimate")?;
    Ok(Contractions::of(g).variance(m))
}

pub fn estimate(g: &GramBundle, floor: f64) -> Result<EstimatorOutput> {
    let m = require(g, 4, "t-statistic")?;
    check_floor(floor)?;
    let c = Contractions::of(g);
    let mmd2 = c.mmd2(m);
    let variance = c.variance(m);
    Ok(EstimatorOutput {
        mmd2,
        variance,
        t_stat: mmd2 / variance.max(floor).sqrt(),
        m: g.m(),
    })
}

pub fn t_statistic(g: &GramBundle, floor: f64) -> Result<f64> {
    estimate(g, floor).map(|e| e.t_stat)
}

/// The t-statistic and its gradient with respect to the kernel parameters,
/// given `dK/dtheta` for each parameter. While the variance sits below the
/// floor the denominator is constant, so only the numerator contributes.
pub fn t_statistic_gradient(g: &GramBundle, dgs: &[GramBundle], floor: f64) -> Result<(EstimatorOutput, Vec<f64>)> {
    let m = require(g, 4, "t-statistic gradient")?;
    check_floor(floor)?;
    if let Some(bad) = dgs.iter().find(|d| d.m() != g.m()) {
        return Err(Error::DimensionMismatch {
            expected: g.m(),
            found: bad.m(),
        });
    }
    let mg = Marginals::centered(g);
    let c = Contractions::with_marginals(g, &mg);
    let mmd2 = c.mmd2(m);
    let variance = c.variance(m);
    let floored = variance <= floor;
    let denom = variance.max(floor).sqrt();
    let out = EstimatorOutput {
        mmd2,
        variance,
        t_stat: mmd2 / denom,
        m: g.m(),
    };
    let grads = dgs
        .iter()
        .map(|dg| {
            let d = Contractions::directional(g, &mg, dg);
            let dmmd = c.mmd2_linear(&d, m);
            if floored {
                dmmd / denom
            } else {
                let dvar = c.variance_linear(&d, m);
                dmmd / denom - 0.5 * mmd2 * dvar / (denom * denom * denom)
            }
        })
        .collect();
    Ok((out, grads))
}

/// Asymptotic rejection probability `Phi(mmd2/sqrt(V) - c_alpha/(m sqrt(V)))`,
/// with `c_alpha` on the `m * MMD^2` scale.
pub fn estimate_power(mmd2: f64, variance: f64, c_alpha: f64, m: usize) -> Result<f64> {
    if !(variance > 0.0) {
        return Err(Error::Numerical(format!("power estimate needs positive variance, got {variance}")));
    }
    if m == 0 {
        return Err(Error::invalid("power estimate needs m >= 1"));
    }
    let sd = variance.sqrt();
    let z = mmd2 / sd - c_alpha / (m as f64 * sd);
    let normal = Normal::standard();
    Ok(normal.cdf(z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Dataset;
    use crate::kernels::{gram_bundle, KernelSpec};

    fn linear_bundle(x: &[f64], y: &[f64]) -> GramBundle {
        let m = x.len();
        GramBundle::from_parts(
            SquareMatrix::from_fn(m, |i, j| x[i] * y[j]),
            SquareMatrix::from_fn(m, |i, j| x[i] * x[j]),
            SquareMatrix::from_fn(m, |i, j| y[i] * y[j]),
        )
        .unwrap()
    }

    #[test]
    fn linear_kernel_two_points() {
        // h(v1, v2) = 0*1 + 2*3 - 0*3 - 1*2 = 4, averaged over the two ordered pairs.
        let g = linear_bundle(&[0.0, 1.0], &[2.0, 3.0]);
        assert_eq!(mmd2_u(&g).unwrap(), 4.0);
    }

    #[test]
    fn identical_samples_give_zero() {
        let x = Dataset::from_rows(&[[0.1, 2.0], [1.5, -0.3], [0.7, 0.7], [3.0, 1.0], [-1.0, 0.0]]).unwrap();
        let g = gram_bundle(&KernelSpec::rbf(0.9).unwrap(), &x, &x).unwrap();
        assert_eq!(mmd2_u(&g).unwrap(), 0.0);
        assert_eq!(t_statistic(&g, DEFAULT_VARIANCE_FLOOR).unwrap(), 0.0);
    }

    #[test]
    fn constant_kernel_has_zero_variance() {
        for &c in &[0.5, 0.3, 1.0] {
            let m = 9;
            let g = GramBundle::from_parts(
                SquareMatrix::from_fn(m, |_, _| c),
                SquareMatrix::from_fn(m, |_, _| c),
                SquareMatrix::from_fn(m, |_, _| c),
            )
            .unwrap();
            let v = variance_hat(&g).unwrap();
            assert!(v.abs() < 1e-15, "c = {c}: variance {v}");
            assert_eq!(mmd2_u(&g).unwrap(), 0.0);
        }
    }

    #[test]
    fn size_preconditions() {
        let g = linear_bundle(&[0.0, 1.0, 2.0], &[2.0, 3.0, 1.0]);
        assert!(mmd2_u(&g).is_ok());
        assert!(matches!(variance_hat(&g), Err(Error::TooFewSamples { needed: 4, .. })));
        assert!(t_statistic(&g, 1e-8).is_err());
        let g = linear_bundle(&[0.0, 1.0, 2.0, 5.0], &[2.0, 3.0, 1.0, 0.0]);
        assert!(t_statistic(&g, 0.0).is_err());
    }

    #[test]
    fn floor_applies_when_variance_is_tiny() {
        // Nearly identical samples: numerator and variance both tiny.
        let x = [0.0, 1.0, 2.0, 3.0, 4.0];
        let y = [0.0, 1.0, 2.0, 3.0, 4.0 + 1e-9];
        let xs = Dataset::from_rows(&x.map(|v| [v])).unwrap();
        let ys = Dataset::from_rows(&y.map(|v| [v])).unwrap();
        let g = gram_bundle(&KernelSpec::rbf(1.0).unwrap(), &xs, &ys).unwrap();
        let e = estimate(&g, 1e-3).unwrap();
        assert!(e.variance < 1e-3);
        assert_eq!(e.t_stat, e.mmd2 / 1e-3f64.sqrt());
        assert!(e.t_stat.is_finite());
    }

    #[test]
    fn power_examples() {
        assert_eq!(estimate_power(0.0, 1.0, 0.0, 10).unwrap(), 0.5);
        assert!(estimate_power(0.1, 0.01, 1e9, 10).unwrap() < 1e-12);
        assert!(estimate_power(0.1, 0.0, 1.0, 10).is_err());
        assert!(estimate_power(0.1, -1.0, 1.0, 10).is_err());
        let lo = estimate_power(0.01, 1e-4, 1.0, 100).unwrap();
        let hi = estimate_power(0.02, 1e-4, 1.0, 100).unwrap();
        assert!(hi > lo);
    }

    #[test]
    fn pairwise_sum_matches_naive_on_small_input() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 499_500.0);
    }
}
