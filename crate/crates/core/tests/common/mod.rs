//! Independent reference implementations shared by the integration tests.
//! Nothing here calls into the estimator code under test.

#![allow(dead_code)]

use optmmd::kernels::SquareMatrix;
use optmmd::{Dataset, GramBundle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_dataset(rng: &mut ChaCha8Rng, m: usize, d: usize, scale: f64, shift: f64) -> Dataset {
    let data = (0..m * d).map(|_| shift + scale * (rng.random::<f64>() - 0.5)).collect();
    Dataset::new(m, d, data).unwrap()
}

/// Random symmetric matrix with entries in [0, 1] and unit diagonal.
pub fn random_symmetric(rng: &mut ChaCha8Rng, m: usize) -> SquareMatrix {
    let mut v = vec![0.0; m * m];
    for i in 0..m {
        v[i * m + i] = 1.0;
        for j in 0..i {
            let x = rng.random::<f64>();
            v[i * m + j] = x;
            v[j * m + i] = x;
        }
    }
    SquareMatrix::from_vec(m, v).unwrap()
}

pub fn random_bundle(rng: &mut ChaCha8Rng, m: usize) -> GramBundle {
    let kxy = SquareMatrix::from_vec(m, (0..m * m).map(|_| rng.random::<f64>()).collect()).unwrap();
    GramBundle::from_parts(kxy, random_symmetric(rng, m), random_symmetric(rng, m)).unwrap()
}

/// Gaussian RBF kernel written out directly.
pub fn rbf(a: &[f64], b: &[f64], sigma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-d2 / (2.0 * sigma * sigma)).exp()
}

/// The unbiased estimator as the U-statistic over pairs `i != j` of
/// `h(v_i, v_j) = k(x_i, x_j) + k(y_i, y_j) - k(x_i, y_j) - k(x_j, y_i)`.
pub fn mmd2_pairs(g: &GramBundle) -> f64 {
    let m = g.m();
    let mut s = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                s += g.ktxx.get(i, j) + g.ktyy.get(i, j) - g.kxy.get(i, j) - g.kxy.get(j, i);
            }
        }
    }
    s / (m * (m - 1)) as f64
}

/// Entries of the random test matrices are integer multiples of 2^-53, so
/// every contraction below is an exact integer in units of 2^-53 or 2^-106.
fn ints(a: &SquareMatrix) -> Vec<Vec<i128>> {
    let scale = (53f64).exp2();
    (0..a.n())
        .map(|i| {
            (0..a.n())
                .map(|j| {
                    let v = a.get(i, j) * scale;
                    assert_eq!(v.fract(), 0.0, "entry is not a multiple of 2^-53");
                    v as i128
                })
                .collect()
        })
        .collect()
}

fn transpose(a: &[Vec<i128>]) -> Vec<Vec<i128>> {
    (0..a.len()).map(|i| a.iter().map(|row| row[i]).collect()).collect()
}

fn sum_all(a: &[Vec<i128>]) -> i128 {
    a.iter().flatten().sum()
}

/// `||A e||^2` as the triple sum `sum_i sum_j sum_l A_ij A_il`.
fn row_sum_sq(a: &[Vec<i128>]) -> i128 {
    let m = a.len();
    let mut s = 0;
    for i in 0..m {
        for j in 0..m {
            for l in 0..m {
                s += a[i][j] * a[i][l];
            }
        }
    }
    s
}

fn fro_sq(a: &[Vec<i128>]) -> i128 {
    a.iter().flatten().map(|v| v * v).sum()
}

/// `e^T A B e` as `sum_i sum_j sum_l A_ij B_jl`.
fn bilinear(a: &[Vec<i128>], b: &[Vec<i128>]) -> i128 {
    let m = a.len();
    let mut s = 0;
    for i in 0..m {
        for j in 0..m {
            for l in 0..m {
                s += a[i][j] * b[j][l];
            }
        }
    }
    s
}

fn q(n: i128) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

/// Exact unbiased MMD² (pair-sum form) for matrices from [`random_bundle`],
/// rounded once to f64.
pub fn mmd2_exact(g: &GramBundle) -> f64 {
    let m = g.m();
    let (kxx, kyy, kxy) = (ints(&g.ktxx), ints(&g.ktyy), ints(&g.kxy));
    let mut s = 0i128;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                s += kxx[i][j] + kyy[i][j] - kxy[i][j] - kxy[j][i];
            }
        }
    }
    let v = q(s) / (q((m * (m - 1)) as i128) * q(1i128 << 53));
    v.to_f64().unwrap()
}

struct LongFormSums {
    m: i128,
    sxx: i128,
    syy: i128,
    sxy: i128,
    rxx: i128,
    ryy: i128,
    rxy: i128,
    ryx: i128,
    fxx: i128,
    fyy: i128,
    fxy: i128,
    xx_xy: i128,
    yy_yx: i128,
}

impl LongFormSums {
    fn of(g: &GramBundle) -> Self {
        let (kxx, kyy, kxy) = (ints(&g.ktxx), ints(&g.ktyy), ints(&g.kxy));
        let kyx = transpose(&kxy);
        Self {
            m: g.m() as i128,
            sxx: sum_all(&kxx),
            syy: sum_all(&kyy),
            sxy: sum_all(&kxy),
            rxx: row_sum_sq(&kxx),
            ryy: row_sum_sq(&kyy),
            rxy: row_sum_sq(&kxy),
            ryx: row_sum_sq(&kyx),
            fxx: fro_sq(&kxx),
            fyy: fro_sq(&kyy),
            fxy: fro_sq(&kxy),
            xx_xy: bilinear(&kxx, &kxy),
            yy_yx: bilinear(&kyy, &kyx),
        }
    }

    /// Every term of the long form as (coefficient, contraction in units of
    /// 2^-106), outer weights folded in.
    fn terms(&self) -> Vec<(BigRational, i128)> {
        let s = self;
        let m = q(s.m);
        let m1 = q(s.m - 1);
        let m2 = q(s.m - 2);
        let mm = &m * &m;
        let m3 = &mm * &m;
        let m4 = &mm * &mm;
        let d3 = &m * &m1 * &m2;
        let dsq = &mm * &m1 * &m1;
        let d21 = &mm * &m1;
        let d31 = &m3 * &m1;
        let d11 = &m * &m1;
        let one = q(1);
        let w1 = q(4) * &m2 / &d11;
        let w2 = q(2) / &d11;
        let zeta1 = vec![
            (&one / &d3, s.rxx - s.fxx),
            (-&one / &dsq, s.sxx * s.sxx),
            (&one / &d3, s.ryy - s.fyy),
            (-&one / &dsq, s.syy * s.syy),
            (&one / &d21, s.rxy - s.fxy),
            (-&one / &m4, s.sxy * s.sxy),
            (&one / &d21, s.ryx - s.fxy),
            (-&one / &m4, s.sxy * s.sxy),
            (q(-2) / &d21, s.xx_xy),
            (q(2) / &d31, s.sxx * s.sxy),
            (q(-2) / &d21, s.yy_yx),
            (q(2) / &d31, s.syy * s.sxy),
        ];
        let zeta2 = vec![
            (&one / &d11, s.fxx),
            (-&one / &dsq, s.sxx * s.sxx),
            (&one / &d11, s.fyy),
            (-&one / &dsq, s.syy * s.syy),
            (q(2) / &mm, s.fxy),
            (q(-2) / &m4, s.sxy * s.sxy),
            (q(-4) / &d21, s.xx_xy),
            (q(4) / &d31, s.sxx * s.sxy),
            (q(-4) / &d21, s.yy_yx),
            (q(4) / &d31, s.syy * s.sxy),
        ];
        zeta1
            .into_iter()
            .map(|(c, v)| (c * &w1, v))
            .chain(zeta2.into_iter().map(|(c, v)| (c * &w2, v)))
            .collect()
    }
}

/// Variance estimate in the long form `4(m-2)/(m(m-1)) [zeta_1 estimate]
/// + 2/(m(m-1)) [zeta_2 estimate]`, every term a literal sum, evaluated in
/// exact rational arithmetic for matrices from [`random_bundle`].
pub fn variance_long_form(g: &GramBundle) -> f64 {
    let total = LongFormSums::of(g)
        .terms()
        .into_iter()
        .fold(q(0), |acc, (c, v)| acc + c * q(v));
    (total / q(1i128 << 106)).to_f64().unwrap()
}

/// Sum of the absolute values of the long-form terms: the scale against
/// which rounding in any evaluation of the formula is measured.
pub fn variance_long_form_magnitude(g: &GramBundle) -> f64 {
    let total = LongFormSums::of(g)
        .terms()
        .into_iter()
        .fold(q(0), |acc, (c, v)| acc + (c * q(v)).abs());
    (total / q(1i128 << 106)).to_f64().unwrap()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn sample_variance(v: &[f64]) -> f64 {
    let mu = mean(v);
    v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (v.len() - 1) as f64
}
