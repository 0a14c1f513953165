//! Permutation null distribution of the MMD² statistic, quantile threshold,
//! p-value and the complete two-sample test.
//!
//! Two samplers share one statistical contract:
//!
//! * [`sample_null_optimized`] never touches the kernel matrix in permuted
//!   order. For each round it inverts the permutation into a per-point group
//!   mask and then streams the upper triangle of the pooled Gram matrix row by
//!   row. Several rounds share one pass over the matrix, and rounds are spread
//!   over worker threads.
//! * [`sample_null_naive`] materializes the permuted matrix for every round and
//!   reads its blocks directly. It is the correctness oracle and the benchmark
//!   baseline.
//!
//! Kernel entries are accumulated in 2^-48 fixed point. Integer addition is
//! associative, so the statistic of a split does not depend on traversal
//! order: the two samplers agree bit for bit, and results do not depend on
//! the thread count.

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::dataset::{check_pair, Dataset};
use crate::error::{Error, Result};
use crate::kernels::{joint_gram, JointGram, KernelSpec};
use crate::rng::{self, Domain};

const FIXED_SCALE: f64 = (1u64 << 48) as f64;
const MAGIC: f64 = (1u64 << 52) as f64;

/// Largest pooled size for which a row of fixed-point entries fits in `u64`.
pub const MAX_POOLED: usize = 1 << 15;

/// Rounds sharing one sweep over the Gram matrix.
const ROUNDS_PER_SWEEP: usize = 16;

/// Round-to-nearest fixed point for `v` in `[0, 1]`.
#[inline(always)]
fn quantize(v: f64) -> u64 {
    (v * FIXED_SCALE + MAGIC).to_bits() - MAGIC.to_bits()
}

/// `2 * (S_xx + S_yy - S_xy + S_diag)` in fixed-point units, converted to the
/// unbiased MMD² of the split.
#[inline]
fn statistic_from_fixed(twice_num: i128, m: usize) -> f64 {
    let mf = m as f64;
    (twice_num as f64 / FIXED_SCALE) / (mf * (mf - 1.0))
}

/// Read access to a pooled kernel matrix. Implemented by [`JointGram`] and
/// by instrumented wrappers that record the access pattern.
pub trait RowSource: Sync {
    /// Pooled size `2m`.
    fn size(&self) -> usize;
    /// Entries `start..size()` of `row`.
    fn row_tail(&self, row: usize, start: usize) -> &[f64];
    fn entry(&self, i: usize, j: usize) -> f64;
}

impl RowSource for JointGram {
    #[inline]
    fn size(&self) -> usize {
        self.n()
    }

    #[inline]
    fn row_tail(&self, row: usize, start: usize) -> &[f64] {
        &self.matrix().row(row)[start..]
    }

    #[inline]
    fn entry(&self, i: usize, j: usize) -> f64 {
        self.matrix().get(i, j)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NullSamples {
    /// Unscaled MMD² of each permuted split, in round order.
    pub values: Vec<f64>,
    pub seed: u64,
}

impl NullSamples {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Writes the permutation for `round` into `perm` (a uniform shuffle of
/// `0..perm.len()`). Positions `0..m` form the first pseudo-sample.
pub fn fill_permutation(perm: &mut [u32], seed: u64, round: u64) {
    for (i, p) in perm.iter_mut().enumerate() {
        *p = i as u32;
    }
    let mut rng = rng::stream(seed, Domain::Permutation, round);
    perm.shuffle(&mut rng);
}

/// Per-worker scratch for one sweep over the matrix.
pub(crate) struct Sweep {
    n: usize,
    m: usize,
    /// `masks[r * n + a]` is all ones when point `a` lands in the second
    /// pseudo-sample in slot `r`.
    masks: Vec<u64>,
    /// `partner[r * n + a]`: the point paired with `a` at the same within-group
    /// position; those pairs form the excluded diagonal of the cross block.
    partner: Vec<u32>,
    perm: Vec<u32>,
    row: Vec<u64>,
    quad: Vec<i128>,
    diag: Vec<u64>,
    slots: usize,
}

impl Sweep {
    pub(crate) fn new(n: usize, capacity: usize) -> Self {
        Self {
            n,
            m: n / 2,
            masks: vec![0; capacity * n],
            partner: vec![0; capacity * n],
            perm: vec![0; n],
            row: vec![0; n],
            quad: vec![0; capacity],
            diag: vec![0; capacity],
            slots: 0,
        }
    }

    fn reset(&mut self) {
        self.slots = 0;
    }

    /// Inverts a split permutation into the label and partner arrays of the
    /// next free slot.
    fn push(&mut self, perm: &[u32]) {
        let (n, m, slot) = (self.n, self.m, self.slots);
        let masks = &mut self.masks[slot * n..(slot + 1) * n];
        let partner = &mut self.partner[slot * n..(slot + 1) * n];
        for (pos, &a) in perm.iter().enumerate() {
            let a = a as usize;
            masks[a] = if pos >= m { u64::MAX } else { 0 };
            let other = if pos >= m { pos - m } else { pos + m };
            partner[a] = perm[other];
        }
        self.quad[slot] = 0;
        self.diag[slot] = 0;
        self.slots += 1;
    }

    fn push_round(&mut self, seed: u64, round: u64) {
        let mut perm = std::mem::take(&mut self.perm);
        fill_permutation(&mut perm, seed, round);
        self.push(&perm);
        self.perm = perm;
    }

    /// One pass over the strict upper triangle, row-major, each entry read
    /// once and shared by every active slot.
    ///
    /// With `s_a = +1` for the first pseudo-sample and `-1` for the second,
    /// `S_xx + S_yy - S_xy = sum_a s_a * sum_{b > a} s_b K_ab`, and the inner sum
    /// is the row total minus twice the masked (second-sample) part.
    fn run<S: RowSource + ?Sized>(&mut self, src: &S) {
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2, checked just above.
            unsafe { self.run_avx2(src) };
            return;
        }
        self.run_body(src);
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn run_avx2<S: RowSource + ?Sized>(&mut self, src: &S) {
        self.run_body(src);
    }

    #[inline(always)]
    fn run_body<S: RowSource + ?Sized>(&mut self, src: &S) {
        let (n, slots) = (self.n, self.slots);
        for a in 0..n - 1 {
            let tail = src.row_tail(a, a + 1);
            let len = tail.len();
            let row = &mut self.row[..len];
            for (q, &v) in row.iter_mut().zip(tail) {
                *q = quantize(v);
            }
            let total = row.iter().fold(0u64, |acc, &q| acc.wrapping_add(q));
            for r in 0..slots {
                let base = r * n;
                let masks = &self.masks[base + a + 1..base + n];
                let masked = row
                    .iter()
                    .zip(masks)
                    .fold(0u64, |acc, (&q, &mk)| acc.wrapping_add(q & mk));
                let signed = total as i128 - 2 * masked as i128;
                if self.masks[base + a] == 0 {
                    self.quad[r] += signed;
                } else {
                    self.quad[r] -= signed;
                }
                let p = self.partner[base + a] as usize;
                if p > a {
                    self.diag[r] += row[p - a - 1];
                }
            }
        }
    }

    fn statistic(&self, slot: usize) -> f64 {
        statistic_from_fixed(2 * (self.quad[slot] + self.diag[slot] as i128), self.m)
    }
}

fn check_sampler_input(n: usize, b: usize) -> Result<()> {
    if b == 0 {
        return Err(Error::invalid("number of permutations must be at least 1"));
    }
    if n > MAX_POOLED {
        return Err(Error::invalid(format!("pooled size {n} exceeds the sampler limit {MAX_POOLED}")));
    }
    Ok(())
}

/// Runs rounds `first..first + out.len()` with the sweep sampler.
pub(crate) fn sweep_rounds<S: RowSource + ?Sized>(src: &S, seed: u64, first: u64, out: &mut [f64], sweep: &mut Sweep) {
    for (c, chunk) in out.chunks_mut(ROUNDS_PER_SWEEP).enumerate() {
        sweep.reset();
        for i in 0..chunk.len() {
            sweep.push_round(seed, first + (c * ROUNDS_PER_SWEEP + i) as u64);
        }
        sweep.run(src);
        for (i, o) in chunk.iter_mut().enumerate() {
            *o = sweep.statistic(i);
        }
    }
}

pub(crate) fn sample_optimized_from<S: RowSource + ?Sized>(src: &S, b: usize, seed: u64, threads: usize) -> Result<Vec<f64>> {
    let n = src.size();
    check_sampler_input(n, b)?;
    if threads == 0 {
        return Err(Error::invalid("thread count must be at least 1"));
    }
    let mut out = vec![0.0; b];
    run_partitioned(src, seed, 0, &mut out, threads)?;
    Ok(out)
}

#[cfg(feature = "parallel")]
fn run_partitioned<S: RowSource + ?Sized>(src: &S, seed: u64, first: u64, out: &mut [f64], threads: usize) -> Result<()> {
    use rayon::prelude::*;
    let n = src.size();
    if threads == 1 {
        sweep_rounds(src, seed, first, out, &mut Sweep::new(n, ROUNDS_PER_SWEEP));
        return Ok(());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start {threads} worker threads: {e}")))?;
    pool.install(|| {
        out.par_chunks_mut(ROUNDS_PER_SWEEP).enumerate().for_each_init(
            || Sweep::new(n, ROUNDS_PER_SWEEP),
            |sweep, (c, chunk)| sweep_rounds(src, seed, first + (c * ROUNDS_PER_SWEEP) as u64, chunk, sweep),
        );
    });
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn run_partitioned<S: RowSource + ?Sized>(src: &S, seed: u64, first: u64, out: &mut [f64], _threads: usize) -> Result<()> {
    sweep_rounds(src, seed, first, out, &mut Sweep::new(src.size(), ROUNDS_PER_SWEEP));
    Ok(())
}

/// `b` permutation-null MMD² values from the sequential-sweep sampler.
/// The output is a pure function of `(k, b, seed)`.
pub fn sample_null_optimized(k: &JointGram, b: usize, seed: u64, threads: usize) -> Result<NullSamples> {
    Ok(NullSamples {
        values: sample_optimized_from(k, b, seed, threads)?,
        seed,
    })
}

/// MMD² of the split given by `perm` (first `m` positions form X'), computed
/// by copying the permuted matrix and summing its blocks.
pub(crate) fn naive_split_statistic<S: RowSource + ?Sized>(src: &S, perm: &[u32], scratch: &mut Vec<f64>) -> f64 {
    let n = src.size();
    let m = n / 2;
    scratch.clear();
    scratch.reserve(n * n);
    for &pa in perm {
        for &pb in perm {
            scratch.push(src.entry(pa as usize, pb as usize));
        }
    }
    let p = &scratch[..];
    let block_upper = |lo: usize, hi: usize| -> u128 {
        let mut s = 0u128;
        for i in lo..hi {
            for j in i + 1..hi {
                s += quantize(p[i * n + j]) as u128;
            }
        }
        s
    };
    let s_xx = block_upper(0, m);
    let s_yy = block_upper(m, n);
    let mut s_xy = 0u128;
    for i in 0..m {
        for j in m..n {
            s_xy += quantize(p[i * n + j]) as u128;
        }
    }
    let s_diag: u128 = (0..m).map(|r| quantize(p[r * n + m + r]) as u128).sum();
    let twice_num = 2 * (s_xx as i128 + s_yy as i128 - s_xy as i128 + s_diag as i128);
    statistic_from_fixed(twice_num, m)
}

pub(crate) fn sample_naive_from<S: RowSource + ?Sized>(src: &S, b: usize, seed: u64) -> Result<Vec<f64>> {
    let n = src.size();
    check_sampler_input(n, b)?;
    let mut perm = vec![0u32; n];
    let mut scratch = Vec::new();
    Ok((0..b as u64)
        .map(|round| {
            fill_permutation(&mut perm, seed, round);
            naive_split_statistic(src, &perm, &mut scratch)
        })
        .collect())
}

/// Reference sampler: same permutations, same values, permuted copy per round.
pub fn sample_null_naive(k: &JointGram, b: usize, seed: u64) -> Result<NullSamples> {
    Ok(NullSamples {
        values: sample_naive_from(k, b, seed)?,
        seed,
    })
}

/// MMD² of an arbitrary split (`perm[..m]` is X'), via the sweep path.
pub fn split_statistic(k: &JointGram, perm: &[u32]) -> Result<f64> {
    let n = k.n();
    if perm.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: perm.len(),
        });
    }
    let mut seen = vec![false; n];
    for &p in perm {
        let p = p as usize;
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::invalid("split is not a permutation of the pooled indices"));
        }
    }
    check_sampler_input(n, 1)?;
    let mut sweep = Sweep::new(n, 1);
    sweep.push(perm);
    sweep.run(k);
    Ok(sweep.statistic(0))
}

/// MMD² of the original split (X first, Y second) on the null-sampler's
/// fixed-point path, so it is directly comparable with the null values.
pub fn observed_statistic(k: &JointGram) -> Result<f64> {
    let identity: Vec<u32> = (0..k.n() as u32).collect();
    split_statistic(k, &identity)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha {alpha} must lie in (0, 1)")));
    }
    Ok(())
}

fn quantile_rank(alpha: f64, b: usize) -> usize {
    // The small offset keeps e.g. 0.9 * 100 from rounding up to 91.
    let rank = ((1.0 - alpha) * (b as f64 + 1.0) - 1e-9).ceil();
    (rank.max(1.0) as usize).min(b)
}

/// Conservative permutation quantile: the `ceil((1 - alpha)(B + 1))`-th
/// smallest null value, clamped to `[1, B]`.
pub fn threshold(null: &NullSamples, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if null.is_empty() {
        return Err(Error::invalid("empty null sample"));
    }
    let b = null.len();
    let mut sorted = null.values.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[quantile_rank(alpha, b) - 1])
}

/// `(1 + #{null >= statistic}) / (B + 1)`.
pub fn p_value(null: &NullSamples, statistic: f64) -> f64 {
    let count = null.values.iter().filter(|&&v| v >= statistic).count();
    (1 + count) as f64 / (null.len() + 1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    /// `m * MMD²_u(X, Y)`.
    pub statistic: f64,
    /// `m * c_alpha` from the permutation null.
    pub threshold: f64,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
    pub permutations: usize,
    pub m: usize,
}

/// Test on a prebuilt pooled Gram matrix.
pub fn test_with_gram(k: &JointGram, alpha: f64, b: usize, seed: u64, threads: usize) -> Result<TestResult> {
    check_alpha(alpha)?;
    let stat = observed_statistic(k)?;
    let null = sample_null_optimized(k, b, seed, threads)?;
    let thr = threshold(&null, alpha)?;
    let mf = k.m() as f64;
    let (statistic, threshold) = (mf * stat, mf * thr);
    Ok(TestResult {
        statistic,
        threshold,
        p_value: p_value(&null, stat),
        reject: statistic > threshold,
        alpha,
        permutations: b,
        m: k.m(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Decision {
    /// `m * MMD²_u(X, Y)`.
    pub statistic: f64,
    pub reject: bool,
    /// Null rounds actually drawn.
    pub rounds: usize,
}

/// The reject/accept decision of [`test_with_gram`] with the same arguments,
/// drawing null rounds in order and stopping once the remaining rounds can no
/// longer change it.
pub fn test_decision(k: &JointGram, alpha: f64, b: usize, seed: u64, threads: usize) -> Result<Decision> {
    check_alpha(alpha)?;
    check_sampler_input(k.n(), b)?;
    if threads == 0 {
        return Err(Error::invalid("thread count must be at least 1"));
    }
    let mf = k.m() as f64;
    let statistic = mf * observed_statistic(k)?;
    let rank = quantile_rank(alpha, b);
    // Reject iff at least `rank` scaled null values fall below the statistic.
    let (mut below, mut done) = (0, 0);
    let block = ROUNDS_PER_SWEEP * threads;
    let mut buf = vec![0.0; block];
    while done < b {
        let len = block.min(b - done);
        run_partitioned(k, seed, done as u64, &mut buf[..len], threads)?;
        below += buf[..len].iter().filter(|&&v| mf * v < statistic).count();
        done += len;
        if below >= rank || done - below > b - rank {
            break;
        }
    }
    Ok(Decision {
        statistic,
        reject: below >= rank,
        rounds: done,
    })
}

pub fn two_sample_test(
    x: &Dataset,
    y: &Dataset,
    spec: &KernelSpec,
    alpha: f64,
    b: usize,
    seed: u64,
    threads: usize,
) -> Result<TestResult> {
    check_pair(x, y, 2, "two-sample test")?;
    check_alpha(alpha)?;
    let k = joint_gram(spec, x, y)?;
    test_with_gram(&k, alpha, b, seed, threads)
}
