//! Wall-clock benchmarks of the null samplers and an access-order audit of
//! how they read the pooled Gram matrix.

use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datasets::gauss_vs_laplace;
use crate::error::{Error, Result};
use crate::kernels::{joint_gram, JointGram, KernelSpec};
use crate::nulldist::{sample_naive_from, sample_optimized_from, sweep_rounds, RowSource, Sweep};
use crate::selection::{median_heuristic, DEFAULT_MEDIAN_CAP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Optimized,
    Naive,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Optimized => "optimized",
            Variant::Naive => "naive",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "optimized" => Ok(Variant::Optimized),
            "naive" => Ok(Variant::Naive),
            other => Err(Error::invalid(format!("unknown sampler variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRecord {
    pub m: usize,
    #[serde(rename = "B")]
    pub permutations: usize,
    pub threads: usize,
    pub variant: Variant,
    pub rep: usize,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub permutations: usize,
    pub threads: Vec<usize>,
    pub variants: Vec<Variant>,
    pub reps: usize,
    pub seed: u64,
}

/// Gaussian vs Laplace in 2-D with a median-heuristic RBF kernel, the
/// standard benchmark problem. Built outside any timed region.
pub fn bench_gram(m: usize, seed: u64) -> Result<JointGram> {
    if m < 4 {
        return Err(Error::TooFewSamples {
            what: "benchmark problem",
            needed: 4,
            got: m,
        });
    }
    let (x, y) = gauss_vs_laplace(m, 2, seed)?;
    let sigma = median_heuristic(&x, &y, DEFAULT_MEDIAN_CAP)?;
    joint_gram(&KernelSpec::rbf(sigma)?, &x, &y)
}

fn time_once(gram: &JointGram, variant: Variant, b: usize, seed: u64, threads: usize) -> Result<(f64, Vec<f64>)> {
    let start = Instant::now();
    let values = match variant {
        Variant::Optimized => sample_optimized_from(gram, b, seed, threads)?,
        Variant::Naive => sample_naive_from(gram, b, seed)?,
    };
    Ok((start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE), values))
}

/// Times every (gram, threads, variant) cell `reps` times after one untimed
/// warm-up run. The naive sampler is single-threaded and is timed only in
/// its `threads = 1` cell. Every timed run is checked against the naive
/// sampler on the leading rounds.
pub fn run_bench(grams: &[JointGram], cfg: &BenchConfig) -> Result<Vec<BenchRecord>> {
    if cfg.permutations == 0 || cfg.reps == 0 || cfg.threads.is_empty() || cfg.variants.is_empty() {
        return Err(Error::invalid("benchmark needs B >= 1, reps >= 1, threads and variants"));
    }
    if let Some(t) = cfg.threads.iter().find(|&&t| t == 0) {
        return Err(Error::invalid(format!("thread count {t} must be at least 1")));
    }
    let mut records = Vec::new();
    for gram in grams {
        let check_rounds = cfg.permutations.min(2);
        let reference = sample_naive_from(gram, check_rounds, cfg.seed)?;
        for &threads in &cfg.threads {
            for &variant in &cfg.variants {
                if variant == Variant::Naive && threads != 1 {
                    continue;
                }
                time_once(gram, variant, cfg.permutations, cfg.seed, threads)?;
                for rep in 0..cfg.reps {
                    let (secs, values) = time_once(gram, variant, cfg.permutations, cfg.seed, threads)?;
                    if values[..check_rounds] != reference[..] {
                        return Err(Error::Numerical(format!(
                            "{} sampler disagrees with the naive oracle at m = {}",
                            variant.name(),
                            gram.m()
                        )));
                    }
                    records.push(BenchRecord {
                        m: gram.m(),
                        permutations: cfg.permutations,
                        threads,
                        variant,
                        rep,
                        wall_seconds: secs,
                    });
                }
            }
        }
    }
    Ok(records)
}

/// Mean and minimum wall time of the records matching a cell.
pub fn summarize(records: &[BenchRecord], m: usize, threads: usize, variant: Variant) -> Option<(f64, f64)> {
    let times: Vec<f64> = records
        .iter()
        .filter(|r| r.m == m && r.threads == threads && r.variant == variant)
        .map(|r| r.wall_seconds)
        .collect();
    if times.is_empty() {
        return None;
    }
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let min = times.iter().copied().fold(f64::INFINITY, f64::min);
    Some((mean, min))
}

pub fn write_bench_csv<W: std::io::Write>(records: &[BenchRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["m", "B", "threads", "variant", "rep", "wall_seconds"])
        .and_then(|_| {
            for r in records {
                w.write_record([
                    r.m.to_string(),
                    r.permutations.to_string(),
                    r.threads.to_string(),
                    r.variant.name().to_string(),
                    r.rep.to_string(),
                    r.wall_seconds.to_string(),
                ])?;
            }
            w.flush().map_err(csv::Error::from)
        })
        .map_err(|e| Error::Io {
            path: "<bench output>".into(),
            source: std::io::Error::other(e),
        })
}

/// A [`RowSource`] that logs every read as `(first address, length)` in
/// units of matrix entries.
pub struct AuditedGram<'a> {
    inner: &'a JointGram,
    log: Mutex<Vec<(usize, usize)>>,
}

impl<'a> AuditedGram<'a> {
    pub fn new(inner: &'a JointGram) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    fn take_log(&self) -> Vec<(usize, usize)> {
        std::mem::take(&mut *self.log.lock().unwrap())
    }
}

impl RowSource for AuditedGram<'_> {
    fn size(&self) -> usize {
        self.inner.n()
    }

    fn row_tail(&self, row: usize, start: usize) -> &[f64] {
        let n = self.inner.n();
        self.log.lock().unwrap().push((row * n + start, n - start));
        self.inner.row_tail(row, start)
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        self.log.lock().unwrap().push((i * self.inner.n() + j, 1));
        self.inner.entry(i, j)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccessAudit {
    pub variant: Variant,
    pub m: usize,
    pub rounds: usize,
    /// Entries read in the worst round.
    pub max_entries_per_round: usize,
    /// Every read starts at or after the end of the previous one, in every round.
    pub monotone: bool,
    /// Largest number of times one entry was read within a single round.
    pub max_reads_per_entry: usize,
    /// Fraction of entries read that are not the start of a jump, a jump
    /// being a read that starts more than one 64-byte line past the end of
    /// the previous one: a portable stand-in for the prefetcher hit rate.
    pub sequential_fraction: f64,
    pub passes: bool,
}

fn audit_round(log: &[(usize, usize)], counts: &mut [u32]) -> (bool, usize, usize, usize) {
    counts.iter_mut().for_each(|c| *c = 0);
    let mut monotone = true;
    let mut jumps = 0;
    let mut prev_end: Option<usize> = None;
    let mut entries = 0;
    for &(start, len) in log {
        if let Some(end) = prev_end {
            if start < end {
                monotone = false;
            }
            if start < end || start - end >= 8 {
                jumps += 1;
            }
        }
        prev_end = Some(start + len);
        entries += len;
        for c in &mut counts[start..start + len] {
            *c += 1;
        }
    }
    let max_reads = counts.iter().copied().max().unwrap_or(0) as usize;
    (monotone, max_reads, jumps, entries)
}

/// Replays `b` permutation rounds of one sampler through an [`AuditedGram`]
/// and checks the access pattern round by round. The optimized sampler is
/// run one round per sweep so rounds can be audited separately; its values
/// are compared against the production sampler.
pub fn cache_profile(m: usize, b: usize, variant: Variant, seed: u64) -> Result<AccessAudit> {
    if b == 0 {
        return Err(Error::invalid("audit needs at least one round"));
    }
    let gram = bench_gram(m, seed)?;
    let audited = AuditedGram::new(&gram);
    let n = gram.n();
    let mut counts = vec![0u32; n * n];
    let (mut monotone, mut max_reads, mut jumps, mut entries, mut max_entries) = (true, 0, 0, 0, 0);
    let mut values = Vec::with_capacity(b);
    let mut sweep = Sweep::new(n, 1);
    for round in 0..b {
        let v = match variant {
            Variant::Optimized => {
                let mut out = [0.0];
                sweep_rounds(&audited, seed, round as u64, &mut out, &mut sweep);
                out[0]
            }
            Variant::Naive => {
                let mut perm = vec![0u32; n];
                crate::nulldist::fill_permutation(&mut perm, seed, round as u64);
                crate::nulldist::naive_split_statistic(&audited, &perm, &mut Vec::new())
            }
        };
        values.push(v);
        let log = audited.take_log();
        let (mono, reads, j, e) = audit_round(&log, &mut counts);
        monotone &= mono;
        max_reads = max_reads.max(reads);
        jumps += j;
        entries += e;
        max_entries = max_entries.max(e);
    }
    let expected = sample_optimized_from(&gram, b, seed, 1)?;
    if values != expected {
        return Err(Error::Numerical("audited replay disagrees with the sampler".into()));
    }
    let passes = monotone && max_reads <= 1;
    Ok(AccessAudit {
        variant,
        m,
        rounds: b,
        max_entries_per_round: max_entries,
        monotone,
        max_reads_per_entry: max_reads,
        sequential_fraction: 1.0 - jumps as f64 / entries.max(1) as f64,
        passes,
    })
}
