//! Kernel choice: the median heuristic, grid search under the max-MMD,
//! max-t and max-power criteria, train/test splitting, and gradient ascent
//! of the t-statistic for (ARD-)RBF kernels.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataset::{check_pair, Dataset};
use crate::error::{Error, Result};
use crate::estimators::{estimate, estimate_power, t_statistic_gradient, DEFAULT_VARIANCE_FLOOR};
use crate::kernels::{gram_bundle, gram_with_gradients, joint_gram, KernelSpec};
use crate::nulldist::{sample_null_optimized, threshold};
use crate::optim::{Adam, AdamConfig};
use crate::par;
use crate::rng::{self, Domain};

/// Default number of grid bandwidths.
pub const DEFAULT_GRID_SIZE: usize = 30;
/// Default grid half-width, as a multiplicative factor around the median.
pub const DEFAULT_GRID_FACTOR: f64 = 32.0;
/// Pooled size above which the median heuristic subsamples.
pub const DEFAULT_MEDIAN_CAP: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Criterion {
    MaxMmd,
    MaxT,
    MaxPower,
    Median,
}

impl Criterion {
    pub fn name(self) -> &'static str {
        match self {
            Criterion::MaxMmd => "max-mmd",
            Criterion::MaxT => "max-t",
            Criterion::MaxPower => "max-power",
            Criterion::Median => "median",
        }
    }
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max-mmd" => Ok(Criterion::MaxMmd),
            "max-t" => Ok(Criterion::MaxT),
            "max-power" => Ok(Criterion::MaxPower),
            "median" => Ok(Criterion::Median),
            other => Err(Error::invalid(format!("unknown criterion {other:?}"))),
        }
    }
}

/// Median pairwise Euclidean distance over the pooled sample. Above `cap`
/// pooled points a fixed-seed uniform subsample of `cap` points is used.
pub fn median_heuristic(x: &Dataset, y: &Dataset, cap: usize) -> Result<f64> {
    let z = x.stack(y)?;
    if z.rows() < 2 {
        return Err(Error::TooFewSamples {
            what: "median heuristic",
            needed: 2,
            got: z.rows(),
        });
    }
    if cap < 2 {
        return Err(Error::invalid("median heuristic cap must be at least 2"));
    }
    let z = if z.rows() > cap {
        let mut rng = rng::stream(0, Domain::MedianSubsample, 0);
        let mut picked = index::sample(&mut rng, z.rows(), cap).into_vec();
        picked.sort_unstable();
        z.select(&picked)
    } else {
        z
    };
    let n = z.rows();
    let mut dists: Vec<f64> = par::map_range(n, |i| {
        let zi = z.row(i);
        (i + 1..n)
            .map(|j| {
                zi.iter()
                    .zip(z.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect::<Vec<_>>()
    })
    .concat();
    let len = dists.len();
    let mid = len / 2;
    let (lower, upper, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    let median = if len % 2 == 1 {
        upper
    } else {
        let lower_max = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower_max + upper)
    };
    if !(median > 0.0) {
        return Err(Error::Numerical("median pairwise distance is zero".into()));
    }
    Ok(median)
}

/// `count` log-spaced bandwidths from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) || count == 0 {
        return Err(Error::invalid(format!("bad bandwidth grid [{lo}, {hi}] x {count}")));
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect())
}

/// RBF candidates log-spaced over `[median / factor, median * factor]`.
pub fn default_grid(median: f64) -> Result<Vec<KernelSpec>> {
    log_grid(median / DEFAULT_GRID_FACTOR, median * DEFAULT_GRID_FACTOR, DEFAULT_GRID_SIZE)?
        .into_iter()
        .map(KernelSpec::rbf)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectConfig {
    pub alpha: f64,
    /// Permutations per candidate for the max-power criterion.
    pub permutations: usize,
    pub seed: u64,
    pub floor: f64,
    pub threads: usize,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            permutations: 1000,
            seed: 0,
            floor: DEFAULT_VARIANCE_FLOOR,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateScore {
    pub kernel: KernelSpec,
    pub bandwidth: f64,
    pub mmd2: f64,
    pub variance: f64,
    pub t_stat: f64,
    /// Only for max-power: `c_alpha` on the `m * MMD²` scale and the plug-in power.
    pub threshold: Option<f64>,
    pub power_estimate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionReport {
    pub criterion: Criterion,
    pub candidates: Vec<CandidateScore>,
    pub chosen: usize,
    pub split_seed: u64,
}

impl SelectionReport {
    pub fn chosen_kernel(&self) -> &KernelSpec {
        &self.candidates[self.chosen].kernel
    }

    /// The same scored candidates judged under another criterion. Max-power
    /// needs a report that was scored with max-power.
    pub fn reselect(&self, criterion: Criterion) -> Result<SelectionReport> {
        if criterion == Criterion::MaxPower && self.candidates.iter().any(|c| c.power_estimate.is_none()) {
            return Err(Error::invalid("candidates were scored without power estimates"));
        }
        let mut report = SelectionReport {
            criterion,
            ..self.clone()
        };
        report.chosen = if criterion == Criterion::Median { 0 } else { argmax(&report) };
        Ok(report)
    }

    fn score(&self, c: &CandidateScore) -> f64 {
        let v = match self.criterion {
            Criterion::MaxMmd => c.mmd2,
            Criterion::MaxT => c.t_stat,
            Criterion::MaxPower => c.power_estimate.unwrap_or(f64::NEG_INFINITY),
            Criterion::Median => 0.0,
        };
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }
}

/// Index of the best candidate; ties go to the smaller bandwidth, then the
/// earlier candidate.
fn argmax(report: &SelectionReport) -> usize {
    let mut best = 0;
    for (i, c) in report.candidates.iter().enumerate().skip(1) {
        let (s, b) = (report.score(c), report.score(&report.candidates[best]));
        if s > b || (s == b && c.bandwidth < report.candidates[best].bandwidth) {
            best = i;
        }
    }
    best
}

fn score_candidate(x: &Dataset, y: &Dataset, spec: &KernelSpec, criterion: Criterion, cfg: &SelectConfig, index: usize) -> Result<CandidateScore> {
    let m = x.rows();
    let (est, threshold_m, power) = if criterion == Criterion::MaxPower {
        let k = joint_gram(spec, x, y)?;
        let est = estimate(&k.bundle(), cfg.floor)?;
        let seed = rng::derive_seed(cfg.seed, &[index as u64]);
        let null = sample_null_optimized(&k, cfg.permutations, seed, cfg.threads)?;
        let c_alpha = m as f64 * threshold(&null, cfg.alpha)?;
        let power = estimate_power(est.mmd2, est.variance.max(cfg.floor), c_alpha, m)?;
        (est, Some(c_alpha), Some(power))
    } else {
        (estimate(&gram_bundle(spec, x, y)?, cfg.floor)?, None, None)
    };
    Ok(CandidateScore {
        kernel: spec.clone(),
        bandwidth: spec.bandwidth(),
        mmd2: est.mmd2,
        variance: est.variance,
        t_stat: est.t_stat,
        threshold: threshold_m,
        power_estimate: power,
    })
}

/// Scores every candidate on `(x, y)` and picks the best under `criterion`.
/// With [`Criterion::Median`] the candidates are scored but the first one is
/// reported as chosen.
pub fn grid_select(x: &Dataset, y: &Dataset, candidates: &[KernelSpec], criterion: Criterion, cfg: &SelectConfig) -> Result<SelectionReport> {
    if candidates.is_empty() {
        return Err(Error::invalid("no candidate kernels"));
    }
    check_pair(x, y, 4, "kernel selection")?;
    let scored = par::map_range(candidates.len(), |i| score_candidate(x, y, &candidates[i], criterion, cfg, i));
    let candidates = scored.into_iter().collect::<Result<Vec<_>>>()?;
    let mut report = SelectionReport {
        criterion,
        candidates,
        chosen: 0,
        split_seed: cfg.seed,
    };
    if criterion != Criterion::Median {
        report.chosen = argmax(&report);
    }
    Ok(report)
}

/// Median-heuristic RBF kernel, reported as a one-candidate selection.
pub fn median_select(x: &Dataset, y: &Dataset, cfg: &SelectConfig) -> Result<SelectionReport> {
    let spec = KernelSpec::rbf(median_heuristic(x, y, DEFAULT_MEDIAN_CAP)?)?;
    grid_select(x, y, &[spec], Criterion::Median, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub x_train: Dataset,
    pub y_train: Dataset,
    pub x_test: Dataset,
    pub y_test: Dataset,
    /// Row indices into the original X (train then test); Y uses `y_order`.
    pub x_order: Vec<usize>,
    pub y_order: Vec<usize>,
    pub n_train: usize,
}

/// Seeded split into training and testing halves with `round(fraction * m)`
/// training rows on each side.
pub fn split_train_test(x: &Dataset, y: &Dataset, fraction: f64, seed: u64) -> Result<Split> {
    let m = check_pair(x, y, 8, "train/test split")?;
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("split fraction {fraction} must lie in (0, 1)")));
    }
    let n_train = (fraction * m as f64).round() as usize;
    if n_train < 4 || m - n_train < 4 {
        return Err(Error::TooFewSamples {
            what: "each side of a train/test split",
            needed: 4,
            got: n_train.min(m - n_train),
        });
    }
    let shuffle = |stream: u64| {
        let mut rng = rng::stream(seed, Domain::Split, stream);
        index::sample(&mut rng, m, m).into_vec()
    };
    let (x_order, y_order) = (shuffle(0), shuffle(1));
    Ok(Split {
        x_train: x.select(&x_order[..n_train]),
        y_train: y.select(&y_order[..n_train]),
        x_test: x.select(&x_order[n_train..]),
        y_test: y.select(&y_order[n_train..]),
        x_order,
        y_order,
        n_train,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub floor: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            learning_rate: adam.learning_rate,
            iterations: 200,
            batch_size: 500,
            floor: DEFAULT_VARIANCE_FLOOR,
            seed: 0,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainOutcome {
    pub kernel: KernelSpec,
    /// t-statistic on the minibatch of each iteration, before its update.
    pub trace: Vec<f64>,
}

/// Value and gradient of the t-statistic on `(x, y)` with respect to the
/// kernel's log-parameters.
pub fn t_statistic_and_gradient(spec: &KernelSpec, x: &Dataset, y: &Dataset, floor: f64) -> Result<(f64, Vec<f64>)> {
    let (g, dg) = gram_with_gradients(spec, x, y)?;
    let (est, grad) = t_statistic_gradient(&g, &dg, floor)?;
    Ok((est.t_stat, grad))
}

/// Stochastic gradient ascent of the t-statistic. Each iteration draws one
/// set of `batch_size` row indices without replacement and applies it to both
/// samples; zero iterations return `init` unchanged.
pub fn train_ard(x_train: &Dataset, y_train: &Dataset, init: &KernelSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let m = check_pair(x_train, y_train, 4, "kernel training")?;
    if !(cfg.learning_rate >= 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::invalid(format!("learning rate {} must be finite and non-negative", cfg.learning_rate)));
    }
    if cfg.batch_size < 4 || cfg.batch_size > m {
        return Err(Error::invalid(format!("batch size {} must lie in [4, {m}]", cfg.batch_size)));
    }
    init.validate()?;
    let mut params = init.params();
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
        },
        params.len(),
    );
    let mut trace = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let spec = init.with_params(&params)?;
        let (xb, yb) = if cfg.batch_size == m {
            (x_train.clone(), y_train.clone())
        } else {
            let mut rng = rng::stream(cfg.seed, Domain::Minibatch, it as u64);
            let idx = index::sample(&mut rng, m, cfg.batch_size).into_vec();
            (x_train.select(&idx), y_train.select(&idx))
        };
        let (t, grad) = t_statistic_and_gradient(&spec, &xb, &yb, cfg.floor)?;
        trace.push(t);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!("non-finite gradient at iteration {it}")));
        }
        if cfg.learning_rate > 0.0 {
            adam.ascend(&mut params, &grad);
        }
    }
    Ok(TrainOutcome {
        kernel: init.with_params(&params)?,
        trace,
    })
}
