//! Rejection-rate experiments on Blobs: each replicate draws an independent
//! training and test sample, picks a kernel on the training sample and runs
//! the permutation test on the test sample.

use std::collections::HashMap;

use serde::Serialize;

use crate::datasets::{blobs_generate, BlobsParams};
use crate::error::{Error, Result};
use crate::estimators::DEFAULT_VARIANCE_FLOOR;
use crate::kernels::{joint_gram, KernelSpec};
use crate::nulldist::{test_decision, Decision};
use crate::rng::derive_seed;
use crate::selection::{default_grid, grid_select, median_heuristic, Criterion, SelectConfig, DEFAULT_MEDIAN_CAP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Median,
    MaxMmd,
    MaxT,
    MaxPower,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Median, Method::MaxMmd, Method::MaxT, Method::MaxPower];

    pub fn name(self) -> &'static str {
        self.criterion().name()
    }

    fn criterion(self) -> Criterion {
        match self {
            Method::Median => Criterion::Median,
            Method::MaxMmd => Criterion::MaxMmd,
            Method::MaxT => Criterion::MaxT,
            Method::MaxPower => Criterion::MaxPower,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.parse::<Criterion>()? {
            Criterion::Median => Ok(Method::Median),
            Criterion::MaxMmd => Ok(Method::MaxMmd),
            Criterion::MaxT => Ok(Method::MaxT),
            Criterion::MaxPower => Ok(Method::MaxPower),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentConfig {
    pub m: usize,
    pub alpha: f64,
    /// Permutations for the test itself.
    pub permutations: usize,
    /// Permutations per candidate when selecting with max-power.
    pub select_permutations: usize,
    pub reps: usize,
    pub seed: u64,
    pub floor: f64,
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            m: 500,
            alpha: 0.1,
            permutations: 1000,
            select_permutations: 200,
            reps: 100,
            seed: 0,
            floor: DEFAULT_VARIANCE_FLOOR,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodOutcome {
    pub method: Method,
    pub bandwidth: f64,
    /// `m * MMD²_u` on the test sample.
    pub statistic: f64,
    pub reject: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Replicate {
    pub epsilon: f64,
    pub rep: usize,
    pub methods: Vec<MethodOutcome>,
    /// Rejections of every fixed-grid bandwidth, in grid order.
    pub fixed: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerRow {
    pub epsilon: f64,
    pub method: String,
    pub rejections: usize,
    pub reps: usize,
    pub rate: f64,
    pub stderr: f64,
    /// Median chosen bandwidth, or the grid bandwidth for `best`.
    pub bandwidth: f64,
}

fn eps_key(epsilon: f64) -> u64 {
    epsilon.to_bits()
}

/// Fixed candidate grid for one epsilon, centred on the median heuristic of a
/// pilot sample that is never used for testing.
pub fn pilot_grid(epsilon: f64, cfg: &ExperimentConfig) -> Result<Vec<KernelSpec>> {
    let seed = derive_seed(cfg.seed, &[eps_key(epsilon), u64::MAX]);
    let (x, y) = blobs_generate(&BlobsParams::new(epsilon, cfg.m, seed))?;
    default_grid(median_heuristic(&x, &y, DEFAULT_MEDIAN_CAP)?)
}

/// One replicate: every method selects on the same training sample and is
/// tested on the same test sample with the same permutations; every kernel
/// of `fixed_grid` is tested on that test sample as well. Tests stop drawing
/// permutations once their decision is settled.
pub fn run_replicate(epsilon: f64, rep: usize, methods: &[Method], fixed_grid: &[KernelSpec], cfg: &ExperimentConfig) -> Result<Replicate> {
    let key = [eps_key(epsilon), rep as u64];
    let seed_for = |tag: u64| derive_seed(cfg.seed, &[key[0], key[1], tag]);
    let (x_train, y_train) = blobs_generate(&BlobsParams::new(epsilon, cfg.m, seed_for(0)))?;
    let (x_test, y_test) = blobs_generate(&BlobsParams::new(epsilon, cfg.m, seed_for(1)))?;
    let perm_seed = seed_for(2);
    let select_cfg = SelectConfig {
        alpha: cfg.alpha,
        permutations: cfg.select_permutations,
        seed: seed_for(3),
        floor: cfg.floor,
        threads: cfg.threads,
    };
    let mut tested: HashMap<u64, Decision> = HashMap::new();
    let mut run_test = |spec: &KernelSpec| -> Result<Decision> {
        let bits = spec.bandwidth().to_bits();
        if let Some(d) = tested.get(&bits) {
            return Ok(*d);
        }
        let k = joint_gram(spec, &x_test, &y_test)?;
        let d = test_decision(&k, cfg.alpha, cfg.permutations, perm_seed, cfg.threads)?;
        tested.insert(bits, d);
        Ok(d)
    };

    let median = median_heuristic(&x_train, &y_train, DEFAULT_MEDIAN_CAP)?;
    let scored = if methods.iter().any(|&m| m != Method::Median) {
        let scoring = if methods.contains(&Method::MaxPower) { Criterion::MaxPower } else { Criterion::MaxT };
        Some(grid_select(&x_train, &y_train, &default_grid(median)?, scoring, &select_cfg)?)
    } else {
        None
    };
    let mut outcomes = Vec::with_capacity(methods.len());
    for &method in methods {
        let spec = match (&scored, method) {
            (Some(report), m) if m != Method::Median => report.reselect(m.criterion())?.chosen_kernel().clone(),
            _ => KernelSpec::rbf(median)?,
        };
        let d = run_test(&spec)?;
        outcomes.push(MethodOutcome {
            method,
            bandwidth: spec.bandwidth(),
            statistic: d.statistic,
            reject: d.reject,
        });
    }
    let fixed = fixed_grid
        .iter()
        .map(|spec| run_test(spec).map(|d| d.reject))
        .collect::<Result<Vec<_>>>()?;
    Ok(Replicate {
        epsilon,
        rep,
        methods: outcomes,
        fixed,
    })
}

fn rate_row(epsilon: f64, method: &str, rejections: usize, reps: usize, bandwidth: f64) -> PowerRow {
    let rate = rejections as f64 / reps as f64;
    PowerRow {
        epsilon,
        method: method.to_string(),
        rejections,
        reps,
        rate,
        stderr: (rate * (1.0 - rate) / reps as f64).sqrt(),
        bandwidth,
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Rejection rates per (epsilon, method). With `best`, a fixed pilot grid is
/// also tested on every replicate and the bandwidth with the highest
/// rejection rate is reported as method `best`.
pub fn power_curve(epsilons: &[f64], methods: &[Method], best: bool, cfg: &ExperimentConfig) -> Result<(Vec<PowerRow>, Vec<Replicate>)> {
    if cfg.reps == 0 {
        return Err(Error::invalid("need at least one replicate"));
    }
    if methods.is_empty() && !best {
        return Err(Error::invalid("no methods requested"));
    }
    let mut rows = Vec::new();
    let mut all = Vec::new();
    for &epsilon in epsilons {
        let grid = if best { pilot_grid(epsilon, cfg)? } else { Vec::new() };
        let reps = (0..cfg.reps)
            .map(|rep| run_replicate(epsilon, rep, methods, &grid, cfg))
            .collect::<Result<Vec<_>>>()?;
        for (i, &method) in methods.iter().enumerate() {
            let rejections = reps.iter().filter(|r| r.methods[i].reject).count();
            let bw = median(reps.iter().map(|r| r.methods[i].bandwidth).collect());
            rows.push(rate_row(epsilon, method.name(), rejections, cfg.reps, bw));
        }
        if best {
            let counts: Vec<usize> = (0..grid.len()).map(|j| reps.iter().filter(|r| r.fixed[j]).count()).collect();
            let j = (0..grid.len()).fold(0, |b, j| if counts[j] > counts[b] { j } else { b });
            rows.push(rate_row(epsilon, "best", counts[j], cfg.reps, grid[j].bandwidth()));
        }
        all.extend(reps);
    }
    Ok((rows, all))
}
