use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use optmmd::bench::{bench_gram, cache_profile, run_bench, summarize, BenchConfig, Variant};
use optmmd::experiment::{power_curve, ExperimentConfig, Method};
use optmmd::selection::{log_grid, DEFAULT_MEDIAN_CAP};
use optmmd::{
    blobs_generate, default_grid, estimate, gauss_vs_laplace, grid_select, median_heuristic, median_select, read_dataset,
    t_statistic, train_ard, two_sample_test, witness_report, write_dataset, BlobsParams, Criterion, DataFormat, Dataset,
    KernelKind, KernelSpec, SelectConfig, TrainConfig,
};

use crate::output::{emit, write_csv, write_json, Table};
use crate::{
    AuditArgs, BenchArgs, Cli, Command, GenArgs, GenKind, KernelArgs, PowerCurveArgs, SamplePaths, SelectArgs, TestArgs,
    TrainArgs, WitnessArgs,
};

pub fn run(cli: &Cli) -> Result<()> {
    if cli.threads == 0 {
        bail!("--threads must be at least 1");
    }
    match &cli.command {
        Command::Gen(a) => gen(cli, a),
        Command::Test(a) => test(cli, a),
        Command::Select(a) => select(cli, a),
        Command::Train(a) => train(cli, a),
        Command::PowerCurve(a) => curve(cli, a),
        Command::Witness(a) => witness(cli, a),
        Command::Bench(a) => bench(cli, a),
        Command::Audit(a) => audit(cli, a),
    }
}

/// 1 for usage errors (including invalid parameter values), 3 for numerical
/// failures and too-small samples, 2 for everything that comes from the data.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<optmmd::Error>() {
        None | Some(optmmd::Error::InvalidParameter(_)) => 1,
        Some(err) if !err.is_data_error() => 3,
        Some(_) => 2,
    }
}

/// On-disk kernel description: plain bandwidth and weights, no log space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct KernelFile {
    kind: KernelKind,
    bandwidth: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    weights: Vec<f64>,
}

impl KernelFile {
    fn of(spec: &KernelSpec) -> Self {
        Self {
            kind: spec.kind,
            bandwidth: spec.bandwidth(),
            weights: spec.weights(),
        }
    }

    fn spec(&self) -> optmmd::Result<KernelSpec> {
        match self.kind {
            KernelKind::Rbf if self.weights.is_empty() => KernelSpec::rbf(self.bandwidth),
            KernelKind::Rbf => Err(optmmd::Error::InvalidParameter("plain RBF kernel carries no weights".into())),
            KernelKind::ArdRbf => KernelSpec::ard(self.bandwidth, &self.weights),
        }
    }
}

fn kernel_json(spec: &KernelSpec) -> Value {
    serde_json::to_value(KernelFile::of(spec)).expect("kernel descriptions serialize")
}

fn read(path: &Path) -> optmmd::Result<Dataset> {
    read_dataset(path, DataFormat::from_path(path))
}

fn read_pair(p: &SamplePaths) -> optmmd::Result<(Dataset, Dataset)> {
    Ok((read(&p.x)?, read(&p.y)?))
}

fn resolve_kernel(k: &KernelArgs, weights: Option<&[f64]>, x: &Dataset, y: &Dataset) -> Result<KernelSpec> {
    if let Some(path) = &k.kernel {
        let text = std::fs::read_to_string(path).map_err(|source| optmmd::Error::Io {
            path: path.clone(),
            source,
        })?;
        let file: KernelFile = serde_json::from_str(&text).map_err(|e| optmmd::Error::Malformed {
            path: path.clone(),
            line: e.line() as u64,
            message: e.to_string(),
        })?;
        return Ok(file.spec()?);
    }
    let bandwidth = match k.bandwidth {
        Some(b) => b,
        None => median_heuristic(x, y, DEFAULT_MEDIAN_CAP)?,
    };
    Ok(match weights {
        Some(w) => KernelSpec::ard(bandwidth, w)?,
        None => KernelSpec::rbf(bandwidth)?,
    })
}

fn fmt(v: f64) -> String {
    v.to_string()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

fn gen(cli: &Cli, a: &GenArgs) -> Result<()> {
    let (x, y, params) = match a.kind {
        GenKind::Blobs => {
            let p = BlobsParams {
                grid_size: a.grid_size,
                spacing: a.spacing,
                ..BlobsParams::new(a.epsilon, a.m, cli.seed)
            };
            let (x, y) = blobs_generate(&p)?;
            (x, y, json!({"epsilon": a.epsilon, "grid_size": a.grid_size, "spacing": a.spacing}))
        }
        GenKind::GaussLaplace => {
            let (x, y) = gauss_vs_laplace(a.m, a.dim, cli.seed)?;
            (x, y, json!({"dim": a.dim}))
        }
    };
    write_dataset(&x, &a.x_out, DataFormat::from_path(&a.x_out))?;
    write_dataset(&y, &a.y_out, DataFormat::from_path(&a.y_out))?;
    let kind = match a.kind {
        GenKind::Blobs => "blobs",
        GenKind::GaussLaplace => "gauss-laplace",
    };
    let mut table = Table::new(&["sample", "path", "rows", "dim"]);
    for (name, ds, path) in [("x", &x, &a.x_out), ("y", &y, &a.y_out)] {
        table.push(vec![name.into(), path.display().to_string(), ds.rows().to_string(), ds.dim().to_string()]);
    }
    let value = json!({
        "kind": kind,
        "m": a.m,
        "dim": x.dim(),
        "seed": cli.seed,
        "params": params,
        "x": a.x_out.display().to_string(),
        "y": a.y_out.display().to_string(),
    });
    Ok(emit(cli, value, &table)?)
}

fn test(cli: &Cli, a: &TestArgs) -> Result<()> {
    let (x, y) = read_pair(&a.samples)?;
    let spec = resolve_kernel(&a.kernel, a.weights.as_deref(), &x, &y)?;
    let r = two_sample_test(&x, &y, &spec, a.alpha, a.perms, cli.seed, cli.threads)?;
    let est = if r.m >= 4 {
        let g = optmmd::gram_bundle(&spec, &x, &y)?;
        let e = estimate(&g, optmmd::DEFAULT_VARIANCE_FLOOR)?;
        json!({"mmd2": e.mmd2, "variance": e.variance, "t_stat": e.t_stat})
    } else {
        Value::Null
    };
    let mut table = Table::new(&["statistic", "threshold", "p_value", "reject", "alpha", "B", "m", "bandwidth", "seed"]);
    table.push(vec![
        fmt(r.statistic),
        fmt(r.threshold),
        fmt(r.p_value),
        r.reject.to_string(),
        fmt(r.alpha),
        r.permutations.to_string(),
        r.m.to_string(),
        fmt(spec.bandwidth()),
        cli.seed.to_string(),
    ]);
    let value = json!({
        "statistic": r.statistic,
        "threshold": r.threshold,
        "p_value": r.p_value,
        "reject": r.reject,
        "alpha": r.alpha,
        "B": r.permutations,
        "m": r.m,
        "kernel": kernel_json(&spec),
        "seed": cli.seed,
        "estimate": est,
    });
    Ok(emit(cli, value, &table)?)
}

fn parse_grid(text: &str) -> Result<Vec<KernelSpec>> {
    let parts: Vec<&str> = text.split(':').collect();
    let [lo, hi, count] = parts[..] else {
        bail!("--grid expects lo:hi:count, got {text:?}");
    };
    let lo: f64 = lo.parse().with_context(|| format!("bad grid lower bound {lo:?}"))?;
    let hi: f64 = hi.parse().with_context(|| format!("bad grid upper bound {hi:?}"))?;
    let count: usize = count.parse().with_context(|| format!("bad grid size {count:?}"))?;
    Ok(log_grid(lo, hi, count)?
        .into_iter()
        .map(KernelSpec::rbf)
        .collect::<optmmd::Result<_>>()?)
}

fn select(cli: &Cli, a: &SelectArgs) -> Result<()> {
    let (x, y) = read_pair(&a.samples)?;
    let cfg = SelectConfig {
        alpha: a.alpha,
        permutations: a.perms,
        seed: cli.seed,
        threads: cli.threads,
        ..SelectConfig::default()
    };
    let report = if a.median {
        median_select(&x, &y, &cfg)?
    } else {
        let criterion: Criterion = a.criterion.parse()?;
        let grid = match &a.grid {
            Some(g) => parse_grid(g)?,
            None => default_grid(median_heuristic(&x, &y, DEFAULT_MEDIAN_CAP)?)?,
        };
        grid_select(&x, &y, &grid, criterion, &cfg)?
    };
    let chosen = report.chosen_kernel().clone();
    if let Some(path) = &a.kernel_out {
        write_json(Some(path), kernel_json(&chosen))?;
    }
    let mut table = Table::new(&[
        "index", "bandwidth", "mmd2", "variance", "t_stat", "threshold", "power_estimate", "chosen",
    ]);
    let mut candidates = Vec::new();
    for (i, c) in report.candidates.iter().enumerate() {
        table.push(vec![
            i.to_string(),
            fmt(c.bandwidth),
            fmt(c.mmd2),
            fmt(c.variance),
            fmt(c.t_stat),
            fmt_opt(c.threshold),
            fmt_opt(c.power_estimate),
            (i == report.chosen).to_string(),
        ]);
        candidates.push(json!({
            "bandwidth": c.bandwidth,
            "mmd2": c.mmd2,
            "variance": c.variance,
            "t_stat": c.t_stat,
            "threshold": c.threshold,
            "power_estimate": c.power_estimate,
        }));
    }
    let value = json!({
        "criterion": report.criterion.name(),
        "chosen": report.chosen,
        "kernel": kernel_json(&chosen),
        "alpha": a.alpha,
        "B": a.perms,
        "seed": cli.seed,
        "candidates": candidates,
    });
    Ok(emit(cli, value, &table)?)
}

fn train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let (x, y) = read_pair(&a.samples)?;
    let bandwidth = match a.bandwidth {
        Some(b) => b,
        None => median_heuristic(&x, &y, DEFAULT_MEDIAN_CAP)?,
    };
    let init = if a.ard {
        KernelSpec::ard_from_rbf(bandwidth, x.dim())?
    } else {
        KernelSpec::rbf(bandwidth)?
    };
    let cfg = TrainConfig {
        learning_rate: a.lr,
        iterations: a.iterations,
        batch_size: a.batch.min(x.rows()),
        floor: a.floor,
        seed: cli.seed,
        ..TrainConfig::default()
    };
    let outcome = train_ard(&x, &y, &init, &cfg)?;
    let t_of = |spec: &KernelSpec| -> optmmd::Result<f64> { t_statistic(&optmmd::gram_bundle(spec, &x, &y)?, a.floor) };
    let (t_initial, t_final) = (t_of(&init)?, t_of(&outcome.kernel)?);
    let mut table = Table::new(&["iteration", "t_stat"]);
    for (i, t) in outcome.trace.iter().enumerate() {
        table.push(vec![i.to_string(), fmt(*t)]);
    }
    if let Some(path) = &a.trace {
        write_csv(Some(path), &table)?;
    }
    let value = json!({
        "kernel": kernel_json(&outcome.kernel),
        "init": kernel_json(&init),
        "iterations": a.iterations,
        "learning_rate": a.lr,
        "batch_size": cfg.batch_size,
        "seed": cli.seed,
        "t_initial": t_initial,
        "t_final": t_final,
        "trace": outcome.trace,
    });
    Ok(emit(cli, value, &table)?)
}

fn curve(cli: &Cli, a: &PowerCurveArgs) -> Result<()> {
    let mut methods = Vec::new();
    let mut best = a.best;
    for name in &a.methods {
        if name == "best" {
            best = true;
        } else {
            methods.push(name.parse::<Method>()?);
        }
    }
    let cfg = ExperimentConfig {
        m: a.m,
        alpha: a.alpha,
        permutations: a.perms,
        select_permutations: a.select_perms,
        reps: a.reps,
        seed: cli.seed,
        threads: cli.threads,
        ..ExperimentConfig::default()
    };
    let (rows, reps) = power_curve(&a.epsilons, &methods, best, &cfg)?;
    if let Some(path) = &a.bandwidths {
        let mut t = Table::new(&["epsilon", "rep", "method", "bandwidth", "reject"]);
        for r in &reps {
            for o in &r.methods {
                t.push(vec![fmt(r.epsilon), r.rep.to_string(), o.method.name().into(), fmt(o.bandwidth), o.reject.to_string()]);
            }
        }
        write_csv(Some(path), &t)?;
    }
    let mut table = Table::new(&["epsilon", "method", "rejection_rate", "stderr", "rejections", "reps", "bandwidth"]);
    for r in &rows {
        table.push(vec![
            fmt(r.epsilon),
            r.method.clone(),
            fmt(r.rate),
            fmt(r.stderr),
            r.rejections.to_string(),
            r.reps.to_string(),
            fmt(r.bandwidth),
        ]);
    }
    let value = json!({
        "m": a.m,
        "alpha": a.alpha,
        "B": a.perms,
        "seed": cli.seed,
        "rows": rows.iter().map(|r| json!({
            "epsilon": r.epsilon,
            "method": r.method,
            "rejection_rate": r.rate,
            "stderr": r.stderr,
            "rejections": r.rejections,
            "reps": r.reps,
            "bandwidth": r.bandwidth,
        })).collect::<Vec<_>>(),
    });
    Ok(emit(cli, value, &table)?)
}

fn witness(cli: &Cli, a: &WitnessArgs) -> Result<()> {
    let (x, y) = read_pair(&a.samples)?;
    let spec = resolve_kernel(&a.kernel, None, &x, &y)?;
    let (probes, labels) = match &a.probes {
        Some(p) => (read(p)?, None),
        None => {
            let labels: Vec<bool> = (0..x.rows()).map(|_| true).chain((0..y.rows()).map(|_| false)).collect();
            (x.stack(&y)?, Some(labels))
        }
    };
    let report = witness_report(&spec, &x, &y, &probes, a.top, labels.as_deref())?;
    let extremes = json!({
        "kernel": kernel_json(&spec),
        "top": a.top,
        "top_positive": report.top_positive,
        "top_negative": report.top_negative,
        "mean_gap": report.mean_gap,
    });
    if let Some(path) = &a.extremes {
        write_json(Some(path), extremes.clone())?;
    }
    let mut table = Table::new(&["index", "witness", "label"]);
    for (i, v) in report.values.iter().enumerate() {
        let label = match &labels {
            Some(l) if l[i] => "x",
            Some(_) => "y",
            None => "",
        };
        table.push(vec![i.to_string(), fmt(*v), label.into()]);
    }
    let mut value = extremes;
    value["values"] = json!(report.values);
    Ok(emit(cli, value, &table)?)
}

fn bench(cli: &Cli, a: &BenchArgs) -> Result<()> {
    let variants = a.variants.iter().map(|v| v.parse::<Variant>()).collect::<optmmd::Result<Vec<_>>>()?;
    let grams = a.sizes.iter().map(|&m| bench_gram(m, cli.seed)).collect::<optmmd::Result<Vec<_>>>()?;
    let cfg = BenchConfig {
        permutations: a.perms,
        threads: a.thread_counts.clone(),
        variants: variants.clone(),
        reps: a.reps,
        seed: cli.seed,
    };
    let records = run_bench(&grams, &cfg)?;
    let mut table = Table::new(&["m", "B", "threads", "variant", "rep", "wall_seconds"]);
    for r in &records {
        table.push(vec![
            r.m.to_string(),
            r.permutations.to_string(),
            r.threads.to_string(),
            r.variant.name().into(),
            r.rep.to_string(),
            fmt(r.wall_seconds),
        ]);
    }
    let mut summary = Vec::new();
    for &m in &a.sizes {
        for &threads in &a.thread_counts {
            for &variant in &variants {
                if let Some((mean, min)) = summarize(&records, m, threads, variant) {
                    summary.push(json!({"m": m, "threads": threads, "variant": variant.name(), "mean_seconds": mean, "min_seconds": min}));
                }
            }
        }
    }
    let value = json!({"B": a.perms, "reps": a.reps, "seed": cli.seed, "records": records, "summary": summary});
    Ok(emit(cli, value, &table)?)
}

fn audit(cli: &Cli, a: &AuditArgs) -> Result<()> {
    let variant: Variant = a.variant.parse()?;
    let r = cache_profile(a.m, a.perms, variant, cli.seed)?;
    let mut table = Table::new(&[
        "variant",
        "m",
        "rounds",
        "max_entries_per_round",
        "monotone",
        "max_reads_per_entry",
        "sequential_fraction",
        "passes",
    ]);
    table.push(vec![
        variant.name().into(),
        r.m.to_string(),
        r.rounds.to_string(),
        r.max_entries_per_round.to_string(),
        r.monotone.to_string(),
        r.max_reads_per_entry.to_string(),
        fmt(r.sequential_fraction),
        r.passes.to_string(),
    ]);
    Ok(emit(cli, serde_json::to_value(&r)?, &table)?)
}
