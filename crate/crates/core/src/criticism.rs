//! Witness-function evaluation for model criticism.
//!
//! The witness `f(t) = mean_i k(X_i, t) - mean_j k(Y_j, t)` is positive where
//! the first sample is over-represented and negative where the second one is.

use serde::Serialize;

use crate::dataset::{check_same_dim, Dataset};
use crate::error::{Error, Result};
use crate::estimators::pairwise_sum;
use crate::kernels::{cross_gram, KernelSpec};

/// Witness value at every probe row. `x` and `y` may have different sizes.
pub fn witness(spec: &KernelSpec, x: &Dataset, y: &Dataset, probes: &Dataset) -> Result<Vec<f64>> {
    check_same_dim(x, y)?;
    check_same_dim(x, probes)?;
    if x.rows() == 0 || y.rows() == 0 {
        return Err(Error::TooFewSamples {
            what: "witness function",
            needed: 1,
            got: x.rows().min(y.rows()),
        });
    }
    let kx = cross_gram(spec, probes, x)?;
    let ky = cross_gram(spec, probes, y)?;
    let (nx, ny) = (x.rows() as f64, y.rows() as f64);
    Ok(kx
        .iter()
        .zip(&ky)
        .map(|(a, b)| pairwise_sum(a) / nx - pairwise_sum(b) / ny)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WitnessReport {
    pub values: Vec<f64>,
    /// Indices of the largest values, largest first.
    pub top_positive: Vec<usize>,
    /// Indices of the smallest values, smallest first.
    pub top_negative: Vec<usize>,
    /// Mean witness over probes labeled as first-sample minus the mean over
    /// second-sample probes, when labels are given.
    pub mean_gap: Option<f64>,
}

/// The `k` largest and `k` smallest entries; ties go to the lower index.
pub fn extremes(values: &[f64], k: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if k > values.len() {
        return Err(Error::invalid(format!("asked for {k} extremes of {} values", values.len())));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let top = order[..k].to_vec();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let bottom = order[..k].to_vec();
    Ok((top, bottom))
}

/// Witness values, extremes and (with `labels`, `true` = first sample) the
/// gap between the group means.
pub fn witness_report(
    spec: &KernelSpec,
    x: &Dataset,
    y: &Dataset,
    probes: &Dataset,
    k: usize,
    labels: Option<&[bool]>,
) -> Result<WitnessReport> {
    let values = witness(spec, x, y, probes)?;
    let (top_positive, top_negative) = extremes(&values, k)?;
    let mean_gap = match labels {
        None => None,
        Some(l) if l.len() != values.len() => {
            return Err(Error::DimensionMismatch {
                expected: values.len(),
                found: l.len(),
            })
        }
        Some(l) => {
            let mean = |want: bool| {
                let sel: Vec<f64> = values.iter().zip(l).filter(|(_, &g)| g == want).map(|(v, _)| *v).collect();
                if sel.is_empty() {
                    f64::NAN
                } else {
                    pairwise_sum(&sel) / sel.len() as f64
                }
            };
            Some(mean(true) - mean(false))
        }
    };
    Ok(WitnessReport {
        values,
        top_positive,
        top_negative,
        mean_gap,
    })
}
