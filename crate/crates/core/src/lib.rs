//! Kernel two-sample testing with test-power-optimized kernels.
//!
//! The pieces, bottom-up:
//!
//! - [`kernels`]: RBF and ARD-RBF kernels, Gram blocks and their parameter
//!   gradients.
//! - [`estimators`]: the unbiased MMD² estimator, its variance estimator, the
//!   t-statistic and its gradient.
//! - [`nulldist`]: the permutation null distribution (a single-pass,
//!   cache-friendly sampler and a naive reference), thresholds and p-values.
//! - [`selection`]: median heuristic, grid selection by max-MMD / max-t /
//!   max-power, ARD training with Adam.
//! - [`criticism`]: witness function evaluation.
//! - [`datasets`], [`experiment`], [`bench`]: Blobs and Gauss-vs-Laplace
//!   data, rejection-rate experiments and sampler benchmarks.
//!
//! Parallel work runs on rayon with the default `parallel` feature; without it
//! everything runs sequentially and produces identical results.

pub mod bench;
pub mod criticism;
pub mod dataset;
pub mod datasets;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod kernels;
pub mod nulldist;
pub mod optim;
pub(crate) mod par;
pub mod rng;
pub mod selection;

pub use criticism::{witness, witness_report, WitnessReport};
pub use dataset::Dataset;
pub use datasets::{blobs_generate, gauss_vs_laplace, read_dataset, write_dataset, BlobsParams, DataFormat};
pub use error::{Error, Result};
pub use estimators::{estimate, estimate_power, mmd2_u, t_statistic, t_statistic_gradient, variance_hat, EstimatorOutput, DEFAULT_VARIANCE_FLOOR};
pub use kernels::{eval_kernel, gram_bundle, gram_with_gradients, joint_gram, GramBundle, JointGram, KernelKind, KernelSpec, SquareMatrix};
pub use nulldist::{p_value, sample_null_naive, sample_null_optimized, test_decision, test_with_gram, threshold, two_sample_test, Decision, NullSamples, TestResult};
pub use selection::{default_grid, grid_select, median_heuristic, median_select, split_train_test, train_ard, Criterion, SelectConfig, SelectionReport, TrainConfig};
