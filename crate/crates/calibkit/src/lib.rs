//! Calibration error estimation and calibration testing for multi-class
//! probabilistic classifiers.
//!
//! The crate estimates the squared kernel calibration error of a model
//! from a validation set of labeled predictions with three consistent
//! estimators (biased plug-in, unbiased quadratic, unbiased linear),
//! estimates the expected calibration error by histogram regression, and
//! turns the estimates into hypothesis tests of strong calibration:
//! distribution-free p-value bounds, an asymptotic normal test, a
//! bootstrap test, and consistency resampling. Dirichlet–Categorical
//! generative models with closed-form calibration errors support synthetic
//! experiments with known ground truth.
//!
//! Everything is deterministic: randomized operations take explicit seeds
//! and derive per-unit ChaCha8 streams (see [`rng`]), so results are
//! bit-identical across runs and thread counts.

pub mod dataset;
pub mod error;
pub mod estimators;
pub mod hypothesis;
pub mod kernels;
pub mod numerics;
pub mod rng;
pub mod synth;

pub use dataset::{
    load_dataset_csv, validate_dataset, write_dataset_csv, LabeledDataset, PredictionRecord,
    SimplexVector,
};
pub use error::{Error, Result};
pub use estimators::{
    ece_histogram, h_term, max_lens, mmce_squared, partition, skce_biased, skce_linear,
    skce_unbiased, BinningSpec, EceEstimate, SkceEstimate, SkceEstimator,
};
pub use hypothesis::{
    distfree_threshold, pvalue_bound_biased, pvalue_bound_unbiased, test_consistency_resampling,
    test_distribution_free, test_linear_asymptotic, test_quadratic_bootstrap, TestMethod,
    TestResult,
};
pub use kernels::{
    mean_tv_bandwidth, median_heuristic, tv_distance, uniform_bound, BandwidthSpec, Distance,
    KernelBound, KernelConfig, KernelFamily, MatrixKernel, NormIndex, PsdMatrix, ScalarKernel,
};
pub use synth::{
    sample_categorical, sample_dataset, sample_dirichlet, theoretical_ece_tv, GenerativeConfig,
    ModelPreset,
};
