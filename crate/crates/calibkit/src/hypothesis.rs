//! Calibration tests: distribution-free p-value bounds, the asymptotic
//! normal test for the linear estimator, the bootstrap test for the
//! quadratic unbiased estimator, and consistency resampling for the
//! histogram expected calibration error.
//!
//! All tests are one-sided for the null hypothesis that the model is
//! strongly calibrated. Bootstrap p-values use add-one smoothing
//! (1 + count) / (1 + rounds) so they never reach zero, and every round
//! draws from its own random stream so results do not depend on
//! scheduling.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;

use crate::dataset::{LabeledDataset, PredictionRecord};
use crate::error::{Error, Result};
use crate::estimators::{
    ece_histogram, h_matrix, linear_pair_terms, skce_biased, skce_linear, skce_unbiased,
    BinningSpec, SkceEstimator,
};
use crate::kernels::{uniform_bound, MatrixKernel, NormIndex};
use crate::numerics::{normal_cdf, sample_std};
use crate::rng::stream_rng;
use crate::synth::sample_categorical;

/// Test method; the short labels match the experiment conventions
/// (D_* distribution-free, A_* asymptotic, C consistency resampling).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestMethod {
    DistFreeBiased,
    DistFreeUnbiased,
    DistFreeLinear,
    AsymptoticLinear,
    AsymptoticQuadraticBootstrap,
    ConsistencyResampling,
}

impl TestMethod {
    pub fn label(self) -> &'static str {
        match self {
            TestMethod::DistFreeBiased => "D_b",
            TestMethod::DistFreeUnbiased => "D_uq",
            TestMethod::DistFreeLinear => "D_ul",
            TestMethod::AsymptoticLinear => "A_l",
            TestMethod::AsymptoticQuadraticBootstrap => "A_uq",
            TestMethod::ConsistencyResampling => "C",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "D_b" => Ok(TestMethod::DistFreeBiased),
            "D_uq" => Ok(TestMethod::DistFreeUnbiased),
            "D_ul" => Ok(TestMethod::DistFreeLinear),
            "A_l" => Ok(TestMethod::AsymptoticLinear),
            "A_uq" => Ok(TestMethod::AsymptoticQuadraticBootstrap),
            "C" => Ok(TestMethod::ConsistencyResampling),
            other => Err(Error::bad_param(format!(
                "unknown test method {other:?}; expected D_b, D_uq, D_ul, A_l, A_uq, or C"
            ))),
        }
    }
}

/// Outcome of a calibration test: the statistic, a p-value (or an upper
/// bound on it), and every parameter needed to reproduce the result.
#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    pub method: TestMethod,
    pub statistic: f64,
    pub pvalue: f64,
    pub params: BTreeMap<String, String>,
}

impl TestResult {
    pub fn reject_at(&self, alpha: f64) -> bool {
        self.pvalue <= alpha
    }
}

fn param_map(entries: &[(&str, String)]) -> BTreeMap<String, String> {
    entries
        .iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect()
}

/// Distribution-free upper bound on the p-value of the biased estimate t:
/// exp(−½ (max{0, √(n t / B) − 1})²).
pub fn pvalue_bound_biased(t: f64, n: usize, b: f64) -> Result<f64> {
    if t < 0.0 || t.is_nan() {
        return Err(Error::bad_param(format!(
            "biased estimate must be non-negative, got {t}"
        )));
    }
    if n == 0 {
        return Err(Error::bad_param("need n >= 1"));
    }
    if b <= 0.0 || b.is_nan() {
        return Err(Error::bad_param(format!("bound B must be positive, got {b}")));
    }
    let root = (n as f64 * t / b).sqrt();
    let excess = (root - 1.0).max(0.0);
    Ok((-0.5 * excess * excess).exp())
}

/// Distribution-free upper bound on the p-value of either unbiased
/// estimate t: exp(−⌊n/2⌋ t² / (2 B²)); one-sided, so t ≤ 0 yields 1.
pub fn pvalue_bound_unbiased(t: f64, n: usize, b: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    if b <= 0.0 || b.is_nan() {
        return Err(Error::bad_param(format!("bound B must be positive, got {b}")));
    }
    if t.is_nan() {
        return Err(Error::bad_param("estimate is NaN"));
    }
    if t <= 0.0 {
        return Ok(1.0);
    }
    let half = (n / 2) as f64;
    Ok((-half * t * t / (2.0 * b * b)).exp())
}

/// Rejection threshold of the distribution-free test at level α:
///
/// * biased: (B/n)^{1/2} (1 + √(−2 ln α)), applied to the square root of
///   the biased estimate (the un-squared calibration error);
/// * unbiased and linear: B ⌊n/2⌋^{−1/2} √(−2 ln α), applied to the
///   estimate itself.
///
/// Rejecting when the statistic reaches the threshold gives level ≤ α.
pub fn distfree_threshold(method: TestMethod, alpha: f64, n: usize, b: f64) -> Result<f64> {
    if alpha.is_nan() || alpha <= 0.0 || alpha > 1.0 {
        return Err(Error::bad_param(format!(
            "significance level must lie in (0, 1], got {alpha}"
        )));
    }
    if b <= 0.0 || b.is_nan() {
        return Err(Error::bad_param(format!("bound B must be positive, got {b}")));
    }
    let spread = (-2.0 * alpha.ln()).sqrt();
    match method {
        TestMethod::DistFreeBiased => {
            if n == 0 {
                return Err(Error::bad_param("need n >= 1"));
            }
            Ok((b / n as f64).sqrt() * (1.0 + spread))
        }
        TestMethod::DistFreeUnbiased | TestMethod::DistFreeLinear => {
            if n < 2 {
                return Err(Error::TooFewSamples { needed: 2, got: n });
            }
            Ok(b / ((n / 2) as f64).sqrt() * spread)
        }
        other => Err(Error::bad_param(format!(
            "no distribution-free threshold for {}",
            other.label()
        ))),
    }
}

/// Distribution-free test: the matching estimator plus its p-value bound
/// with B_pq from the kernel's uniform bound.
pub fn test_distribution_free(
    kernel: &MatrixKernel,
    ds: &LabeledDataset,
    estimator: SkceEstimator,
    p: NormIndex,
    q: NormIndex,
) -> Result<TestResult> {
    let bound = uniform_bound(kernel, p, q)?;
    let n = ds.len();
    let (method, statistic, pvalue) = match estimator {
        SkceEstimator::Biased => {
            let est = skce_biased(kernel, ds)?;
            let pv = pvalue_bound_biased(est.value, n, bound.b_pq)?;
            (TestMethod::DistFreeBiased, est.value, pv)
        }
        SkceEstimator::UnbiasedQuadratic => {
            let est = skce_unbiased(kernel, ds)?;
            let pv = pvalue_bound_unbiased(est.value, n, bound.b_pq)?;
            (TestMethod::DistFreeUnbiased, est.value, pv)
        }
        SkceEstimator::UnbiasedLinear => {
            let est = skce_linear(kernel, ds)?;
            let pv = pvalue_bound_unbiased(est.value, n, bound.b_pq)?;
            (TestMethod::DistFreeLinear, est.value, pv)
        }
    };
    Ok(TestResult {
        method,
        statistic,
        pvalue,
        params: param_map(&[
            ("n", n.to_string()),
            ("B_pq", bound.b_pq.to_string()),
            ("K_pq", bound.k_pq.to_string()),
            ("p", bound.p.label().to_string()),
            ("q", bound.q.label().to_string()),
            ("kernel", kernel.describe()),
        ]),
    })
}

/// Asymptotic test for the linear estimator: the pair terms are i.i.d., so
/// under the null √⌊n/2⌋ · t / σ̂ is asymptotically standard normal, with
/// σ̂ the sample standard deviation of the pair terms.
///
/// If σ̂ = 0 the normal approximation degenerates; the p-value is taken as
/// the limit: 1 for a statistic ≤ 0 and 0 otherwise.
pub fn test_linear_asymptotic(kernel: &MatrixKernel, ds: &LabeledDataset) -> Result<TestResult> {
    let n = ds.len();
    if n < 4 {
        return Err(Error::TooFewSamples { needed: 4, got: n });
    }
    let terms = linear_pair_terms(kernel, ds)?;
    let pairs = terms.len() as f64;
    let statistic = terms.iter().sum::<f64>() / pairs;
    let sigma = sample_std(&terms)?;

    let (pvalue, degenerate) = if sigma == 0.0 {
        (if statistic > 0.0 { 0.0 } else { 1.0 }, true)
    } else {
        (1.0 - normal_cdf(pairs.sqrt() * statistic / sigma), false)
    };

    let mut params = param_map(&[
        ("n", n.to_string()),
        ("sigma_hat", sigma.to_string()),
        ("kernel", kernel.describe()),
    ]);
    if degenerate {
        params.insert("degenerate_sigma".into(), "true".into());
    }
    Ok(TestResult {
        method: TestMethod::AsymptoticLinear,
        statistic,
        pvalue,
        params,
    })
}

/// Bootstrap test for the quadratic unbiased estimator. The statistic is
/// n · SKCE_uq; its null distribution is approximated by the degenerate
/// U-statistic bootstrap
///
///   T = 2n⁻¹ Σ_{i<j} [h(Z*_i, Z*_j) − mean_k h(Z*_i, Z_k)
///                     − mean_k h(Z_k, Z*_j) + mean_{k,l} h(Z_k, Z_l)]
///
/// with Z* resampled with replacement from the dataset. The pair terms,
/// their row means, and the grand mean are computed once; each round then
/// only indexes into the cached matrix. Round b draws from stream b + 1 of
/// the seed, so the p-value is reproducible for a fixed seed regardless of
/// thread count.
pub fn test_quadratic_bootstrap(
    kernel: &MatrixKernel,
    ds: &LabeledDataset,
    n_boot: usize,
    seed: u64,
) -> Result<TestResult> {
    let n = ds.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    if n_boot == 0 {
        return Err(Error::bad_param("need at least one bootstrap round"));
    }

    let matrix = h_matrix(kernel, ds)?;
    let total: f64 = matrix.iter().sum();
    let diagonal: f64 = (0..n).map(|i| matrix[i * n + i]).sum();
    let row_means: Vec<f64> = (0..n)
        .map(|i| matrix[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64)
        .collect();
    let grand_mean = total / (n * n) as f64;

    let unbiased = (total - diagonal) / (n * (n - 1)) as f64;
    let statistic = n as f64 * unbiased;

    let exceed: usize = (0..n_boot)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|round| {
            let mut rng = stream_rng(seed, round as u64 + 1);
            let draws: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let mut acc = 0.0;
            for (pos, &a) in draws.iter().enumerate() {
                for &b in &draws[pos + 1..] {
                    acc += matrix[a * n + b] - row_means[a] - row_means[b] + grand_mean;
                }
            }
            let t = 2.0 * acc / n as f64;
            usize::from(t >= statistic)
        })
        .sum();

    let pvalue = (1 + exceed) as f64 / (n_boot + 1) as f64;
    Ok(TestResult {
        method: TestMethod::AsymptoticQuadraticBootstrap,
        statistic,
        pvalue,
        params: param_map(&[
            ("n", n.to_string()),
            ("boot", n_boot.to_string()),
            ("seed", seed.to_string()),
            ("kernel", kernel.describe()),
        ]),
    })
}

/// Consistency resampling test for the histogram expected calibration
/// error: each round resamples n predictions with replacement, draws every
/// label from its own resampled prediction (the calibrated null), and
/// recomputes the estimate. Round b draws from stream b + 1 of the seed.
pub fn test_consistency_resampling(
    ds: &LabeledDataset,
    binning: BinningSpec,
    n_boot: usize,
    seed: u64,
) -> Result<TestResult> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if n_boot == 0 {
        return Err(Error::bad_param("need at least one bootstrap round"));
    }

    let statistic = ece_histogram(ds, binning)?.value;
    let n = ds.len();
    let records = ds.records();

    let exceed: usize = (0..n_boot)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|round| {
            let mut rng = stream_rng(seed, round as u64 + 1);
            let resampled: Vec<PredictionRecord> = (0..n)
                .map(|_| {
                    let prediction = records[rng.random_range(0..n)].prediction().clone();
                    let label = sample_categorical(&prediction, &mut rng);
                    PredictionRecord::new(prediction, label)
                        .expect("sampled label is always in range")
                })
                .collect();
            let resampled_ds = LabeledDataset::new(resampled, ds.class_count())
                .expect("resampled records share the class count");
            let ece = ece_histogram(&resampled_ds, binning)
                .expect("resampled dataset is non-empty")
                .value;
            usize::from(ece >= statistic)
        })
        .sum();

    let pvalue = (1 + exceed) as f64 / (n_boot + 1) as f64;
    Ok(TestResult {
        method: TestMethod::ConsistencyResampling,
        statistic,
        pvalue,
        params: param_map(&[
            ("n", n.to_string()),
            ("boot", n_boot.to_string()),
            ("seed", seed.to_string()),
            ("binning", binning.describe()),
        ]),
    })
}
