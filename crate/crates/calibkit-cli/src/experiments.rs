//! Replicated synthetic experiments: sample R datasets per model, compute
//! estimates or p-values on each, and lay the results out as CSV tables.
//!
//! Each (model, replicate) cell derives its own seed from the master seed,
//! and seeded tests derive method-specific seeds from the replicate seed,
//! so results are independent of worker count and gathering order. Rows
//! are emitted sorted by (model, estimator/method, replicate).

use anyhow::{anyhow, bail};
use rayon::prelude::*;

use calibkit::rng::derive_seed;
use calibkit::{
    ece_histogram, sample_dataset, skce_biased, skce_linear, skce_unbiased,
    test_consistency_resampling, test_distribution_free, test_linear_asymptotic,
    test_quadratic_bootstrap, theoretical_ece_tv, BinningSpec, GenerativeConfig, KernelConfig,
    ModelPreset, NormIndex, SkceEstimator, TestMethod,
};

/// Seed-derivation tags for the seeded test methods.
const TAG_BOOTSTRAP: u64 = 1;
const TAG_CONSISTENCY: u64 = 2;

#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    pub config: GenerativeConfig,
}

impl ModelSpec {
    pub fn preset(preset: ModelPreset) -> Self {
        Self {
            name: preset.name().to_string(),
            config: preset.config(),
        }
    }
}

pub struct ExperimentSetup {
    pub models: Vec<ModelSpec>,
    pub replicates: usize,
    pub samples: usize,
    pub kernel: KernelConfig,
    pub seed: u64,
    pub boot: usize,
    pub binning: BinningSpec,
    pub norm_p: NormIndex,
    pub norm_q: NormIndex,
}

impl ExperimentSetup {
    fn replicate_seed(&self, model_idx: usize, replicate: usize) -> u64 {
        derive_seed(self.seed, ((model_idx as u64) << 32) | replicate as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EstimatorKind {
    EceMedian,
    EceUniform,
    SkceB,
    SkceUl,
    SkceUq,
}

impl EstimatorKind {
    pub fn label(self) -> &'static str {
        match self {
            EstimatorKind::EceMedian => "ece_median",
            EstimatorKind::EceUniform => "ece_uniform",
            EstimatorKind::SkceB => "skce_b",
            EstimatorKind::SkceUl => "skce_ul",
            EstimatorKind::SkceUq => "skce_uq",
        }
    }

    fn is_skce(self) -> bool {
        matches!(
            self,
            EstimatorKind::SkceB | EstimatorKind::SkceUl | EstimatorKind::SkceUq
        )
    }
}

pub fn parse_estimators(text: &str) -> anyhow::Result<Vec<EstimatorKind>> {
    let mut kinds: Vec<EstimatorKind> = text
        .split(',')
        .map(|name| match name.trim() {
            "skce_b" => Ok(EstimatorKind::SkceB),
            "skce_uq" => Ok(EstimatorKind::SkceUq),
            "skce_ul" => Ok(EstimatorKind::SkceUl),
            "ece_uniform" => Ok(EstimatorKind::EceUniform),
            "ece_median" => Ok(EstimatorKind::EceMedian),
            other => Err(anyhow!(
                "unknown estimator {other:?}; expected skce_b, skce_uq, skce_ul, ece_uniform, or ece_median"
            )),
        })
        .collect::<anyhow::Result<_>>()?;
    if kinds.is_empty() {
        bail!("no estimators selected");
    }
    kinds.sort();
    kinds.dedup();
    Ok(kinds)
}

pub struct ErrorsReport {
    pub rows_csv: String,
    pub summary_csv: String,
}

/// Per-replicate estimates plus the unbiased quadratic estimate used as the
/// empirical ground truth for the kernel calibration error.
struct ErrorsCell {
    values: Vec<f64>,
    skce_uq: Option<f64>,
}

pub fn run_errors(
    setup: &ExperimentSetup,
    estimators: &[EstimatorKind],
    bins_uniform: usize,
    bins_min: usize,
) -> anyhow::Result<ErrorsReport> {
    let needs_kernel = estimators.iter().any(|e| e.is_skce());
    let uniform = BinningSpec::UniformPerClass {
        bins_per_class: bins_uniform,
    };
    let median = BinningSpec::MedianVarianceSplit {
        min_per_bin: bins_min,
    };

    let mut rows = String::from("model,estimator,replicate,estimate\n");
    let mut summary = String::from("model,estimator,mean,truth\n");

    for (model_idx, model) in setup.models.iter().enumerate() {
        let cells: Vec<ErrorsCell> = (0..setup.replicates)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|replicate| -> anyhow::Result<ErrorsCell> {
                let seed = setup.replicate_seed(model_idx, replicate);
                let ds = sample_dataset(&model.config, setup.samples, seed)?;
                let kernel = if needs_kernel {
                    Some(setup.kernel.resolve(&ds, Some(model.config.alpha()))?)
                } else {
                    None
                };
                let skce_uq = match &kernel {
                    Some(kernel) => Some(skce_unbiased(kernel, &ds)?.value),
                    None => None,
                };
                let values = estimators
                    .iter()
                    .map(|kind| -> anyhow::Result<f64> {
                        let kernel = kernel.as_ref();
                        Ok(match kind {
                            EstimatorKind::SkceB => skce_biased(kernel.unwrap(), &ds)?.value,
                            EstimatorKind::SkceUq => skce_uq.unwrap(),
                            EstimatorKind::SkceUl => skce_linear(kernel.unwrap(), &ds)?.value,
                            EstimatorKind::EceUniform => ece_histogram(&ds, uniform)?.value,
                            EstimatorKind::EceMedian => ece_histogram(&ds, median)?.value,
                        })
                    })
                    .collect::<anyhow::Result<Vec<f64>>>()?;
                Ok(ErrorsCell { values, skce_uq })
            })
            .collect::<anyhow::Result<_>>()?;

        let skce_truth = if needs_kernel {
            cells.iter().filter_map(|c| c.skce_uq).sum::<f64>() / setup.replicates as f64
        } else {
            0.0
        };
        let ece_truth = theoretical_ece_tv(&model.config)?;

        for (e_idx, kind) in estimators.iter().enumerate() {
            for (replicate, cell) in cells.iter().enumerate() {
                rows.push_str(&format!(
                    "{},{},{},{}\n",
                    model.name,
                    kind.label(),
                    replicate,
                    cell.values[e_idx]
                ));
            }
            let mean =
                cells.iter().map(|c| c.values[e_idx]).sum::<f64>() / setup.replicates as f64;
            let truth = if kind.is_skce() { skce_truth } else { ece_truth };
            summary.push_str(&format!(
                "{},{},{},{}\n",
                model.name,
                kind.label(),
                mean,
                truth
            ));
        }
    }

    Ok(ErrorsReport {
        rows_csv: rows,
        summary_csv: summary,
    })
}

pub struct PvaluesReport {
    pub pvalues_csv: String,
    pub test_errors_csv: String,
}

pub fn run_pvalues(
    setup: &ExperimentSetup,
    methods: &[TestMethod],
    alpha_grid: &[f64],
) -> anyhow::Result<PvaluesReport> {
    let mut rows = String::from("model,method,replicate,pvalue\n");
    let mut errors = String::from("model,method,alpha,test_error\n");

    for (model_idx, model) in setup.models.iter().enumerate() {
        // replicate-major table, methods in the given (sorted) order
        let table: Vec<Vec<f64>> = (0..setup.replicates)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|replicate| -> anyhow::Result<Vec<f64>> {
                let seed = setup.replicate_seed(model_idx, replicate);
                let ds = sample_dataset(&model.config, setup.samples, seed)?;
                let kernel = setup.kernel.resolve(&ds, Some(model.config.alpha()))?;
                methods
                    .iter()
                    .map(|method| -> anyhow::Result<f64> {
                        let result = match method {
                            TestMethod::DistFreeBiased => test_distribution_free(
                                &kernel,
                                &ds,
                                SkceEstimator::Biased,
                                setup.norm_p,
                                setup.norm_q,
                            )?,
                            TestMethod::DistFreeUnbiased => test_distribution_free(
                                &kernel,
                                &ds,
                                SkceEstimator::UnbiasedQuadratic,
                                setup.norm_p,
                                setup.norm_q,
                            )?,
                            TestMethod::DistFreeLinear => test_distribution_free(
                                &kernel,
                                &ds,
                                SkceEstimator::UnbiasedLinear,
                                setup.norm_p,
                                setup.norm_q,
                            )?,
                            TestMethod::AsymptoticLinear => {
                                test_linear_asymptotic(&kernel, &ds)?
                            }
                            TestMethod::AsymptoticQuadraticBootstrap => test_quadratic_bootstrap(
                                &kernel,
                                &ds,
                                setup.boot,
                                derive_seed(seed, TAG_BOOTSTRAP),
                            )?,
                            TestMethod::ConsistencyResampling => test_consistency_resampling(
                                &ds,
                                setup.binning,
                                setup.boot,
                                derive_seed(seed, TAG_CONSISTENCY),
                            )?,
                        };
                        Ok(result.pvalue)
                    })
                    .collect()
            })
            .collect::<anyhow::Result<_>>()?;

        let calibrated = model.config.is_calibrated();
        for (m_idx, method) in methods.iter().enumerate() {
            for (replicate, row) in table.iter().enumerate() {
                rows.push_str(&format!(
                    "{},{},{},{}\n",
                    model.name,
                    method.label(),
                    replicate,
                    row[m_idx]
                ));
            }
            for &alpha in alpha_grid {
                let hits = table
                    .iter()
                    .filter(|row| {
                        if calibrated {
                            row[m_idx] <= alpha
                        } else {
                            row[m_idx] > alpha
                        }
                    })
                    .count();
                errors.push_str(&format!(
                    "{},{},{},{}\n",
                    model.name,
                    method.label(),
                    alpha,
                    hits as f64 / setup.replicates as f64
                ));
            }
        }
    }

    Ok(PvaluesReport {
        pvalues_csv: rows,
        test_errors_csv: errors,
    })
}
