//! Estimators of the squared kernel calibration error, the histogram
//! expected calibration error with both binning schemes, and the maximum
//! mean calibration error as a binary special case.
//!
//! All estimators are built from the pair terms
//!
//!   h_{i,j} = (e_{Y_i} − g(X_i))ᵀ k(g(X_i), g(X_j)) (e_{Y_j} − g(X_j)).
//!
//! Three consistent estimators of the squared kernel calibration error:
//! the biased plug-in n⁻² Σ_{i,j} h_{i,j}, the unbiased U-statistic
//! (n choose 2)⁻¹ Σ_{i<j} h_{i,j}, and the linear-time unbiased
//! ⌊n/2⌋⁻¹ Σ h_{2i−1,2i} over consecutive disjoint pairs in dataset order.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::dataset::{LabeledDataset, PredictionRecord, SimplexVector};
use crate::error::{Error, Result};
use crate::kernels::{MatrixKernel, PsdMatrix, ScalarKernel};
use crate::numerics;

/// Which squared kernel calibration error estimator produced a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkceEstimator {
    Biased,
    UnbiasedQuadratic,
    UnbiasedLinear,
}

impl SkceEstimator {
    pub fn label(self) -> &'static str {
        match self {
            SkceEstimator::Biased => "skce_b",
            SkceEstimator::UnbiasedQuadratic => "skce_uq",
            SkceEstimator::UnbiasedLinear => "skce_ul",
        }
    }
}

/// A squared kernel calibration error estimate plus the inputs that
/// produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SkceEstimate {
    pub value: f64,
    pub estimator: SkceEstimator,
    pub n: usize,
    pub kernel: String,
}

/// The pair term h(a, b): residualᵀ k(pred_a, pred_b) residual. Symmetric
/// in (a, b).
pub fn h_term(kernel: &MatrixKernel, a: &PredictionRecord, b: &PredictionRecord) -> Result<f64> {
    kernel.quadform(&a.residual(), a.prediction(), b.prediction(), &b.residual())
}

/// Rows are chunked for the parallel pair sums; the chunk boundaries and
/// the reduction order are fixed so results are bit-stable across thread
/// counts.
const ROW_CHUNK: usize = 64;

/// Flat residual and prediction buffers for the O(n²) pair sums; keeps the
/// hot loop free of per-pair allocations.
struct PairContext<'a> {
    kernel: &'a MatrixKernel,
    n: usize,
    m: usize,
    residuals: Vec<f64>,
    preds: Vec<f64>,
}

impl<'a> PairContext<'a> {
    fn new(kernel: &'a MatrixKernel, ds: &'a LabeledDataset) -> Result<Self> {
        if ds.class_count() != kernel.dim() {
            return Err(Error::DimensionMismatch {
                expected: kernel.dim(),
                got: ds.class_count(),
            });
        }
        let n = ds.len();
        let m = ds.class_count();
        let mut residuals = vec![0.0; n * m];
        let mut preds = vec![0.0; n * m];
        for (i, rec) in ds.records().iter().enumerate() {
            rec.residual_into(&mut residuals[i * m..(i + 1) * m]);
            preds[i * m..(i + 1) * m].copy_from_slice(rec.prediction().entries());
        }
        Ok(Self {
            kernel,
            n,
            m,
            residuals,
            preds,
        })
    }

    fn h(&self, i: usize, j: usize) -> f64 {
        let m = self.m;
        let s = &self.preds[i * m..(i + 1) * m];
        let t = &self.preds[j * m..(j + 1) * m];
        let u = &self.residuals[i * m..(i + 1) * m];
        let v = &self.residuals[j * m..(j + 1) * m];
        self.kernel.quadform_slices(u, s, t, v)
    }

    /// Sum of h over unordered pairs i < j, each term computed once.
    fn offdiagonal_sum(&self) -> f64 {
        let n = self.n;
        let chunk_sums: Vec<f64> = (0..n)
            .step_by(ROW_CHUNK)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|start| {
                let mut acc = 0.0;
                for i in start..(start + ROW_CHUNK).min(n) {
                    for j in (i + 1)..n {
                        acc += self.h(i, j);
                    }
                }
                acc
            })
            .collect();
        chunk_sums.iter().sum()
    }

    fn diagonal_sum(&self) -> f64 {
        (0..self.n).map(|i| self.h(i, i)).sum()
    }
}

/// Biased plug-in estimator n⁻² Σ_{i,j} h_{i,j}; always non-negative.
pub fn skce_biased(kernel: &MatrixKernel, ds: &LabeledDataset) -> Result<SkceEstimate> {
    let n = ds.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let ctx = PairContext::new(kernel, ds)?;
    let total = 2.0 * ctx.offdiagonal_sum() + ctx.diagonal_sum();
    Ok(SkceEstimate {
        value: (total / (n * n) as f64).max(0.0),
        estimator: SkceEstimator::Biased,
        n,
        kernel: kernel.describe(),
    })
}

/// Unbiased U-statistic (n choose 2)⁻¹ Σ_{i<j} h_{i,j}; may be negative.
pub fn skce_unbiased(kernel: &MatrixKernel, ds: &LabeledDataset) -> Result<SkceEstimate> {
    let n = ds.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let ctx = PairContext::new(kernel, ds)?;
    let pairs = (n * (n - 1) / 2) as f64;
    Ok(SkceEstimate {
        value: ctx.offdiagonal_sum() / pairs,
        estimator: SkceEstimator::UnbiasedQuadratic,
        n,
        kernel: kernel.describe(),
    })
}

/// Linear-time unbiased estimator over consecutive disjoint pairs
/// (1,2), (3,4), … in dataset order; a trailing odd record is ignored.
pub fn skce_linear(kernel: &MatrixKernel, ds: &LabeledDataset) -> Result<SkceEstimate> {
    let terms = linear_pair_terms(kernel, ds)?;
    let value = terms.iter().sum::<f64>() / terms.len() as f64;
    Ok(SkceEstimate {
        value,
        estimator: SkceEstimator::UnbiasedLinear,
        n: ds.len(),
        kernel: kernel.describe(),
    })
}

/// The individual pair terms h_{2i−1,2i} of the linear estimator; the
/// asymptotic test needs their sample standard deviation.
///
/// Streams over consecutive record pairs with reusable scratch buffers so
/// the cost stays uniformly linear in n.
pub(crate) fn linear_pair_terms(
    kernel: &MatrixKernel,
    ds: &LabeledDataset,
) -> Result<Vec<f64>> {
    let n = ds.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    if ds.class_count() != kernel.dim() {
        return Err(Error::DimensionMismatch {
            expected: kernel.dim(),
            got: ds.class_count(),
        });
    }
    let m = ds.class_count();
    let records = ds.records();
    let mut u = vec![0.0; m];
    let mut v = vec![0.0; m];
    let mut terms = Vec::with_capacity(n / 2);
    for i in 0..n / 2 {
        let a = &records[2 * i];
        let b = &records[2 * i + 1];
        a.residual_into(&mut u);
        b.residual_into(&mut v);
        terms.push(kernel.quadform_slices(
            &u,
            a.prediction().entries(),
            b.prediction().entries(),
            &v,
        ));
    }
    Ok(terms)
}

/// Full symmetric matrix of pair terms, row-major n×n; the quadratic
/// bootstrap test resamples into it.
pub(crate) fn h_matrix(kernel: &MatrixKernel, ds: &LabeledDataset) -> Result<Vec<f64>> {
    let n = ds.len();
    let ctx = PairContext::new(kernel, ds)?;
    let rows: Vec<Vec<f64>> = (0..n)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|i| (i..n).map(|j| ctx.h(i, j)).collect())
        .collect();
    let mut matrix = vec![0.0; n * n];
    for (i, row) in rows.into_iter().enumerate() {
        for (offset, value) in row.into_iter().enumerate() {
            let j = i + offset;
            matrix[i * n + j] = value;
            matrix[j * n + i] = value;
        }
    }
    Ok(matrix)
}

/// Histogram binning scheme for the expected calibration error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinningSpec {
    /// Each class axis is split into this many bins of uniform size; a
    /// record is keyed by its per-class bin indices. Only occupied keys
    /// are stored.
    UniformPerClass { bins_per_class: usize },
    /// Bins are split iteratively along the median of the class with the
    /// highest within-bin prediction variance, stopping before a side
    /// would fall below `min_per_bin` records.
    MedianVarianceSplit { min_per_bin: usize },
}

impl BinningSpec {
    fn validate(self) -> Result<()> {
        match self {
            BinningSpec::UniformPerClass { bins_per_class: 0 } => Err(Error::bad_param(
                "uniform binning needs at least 1 bin per class",
            )),
            BinningSpec::MedianVarianceSplit { min_per_bin: 0 } => Err(Error::bad_param(
                "median splitting needs min_per_bin of at least 1",
            )),
            _ => Ok(()),
        }
    }

    pub fn describe(self) -> String {
        match self {
            BinningSpec::UniformPerClass { bins_per_class } => format!("uniform:{bins_per_class}"),
            BinningSpec::MedianVarianceSplit { min_per_bin } => format!("median:{min_per_bin}"),
        }
    }

    /// Parse `uniform:<bins>` or `median:<min_per_bin>`.
    pub fn parse(text: &str) -> Result<Self> {
        let (scheme, param) = text.split_once(':').ok_or_else(|| {
            Error::bad_param(format!(
                "cannot parse binning {text:?}; expected uniform:<bins> or median:<min_per_bin>"
            ))
        })?;
        let value: usize = param
            .parse()
            .map_err(|_| Error::bad_param(format!("bad binning parameter {param:?}")))?;
        let spec = match scheme {
            "uniform" => BinningSpec::UniformPerClass {
                bins_per_class: value,
            },
            "median" => BinningSpec::MedianVarianceSplit { min_per_bin: value },
            other => {
                return Err(Error::bad_param(format!(
                    "unknown binning scheme {other:?}"
                )))
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Partition record indices (0-based) into histogram bins.
pub fn partition(ds: &LabeledDataset, binning: BinningSpec) -> Result<Vec<Vec<usize>>> {
    binning.validate()?;
    match binning {
        BinningSpec::UniformPerClass { bins_per_class } => {
            let mut bins: BTreeMap<Vec<u32>, Vec<usize>> = BTreeMap::new();
            for (idx, rec) in ds.records().iter().enumerate() {
                let key: Vec<u32> = rec
                    .prediction()
                    .entries()
                    .iter()
                    .map(|&p| {
                        let raw = (p * bins_per_class as f64).floor() as usize;
                        raw.min(bins_per_class - 1) as u32
                    })
                    .collect();
                bins.entry(key).or_default().push(idx);
            }
            Ok(bins.into_values().collect())
        }
        BinningSpec::MedianVarianceSplit { min_per_bin } => {
            // explicit work stack; tied values can make the split tree
            // deep enough to overflow a recursive version
            let mut out = Vec::new();
            let mut work: Vec<Vec<usize>> = if ds.is_empty() {
                Vec::new()
            } else {
                vec![(0..ds.len()).collect()]
            };
            while let Some(bin) = work.pop() {
                match median_split(ds, &bin, min_per_bin) {
                    Some((left, right)) => {
                        // right is processed after left for depth-first
                        // left-to-right emission order
                        work.push(right);
                        work.push(left);
                    }
                    None => out.push(bin),
                }
            }
            Ok(out)
        }
    }
}

/// Split a bin at the median of the class with maximal within-bin
/// prediction variance, or return None when either side would fall below
/// `min_per_bin` records.
fn median_split(
    ds: &LabeledDataset,
    bin: &[usize],
    min_per_bin: usize,
) -> Option<(Vec<usize>, Vec<usize>)> {
    let m = ds.class_count();
    let records = ds.records();

    // ties break toward the lowest class index
    let mut best_class = 0;
    let mut best_var = f64::NEG_INFINITY;
    for c in 0..m {
        let mean: f64 = bin
            .iter()
            .map(|&i| records[i].prediction().entries()[c])
            .sum::<f64>()
            / bin.len() as f64;
        let var: f64 = bin
            .iter()
            .map(|&i| {
                let d = records[i].prediction().entries()[c] - mean;
                d * d
            })
            .sum::<f64>()
            / bin.len() as f64;
        if var > best_var {
            best_var = var;
            best_class = c;
        }
    }

    let values: Vec<f64> = bin
        .iter()
        .map(|&i| records[i].prediction().entries()[best_class])
        .collect();
    let median = numerics::median(&values).expect("bin is non-empty");

    let (left, right): (Vec<usize>, Vec<usize>) = bin
        .iter()
        .partition(|&&i| records[i].prediction().entries()[best_class] < median);

    if left.len() < min_per_bin || right.len() < min_per_bin {
        None
    } else {
        Some((left, right))
    }
}

/// A histogram expected calibration error estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct EceEstimate {
    pub value: f64,
    pub binning: BinningSpec,
    pub occupied_bins: usize,
}

/// Histogram-regression estimator of the expected calibration error with
/// the total variation distance: the bin-weighted distance between the
/// mean prediction and the empirical label frequencies of each bin.
pub fn ece_histogram(ds: &LabeledDataset, binning: BinningSpec) -> Result<EceEstimate> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let bins = partition(ds, binning)?;
    let n = ds.len() as f64;
    let m = ds.class_count();
    let records = ds.records();

    let mut value = 0.0;
    for bin in &bins {
        let size = bin.len() as f64;
        let mut mean_pred = vec![0.0; m];
        let mut freq = vec![0.0; m];
        for &i in bin {
            for (c, &p) in records[i].prediction().entries().iter().enumerate() {
                mean_pred[c] += p;
            }
            freq[records[i].label() - 1] += 1.0;
        }
        let tv = 0.5
            * mean_pred
                .iter()
                .zip(&freq)
                .map(|(p, f)| (p / size - f / size).abs())
                .sum::<f64>();
        value += size / n * tv;
    }
    Ok(EceEstimate {
        value,
        binning,
        occupied_bins: bins.len(),
    })
}

/// Reduce a dataset to its most confident predictions: record i becomes
/// ((max_c g_c, 1 − max_c g_c), ỹ) with ỹ = 1 if the argmax class equals
/// the label and 2 otherwise. Argmax ties break toward the lowest class
/// index.
pub fn max_lens(ds: &LabeledDataset) -> Result<LabeledDataset> {
    let records: Vec<PredictionRecord> = ds
        .records()
        .iter()
        .map(|rec| {
            let argmax = rec.prediction().argmax();
            let gmax = rec.prediction().entries()[argmax];
            let label = if argmax + 1 == rec.label() { 1 } else { 2 };
            let prediction = SimplexVector::new(vec![gmax, 1.0 - gmax])?;
            PredictionRecord::new(prediction, label)
        })
        .collect::<Result<_>>()?;
    LabeledDataset::new(records, 2)
}

/// Squared maximum mean calibration error: the unbiased estimator with the
/// kernel (k/2) I₂ applied to the max-confidence lens of the dataset.
pub fn mmce_squared(scalar: ScalarKernel, ds: &LabeledDataset) -> Result<f64> {
    let n = ds.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let lens = max_lens(ds)?;
    let kernel = MatrixKernel::new(vec![(scalar, PsdMatrix::ScaledIdentity(0.5))], 2)?;
    Ok(skce_unbiased(&kernel, &lens)?.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{Distance, KernelFamily};
    use crate::synth::{sample_dataset, GenerativeConfig};

    fn simplex(entries: &[f64]) -> SimplexVector {
        SimplexVector::new(entries.to_vec()).unwrap()
    }

    fn rec(pred: &[f64], label: usize) -> PredictionRecord {
        PredictionRecord::new(simplex(pred), label).unwrap()
    }

    fn ds(records: Vec<PredictionRecord>, m: usize) -> LabeledDataset {
        LabeledDataset::new(records, m).unwrap()
    }

    fn exp_identity(nu: f64, dim: usize) -> MatrixKernel {
        MatrixKernel::scalar_times_identity(
            ScalarKernel::new(KernelFamily::Exponential, nu, Distance::TotalVariation).unwrap(),
            dim,
        )
        .unwrap()
    }

    /// Independent naive reference: residuals and the kernel matrix are
    /// built from scratch and contracted with explicit loops.
    mod naive {
        use super::*;

        fn residual(rec: &PredictionRecord) -> Vec<f64> {
            let m = rec.prediction().dim();
            (0..m)
                .map(|c| {
                    let e = if c + 1 == rec.label() { 1.0 } else { 0.0 };
                    e - rec.prediction().entries()[c]
                })
                .collect()
        }

        fn kernel_matrix(nu: f64, s: &SimplexVector, t: &SimplexVector) -> Vec<Vec<f64>> {
            let m = s.dim();
            let d = 0.5
                * s.entries()
                    .iter()
                    .zip(t.entries())
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>();
            let scalar = (-d / nu).exp();
            (0..m)
                .map(|i| (0..m).map(|j| if i == j { scalar } else { 0.0 }).collect())
                .collect()
        }

        pub fn h(nu: f64, a: &PredictionRecord, b: &PredictionRecord) -> f64 {
            let u = residual(a);
            let v = residual(b);
            let k = kernel_matrix(nu, a.prediction(), b.prediction());
            let mut acc = 0.0;
            for i in 0..u.len() {
                for j in 0..v.len() {
                    acc += u[i] * k[i][j] * v[j];
                }
            }
            acc
        }

        pub fn biased(nu: f64, data: &LabeledDataset) -> f64 {
            let n = data.len();
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..n {
                    acc += h(nu, &data.records()[i], &data.records()[j]);
                }
            }
            acc / (n * n) as f64
        }

        pub fn unbiased(nu: f64, data: &LabeledDataset) -> f64 {
            let n = data.len();
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        acc += h(nu, &data.records()[i], &data.records()[j]);
                    }
                }
            }
            acc / (n * (n - 1)) as f64
        }

        pub fn linear(nu: f64, data: &LabeledDataset) -> f64 {
            let pairs = data.len() / 2;
            let mut acc = 0.0;
            for i in 0..pairs {
                acc += h(nu, &data.records()[2 * i], &data.records()[2 * i + 1]);
            }
            acc / pairs as f64
        }
    }

    #[test]
    fn h_term_examples() {
        let kernel = exp_identity(1.0, 2);
        let a = rec(&[0.6, 0.4], 1);
        let b = rec(&[0.3, 0.7], 2);

        let want = (-0.3f64).exp() * -0.24;
        let got = h_term(&kernel, &a, &b).unwrap();
        assert!((got - want).abs() < 1e-15);
        // symmetric in (a, b)
        assert_eq!(got, h_term(&kernel, &b, &a).unwrap());

        // zero residual kills the term
        let one_hot = rec(&[1.0, 0.0], 1);
        assert_eq!(h_term(&kernel, &one_hot, &b).unwrap(), 0.0);

        // self term is the squared residual norm
        let selfterm = h_term(&kernel, &a, &a).unwrap();
        assert!((selfterm - 0.32).abs() < 1e-15);
    }

    #[test]
    fn skce_biased_examples() {
        let kernel = exp_identity(1.0, 2);
        let single = ds(vec![rec(&[0.6, 0.4], 1)], 2);
        let est = skce_biased(&kernel, &single).unwrap();
        assert!((est.value - 0.32).abs() < 1e-15);
        assert_eq!(est.estimator, SkceEstimator::Biased);
        assert_eq!(est.n, 1);

        let perfect = ds(vec![rec(&[1.0, 0.0], 1), rec(&[0.0, 1.0], 2)], 2);
        assert_eq!(skce_biased(&kernel, &perfect).unwrap().value, 0.0);

        let empty = LabeledDataset::new(vec![], 2).unwrap();
        assert!(matches!(
            skce_biased(&kernel, &empty),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn skce_unbiased_examples() {
        let kernel = exp_identity(1.0, 2);
        let pair = ds(vec![rec(&[0.6, 0.4], 1), rec(&[0.3, 0.7], 2)], 2);
        let est = skce_unbiased(&kernel, &pair).unwrap();
        let want = (-0.3f64).exp() * -0.24;
        assert!((est.value - want).abs() < 1e-15);

        let single = ds(vec![rec(&[0.6, 0.4], 1)], 2);
        assert!(matches!(
            skce_unbiased(&kernel, &single),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn skce_linear_examples() {
        let kernel = exp_identity(1.0, 2);
        let r1 = rec(&[0.6, 0.4], 1);
        let r2 = rec(&[0.3, 0.7], 2);
        let r3 = rec(&[0.8, 0.2], 1);
        let r4 = rec(&[0.25, 0.75], 2);

        let two = ds(vec![r1.clone(), r2.clone()], 2);
        let h12 = h_term(&kernel, &r1, &r2).unwrap();
        assert_eq!(skce_linear(&kernel, &two).unwrap().value, h12);

        // for n = 3 the trailing record is ignored
        let three = ds(vec![r1.clone(), r2.clone(), r3.clone()], 2);
        assert_eq!(skce_linear(&kernel, &three).unwrap().value, h12);

        let four = ds(vec![r1.clone(), r2, r3.clone(), r4.clone()], 2);
        let h34 = h_term(&kernel, &r3, &r4).unwrap();
        let got = skce_linear(&kernel, &four).unwrap().value;
        assert!((got - (h12 + h34) / 2.0).abs() < 1e-15);

        let one = ds(vec![r1], 2);
        assert!(matches!(
            skce_linear(&kernel, &one),
            Err(Error::TooFewSamples { .. })
        ));
    }

    fn random_dataset(n: usize, m: usize, seed: u64) -> LabeledDataset {
        let alpha = vec![0.4; m];
        let beta = simplex(&vec![1.0 / m as f64; m]);
        let cfg = GenerativeConfig::new(alpha, 0.3, beta).unwrap();
        sample_dataset(&cfg, n, seed).unwrap()
    }

    #[test]
    fn estimators_match_naive_reference() {
        let nu = 0.7;
        for (seed, n, m) in [(1u64, 7usize, 2usize), (2, 12, 3), (3, 20, 10), (4, 2, 3)] {
            let data = random_dataset(n, m, seed);
            let kernel = exp_identity(nu, m);
            let b = skce_biased(&kernel, &data).unwrap().value;
            let u = skce_unbiased(&kernel, &data).unwrap().value;
            let l = skce_linear(&kernel, &data).unwrap().value;
            assert!((b - naive::biased(nu, &data)).abs() < 1e-12);
            assert!((u - naive::unbiased(nu, &data)).abs() < 1e-12);
            assert!((l - naive::linear(nu, &data)).abs() < 1e-12);
        }
    }

    #[test]
    fn biased_unbiased_diagonal_identity() {
        // n² · biased = n(n−1) · unbiased + Σ_i h_{i,i}
        let data = random_dataset(15, 3, 9);
        let kernel = exp_identity(0.5, 3);
        let n = data.len() as f64;
        let b = skce_biased(&kernel, &data).unwrap().value;
        let u = skce_unbiased(&kernel, &data).unwrap().value;
        let diag: f64 = data
            .records()
            .iter()
            .map(|r| h_term(&kernel, r, r).unwrap())
            .sum();
        assert!((n * n * b - (n * (n - 1.0) * u + diag)).abs() < 1e-10);
        assert!(diag >= 0.0);
    }

    #[test]
    fn quadratic_estimators_are_permutation_invariant() {
        let data = random_dataset(14, 3, 5);
        let kernel = exp_identity(0.9, 3);
        let b = skce_biased(&kernel, &data).unwrap().value;
        let u = skce_unbiased(&kernel, &data).unwrap().value;

        let mut reversed: Vec<PredictionRecord> = data.records().to_vec();
        reversed.reverse();
        let rev = ds(reversed, 3);
        assert!((skce_biased(&kernel, &rev).unwrap().value - b).abs() < 1e-12);
        assert!((skce_unbiased(&kernel, &rev).unwrap().value - u).abs() < 1e-12);
    }

    #[test]
    fn linear_estimator_is_invariant_within_and_across_pairs() {
        let data = random_dataset(8, 3, 6);
        let kernel = exp_identity(0.9, 3);
        let base = skce_linear(&kernel, &data).unwrap().value;

        let r = data.records();
        // swap within the first pair
        let swapped = ds(
            vec![
                r[1].clone(),
                r[0].clone(),
                r[2].clone(),
                r[3].clone(),
                r[4].clone(),
                r[5].clone(),
                r[6].clone(),
                r[7].clone(),
            ],
            3,
        );
        assert!((skce_linear(&kernel, &swapped).unwrap().value - base).abs() < 1e-12);

        // permute whole pairs
        let permuted = ds(
            vec![
                r[6].clone(),
                r[7].clone(),
                r[0].clone(),
                r[1].clone(),
                r[4].clone(),
                r[5].clone(),
                r[2].clone(),
                r[3].clone(),
            ],
            3,
        );
        assert!((skce_linear(&kernel, &permuted).unwrap().value - base).abs() < 1e-12);
    }

    #[test]
    fn h_matrix_is_symmetric_and_matches_h_term() {
        let data = random_dataset(9, 3, 8);
        let kernel = exp_identity(0.6, 3);
        let n = data.len();
        let matrix = h_matrix(&kernel, &data).unwrap();
        for i in 0..n {
            for j in 0..n {
                assert_eq!(matrix[i * n + j], matrix[j * n + i]);
                let direct =
                    h_term(&kernel, &data.records()[i], &data.records()[j]).unwrap();
                assert!((matrix[i * n + j] - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn partition_uniform_examples() {
        let data = ds(vec![rec(&[0.05, 0.95], 1), rec(&[0.06, 0.94], 2)], 2);
        let bins = partition(
            &data,
            BinningSpec::UniformPerClass { bins_per_class: 10 },
        )
        .unwrap();
        assert_eq!(bins.len(), 1);
        assert_eq!(bins[0], vec![0, 1]);

        // an entry of exactly 1.0 clamps to the top bin
        let edge = ds(vec![rec(&[1.0, 0.0], 1), rec(&[0.95, 0.05], 1)], 2);
        let bins = partition(&edge, BinningSpec::UniformPerClass { bins_per_class: 10 }).unwrap();
        assert_eq!(bins.len(), 1, "both records key to (9, 0)");

        // bins partition all indices
        let data = random_dataset(40, 3, 21);
        let bins = partition(&data, BinningSpec::UniformPerClass { bins_per_class: 5 }).unwrap();
        let mut seen: Vec<usize> = bins.into_iter().flatten().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..40).collect::<Vec<_>>());
    }

    #[test]
    fn partition_median_split_examples() {
        // 9 records cannot legally split with min_per_bin = 5
        let data = random_dataset(9, 3, 22);
        let bins = partition(&data, BinningSpec::MedianVarianceSplit { min_per_bin: 5 }).unwrap();
        assert_eq!(bins.len(), 1);
        assert_eq!(bins[0].len(), 9);

        // identical predictions never split
        let same = ds(vec![rec(&[0.5, 0.5], 1); 20], 2);
        let bins = partition(&same, BinningSpec::MedianVarianceSplit { min_per_bin: 5 }).unwrap();
        assert_eq!(bins.len(), 1);

        // a larger dataset splits into bins of at least min_per_bin
        let data = random_dataset(64, 3, 23);
        let bins = partition(&data, BinningSpec::MedianVarianceSplit { min_per_bin: 5 }).unwrap();
        assert!(bins.len() > 1);
        assert!(bins.iter().all(|b| b.len() >= 5));
        let mut seen: Vec<usize> = bins.into_iter().flatten().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..64).collect::<Vec<_>>());
    }

    #[test]
    fn partition_rejects_bad_parameters() {
        let data = random_dataset(4, 2, 1);
        assert!(partition(&data, BinningSpec::UniformPerClass { bins_per_class: 0 }).is_err());
        assert!(partition(&data, BinningSpec::MedianVarianceSplit { min_per_bin: 0 }).is_err());
        assert!(BinningSpec::parse("uniform:banana").is_err());
        assert_eq!(
            BinningSpec::parse("uniform:10").unwrap(),
            BinningSpec::UniformPerClass { bins_per_class: 10 }
        );
        assert_eq!(
            BinningSpec::parse("median:5").unwrap(),
            BinningSpec::MedianVarianceSplit { min_per_bin: 5 }
        );
    }

    #[test]
    fn ece_histogram_examples() {
        let uniform10 = BinningSpec::UniformPerClass { bins_per_class: 10 };

        // both records land in one bin: mean prediction (0.62, 0.38),
        // frequencies (0.5, 0.5), TV distance 0.12
        let data = ds(vec![rec(&[0.61, 0.39], 1), rec(&[0.63, 0.37], 2)], 2);
        let est = ece_histogram(&data, uniform10).unwrap();
        assert!((est.value - 0.12).abs() < 1e-12);
        assert_eq!(est.occupied_bins, 1);

        // identical predictions whose label frequencies match exactly
        let matched = ds(
            vec![
                rec(&[0.5, 0.5], 1),
                rec(&[0.5, 0.5], 2),
                rec(&[0.5, 0.5], 1),
                rec(&[0.5, 0.5], 2),
            ],
            2,
        );
        assert!(ece_histogram(&matched, uniform10).unwrap().value < 1e-15);

        // perfectly confident correct predictions
        let confident = ds(vec![rec(&[1.0, 0.0], 1), rec(&[0.0, 1.0], 2)], 2);
        assert_eq!(ece_histogram(&confident, uniform10).unwrap().value, 0.0);

        let empty = LabeledDataset::new(vec![], 2).unwrap();
        assert!(matches!(
            ece_histogram(&empty, uniform10),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn ece_single_global_bin_is_plain_tv() {
        // one bin per class axis puts everything into a single bin, so the
        // estimate is the TV distance between the mean prediction and the
        // overall label frequencies
        let data = random_dataset(30, 3, 31);
        let est = ece_histogram(&data, BinningSpec::UniformPerClass { bins_per_class: 1 }).unwrap();
        assert_eq!(est.occupied_bins, 1);

        let n = data.len() as f64;
        let mut mean_pred = [0.0; 3];
        let mut freq = vec![0.0; 3];
        for r in data.records() {
            for (c, &p) in r.prediction().entries().iter().enumerate() {
                mean_pred[c] += p / n;
            }
            freq[r.label() - 1] += 1.0 / n;
        }
        let direct = 0.5
            * mean_pred
                .iter()
                .zip(&freq)
                .map(|(p, f)| (p - f).abs())
                .sum::<f64>();
        assert!((est.value - direct).abs() < 1e-14);
    }

    #[test]
    fn ece_value_is_in_unit_interval() {
        for seed in 0..5 {
            let data = random_dataset(25, 4, 100 + seed);
            for binning in [
                BinningSpec::UniformPerClass { bins_per_class: 10 },
                BinningSpec::MedianVarianceSplit { min_per_bin: 5 },
            ] {
                let est = ece_histogram(&data, binning).unwrap();
                assert!(est.value >= 0.0 && est.value <= 1.0);
            }
        }
    }

    #[test]
    fn max_lens_examples() {
        let data = ds(
            vec![
                rec(&[0.5, 0.3, 0.2], 1),
                rec(&[0.5, 0.3, 0.2], 3),
                rec(&[0.4, 0.4, 0.2], 2),
            ],
            3,
        );
        let lens = max_lens(&data).unwrap();
        assert_eq!(lens.class_count(), 2);

        // argmax correct
        assert_eq!(lens.records()[0].prediction().entries(), &[0.5, 0.5]);
        assert_eq!(lens.records()[0].label(), 1);
        // argmax wrong
        assert_eq!(lens.records()[1].label(), 2);
        // tie breaks to class 1, which is not the label 2
        assert_eq!(lens.records()[2].label(), 2);
        assert_eq!(lens.records()[2].prediction().entries(), &[0.4, 0.6]);
    }

    /// Direct pairwise formula for the squared maximum mean calibration
    /// error restricted to i < j pairs.
    fn mmce_direct(scalar: ScalarKernel, data: &LabeledDataset) -> f64 {
        let n = data.len();
        let conf: Vec<f64> = data
            .records()
            .iter()
            .map(|r| r.prediction().entries()[r.prediction().argmax()])
            .collect();
        let correct: Vec<f64> = data
            .records()
            .iter()
            .map(|r| {
                if r.prediction().argmax() + 1 == r.label() {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let mut acc = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                // kernel on the max-confidence pair via the binary lens
                let si = simplex(&[conf[i], 1.0 - conf[i]]);
                let sj = simplex(&[conf[j], 1.0 - conf[j]]);
                let k = scalar.eval(&si, &sj).unwrap();
                acc += (correct[i] - conf[i]) * (correct[j] - conf[j]) * k;
            }
        }
        acc / (n * (n - 1) / 2) as f64
    }

    #[test]
    fn mmce_matches_direct_formula() {
        let scalar =
            ScalarKernel::new(KernelFamily::Exponential, 0.5, Distance::TotalVariation).unwrap();
        for seed in 0..6 {
            let data = random_dataset(12, 4, 200 + seed);
            let via_lens = mmce_squared(scalar, &data).unwrap();
            let direct = mmce_direct(scalar, &data);
            assert!(
                (via_lens - direct).abs() < 1e-12,
                "lens {via_lens} vs direct {direct}"
            );
        }
    }

    #[test]
    fn mmce_trivial_and_invariance() {
        let scalar =
            ScalarKernel::new(KernelFamily::Exponential, 1.0, Distance::TotalVariation).unwrap();
        // fully confident correct predictions have zero error
        let confident = ds(vec![rec(&[1.0, 0.0], 1), rec(&[0.0, 1.0], 2)], 2);
        assert_eq!(mmce_squared(scalar, &confident).unwrap(), 0.0);

        let data = random_dataset(10, 3, 44);
        let base = mmce_squared(scalar, &data).unwrap();
        let mut reversed = data.records().to_vec();
        reversed.reverse();
        let rev = ds(reversed, 3);
        assert!((mmce_squared(scalar, &rev).unwrap() - base).abs() < 1e-12);

        let single = ds(vec![rec(&[1.0, 0.0], 1)], 2);
        assert!(matches!(
            mmce_squared(scalar, &single),
            Err(Error::TooFewSamples { .. })
        ));
    }
}
