//! Scalar and matrix-valued kernels on the probability simplex, bandwidth
//! selection, and the uniform kernel bounds needed by the distribution-free
//! calibration tests.
//!
//! Matrix-valued kernels are represented as finite sums of
//! (scalar kernel × PSD matrix) terms. The common case is a single scalar
//! kernel times the identity, which is never materialized as a matrix.

use crate::dataset::{LabeledDataset, SimplexVector};
use crate::error::{Error, Result};
use crate::numerics;

/// Base distance on the simplex used inside scalar kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distance {
    /// Half the L1 distance; the standard distance for probability vectors.
    TotalVariation,
    Euclidean,
}

impl Distance {
    pub fn eval(self, s: &SimplexVector, t: &SimplexVector) -> Result<f64> {
        if s.dim() != t.dim() {
            return Err(Error::DimensionMismatch {
                expected: s.dim(),
                got: t.dim(),
            });
        }
        Ok(self.eval_slices(s.entries(), t.entries()))
    }

    pub(crate) fn eval_slices(self, s: &[f64], t: &[f64]) -> f64 {
        match self {
            Distance::TotalVariation => {
                0.5 * s.iter().zip(t).map(|(a, b)| (a - b).abs()).sum::<f64>()
            }
            Distance::Euclidean => s
                .iter()
                .zip(t)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt(),
        }
    }
}

/// Total variation distance: half the L1 distance, in [0, 1].
pub fn tv_distance(s: &SimplexVector, t: &SimplexVector) -> Result<f64> {
    Distance::TotalVariation.eval(s, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    /// exp(−d/ν); the Laplacian-type kernel used in the experiments.
    Exponential,
    /// exp(−d²/ν²).
    Gaussian,
}

/// Scalar kernel on the simplex. Its supremum over the simplex is 1 for
/// both families, attained at s = t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarKernel {
    family: KernelFamily,
    bandwidth: f64,
    distance: Distance,
}

impl ScalarKernel {
    pub fn new(family: KernelFamily, bandwidth: f64, distance: Distance) -> Result<Self> {
        if bandwidth <= 0.0 || !bandwidth.is_finite() {
            return Err(Error::bad_param(format!(
                "kernel bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(Self {
            family,
            bandwidth,
            distance,
        })
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn distance(&self) -> Distance {
        self.distance
    }

    /// Evaluate the kernel; the result lies in (0, 1].
    pub fn eval(&self, s: &SimplexVector, t: &SimplexVector) -> Result<f64> {
        let d = self.distance.eval(s, t)?;
        Ok(self.eval_distance(d))
    }

    pub(crate) fn eval_distance(&self, d: f64) -> f64 {
        match self.family {
            KernelFamily::Exponential => (-d / self.bandwidth).exp(),
            KernelFamily::Gaussian => {
                let r = d / self.bandwidth;
                (-r * r).exp()
            }
        }
    }

    pub fn describe(&self) -> String {
        let name = match self.family {
            KernelFamily::Exponential => "exp",
            KernelFamily::Gaussian => "gauss",
        };
        format!("{}(nu={})", name, self.bandwidth)
    }
}

/// PSD matrix factor of a kernel term. The scaled identity is kept
/// symbolic so quadratic forms reduce to scaled dot products.
#[derive(Debug, Clone, PartialEq)]
pub enum PsdMatrix {
    ScaledIdentity(f64),
    Full(Vec<Vec<f64>>),
}

/// Eigenvalues below this are rejected as not PSD; above, they are treated
/// as float noise in user-supplied matrices.
const PSD_EIGEN_TOL: f64 = -1e-10;

/// Matrix-valued kernel k(s, t) = Σ_i k_i(s, t) A_i with scalar kernels k_i
/// and PSD matrices A_i.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixKernel {
    terms: Vec<(ScalarKernel, PsdMatrix)>,
    dim: usize,
}

impl MatrixKernel {
    /// Single scalar kernel times the identity.
    pub fn scalar_times_identity(scalar: ScalarKernel, dim: usize) -> Result<Self> {
        Self::new(vec![(scalar, PsdMatrix::ScaledIdentity(1.0))], dim)
    }

    /// Build from explicit terms, verifying each matrix is symmetric PSD
    /// (eigenvalues ≥ −1e-10).
    pub fn new(terms: Vec<(ScalarKernel, PsdMatrix)>, dim: usize) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::bad_param("matrix kernel needs at least one term"));
        }
        if dim < 2 {
            return Err(Error::bad_param(format!(
                "kernel dimension must be at least 2, got {dim}"
            )));
        }
        let mut checked = Vec::with_capacity(terms.len());
        for (scalar, matrix) in terms {
            let matrix = match matrix {
                PsdMatrix::ScaledIdentity(c) => {
                    if !c.is_finite() || c < 0.0 {
                        return Err(Error::bad_param(format!(
                            "identity scale must be non-negative, got {c}"
                        )));
                    }
                    PsdMatrix::ScaledIdentity(c)
                }
                PsdMatrix::Full(rows) => {
                    let symmetric = check_and_symmetrize(rows, dim)?;
                    let eigen = symmetric_eigenvalues(&symmetric, dim);
                    if let Some(bad) = eigen.iter().find(|&&l| l < PSD_EIGEN_TOL) {
                        return Err(Error::bad_param(format!(
                            "matrix is not positive semi-definite: eigenvalue {bad}"
                        )));
                    }
                    PsdMatrix::Full(symmetric)
                }
            };
            checked.push((scalar, matrix));
        }
        Ok(Self {
            terms: checked,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[(ScalarKernel, PsdMatrix)] {
        &self.terms
    }

    /// Quadratic form uᵀ k(s, t) v. Identity terms never materialize a
    /// matrix product: uᵀ (c I) v = c (u · v).
    pub fn quadform(
        &self,
        u: &[f64],
        s: &SimplexVector,
        t: &SimplexVector,
        v: &[f64],
    ) -> Result<f64> {
        let m = self.dim;
        if u.len() != m || v.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: if u.len() != m { u.len() } else { v.len() },
            });
        }
        if s.dim() != m || t.dim() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: if s.dim() != m { s.dim() } else { t.dim() },
            });
        }
        let mut total = 0.0;
        for (scalar, matrix) in &self.terms {
            let k = scalar.eval(s, t)?;
            total += k * bilinear(matrix, u, v);
        }
        Ok(total)
    }

    /// Allocation-free fast path for the estimators' pair sums: all
    /// dimension checks happen once at the call site.
    pub(crate) fn quadform_slices(&self, u: &[f64], s: &[f64], t: &[f64], v: &[f64]) -> f64 {
        let mut total = 0.0;
        for (scalar, matrix) in &self.terms {
            let d = scalar.distance.eval_slices(s, t);
            total += scalar.eval_distance(d) * bilinear(matrix, u, v);
        }
        total
    }

    pub fn describe(&self) -> String {
        self.terms
            .iter()
            .map(|(scalar, matrix)| match matrix {
                PsdMatrix::ScaledIdentity(c) if *c == 1.0 => {
                    format!("{}*identity", scalar.describe())
                }
                PsdMatrix::ScaledIdentity(c) => format!("{}*{}identity", scalar.describe(), c),
                PsdMatrix::Full(_) => format!("{}*matrix", scalar.describe()),
            })
            .collect::<Vec<_>>()
            .join("+")
    }
}

fn bilinear(matrix: &PsdMatrix, u: &[f64], v: &[f64]) -> f64 {
    match matrix {
        PsdMatrix::ScaledIdentity(c) => c * u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>(),
        PsdMatrix::Full(rows) => {
            let mut acc = 0.0;
            for (ui, row) in u.iter().zip(rows) {
                acc += ui * row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
            }
            acc
        }
    }
}

// index pairs (i, j) with j > i touch both triangles; iterators do not fit
#[allow(clippy::needless_range_loop)]
fn check_and_symmetrize(rows: Vec<Vec<f64>>, dim: usize) -> Result<Vec<Vec<f64>>> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: rows.len(),
        });
    }
    let scale = rows
        .iter()
        .flatten()
        .fold(0.0f64, |acc, x| acc.max(x.abs()))
        .max(1.0);
    let mut out = rows;
    for i in 0..dim {
        for j in (i + 1)..dim {
            if (out[i][j] - out[j][i]).abs() > 1e-9 * scale {
                return Err(Error::bad_param(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
            let avg = 0.5 * (out[i][j] + out[j][i]);
            out[i][j] = avg;
            out[j][i] = avg;
        }
    }
    Ok(out)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations. Only used
/// at construction time for the PSD check and for spectral norms.
fn symmetric_eigenvalues(rows: &[Vec<f64>], n: usize) -> Vec<f64> {
    let mut a: Vec<f64> = rows.iter().flatten().copied().collect();
    let scale = a.iter().fold(0.0f64, |acc, x| acc.max(x.abs())).max(1e-300);

    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[i * n + j] * a[i * n + j];
            }
        }
        if off.sqrt() <= 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[p * n + k] = a[k * n + p];
                    a[k * n + q] = s * akp + c * akq;
                    a[q * n + k] = a[k * n + q];
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                a[p * n + p] = c * c * app - 2.0 * s * c * apq + s * s * aqq;
                a[q * n + q] = s * s * app + 2.0 * s * c * apq + c * c * aqq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).collect()
}

/// Kernel bandwidth from the median heuristic: the exact median of the
/// n(n−1)/2 pairwise prediction distances (mean of the two middle order
/// statistics for even counts).
pub fn median_heuristic(ds: &LabeledDataset, distance: Distance) -> Result<f64> {
    let n = ds.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let mut distances = Vec::with_capacity(n * (n - 1) / 2);
    let records = ds.records();
    for i in 0..n {
        for j in (i + 1)..n {
            distances.push(distance.eval(records[i].prediction(), records[j].prediction())?);
        }
    }
    let nu = numerics::median(&distances)?;
    if nu == 0.0 {
        return Err(Error::DegenerateBandwidth);
    }
    Ok(nu)
}

/// Closed-form mean total variation distance E‖X − X′‖_TV of two
/// independent Dirichlet(α) draws:
///
///   (2 B(α₀, α₀) / α₀) Σ_i [B(α_i, α_i) B(α₀ − α_i, α₀ − α_i)]⁻¹
///
/// with α₀ = Σ α_i. Beta terms are evaluated in log space so large α₀ does
/// not overflow.
pub fn mean_tv_bandwidth(alpha: &[f64]) -> Result<f64> {
    if alpha.len() < 2 {
        return Err(Error::bad_param(format!(
            "mean_tv_bandwidth needs at least 2 classes, got {}",
            alpha.len()
        )));
    }
    if alpha.iter().any(|&a| a <= 0.0 || !a.is_finite()) {
        return Err(Error::bad_param("Dirichlet parameters must be positive"));
    }
    let a0: f64 = alpha.iter().sum();
    let ln_prefix = std::f64::consts::LN_2 + numerics::log_beta(a0, a0)? - a0.ln();
    let mut total = 0.0;
    for &ai in alpha {
        let rest = a0 - ai;
        if rest <= 0.0 {
            return Err(Error::bad_param(format!(
                "need α₀ − α_i > 0, got α_i = {ai}, α₀ = {a0}"
            )));
        }
        let ln_term = ln_prefix - numerics::log_beta(ai, ai)? - numerics::log_beta(rest, rest)?;
        total += ln_term.exp();
    }
    Ok(total)
}

/// Matrix norm index for the uniform bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormIndex {
    One,
    Two,
    Inf,
}

impl NormIndex {
    /// 1/p with 1/∞ = 0.
    fn reciprocal(self) -> f64 {
        match self {
            NormIndex::One => 1.0,
            NormIndex::Two => 0.5,
            NormIndex::Inf => 0.0,
        }
    }

    fn order(self) -> u8 {
        match self {
            NormIndex::One => 0,
            NormIndex::Two => 1,
            NormIndex::Inf => 2,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "1" => Ok(NormIndex::One),
            "2" => Ok(NormIndex::Two),
            "inf" | "Inf" | "INF" => Ok(NormIndex::Inf),
            other => Err(Error::bad_param(format!(
                "norm index must be 1, 2, or inf, got {other:?}"
            ))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            NormIndex::One => "1",
            NormIndex::Two => "2",
            NormIndex::Inf => "inf",
        }
    }
}

/// Uniform bound constants for a kernel: K_pq = sup ‖k(s, t)‖_{p;q} and the
/// h-term bound B_pq = 2^{1 + 1/p − 1/q} K_pq.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelBound {
    pub p: NormIndex,
    pub q: NormIndex,
    pub k_pq: f64,
    pub b_pq: f64,
}

/// Compute the uniform bound constants of a kernel.
///
/// Supported structures: any sum of scaled-identity terms (the supremum is
/// attained at s = t where every scalar kernel equals one), or a single
/// term with a full matrix whose (p; q) operator norm is computable. Other
/// structures return `UnsupportedKernel`.
pub fn uniform_bound(kernel: &MatrixKernel, p: NormIndex, q: NormIndex) -> Result<KernelBound> {
    let m = kernel.dim() as f64;
    let all_identity = kernel
        .terms()
        .iter()
        .all(|(_, mat)| matches!(mat, PsdMatrix::ScaledIdentity(_)));

    let k_pq = if all_identity {
        let phi: f64 = kernel
            .terms()
            .iter()
            .map(|(_, mat)| match mat {
                PsdMatrix::ScaledIdentity(c) => *c,
                PsdMatrix::Full(_) => unreachable!(),
            })
            .sum();
        if p.order() <= q.order() {
            phi
        } else {
            m.powf(q.reciprocal() - p.reciprocal()) * phi
        }
    } else if kernel.terms().len() == 1 {
        let (_, mat) = &kernel.terms()[0];
        match mat {
            PsdMatrix::ScaledIdentity(_) => unreachable!(),
            PsdMatrix::Full(rows) => operator_norm(rows, kernel.dim(), p, q)?,
        }
    } else {
        return Err(Error::UnsupportedKernel(
            "uniform bound for sums with full matrix terms is not available".into(),
        ));
    };

    let exponent = 1.0 + p.reciprocal() - q.reciprocal();
    Ok(KernelBound {
        p,
        q,
        k_pq,
        b_pq: 2f64.powf(exponent) * k_pq,
    })
}

/// Induced (p; q) operator norm of a symmetric matrix for the computable
/// index pairs; `UnsupportedKernel` otherwise.
fn operator_norm(rows: &[Vec<f64>], n: usize, p: NormIndex, q: NormIndex) -> Result<f64> {
    use NormIndex::*;
    let vec_norm = |xs: &mut dyn Iterator<Item = f64>, idx: NormIndex| -> f64 {
        match idx {
            One => xs.map(f64::abs).sum(),
            Two => xs.map(|x| x * x).sum::<f64>().sqrt(),
            Inf => xs.fold(0.0f64, |acc, x| acc.max(x.abs())),
        }
    };
    match (p, q) {
        // ‖A‖_{1;q}: maximum q-norm over columns.
        (One, _) => Ok((0..n)
            .map(|j| vec_norm(&mut rows.iter().map(|r| r[j]), q))
            .fold(0.0, f64::max)),
        // ‖A‖_{p;∞}: maximum p'-norm over rows (p' the Hölder conjugate).
        (Two, Inf) => Ok(rows
            .iter()
            .map(|r| vec_norm(&mut r.iter().copied(), Two))
            .fold(0.0, f64::max)),
        (Inf, Inf) => Ok(rows
            .iter()
            .map(|r| vec_norm(&mut r.iter().copied(), One))
            .fold(0.0, f64::max)),
        // Spectral norm via the eigenvalues.
        (Two, Two) => Ok(symmetric_eigenvalues(rows, n)
            .into_iter()
            .fold(0.0f64, |acc, l| acc.max(l.abs()))),
        _ => Err(Error::UnsupportedKernel(format!(
            "operator norm ({}; {}) of a full matrix is not computable here",
            p.label(),
            q.label()
        ))),
    }
}

/// How the bandwidth of a configured kernel is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthSpec {
    Fixed(f64),
    /// Median of the pairwise prediction distances of the dataset.
    MedianHeuristic,
    /// Closed-form mean total variation distance of the generative
    /// Dirichlet parameter.
    MeanTotalVariation,
}

/// Parsed kernel configuration, grammar
/// `exp(nu=<float>|median|meantv)[*identity]` and `gauss(nu=…)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    pub family: KernelFamily,
    pub bandwidth: BandwidthSpec,
}

impl KernelConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        let body = text.strip_suffix("*identity").unwrap_or(text);
        let (family, inner) = if let Some(rest) = body.strip_prefix("exp(") {
            (KernelFamily::Exponential, rest)
        } else if let Some(rest) = body.strip_prefix("gauss(") {
            (KernelFamily::Gaussian, rest)
        } else {
            return Err(Error::bad_param(format!(
                "cannot parse kernel {text:?}; expected exp(nu=…) or gauss(nu=…)"
            )));
        };
        let inner = inner.strip_suffix(')').ok_or_else(|| {
            Error::bad_param(format!("cannot parse kernel {text:?}: missing ')'"))
        })?;
        let value = inner.strip_prefix("nu=").ok_or_else(|| {
            Error::bad_param(format!("cannot parse kernel {text:?}: expected nu=…"))
        })?;
        let bandwidth = match value {
            "median" => BandwidthSpec::MedianHeuristic,
            "meantv" => BandwidthSpec::MeanTotalVariation,
            fixed => {
                let nu: f64 = fixed.parse().map_err(|_| {
                    Error::bad_param(format!("cannot parse bandwidth {fixed:?}"))
                })?;
                if nu.is_nan() || nu <= 0.0 {
                    return Err(Error::bad_param(format!(
                        "bandwidth must be positive, got {nu}"
                    )));
                }
                BandwidthSpec::Fixed(nu)
            }
        };
        Ok(Self { family, bandwidth })
    }

    /// Resolve to a concrete kernel (scalar × identity with total variation
    /// distance) for a dataset. `alpha` supplies the Dirichlet parameter
    /// needed by the `meantv` bandwidth.
    pub fn resolve(&self, ds: &LabeledDataset, alpha: Option<&[f64]>) -> Result<MatrixKernel> {
        let nu = match self.bandwidth {
            BandwidthSpec::Fixed(nu) => nu,
            BandwidthSpec::MedianHeuristic => median_heuristic(ds, Distance::TotalVariation)?,
            BandwidthSpec::MeanTotalVariation => match alpha {
                Some(alpha) => mean_tv_bandwidth(alpha)?,
                None => {
                    return Err(Error::bad_param(
                        "nu=meantv needs a generative Dirichlet parameter; it is only available for synthetic experiments",
                    ))
                }
            },
        };
        let scalar = ScalarKernel::new(self.family, nu, Distance::TotalVariation)?;
        MatrixKernel::scalar_times_identity(scalar, ds.class_count())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::PredictionRecord;
    use proptest::prelude::*;

    fn simplex(entries: &[f64]) -> SimplexVector {
        SimplexVector::new(entries.to_vec()).unwrap()
    }

    fn dataset(preds: &[&[f64]]) -> LabeledDataset {
        let records = preds
            .iter()
            .map(|p| PredictionRecord::new(simplex(p), 1).unwrap())
            .collect();
        LabeledDataset::new(records, preds[0].len()).unwrap()
    }

    fn exp_identity(nu: f64, dim: usize) -> MatrixKernel {
        MatrixKernel::scalar_times_identity(
            ScalarKernel::new(KernelFamily::Exponential, nu, Distance::TotalVariation).unwrap(),
            dim,
        )
        .unwrap()
    }

    #[test]
    fn tv_distance_examples() {
        let a = simplex(&[1.0, 0.0]);
        let b = simplex(&[0.0, 1.0]);
        assert_eq!(tv_distance(&a, &b).unwrap(), 1.0);
        assert_eq!(tv_distance(&a, &a).unwrap(), 0.0);
        let c = simplex(&[0.6, 0.4]);
        let d = simplex(&[0.3, 0.7]);
        assert!((tv_distance(&c, &d).unwrap() - 0.3).abs() < 1e-15);
        // symmetric
        assert_eq!(tv_distance(&c, &d).unwrap(), tv_distance(&d, &c).unwrap());
        let e = simplex(&[0.5, 0.3, 0.2]);
        assert!(matches!(
            tv_distance(&a, &e),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn scalar_kernel_examples() {
        let s = simplex(&[0.6, 0.4]);
        let t = simplex(&[0.3, 0.7]);
        let exp =
            ScalarKernel::new(KernelFamily::Exponential, 1.0, Distance::TotalVariation).unwrap();
        assert_eq!(exp.eval(&s, &s).unwrap(), 1.0);
        assert!((exp.eval(&s, &t).unwrap() - (-0.3f64).exp()).abs() < 1e-15);

        let gauss =
            ScalarKernel::new(KernelFamily::Gaussian, 0.3, Distance::TotalVariation).unwrap();
        assert!((gauss.eval(&s, &t).unwrap() - (-1.0f64).exp()).abs() < 1e-15);

        assert!(ScalarKernel::new(KernelFamily::Exponential, 0.0, Distance::TotalVariation).is_err());
    }

    #[test]
    fn quadform_examples() {
        let kernel = exp_identity(1.0, 2);
        let s = simplex(&[0.6, 0.4]);
        let t = simplex(&[0.3, 0.7]);
        let u = [0.4, -0.4];
        let v = [-0.3, 0.3];
        let zero = [0.0, 0.0];

        assert_eq!(kernel.quadform(&zero, &s, &t, &v).unwrap(), 0.0);

        let got = kernel.quadform(&u, &s, &t, &v).unwrap();
        let want = (-0.3f64).exp() * -0.24;
        assert!((got - want).abs() < 1e-15, "got {got}, want {want}");

        // two identical terms double the value
        let scalar =
            ScalarKernel::new(KernelFamily::Exponential, 1.0, Distance::TotalVariation).unwrap();
        let doubled = MatrixKernel::new(
            vec![
                (scalar, PsdMatrix::ScaledIdentity(1.0)),
                (scalar, PsdMatrix::ScaledIdentity(1.0)),
            ],
            2,
        )
        .unwrap();
        let got2 = doubled.quadform(&u, &s, &t, &v).unwrap();
        assert!((got2 - 2.0 * got).abs() < 1e-15);
    }

    #[test]
    fn quadform_full_matrix_matches_identity() {
        let scalar =
            ScalarKernel::new(KernelFamily::Exponential, 0.7, Distance::TotalVariation).unwrap();
        let explicit = MatrixKernel::new(
            vec![(
                scalar,
                PsdMatrix::Full(vec![vec![1.0, 0.0], vec![0.0, 1.0]]),
            )],
            2,
        )
        .unwrap();
        let implicit = MatrixKernel::scalar_times_identity(scalar, 2).unwrap();
        let s = simplex(&[0.6, 0.4]);
        let t = simplex(&[0.2, 0.8]);
        let u = [0.25, -0.25];
        let v = [-0.7, 0.7];
        let a = explicit.quadform(&u, &s, &t, &v).unwrap();
        let b = implicit.quadform(&u, &s, &t, &v).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn psd_check_rejects_indefinite() {
        let scalar =
            ScalarKernel::new(KernelFamily::Exponential, 1.0, Distance::TotalVariation).unwrap();
        let err = MatrixKernel::new(
            vec![(
                scalar,
                PsdMatrix::Full(vec![vec![0.0, 1.0], vec![1.0, 0.0]]),
            )],
            2,
        );
        assert!(err.is_err());
        let err = MatrixKernel::new(vec![(scalar, PsdMatrix::ScaledIdentity(-0.5))], 2);
        assert!(err.is_err());
        // asymmetric
        let err = MatrixKernel::new(
            vec![(
                scalar,
                PsdMatrix::Full(vec![vec![1.0, 0.5], vec![-0.5, 1.0]]),
            )],
            2,
        );
        assert!(err.is_err());
    }

    #[test]
    fn jacobi_eigenvalues_known_matrix() {
        // eigenvalues of [[2,1],[1,2]] are 1 and 3
        let mut eig = symmetric_eigenvalues(&[vec![2.0, 1.0], vec![1.0, 2.0]], 2);
        eig.sort_by(f64::total_cmp);
        assert!((eig[0] - 1.0).abs() < 1e-12);
        assert!((eig[1] - 3.0).abs() < 1e-12);

        // 3x3 with known spectrum: diag(1,2,3) rotated is hard to write by
        // hand; use a rank-1 matrix instead: vvᵀ with v=(1,2,2) has
        // eigenvalues 9, 0, 0.
        let v = [1.0, 2.0, 2.0];
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..3).map(|j| v[i] * v[j]).collect())
            .collect();
        let mut eig = symmetric_eigenvalues(&rows, 3);
        eig.sort_by(f64::total_cmp);
        assert!(eig[0].abs() < 1e-10 && eig[1].abs() < 1e-10);
        assert!((eig[2] - 9.0).abs() < 1e-10);
    }

    #[test]
    fn median_heuristic_examples() {
        // pairwise TV distances {0.1, 0.3, 0.2} → median 0.2
        let ds = dataset(&[&[0.1, 0.9], &[0.2, 0.8], &[0.4, 0.6]]);
        assert!((median_heuristic(&ds, Distance::TotalVariation).unwrap() - 0.2).abs() < 1e-15);

        // permutation invariance
        let ds2 = dataset(&[&[0.4, 0.6], &[0.1, 0.9], &[0.2, 0.8]]);
        assert_eq!(
            median_heuristic(&ds, Distance::TotalVariation).unwrap(),
            median_heuristic(&ds2, Distance::TotalVariation).unwrap()
        );

        let identical = dataset(&[&[0.5, 0.5], &[0.5, 0.5]]);
        assert!(matches!(
            median_heuristic(&identical, Distance::TotalVariation),
            Err(Error::DegenerateBandwidth)
        ));

        let single = dataset(&[&[0.5, 0.5]]);
        assert!(matches!(
            median_heuristic(&single, Distance::TotalVariation),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn mean_tv_closed_form() {
        // α = (1, 1): uniform marginals, E|U − U'| = 1/3
        assert!((mean_tv_bandwidth(&[1.0, 1.0]).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        // reference value for the experiments' α = (0.1, …, 0.1), m = 10
        let a = vec![0.1; 10];
        assert!((mean_tv_bandwidth(&a).unwrap() - 0.827_401_212_214_146).abs() < 1e-12);
        // symmetric in α
        let x = mean_tv_bandwidth(&[0.5, 1.5, 2.0]).unwrap();
        let y = mean_tv_bandwidth(&[2.0, 0.5, 1.5]).unwrap();
        assert!((x - y).abs() < 1e-14);
        assert!((x - 0.32619598485667405).abs() < 1e-12);

        assert!(mean_tv_bandwidth(&[1.0]).is_err());
        assert!(mean_tv_bandwidth(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn mean_tv_matches_monte_carlo_small_alpha() {
        // 10^6 pairs from Dir(0.1, …, 0.1), m = 10; fixed seed.
        use crate::synth::sample_dirichlet;
        use rand::Rng;

        let alpha = vec![0.1; 10];
        let want = mean_tv_bandwidth(&alpha).unwrap();
        let mut rng = crate::rng::stream_rng(20_240_817, 0);
        let pairs = 1_000_000usize;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..pairs {
            let x = sample_dirichlet(&alpha, &mut rng).unwrap();
            let y = sample_dirichlet(&alpha, &mut rng).unwrap();
            let d = tv_distance(&x, &y).unwrap();
            sum += d;
            sumsq += d * d;
        }
        let _ = rng.random::<f64>();
        let mean = sum / pairs as f64;
        let var = (sumsq / pairs as f64 - mean * mean).max(0.0);
        let se = (var / pairs as f64).sqrt();
        assert!(
            (mean - want).abs() <= 3.0 * se,
            "closed form {want} vs Monte Carlo {mean} (3 SE = {})",
            3.0 * se
        );
    }

    #[test]
    fn uniform_bound_identity_cases() {
        let kernel = exp_identity(1.0, 10);
        let b = uniform_bound(&kernel, NormIndex::Two, NormIndex::Two).unwrap();
        assert_eq!(b.k_pq, 1.0);
        assert_eq!(b.b_pq, 2.0);

        // scaled identity doubles both constants
        let scalar =
            ScalarKernel::new(KernelFamily::Exponential, 1.0, Distance::TotalVariation).unwrap();
        let scaled =
            MatrixKernel::new(vec![(scalar, PsdMatrix::ScaledIdentity(2.0))], 10).unwrap();
        let b = uniform_bound(&scaled, NormIndex::Two, NormIndex::Two).unwrap();
        assert_eq!(b.k_pq, 2.0);
        assert_eq!(b.b_pq, 4.0);

        // p = ∞, q = 1 on I_10: K = 10, B = 2^{1+0−1}·10 = 10
        let b = uniform_bound(&kernel, NormIndex::Inf, NormIndex::One).unwrap();
        assert!((b.k_pq - 10.0).abs() < 1e-12);
        assert!((b.b_pq - 10.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_bound_ratio_is_exact() {
        let kernel = exp_identity(0.5, 3);
        for &p in &[NormIndex::One, NormIndex::Two, NormIndex::Inf] {
            for &q in &[NormIndex::One, NormIndex::Two, NormIndex::Inf] {
                let b = uniform_bound(&kernel, p, q).unwrap();
                let ratio = 2f64.powf(1.0 + p.reciprocal() - q.reciprocal());
                assert_eq!(b.b_pq, ratio * b.k_pq);
            }
        }
    }

    #[test]
    fn uniform_bound_full_matrix() {
        let scalar =
            ScalarKernel::new(KernelFamily::Exponential, 1.0, Distance::TotalVariation).unwrap();
        let kernel = MatrixKernel::new(
            vec![(
                scalar,
                PsdMatrix::Full(vec![vec![2.0, 1.0], vec![1.0, 2.0]]),
            )],
            2,
        )
        .unwrap();
        // spectral norm of [[2,1],[1,2]] is 3
        let b = uniform_bound(&kernel, NormIndex::Two, NormIndex::Two).unwrap();
        assert!((b.k_pq - 3.0).abs() < 1e-12);
        // max column 1-norm
        let b = uniform_bound(&kernel, NormIndex::One, NormIndex::One).unwrap();
        assert!((b.k_pq - 3.0).abs() < 1e-12);
        // (∞; 1) is not computable for full matrices
        assert!(matches!(
            uniform_bound(&kernel, NormIndex::Inf, NormIndex::One),
            Err(Error::UnsupportedKernel(_))
        ));
    }

    #[test]
    fn kernel_grammar_parses() {
        let cfg = KernelConfig::parse("exp(nu=median)").unwrap();
        assert_eq!(cfg.family, KernelFamily::Exponential);
        assert_eq!(cfg.bandwidth, BandwidthSpec::MedianHeuristic);

        let cfg = KernelConfig::parse("exp(nu=0.25)*identity").unwrap();
        assert_eq!(cfg.bandwidth, BandwidthSpec::Fixed(0.25));

        let cfg = KernelConfig::parse("gauss(nu=meantv)").unwrap();
        assert_eq!(cfg.family, KernelFamily::Gaussian);
        assert_eq!(cfg.bandwidth, BandwidthSpec::MeanTotalVariation);

        assert!(KernelConfig::parse("exp(nu=-1)").is_err());
        assert!(KernelConfig::parse("exp(mu=1)").is_err());
        assert!(KernelConfig::parse("tanh(nu=1)").is_err());
    }

    #[test]
    fn kernel_config_resolve() {
        let ds = dataset(&[&[0.1, 0.9], &[0.2, 0.8], &[0.4, 0.6]]);
        let kernel = KernelConfig::parse("exp(nu=median)")
            .unwrap()
            .resolve(&ds, None)
            .unwrap();
        assert!((kernel.terms()[0].0.bandwidth() - 0.2).abs() < 1e-15);

        assert!(KernelConfig::parse("exp(nu=meantv)")
            .unwrap()
            .resolve(&ds, None)
            .is_err());
        let kernel = KernelConfig::parse("exp(nu=meantv)")
            .unwrap()
            .resolve(&ds, Some(&[1.0, 1.0]))
            .unwrap();
        assert!((kernel.terms()[0].0.bandwidth() - 1.0 / 3.0).abs() < 1e-12);
    }

    fn random_simplex(raw: &[f64]) -> SimplexVector {
        let sum: f64 = raw.iter().sum();
        SimplexVector::new(raw.iter().map(|x| x / sum).collect()).unwrap()
    }

    proptest! {
        #[test]
        fn quadform_is_symmetric(
            raw_s in proptest::collection::vec(0.01f64..1.0, 3),
            raw_t in proptest::collection::vec(0.01f64..1.0, 3),
            u in proptest::collection::vec(-1.0f64..1.0, 3),
            v in proptest::collection::vec(-1.0f64..1.0, 3),
            nu in 0.1f64..3.0,
        ) {
            let s = random_simplex(&raw_s);
            let t = random_simplex(&raw_t);
            let kernel = exp_identity(nu, 3);
            let a = kernel.quadform(&u, &s, &t, &v).unwrap();
            let b = kernel.quadform(&v, &t, &s, &u).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }

        #[test]
        fn kernel_is_positive_semi_definite(
            raws in proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, 3), 2..6),
            us in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 3), 2..6),
            nu in 0.1f64..3.0,
        ) {
            let n = raws.len().min(us.len());
            let points: Vec<SimplexVector> = raws[..n].iter().map(|r| random_simplex(r)).collect();
            let kernel = exp_identity(nu, 3);
            let mut total = 0.0;
            for i in 0..n {
                for j in 0..n {
                    total += kernel.quadform(&us[i], &points[i], &points[j], &us[j]).unwrap();
                }
            }
            prop_assert!(total >= -1e-9, "quadratic form sum {total}");
        }

        #[test]
        fn scalar_kernel_in_unit_interval(
            raw_s in proptest::collection::vec(0.01f64..1.0, 4),
            raw_t in proptest::collection::vec(0.01f64..1.0, 4),
            nu in 0.05f64..5.0,
        ) {
            let s = random_simplex(&raw_s);
            let t = random_simplex(&raw_t);
            for family in [KernelFamily::Exponential, KernelFamily::Gaussian] {
                let kernel = ScalarKernel::new(family, nu, Distance::TotalVariation).unwrap();
                let k = kernel.eval(&s, &t).unwrap();
                prop_assert!(k > 0.0 && k <= 1.0);
                let d = tv_distance(&s, &t).unwrap();
                prop_assert_eq!(k == 1.0, d == 0.0);
            }
        }
    }
}
