//! Dirichlet–Categorical generative models for labeled predictions, the
//! M1/M2/M3 presets, and the closed-form expected calibration error of the
//! model.
//!
//! The model draws a prediction g ~ Dir(α) and then a label: with
//! probability π from Categorical(β), otherwise from Categorical(g). It is
//! calibrated if and only if π = 0.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{LabeledDataset, PredictionRecord, SimplexVector};
use crate::error::{Error, Result};
use crate::numerics::reg_inc_beta;
use crate::rng::stream_rng;

/// Parameters of the generative model.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeConfig {
    alpha: Vec<f64>,
    pi: f64,
    beta: SimplexVector,
}

impl GenerativeConfig {
    pub fn new(alpha: Vec<f64>, pi: f64, beta: SimplexVector) -> Result<Self> {
        if alpha.len() < 2 {
            return Err(Error::bad_param(format!(
                "need at least 2 classes, got {}",
                alpha.len()
            )));
        }
        if alpha.iter().any(|&a| a <= 0.0 || !a.is_finite()) {
            return Err(Error::bad_param("Dirichlet parameters must be positive"));
        }
        if !(0.0..=1.0).contains(&pi) {
            return Err(Error::bad_param(format!(
                "mixture weight must lie in [0, 1], got {pi}"
            )));
        }
        if beta.dim() != alpha.len() {
            return Err(Error::DimensionMismatch {
                expected: alpha.len(),
                got: beta.dim(),
            });
        }
        Ok(Self { alpha, pi, beta })
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn pi(&self) -> f64 {
        self.pi
    }

    pub fn beta(&self) -> &SimplexVector {
        &self.beta
    }

    pub fn class_count(&self) -> usize {
        self.alpha.len()
    }

    /// The model is calibrated iff the mixture weight is zero.
    pub fn is_calibrated(&self) -> bool {
        self.pi == 0.0
    }
}

/// The three preset models of the synthetic experiments, all with m = 10
/// classes and α = (0.1, …, 0.1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelPreset {
    /// Calibrated: labels from Categorical(g).
    M1,
    /// Half the labels from Categorical(1, 0, …, 0).
    M2,
    /// All labels from Categorical(0.1, …, 0.1).
    M3,
}

impl ModelPreset {
    pub fn config(self) -> GenerativeConfig {
        let m = 10;
        let alpha = vec![0.1; m];
        let uniform = SimplexVector::new(vec![0.1; m]).unwrap();
        match self {
            ModelPreset::M1 => GenerativeConfig::new(alpha, 0.0, uniform).unwrap(),
            ModelPreset::M2 => {
                let mut e1 = vec![0.0; m];
                e1[0] = 1.0;
                GenerativeConfig::new(alpha, 0.5, SimplexVector::new(e1).unwrap()).unwrap()
            }
            ModelPreset::M3 => GenerativeConfig::new(alpha, 1.0, uniform).unwrap(),
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "M1" | "m1" => Ok(ModelPreset::M1),
            "M2" | "m2" => Ok(ModelPreset::M2),
            "M3" | "m3" => Ok(ModelPreset::M3),
            other => Err(Error::bad_param(format!(
                "unknown model preset {other:?}; expected M1, M2, or M3"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelPreset::M1 => "M1",
            ModelPreset::M2 => "M2",
            ModelPreset::M3 => "M3",
        }
    }
}

/// Standard normal variate by the Marsaglia polar method.
fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u = 2.0 * rng.random::<f64>() - 1.0;
        let v = 2.0 * rng.random::<f64>() - 1.0;
        let s = u * u + v * v;
        if s > 0.0 && s < 1.0 {
            return u * (-2.0 * s.ln() / s).sqrt();
        }
    }
}

/// Gamma(shape, 1) variate. Marsaglia–Tsang squeeze for shape ≥ 1; for
/// shape < 1 the draw is boosted from shape + 1 and multiplied by
/// U^{1/shape}, which stays correct down to the α = 0.1 regime.
fn sample_gamma<R: Rng>(shape: f64, rng: &mut R) -> f64 {
    if shape < 1.0 {
        let boosted = sample_gamma(shape + 1.0, rng);
        let u: f64 = rng.random();
        return boosted * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (3.0 * d.sqrt());
    loop {
        let x = standard_normal(rng);
        let t = 1.0 + c * x;
        if t <= 0.0 {
            continue;
        }
        let v = t * t * t;
        let u: f64 = rng.random();
        if u < 1.0 - 0.0331 * x * x * x * x {
            return d * v;
        }
        if u > 0.0 && u.ln() < 0.5 * x * x + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// Draw from Dirichlet(α): independent Gamma(α_i, 1) variates normalized
/// by their sum.
pub fn sample_dirichlet<R: Rng>(alpha: &[f64], rng: &mut R) -> Result<SimplexVector> {
    if alpha.len() < 2 {
        return Err(Error::bad_param(format!(
            "need at least 2 classes, got {}",
            alpha.len()
        )));
    }
    if alpha.iter().any(|&a| a <= 0.0 || !a.is_finite()) {
        return Err(Error::bad_param("Dirichlet parameters must be positive"));
    }
    loop {
        let gammas: Vec<f64> = alpha.iter().map(|&a| sample_gamma(a, rng)).collect();
        let sum: f64 = gammas.iter().sum();
        if sum > 0.0 {
            return SimplexVector::new(gammas.into_iter().map(|g| g / sum).collect());
        }
        // all gammas underflowed to zero; astronomically rare, redraw
    }
}

/// Draw a 1-based label from Categorical(p) by inverting the CDF of the
/// cumulative sums. A uniform draw of exactly 0 yields the first class
/// with positive probability.
pub fn sample_categorical<R: Rng>(p: &SimplexVector, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (c, &prob) in p.entries().iter().enumerate() {
        cum += prob;
        if u < cum {
            return c + 1;
        }
    }
    p.dim()
}

/// Sample a dataset of n labeled predictions from the generative model,
/// deterministically for a fixed seed (stream 0 of the seed).
///
/// Per record the draw order is: the Dirichlet gammas in class order, one
/// uniform for the mixture indicator, one uniform for the label.
pub fn sample_dataset(cfg: &GenerativeConfig, n: usize, seed: u64) -> Result<LabeledDataset> {
    let mut rng = stream_rng(seed, 0);
    sample_dataset_with(cfg, n, &mut rng)
}

/// Like `sample_dataset` but drawing from a caller-provided stream.
pub fn sample_dataset_with(
    cfg: &GenerativeConfig,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<LabeledDataset> {
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let prediction = sample_dirichlet(&cfg.alpha, rng)?;
        let mixture: f64 = rng.random();
        let label = if mixture < cfg.pi {
            sample_categorical(&cfg.beta, rng)
        } else {
            sample_categorical(&prediction, rng)
        };
        records.push(PredictionRecord::new(prediction, label)?);
    }
    LabeledDataset::new(records, cfg.class_count())
}

/// Closed-form expected calibration error of the generative model with
/// respect to the total variation distance:
///
///   π Σ_i ( β_i I(β_i; α_i, α₀ − α_i) − (α_i / α₀) I(β_i; α_i + 1, α₀ − α_i) )
///
/// where I is the regularized incomplete beta function and α₀ = Σ α_i.
pub fn theoretical_ece_tv(cfg: &GenerativeConfig) -> Result<f64> {
    let a0: f64 = cfg.alpha.iter().sum();
    let mut total = 0.0;
    for (&ai, &bi) in cfg.alpha.iter().zip(cfg.beta.entries()) {
        let rest = a0 - ai;
        if rest <= 0.0 {
            return Err(Error::bad_param(format!(
                "need α₀ − α_i > 0, got α_i = {ai}, α₀ = {a0}"
            )));
        }
        total += bi * reg_inc_beta(bi, ai, rest)? - ai / a0 * reg_inc_beta(bi, ai + 1.0, rest)?;
    }
    Ok(cfg.pi * total)
}
