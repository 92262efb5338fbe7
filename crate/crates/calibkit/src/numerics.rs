//! Special functions and small statistical utilities shared by the other
//! modules: log-gamma, log-beta, the regularized incomplete beta function,
//! the standard normal CDF and quantile, sample standard deviation, and the
//! median.
//!
//! Everything here is pure and deterministic.

use crate::error::{Error, Result};

/// Lanczos coefficients (g = 7, 9 terms).
const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

const LN_SQRT_TWO_PI: f64 = 0.918_938_533_204_672_8;

/// Natural logarithm of the gamma function for positive arguments.
pub fn ln_gamma(x: f64) -> Result<f64> {
    if !x.is_finite() || x <= 0.0 {
        return Err(Error::bad_param(format!("ln_gamma requires x > 0, got {x}")));
    }
    Ok(ln_gamma_unchecked(x))
}

fn ln_gamma_unchecked(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection: Γ(x) Γ(1−x) = π / sin(πx).
        let sin_term = (std::f64::consts::PI * x).sin();
        std::f64::consts::PI.ln() - sin_term.ln() - ln_gamma_unchecked(1.0 - x)
    } else {
        let z = x - 1.0;
        let mut acc = LANCZOS[0];
        for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
            acc += c / (z + i as f64);
        }
        let t = z + LANCZOS_G + 0.5;
        LN_SQRT_TWO_PI + (z + 0.5) * t.ln() - t + acc.ln()
    }
}

/// ln B(a, b) = ln Γ(a) + ln Γ(b) − ln Γ(a + b) for a, b > 0.
pub fn log_beta(a: f64, b: f64) -> Result<f64> {
    if a <= 0.0 || b <= 0.0 || !a.is_finite() || !b.is_finite() {
        return Err(Error::bad_param(format!(
            "log_beta requires a, b > 0, got a={a}, b={b}"
        )));
    }
    Ok(ln_gamma_unchecked(a) + ln_gamma_unchecked(b) - ln_gamma_unchecked(a + b))
}

/// Regularized incomplete beta function I(x; a, b) for x in [0, 1], a, b > 0.
///
/// Continued fraction evaluated with the modified Lentz scheme, switching to
/// the symmetric tail for x > (a + 1) / (a + b + 2). Arguments x <= 0 and
/// x >= 1 short-circuit to 0 and 1.
pub fn reg_inc_beta(x: f64, a: f64, b: f64) -> Result<f64> {
    if a <= 0.0 || b <= 0.0 || !a.is_finite() || !b.is_finite() {
        return Err(Error::bad_param(format!(
            "reg_inc_beta requires a, b > 0, got a={a}, b={b}"
        )));
    }
    if x.is_nan() {
        return Err(Error::bad_param("reg_inc_beta requires x in [0, 1], got NaN"));
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    if x >= 1.0 {
        return Ok(1.0);
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - log_beta(a, b)?;
    let value = if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cont_frac(x, a, b) / a
    } else {
        1.0 - ln_front.exp() * beta_cont_frac(1.0 - x, b, a) / b
    };
    Ok(value.clamp(0.0, 1.0))
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cont_frac(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    const MAX_ITER: usize = 500;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;

    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;

    for m in 1..=MAX_ITER {
        let m_f = m as f64;
        let m2 = 2.0 * m_f;

        let aa = m_f * (b - m_f) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;

        let aa = -(a + m_f) * (qab + m_f) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;

        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Standard normal cumulative distribution function.
pub fn normal_cdf(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    // Φ(z) = erfc(−z / √2) / 2, evaluated on the side that avoids
    // cancellation in the tail.
    let x = z / std::f64::consts::SQRT_2;
    if z >= 0.0 {
        1.0 - 0.5 * erfc(x)
    } else {
        0.5 * erfc(-x)
    }
}

/// Complementary error function for x >= 0, accurate to near machine
/// precision: Maclaurin series of erf below 2, Laplace continued fraction
/// above.
fn erfc(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < 2.0 {
        1.0 - erf_series(x)
    } else {
        erfc_cont_frac(x)
    }
}

fn erf_series(x: f64) -> f64 {
    // erf(x) = 2/√π Σ (−1)^n x^{2n+1} / (n! (2n+1))
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    for n in 1..200 {
        let n_f = n as f64;
        term *= -x2 / n_f;
        let contrib = term / (2.0 * n_f + 1.0);
        sum += contrib;
        if contrib.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    sum * std::f64::consts::FRAC_2_SQRT_PI
}

fn erfc_cont_frac(x: f64) -> f64 {
    // erfc(x) = exp(−x²)/√π · 1 / (x + (1/2)/(x + (2/2)/(x + …)))
    const TINY: f64 = 1e-300;
    let mut c: f64 = x / TINY;
    let mut d = 1.0 / x;
    let mut h = d;
    for n in 1..300 {
        let an = n as f64 / 2.0;
        d = x + an * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = x + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-17 {
            break;
        }
    }
    (-x * x).exp() * h / std::f64::consts::PI.sqrt()
}

/// Standard normal density.
fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Quantile (inverse CDF) of the standard normal distribution for
/// p in (0, 1). Rational initial guess refined by Newton steps on the CDF,
/// so quantile and CDF are mutually inverse to well below 1e-9.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if p.is_nan() || p <= 0.0 || p >= 1.0 {
        return Err(Error::bad_param(format!(
            "normal_quantile requires p in (0, 1), got {p}"
        )));
    }
    let mut z = quantile_initial_guess(p);
    for _ in 0..3 {
        let err = normal_cdf(z) - p;
        let pdf = normal_pdf(z);
        if pdf <= 0.0 {
            break;
        }
        let step = err / pdf;
        z -= step;
        if step.abs() < 1e-14 * (1.0 + z.abs()) {
            break;
        }
    }
    Ok(z)
}

/// Acklam-style rational approximation, absolute error ~1e-9 before
/// refinement.
fn quantile_initial_guess(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Sample standard deviation with the n−1 denominator, two-pass.
pub fn sample_std(xs: &[f64]) -> Result<f64> {
    if xs.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: xs.len(),
        });
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    Ok((ss / (n - 1.0)).sqrt())
}

/// Middle order statistic; for even lengths, the mean of the two middle
/// values.
pub fn median(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        Ok(sorted[n / 2])
    } else {
        Ok(0.5 * (sorted[n / 2 - 1] + sorted[n / 2]))
    }
}
