//! Moments, the skewness/kurtosis normality gate, normal-theory confidence
//! intervals and the prediction-probability hit rate.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub const DEFAULT_SKEW_TOL: f64 = 0.7;
pub const DEFAULT_KURT_TOL: f64 = 1.5;
/// Relative-error band for [`prediction_probability`] (the PRED(25) band).
pub const DEFAULT_TAU: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (divisor n - 1).
    pub sd: f64,
    /// m3 / m2^1.5 with population central moments.
    pub skewness: f64,
    /// m4 / m2^2, non-excess (normal = 3).
    pub kurtosis: f64,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn moments(sample: &[f64]) -> Result<MomentSummary> {
    let n = sample.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("moments need n >= 2, got {n}")));
    }
    let mean = mean(sample);
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in sample {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let nf = n as f64;
    let (m2, m3, m4) = (m2 / nf, m3 / nf, m4 / nf);
    // Relative to the magnitude of the data, anything this small is rounding.
    let scale = sample.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(f64::MIN_POSITIVE);
    if m2 <= (1e-14 * scale).powi(2) {
        return Err(Error::Undefined("skewness/kurtosis of a zero-variance sample".into()));
    }
    Ok(MomentSummary {
        n,
        mean,
        sd: (m2 * nf / (nf - 1.0)).sqrt(),
        skewness: m3 / m2.powf(1.5),
        kurtosis: m4 / (m2 * m2),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalityVerdict {
    pub pass: bool,
    /// |skewness|
    pub skew_distance: f64,
    /// |kurtosis - 3|
    pub kurt_distance: f64,
}

pub fn normality_gate(ms: &MomentSummary, skew_tol: f64, kurt_tol: f64) -> NormalityVerdict {
    let skew_distance = ms.skewness.abs();
    let kurt_distance = (ms.kurtosis - 3.0).abs();
    NormalityVerdict {
        pass: skew_distance <= skew_tol && kurt_distance <= kurt_tol,
        skew_distance,
        kurt_distance,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    pub alpha: f64,
    /// Standard-normal 1 - alpha/2 quantile.
    pub z: f64,
}

impl ConfidenceInterval {
    pub fn half_width(&self) -> f64 {
        (self.upper - self.lower) / 2.0
    }
}

/// `xbar ± z_{alpha/2} s / sqrt(q)`.
pub fn confidence_interval(xbar: f64, s: f64, q: usize, alpha: f64) -> Result<ConfidenceInterval> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Parameter(format!("alpha must lie in (0,1), got {alpha}")));
    }
    if q == 0 {
        return Err(Error::Parameter("q must be at least 1".into()));
    }
    if !(s >= 0.0) {
        return Err(Error::Parameter(format!("standard deviation must be >= 0, got {s}")));
    }
    let z = standard_normal_quantile(1.0 - alpha / 2.0);
    let half = z * s / (q as f64).sqrt();
    Ok(ConfidenceInterval {
        lower: xbar - half,
        upper: xbar + half,
        alpha,
        z,
    })
}

pub fn standard_normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Fraction of cases whose relative error `|pred - actual| / actual` is at
/// most `tau`.
pub fn prediction_probability(predicted: &[f64], actual: &[f64], tau: f64) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: actual.len(),
        });
    }
    if actual.is_empty() {
        return Err(Error::InsufficientData("prediction probability of zero cases".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!("tau must be positive, got {tau}")));
    }
    if let Some(a) = actual.iter().find(|a| !(**a > 0.0)) {
        return Err(Error::Parameter(format!("actual value {a} is not positive")));
    }
    let hits = predicted
        .iter()
        .zip(actual)
        .filter(|(p, a)| (*p - *a).abs() / *a <= tau)
        .count();
    Ok(hits as f64 / actual.len() as f64)
}
