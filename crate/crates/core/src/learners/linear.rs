//! Weighted multiple linear regression and the automatically transformed
//! linear model (ATLM).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::design::DesignEncoder;
use super::TrainingSummary;
use crate::dataset::{Feature, ProjectRecord, TransformSet};
use crate::error::{Error, Result};
use crate::linalg::weighted_lstsq;
use crate::stats::moments;

/// Solves WLS with an intercept; returns coefficients and a summary.
pub(crate) fn fit_rows(rows: &[Vec<f64>], y: &[f64], weights: &[f64], names: &[String]) -> Result<(Vec<f64>, TrainingSummary)> {
    let n = rows.len();
    let p = names.len();
    if n <= p + 1 {
        return Err(Error::InsufficientData(format!(
            "linear model with {p} predictors needs more than {} observations, got {n}",
            p + 1
        )));
    }
    let x = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] });
    let yv = DVector::from_column_slice(y);
    let mut all_names = vec!["intercept".to_string()];
    all_names.extend(names.iter().cloned());
    let fit = weighted_lstsq(&x, &yv, Some(weights), &all_names)?;
    let beta: Vec<f64> = fit.coefficients.iter().copied().collect();
    let resid = &yv - &x * &fit.coefficients;
    let loss: f64 = resid.iter().zip(weights).map(|(r, w)| w * r * r).sum();
    let diag: Vec<f64> = (0..=p).map(|j| fit.r[(j, j)].abs()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok((
        beta,
        TrainingSummary {
            iterations: 1,
            final_loss: loss,
            condition: Some(max / min),
            ..Default::default()
        },
    ))
}

fn dot_with_intercept(beta: &[f64], row: &[f64]) -> f64 {
    beta[0] + beta[1..].iter().zip(row).map(|(b, x)| b * x).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub encoder: DesignEncoder,
    /// Intercept first, then one coefficient per design column.
    pub coefficients: Vec<f64>,
    pub transforms: TransformSet,
    pub summary: TrainingSummary,
}

impl LinearModel {
    pub fn fit(
        records: &[ProjectRecord],
        weights: &[f64],
        predictors: &[Feature],
        categoricals: &[String],
        transforms: &TransformSet,
    ) -> Result<Self> {
        let encoder = DesignEncoder::fit(records, predictors, categoricals, true)?;
        let rows = records.iter().map(|r| encoder.encode(r)).collect::<Result<Vec<_>>>()?;
        let y: Vec<f64> = records.iter().map(|r| r.effort).collect();
        let (coefficients, summary) = fit_rows(&rows, &y, weights, &encoder.column_names())?;
        Ok(LinearModel {
            encoder,
            coefficients,
            transforms: transforms.clone(),
            summary,
        })
    }

    pub fn predict_transformed(&self, rec: &ProjectRecord) -> Result<f64> {
        Ok(dot_with_intercept(&self.coefficients, &self.encoder.encode(rec)?))
    }
}

/// A member of the ATLM transform menu.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AtlmTransform {
    Identity,
    Ln,
    Sqrt,
}

impl AtlmTransform {
    pub const MENU: [AtlmTransform; 3] = [AtlmTransform::Identity, AtlmTransform::Ln, AtlmTransform::Sqrt];

    pub fn valid_for(self, x: f64) -> bool {
        match self {
            AtlmTransform::Identity => x.is_finite(),
            AtlmTransform::Ln => x > 0.0 && x.is_finite(),
            AtlmTransform::Sqrt => x >= 0.0 && x.is_finite(),
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            AtlmTransform::Identity => x,
            AtlmTransform::Ln => x.ln(),
            AtlmTransform::Sqrt => x.sqrt(),
        }
    }

    pub fn invert(self, y: f64) -> f64 {
        match self {
            AtlmTransform::Identity => y,
            AtlmTransform::Ln => y.exp(),
            AtlmTransform::Sqrt => y.max(0.0).powi(2),
        }
    }
}

/// The menu entry giving the smallest |skewness|, among those whose domain
/// covers every value. Earlier entries win ties; a constant variable keeps
/// the identity.
pub fn choose_transform(values: &[f64]) -> AtlmTransform {
    let mut best = AtlmTransform::Identity;
    let mut best_skew = f64::INFINITY;
    for t in AtlmTransform::MENU {
        if !values.iter().all(|&v| t.valid_for(v)) {
            continue;
        }
        let tv: Vec<f64> = values.iter().map(|&v| t.apply(v)).collect();
        let Ok(m) = moments(&tv) else { return AtlmTransform::Identity };
        if m.skewness.abs() < best_skew {
            best_skew = m.skewness.abs();
            best = t;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtlmModel {
    pub encoder: DesignEncoder,
    /// One per numeric predictor, in encoder order.
    pub predictor_transforms: Vec<AtlmTransform>,
    pub response_transform: AtlmTransform,
    pub coefficients: Vec<f64>,
    /// Dataset transforms undone before the model's own are applied.
    pub transforms: TransformSet,
    pub summary: TrainingSummary,
}

impl AtlmModel {
    pub fn fit(
        records: &[ProjectRecord],
        weights: &[f64],
        predictors: &[Feature],
        categoricals: &[String],
        transforms: &TransformSet,
    ) -> Result<Self> {
        let encoder = DesignEncoder::fit(records, predictors, categoricals, true)?;
        let raw_numeric: Vec<Vec<f64>> = records
            .iter()
            .map(|r| raw_numeric(&encoder, transforms, r))
            .collect::<Result<_>>()?;
        let predictor_transforms: Vec<AtlmTransform> = (0..predictors.len())
            .map(|j| choose_transform(&raw_numeric.iter().map(|row| row[j]).collect::<Vec<_>>()))
            .collect();
        let raw_y: Vec<f64> = records.iter().map(|r| transforms.inverse(Feature::Effort, r.effort)).collect();
        let response_transform = choose_transform(&raw_y);
        let mut rows = Vec::with_capacity(records.len());
        for (r, nums) in records.iter().zip(&raw_numeric) {
            let mut row: Vec<f64> = nums.iter().zip(&predictor_transforms).map(|(&v, t)| t.apply(v)).collect();
            row.extend(encoder.categorical_values(r)?);
            rows.push(row);
        }
        let y: Vec<f64> = raw_y.iter().map(|&v| response_transform.apply(v)).collect();
        let (coefficients, summary) = fit_rows(&rows, &y, weights, &encoder.column_names())?;
        Ok(AtlmModel {
            encoder,
            predictor_transforms,
            response_transform,
            coefficients,
            transforms: transforms.clone(),
            summary,
        })
    }

    /// Prediction in the model's own (menu-transformed) response space.
    pub fn predict_model_space(&self, rec: &ProjectRecord) -> Result<f64> {
        let nums = raw_numeric(&self.encoder, &self.transforms, rec)?;
        let mut row = Vec::with_capacity(self.encoder.width());
        for ((v, t), f) in nums.iter().zip(&self.predictor_transforms).zip(&self.encoder.numeric) {
            if !t.valid_for(*v) {
                return Err(Error::Transform {
                    feature: f.to_string(),
                    reason: format!("value {v} of record {} outside the {t:?} domain", rec.id),
                });
            }
            row.push(t.apply(*v));
        }
        row.extend(self.encoder.categorical_values(rec)?);
        Ok(dot_with_intercept(&self.coefficients, &row))
    }

    /// Raw-hour prediction for a record expressed in dataset space.
    pub fn predict_raw(&self, rec: &ProjectRecord) -> Result<f64> {
        Ok(self.response_transform.invert(self.predict_model_space(rec)?))
    }
}

fn raw_numeric(encoder: &DesignEncoder, transforms: &TransformSet, rec: &ProjectRecord) -> Result<Vec<f64>> {
    Ok(encoder
        .numeric_values(rec)?
        .into_iter()
        .zip(&encoder.numeric)
        .map(|(v, &f)| transforms.inverse(f, v))
        .collect())
}
