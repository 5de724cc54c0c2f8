//! The three learners behind one fit/predict contract.
//!
//! Training data arrives in dataset space (after the dataset transforms).
//! Every fitted model carries those transforms so it can turn a raw record
//! into a raw-hour estimate on its own.

mod design;
pub mod dnn;
mod linear;

use serde::{Deserialize, Serialize};

use crate::dataset::{Feature, ProjectRecord, TransformSet};
use crate::error::{Error, Result};
use crate::weighting::WeightedWindow;

pub use design::DesignEncoder;
pub use dnn::{DnnConfig, DnnModel, Network};
pub use linear::{choose_transform, AtlmModel, AtlmTransform, LinearModel};

/// Raw-hour estimates are floored here so relative errors stay defined
/// when a linear model extrapolates below zero.
pub const MIN_ESTIMATE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    Mlr,
    Atlm,
    Dnn,
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 3] = [LearnerKind::Mlr, LearnerKind::Atlm, LearnerKind::Dnn];

    pub fn as_str(self) -> &'static str {
        match self {
            LearnerKind::Mlr => "mlr",
            LearnerKind::Atlm => "atlm",
            LearnerKind::Dnn => "dnn",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            LearnerKind::Mlr => "MLR",
            LearnerKind::Atlm => "ATLM",
            LearnerKind::Dnn => "DNN",
        }
    }
}

impl std::str::FromStr for LearnerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlr" => Ok(LearnerKind::Mlr),
            "atlm" => Ok(LearnerKind::Atlm),
            "dnn" => Ok(LearnerKind::Dnn),
            other => Err(Error::Config(format!("unknown learner `{other}`"))),
        }
    }
}

/// Which inputs a learner sees and how the network is trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub predictors: Vec<Feature>,
    pub categoricals: Vec<String>,
    pub dnn: DnnConfig,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            predictors: vec![Feature::Size],
            categoricals: Vec::new(),
            dnn: DnnConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub iterations: usize,
    pub final_loss: f64,
    /// Ratio of largest to smallest |R| diagonal entry of the QR factor.
    pub condition: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_reason: Option<String>,
    /// Loss after every accepted step, starting from the initial loss.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loss_history: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum FittedModel {
    Mlr(LinearModel),
    Atlm(AtlmModel),
    Dnn(DnnModel),
}

impl FittedModel {
    pub fn kind(&self) -> LearnerKind {
        match self {
            FittedModel::Mlr(_) => LearnerKind::Mlr,
            FittedModel::Atlm(_) => LearnerKind::Atlm,
            FittedModel::Dnn(_) => LearnerKind::Dnn,
        }
    }

    pub fn transforms(&self) -> &TransformSet {
        match self {
            FittedModel::Mlr(m) => &m.transforms,
            FittedModel::Atlm(m) => &m.transforms,
            FittedModel::Dnn(m) => &m.transforms,
        }
    }

    pub fn summary(&self) -> &TrainingSummary {
        match self {
            FittedModel::Mlr(m) => &m.summary,
            FittedModel::Atlm(m) => &m.summary,
            FittedModel::Dnn(m) => &m.summary,
        }
    }

    /// Effort prediction in dataset space for a dataset-space record.
    pub fn predict_transformed(&self, rec: &ProjectRecord) -> Result<f64> {
        match self {
            FittedModel::Mlr(m) => m.predict_transformed(rec),
            FittedModel::Dnn(m) => m.predict_transformed(rec),
            FittedModel::Atlm(m) => m
                .transforms
                .forward(Feature::Effort, m.predict_raw(rec)?.max(MIN_ESTIMATE)),
        }
    }

    /// Raw-hour estimate for a dataset-space record.
    pub fn estimate_hours(&self, rec: &ProjectRecord) -> Result<f64> {
        let hours = match self {
            FittedModel::Atlm(m) => m.predict_raw(rec)?,
            _ => self.transforms().inverse(Feature::Effort, self.predict_transformed(rec)?),
        };
        if hours.is_nan() {
            return Err(Error::Divergence(format!("NaN estimate for record {}", rec.id)));
        }
        Ok(hours.max(MIN_ESTIMATE))
    }

    /// Raw-hour estimate for a record given in raw units.
    pub fn predict(&self, raw: &ProjectRecord) -> Result<f64> {
        let mut rec = raw.clone();
        let t = self.transforms();
        for f in Feature::ALL {
            if f == Feature::Effort || f == Feature::Pdr {
                continue;
            }
            let v = raw.get(f);
            if v.is_finite() {
                rec.set(f, t.forward(f, v)?);
            }
        }
        self.estimate_hours(&rec)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub fn fit_records(
    kind: LearnerKind,
    records: &[ProjectRecord],
    weights: &[f64],
    cfg: &LearnerConfig,
    transforms: &TransformSet,
) -> Result<FittedModel> {
    if records.len() != weights.len() {
        return Err(Error::LengthMismatch {
            left: records.len(),
            right: weights.len(),
        });
    }
    Ok(match kind {
        LearnerKind::Mlr => {
            FittedModel::Mlr(LinearModel::fit(records, weights, &cfg.predictors, &cfg.categoricals, transforms)?)
        }
        LearnerKind::Atlm => {
            FittedModel::Atlm(AtlmModel::fit(records, weights, &cfg.predictors, &cfg.categoricals, transforms)?)
        }
        LearnerKind::Dnn => FittedModel::Dnn(DnnModel::fit(
            records,
            weights,
            &cfg.predictors,
            &cfg.categoricals,
            transforms,
            &cfg.dnn,
        )?),
    })
}

pub fn fit(kind: LearnerKind, ww: &WeightedWindow, cfg: &LearnerConfig, transforms: &TransformSet) -> Result<FittedModel> {
    fit_records(kind, &ww.window.records, &ww.weights, cfg, transforms)
}

pub fn fit_mlr(ww: &WeightedWindow, cfg: &LearnerConfig, transforms: &TransformSet) -> Result<FittedModel> {
    fit(LearnerKind::Mlr, ww, cfg, transforms)
}

pub fn fit_atlm(ww: &WeightedWindow, cfg: &LearnerConfig, transforms: &TransformSet) -> Result<FittedModel> {
    fit(LearnerKind::Atlm, ww, cfg, transforms)
}

pub fn fit_dnn(ww: &WeightedWindow, cfg: &LearnerConfig, transforms: &TransformSet) -> Result<FittedModel> {
    fit(LearnerKind::Dnn, ww, cfg, transforms)
}
