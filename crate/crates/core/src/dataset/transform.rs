use serde::{Deserialize, Serialize};

use super::{Feature, ProjectSet};
use crate::error::{Error, Result};

/// Margin kept at each end of the (0,1) interval after the log rescale, so
/// the smallest and largest observations stay strictly inside it.
pub const LOG_RESCALE_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformKind {
    /// `margin + (1 - 2 margin) (ln x - ln_min) / (ln_max - ln_min)`
    Log { ln_min: f64, ln_max: f64, margin: f64 },
    /// `(x - mean) / sd`, sample sd.
    ZScore { mean: f64, sd: f64 },
}

impl TransformKind {
    fn forward(&self, x: f64) -> Option<f64> {
        match *self {
            TransformKind::Log { ln_min, ln_max, margin } => {
                (x > 0.0).then(|| margin + (1.0 - 2.0 * margin) * (x.ln() - ln_min) / (ln_max - ln_min))
            }
            TransformKind::ZScore { mean, sd } => Some((x - mean) / sd),
        }
    }

    fn inverse(&self, y: f64) -> f64 {
        match *self {
            TransformKind::Log { ln_min, ln_max, margin } => {
                (ln_min + (y - margin) / (1.0 - 2.0 * margin) * (ln_max - ln_min)).exp()
            }
            TransformKind::ZScore { mean, sd } => y * sd + mean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppliedTransform {
    pub feature: Feature,
    #[serde(flatten)]
    pub kind: TransformKind,
}

/// Ordered log of transforms applied to a set's ratio features.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransformSet {
    pub applied: Vec<AppliedTransform>,
}

impl TransformSet {
    pub fn is_identity(&self, feature: Feature) -> bool {
        !self.applied.iter().any(|t| t.feature == feature)
    }

    /// Maps a raw value into the transformed space.
    pub fn forward(&self, feature: Feature, raw: f64) -> Result<f64> {
        let mut v = raw;
        for t in self.applied.iter().filter(|t| t.feature == feature) {
            v = t.kind.forward(v).ok_or_else(|| Error::Transform {
                feature: feature.to_string(),
                reason: format!("value {raw} outside the transform's domain"),
            })?;
        }
        Ok(v)
    }

    /// Maps a transformed value back to raw units.
    pub fn inverse(&self, feature: Feature, value: f64) -> f64 {
        self.applied
            .iter()
            .rev()
            .filter(|t| t.feature == feature)
            .fold(value, |v, t| t.kind.inverse(v))
    }
}

/// Natural log of each named feature followed by a per-feature rescale into
/// (0,1). The parameters are appended to the set's transform log.
pub fn log_transform(mut ps: ProjectSet, features: &[Feature]) -> Result<ProjectSet> {
    for &f in features {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for r in &ps.records {
            let v = r.get(f);
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Transform {
                    feature: f.to_string(),
                    reason: format!("non-positive value {v} on record `{}`", r.id),
                });
            }
            lo = lo.min(v.ln());
            hi = hi.max(v.ln());
        }
        if ps.records.is_empty() || !(hi > lo) {
            return Err(Error::Transform {
                feature: f.to_string(),
                reason: "zero range".into(),
            });
        }
        let kind = TransformKind::Log {
            ln_min: lo,
            ln_max: hi,
            margin: LOG_RESCALE_MARGIN,
        };
        for r in &mut ps.records {
            let v = kind.forward(r.get(f)).expect("checked positive");
            r.set(f, v);
        }
        ps.transforms.applied.push(AppliedTransform { feature: f, kind });
    }
    Ok(ps)
}

/// Standardizes each named feature with its mean and sample sd.
pub fn zscore_normalize(mut ps: ProjectSet, features: &[Feature]) -> Result<ProjectSet> {
    for &f in features {
        let vals = ps.values(f);
        let n = vals.len();
        if n < 2 {
            return Err(Error::InsufficientData(format!(
                "z-score of `{f}` needs at least 2 records, got {n}"
            )));
        }
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sd = var.sqrt();
        if !(sd > 0.0) {
            return Err(Error::Transform {
                feature: f.to_string(),
                reason: "zero standard deviation".into(),
            });
        }
        let kind = TransformKind::ZScore { mean, sd };
        for r in &mut ps.records {
            let v = kind.forward(r.get(f)).expect("z-score is total");
            r.set(f, v);
        }
        ps.transforms.applied.push(AppliedTransform { feature: f, kind });
    }
    Ok(ps)
}

#[cfg(test)]
mod tests {
    use chrono::NaiveDate;
    use proptest::prelude::*;

    use super::*;
    use crate::dataset::ProjectRecord;

    fn set_with_sizes(sizes: &[f64]) -> ProjectSet {
        let d = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
        ProjectSet::from_records(
            sizes
                .iter()
                .enumerate()
                .map(|(i, &s)| ProjectRecord::new(format!("p{i}"), d, s, 10.0 * s, 1.0 + i as f64))
                .collect(),
        )
    }

    #[test]
    fn powers_of_e_map_to_evenly_spaced_logs() {
        let e = std::f64::consts::E;
        let ps = log_transform(set_with_sizes(&[1.0, e, e * e]), &[Feature::Size]).unwrap();
        let got = ps.values(Feature::Size);
        // logs {0,1,2} rescaled with margin 0.05
        let expected = [0.05, 0.5, 0.95];
        for (g, x) in got.iter().zip(expected) {
            assert!((g - x).abs() < 1e-12, "{g} vs {x}");
        }
        match ps.transforms.applied[0].kind {
            TransformKind::Log { ln_min, ln_max, .. } => {
                assert!(ln_min.abs() < 1e-12 && (ln_max - 2.0).abs() < 1e-12)
            }
            _ => panic!("expected log"),
        }
    }

    #[test]
    fn equal_values_are_zero_range() {
        let err = log_transform(set_with_sizes(&[3.0, 3.0, 3.0]), &[Feature::Size]).unwrap_err();
        assert!(err.to_string().contains("zero range"));
    }

    #[test]
    fn non_positive_names_record() {
        let err = log_transform(set_with_sizes(&[3.0, 0.0, 1.0]), &[Feature::Size]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("p1") && msg.contains("size"), "{msg}");
    }

    #[test]
    fn zscore_of_one_two_three() {
        let ps = zscore_normalize(set_with_sizes(&[1.0, 2.0, 3.0]), &[Feature::Size]).unwrap();
        let got = ps.values(Feature::Size);
        for (g, x) in got.iter().zip([-1.0, 0.0, 1.0]) {
            assert!((g - x).abs() < 1e-12);
        }
    }

    #[test]
    fn zscore_constant_is_error() {
        let err = zscore_normalize(set_with_sizes(&[2.0, 2.0]), &[Feature::Size]).unwrap_err();
        assert!(err.to_string().contains("size"));
    }

    proptest! {
        #[test]
        fn zscore_mean_is_zero(xs in prop::collection::vec(0.1f64..1e4, 2..40)) {
            prop_assume!(xs.iter().any(|x| (x - xs[0]).abs() > 1e-6));
            let ps = zscore_normalize(set_with_sizes(&xs), &[Feature::Size]).unwrap();
            let v = ps.values(Feature::Size);
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            prop_assert!(mean.abs() < 1e-12);
        }

        #[test]
        fn log_transform_inverts(xs in prop::collection::vec(0.01f64..1e6, 2..40)) {
            prop_assume!(xs.iter().any(|x| (x / xs[0] - 1.0).abs() > 1e-6));
            let ps = log_transform(set_with_sizes(&xs), &[Feature::Size, Feature::Effort]).unwrap();
            for (r, raw) in ps.records.iter().zip(&xs) {
                let back = ps.transforms.inverse(Feature::Size, r.size);
                prop_assert!(((back - raw) / raw).abs() < 1e-9);
                prop_assert!(r.size > 0.0 && r.size < 1.0);
                let fwd = ps.transforms.forward(Feature::Size, *raw).unwrap();
                prop_assert!((fwd - r.size).abs() < 1e-12);
            }
        }
    }
}
