use serde::{Deserialize, Serialize};

use crate::dataset::{Feature, ProjectRecord};
use crate::error::{Error, Result};

/// Maps records to a numeric row: the chosen ratio predictors followed by
/// one-hot blocks for each categorical. No intercept column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignEncoder {
    pub numeric: Vec<Feature>,
    /// (categorical name, sorted levels seen in training).
    pub categorical: Vec<(String, Vec<String>)>,
    /// Drop the first level of every categorical (linear models).
    pub drop_first: bool,
}

impl DesignEncoder {
    pub fn fit(records: &[ProjectRecord], numeric: &[Feature], categoricals: &[String], drop_first: bool) -> Result<Self> {
        if let Some(f) = numeric.iter().find(|f| matches!(f, Feature::Effort | Feature::Pdr)) {
            return Err(Error::Config(format!("`{f}` cannot be a predictor of effort")));
        }
        let mut categorical = Vec::with_capacity(categoricals.len());
        for name in categoricals {
            let mut levels: Vec<String> = Vec::new();
            for r in records {
                let v = r
                    .categoricals
                    .get(name)
                    .ok_or_else(|| Error::MissingFeature(format!("{name} (record {})", r.id)))?;
                levels.push(v.clone());
            }
            levels.sort();
            levels.dedup();
            categorical.push((name.clone(), levels));
        }
        Ok(DesignEncoder {
            numeric: numeric.to_vec(),
            categorical,
            drop_first,
        })
    }

    pub fn width(&self) -> usize {
        self.numeric.len()
            + self
                .categorical
                .iter()
                .map(|(_, l)| l.len().saturating_sub(usize::from(self.drop_first)))
                .sum::<usize>()
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.numeric.iter().map(|f| f.to_string()).collect();
        for (name, levels) in &self.categorical {
            for level in levels.iter().skip(usize::from(self.drop_first)) {
                names.push(format!("{name}={level}"));
            }
        }
        names
    }

    /// Numeric part only, in predictor order.
    pub fn numeric_values(&self, rec: &ProjectRecord) -> Result<Vec<f64>> {
        self.numeric
            .iter()
            .map(|&f| {
                let v = rec.get(f);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::MissingFeature(format!("{f} (record {})", rec.id)))
                }
            })
            .collect()
    }

    /// One-hot part only. A level unseen in training encodes as all zeros.
    pub fn categorical_values(&self, rec: &ProjectRecord) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for (name, levels) in &self.categorical {
            let v = rec
                .categoricals
                .get(name)
                .ok_or_else(|| Error::MissingFeature(format!("{name} (record {})", rec.id)))?;
            for level in levels.iter().skip(usize::from(self.drop_first)) {
                out.push(if level == v { 1.0 } else { 0.0 });
            }
        }
        Ok(out)
    }

    pub fn encode(&self, rec: &ProjectRecord) -> Result<Vec<f64>> {
        let mut row = self.numeric_values(rec)?;
        row.extend(self.categorical_values(rec)?);
        Ok(row)
    }
}

#[cfg(test)]
mod tests {
    use chrono::NaiveDate;

    use super::*;

    fn rec(id: &str, lang: &str) -> ProjectRecord {
        let mut r = ProjectRecord::new(id, NaiveDate::from_ymd_opt(2000, 1, 1).unwrap(), 2.0, 3.0, 4.0);
        r.categoricals.insert("lang".into(), lang.into());
        r
    }

    #[test]
    fn one_hot_with_drop() {
        let rs = [rec("a", "3GL"), rec("b", "4GL"), rec("c", "3GL")];
        let enc = DesignEncoder::fit(&rs, &[Feature::Size], &["lang".into()], true).unwrap();
        assert_eq!(enc.column_names(), ["size", "lang=4GL"]);
        assert_eq!(enc.encode(&rs[1]).unwrap(), [2.0, 1.0]);
        assert_eq!(enc.encode(&rec("d", "ApG")).unwrap(), [2.0, 0.0]);
        let full = DesignEncoder::fit(&rs, &[Feature::Size], &["lang".into()], false).unwrap();
        assert_eq!(full.width(), 3);
    }

    #[test]
    fn effort_is_not_a_predictor() {
        assert!(DesignEncoder::fit(&[rec("a", "x")], &[Feature::Pdr], &[], true).is_err());
    }

    #[test]
    fn missing_categorical_is_named() {
        let enc = DesignEncoder::fit(&[rec("a", "x")], &[Feature::Size], &["lang".into()], true).unwrap();
        let bare = ProjectRecord::new("z", NaiveDate::from_ymd_opt(2000, 1, 1).unwrap(), 1.0, 1.0, 1.0);
        let err = enc.encode(&bare).unwrap_err();
        assert!(err.to_string().contains("lang"));
    }
}
