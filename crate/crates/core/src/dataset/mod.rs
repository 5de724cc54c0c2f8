//! Project records, CSV ingestion, quality filters and feature transforms.
//!
//! A [`ProjectSet`] is the unit every later stage consumes. Every record
//! that leaves the set (rejected at parse time, removed by a filter, or
//! removed as influential) is logged on the set itself so it can be written
//! to the removals sidecar; nothing is dropped silently.

mod cooks;
mod filter;
mod load;
mod transform;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cooks::{cooks_distances, cooks_filter, CooksReport};
pub use filter::{filter_quality, FilterKind, FilterReport, FilterSpec};
pub use load::{load_projects, parse_date, read_projects, write_projects, ColumnMapping};
pub use transform::{log_transform, zscore_normalize, AppliedTransform, TransformKind, TransformSet};

/// Days per calendar year used for every date-to-years conversion.
pub const DAYS_PER_YEAR: f64 = 365.25;

/// The ratio-scaled features of a project.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Size,
    Effort,
    ElapsedTime,
    Pdr,
}

impl Feature {
    pub const ALL: [Feature; 4] = [Feature::Size, Feature::Effort, Feature::ElapsedTime, Feature::Pdr];

    pub fn as_str(self) -> &'static str {
        match self {
            Feature::Size => "size",
            Feature::Effort => "effort",
            Feature::ElapsedTime => "elapsed_time",
            Feature::Pdr => "pdr",
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "size" => Ok(Feature::Size),
            "effort" => Ok(Feature::Effort),
            "elapsed_time" => Ok(Feature::ElapsedTime),
            "pdr" => Ok(Feature::Pdr),
            other => Err(Error::Config(format!("unknown ratio feature `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Ratio,
    Categorical,
}

/// One completed software project.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectRecord {
    pub id: String,
    pub start_date: Option<NaiveDate>,
    pub completion_date: NaiveDate,
    /// Function points (unadjusted or adjusted).
    pub size: f64,
    /// Person-hours.
    pub effort: f64,
    /// Project duration in the dataset's calendar unit.
    pub elapsed_time: f64,
    /// Effort per function point.
    pub pdr: f64,
    pub categoricals: BTreeMap<String, String>,
    pub quality_rating: Option<String>,
    pub fp_version: Option<f64>,
    pub web: bool,
    /// Mapped columns that were empty in the source row.
    pub missing_fields: BTreeSet<String>,
}

impl ProjectRecord {
    /// Builds a record with `pdr` derived from effort and size.
    pub fn new(
        id: impl Into<String>,
        completion_date: NaiveDate,
        size: f64,
        effort: f64,
        elapsed_time: f64,
    ) -> Self {
        ProjectRecord {
            id: id.into(),
            start_date: None,
            completion_date,
            size,
            effort,
            elapsed_time,
            pdr: effort / size,
            categoricals: BTreeMap::new(),
            quality_rating: None,
            fp_version: None,
            web: false,
            missing_fields: BTreeSet::new(),
        }
    }

    pub fn get(&self, feature: Feature) -> f64 {
        match feature {
            Feature::Size => self.size,
            Feature::Effort => self.effort,
            Feature::ElapsedTime => self.elapsed_time,
            Feature::Pdr => self.pdr,
        }
    }

    pub fn set(&mut self, feature: Feature, value: f64) {
        match feature {
            Feature::Size => self.size = value,
            Feature::Effort => self.effort = value,
            Feature::ElapsedTime => self.elapsed_time = value,
            Feature::Pdr => self.pdr = value,
        }
    }

    /// Completion date as a fractional count of calendar years.
    pub fn completion_years(&self) -> f64 {
        date_to_years(self.completion_date)
    }
}

pub fn date_to_years(date: NaiveDate) -> f64 {
    f64::from(date.num_days_from_ce()) / DAYS_PER_YEAR
}

/// Why a record left the set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub id: String,
    pub stage: String,
    pub reason: String,
}

/// A data row that could not be turned into a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRow {
    /// 1-based line number in the source file (header is line 1).
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProjectSet {
    pub records: Vec<ProjectRecord>,
    pub feature_schema: Vec<(String, FeatureKind)>,
    pub transforms: TransformSet,
    pub rejected: Vec<RejectedRow>,
    pub removals: Vec<Removal>,
}

impl ProjectSet {
    /// Wraps records with the default schema (the four ratio features plus
    /// the categorical names found on the first record).
    pub fn from_records(records: Vec<ProjectRecord>) -> Self {
        let mut feature_schema: Vec<(String, FeatureKind)> = Feature::ALL
            .iter()
            .map(|f| (f.as_str().to_string(), FeatureKind::Ratio))
            .collect();
        if let Some(first) = records.first() {
            for name in first.categoricals.keys() {
                feature_schema.push((name.clone(), FeatureKind::Categorical));
            }
        }
        ProjectSet {
            records,
            feature_schema,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn categorical_names(&self) -> Vec<String> {
        self.feature_schema
            .iter()
            .filter(|(_, k)| *k == FeatureKind::Categorical)
            .map(|(n, _)| n.clone())
            .collect()
    }

    pub fn values(&self, feature: Feature) -> Vec<f64> {
        self.records.iter().map(|r| r.get(feature)).collect()
    }

    /// Effort of every record mapped back to raw person-hours.
    pub fn raw_efforts(&self) -> Vec<f64> {
        self.records
            .iter()
            .map(|r| self.transforms.inverse(Feature::Effort, r.effort))
            .collect()
    }

    /// Splits off the record with the given id; the remainder keeps all
    /// bookkeeping.
    pub fn take_record(&self, id: &str) -> Option<(ProjectRecord, ProjectSet)> {
        let idx = self.records.iter().position(|r| r.id == id)?;
        let mut rest = self.clone();
        let rec = rest.records.remove(idx);
        Some((rec, rest))
    }
}

/// Orders records by completion date, breaking ties by id.
pub fn sort_chronologically(mut ps: ProjectSet) -> ProjectSet {
    ps.records
        .sort_by(|a, b| a.completion_date.cmp(&b.completion_date).then_with(|| a.id.cmp(&b.id)));
    ps
}
