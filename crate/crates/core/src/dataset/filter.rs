use serde::{Deserialize, Serialize};

use super::{ProjectRecord, ProjectSet, Removal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    UnknownAge,
    LowQuality,
    OutdatedFp,
    UnknownEffort,
    UnknownSize,
    WebProject,
    MissingValues,
}

impl FilterKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterKind::UnknownAge => "unknown_age",
            FilterKind::LowQuality => "low_quality",
            FilterKind::OutdatedFp => "outdated_fp",
            FilterKind::UnknownEffort => "unknown_effort",
            FilterKind::UnknownSize => "unknown_size",
            FilterKind::WebProject => "web_project",
            FilterKind::MissingValues => "missing_values",
        }
    }
}

/// Which quality filters are active. Filters run in declaration order and a
/// record is attributed to the first one it fails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSpec {
    pub unknown_age: bool,
    pub low_quality: bool,
    pub accepted_ratings: Vec<String>,
    pub outdated_fp: bool,
    pub min_fp_version: f64,
    pub unknown_effort: bool,
    pub unknown_size: bool,
    pub web_projects: bool,
    pub missing_values: bool,
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec {
            unknown_age: true,
            low_quality: true,
            accepted_ratings: vec!["A".into(), "B".into()],
            outdated_fp: true,
            min_fp_version: 4.0,
            unknown_effort: true,
            unknown_size: true,
            web_projects: true,
            missing_values: true,
        }
    }
}

impl FilterSpec {
    pub fn none() -> Self {
        FilterSpec {
            unknown_age: false,
            low_quality: false,
            outdated_fp: false,
            unknown_effort: false,
            unknown_size: false,
            web_projects: false,
            missing_values: false,
            ..FilterSpec::default()
        }
    }

    fn active(&self) -> Vec<FilterKind> {
        let mut v = Vec::new();
        let mut push = |on: bool, k| {
            if on {
                v.push(k)
            }
        };
        push(self.unknown_age, FilterKind::UnknownAge);
        push(self.low_quality, FilterKind::LowQuality);
        push(self.outdated_fp, FilterKind::OutdatedFp);
        push(self.unknown_effort, FilterKind::UnknownEffort);
        push(self.unknown_size, FilterKind::UnknownSize);
        push(self.web_projects, FilterKind::WebProject);
        push(self.missing_values, FilterKind::MissingValues);
        v
    }

    fn fails(&self, kind: FilterKind, r: &ProjectRecord) -> bool {
        let unknown = |v: f64| !(v.is_finite() && v > 0.0);
        match kind {
            FilterKind::UnknownAge => unknown(r.elapsed_time),
            FilterKind::LowQuality => !r
                .quality_rating
                .as_deref()
                .is_some_and(|q| self.accepted_ratings.iter().any(|a| a.eq_ignore_ascii_case(q.trim()))),
            FilterKind::OutdatedFp => r.fp_version.is_some_and(|v| v < self.min_fp_version),
            FilterKind::UnknownEffort => unknown(r.effort),
            FilterKind::UnknownSize => unknown(r.size),
            FilterKind::WebProject => r.web,
            FilterKind::MissingValues => !r.missing_fields.is_empty(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input: usize,
    pub retained: usize,
    /// Removal count per active filter, in evaluation order.
    pub removed: Vec<(FilterKind, usize)>,
}

impl FilterReport {
    pub fn is_empty_result(&self) -> bool {
        self.retained == 0
    }
}

/// Drops every record failing an active filter. An empty result is valid and
/// shows up as `retained == 0` in the report.
pub fn filter_quality(mut ps: ProjectSet, spec: &FilterSpec) -> (ProjectSet, FilterReport) {
    let active = spec.active();
    let mut counts: Vec<(FilterKind, usize)> = active.iter().map(|k| (*k, 0)).collect();
    let input = ps.records.len();
    let mut kept = Vec::with_capacity(input);
    for r in std::mem::take(&mut ps.records) {
        match active.iter().position(|k| spec.fails(*k, &r)) {
            Some(i) => {
                counts[i].1 += 1;
                ps.removals.push(Removal {
                    id: r.id.clone(),
                    stage: "filter".into(),
                    reason: active[i].as_str().into(),
                });
            }
            None => kept.push(r),
        }
    }
    ps.records = kept;
    let report = FilterReport {
        input,
        retained: ps.records.len(),
        removed: counts,
    };
    (ps, report)
}
