//! Seeded generators for ISBSG-shaped project data and the test fixtures
//! built on it.
//!
//! Effort follows a multiplicative power law in size,
//! `effort = a * size^0.9 * exp(e)`, with lognormal sizes and durations.
//! Every generator returns raw (untransformed) records in chronological
//! order.

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};

use crate::dataset::{ColumnMapping, ProjectRecord, ProjectSet};

const LANGUAGE_TYPES: [&str; 3] = ["3GL", "4GL", "ApG"];
const DEVELOPMENT_TYPES: [&str; 3] = ["Enhancement", "New", "Re-development"];
const PLATFORMS: [&str; 4] = ["MF", "MR", "Multi", "PC"];

pub const CATEGORICALS: [&str; 3] = ["language_type", "development_type", "platform"];

/// Column names used when the generators' output is written to CSV.
pub fn column_mapping() -> ColumnMapping {
    ColumnMapping {
        quality_rating: Some("quality_rating".into()),
        fp_version: Some("fp_version".into()),
        web: Some("web".into()),
        categoricals: CATEGORICALS.iter().map(|s| s.to_string()).collect(),
        ..ColumnMapping::default()
    }
}

fn origin() -> NaiveDate {
    NaiveDate::from_ymd_opt(1995, 1, 1).expect("valid date")
}

struct Draw {
    size: LogNormal<f64>,
    duration_noise: Normal<f64>,
    effort_noise: Normal<f64>,
}

impl Draw {
    fn new(effort_sd: f64) -> Self {
        Draw {
            size: LogNormal::new(200f64.ln(), 0.8).expect("valid lognormal"),
            duration_noise: Normal::new(0.0, 0.3).expect("valid normal"),
            effort_noise: Normal::new(0.0, effort_sd).expect("valid normal"),
        }
    }

    /// (size, effort, elapsed months) with effort scaled by `factor`.
    fn project(&self, rng: &mut ChaCha8Rng, factor: f64) -> (f64, f64, f64) {
        let size = self.size.sample(rng).max(5.0);
        let effort = factor * 8.0 * size.powf(0.9) * self.effort_noise.sample(rng).exp();
        let elapsed = (1.8 * effort.powf(0.25) * self.duration_noise.sample(rng).exp()).max(1.0);
        (size, effort, elapsed.round().max(1.0))
    }
}

fn with_categoricals(mut r: ProjectRecord, rng: &mut ChaCha8Rng) -> ProjectRecord {
    let pick = |rng: &mut ChaCha8Rng, xs: &[&str]| xs[rng.random_range(0..xs.len())].to_string();
    r.categoricals.insert("language_type".into(), pick(rng, &LANGUAGE_TYPES));
    r.categoricals.insert("development_type".into(), pick(rng, &DEVELOPMENT_TYPES));
    r.categoricals.insert("platform".into(), pick(rng, &PLATFORMS));
    r.quality_rating = Some(if rng.random_bool(0.7) { "A" } else { "B" }.into());
    r.fp_version = Some(if rng.random_bool(0.5) { 4.0 } else { 4.1 });
    r
}

/// `n` clean ISBSG-shaped projects completed over about twelve years.
pub fn isbsg_like(n: usize, seed: u64) -> ProjectSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = Draw::new(0.5);
    let span_days = 12.0 * 365.25;
    let mut day = 0.0;
    let records = (0..n)
        .map(|i| {
            day += rng.random_range(0.0..2.0 * span_days / n.max(1) as f64);
            let (size, effort, elapsed) = draw.project(&mut rng, 1.0);
            let mut r = ProjectRecord::new(
                format!("P{i:05}"),
                origin() + Duration::days(day as i64),
                size.round(),
                effort.round().max(1.0),
                elapsed,
            );
            r.start_date = Some(r.completion_date - Duration::days((elapsed * 30.44) as i64));
            with_categoricals(r, &mut rng)
        })
        .collect();
    ps_with_categoricals(records)
}

fn ps_with_categoricals(records: Vec<ProjectRecord>) -> ProjectSet {
    let mut ps = ProjectSet::from_records(records);
    ps.feature_schema.retain(|(n, _)| !CATEGORICALS.contains(&n.as_str()));
    for c in CATEGORICALS {
        ps.feature_schema.push((c.to_string(), crate::dataset::FeatureKind::Categorical));
    }
    ps
}

/// 4106 projects of which exactly 1097 pass every quality filter. Each
/// failing project carries a single defect, cycling through the seven
/// filters.
pub fn filter_fixture(seed: u64) -> ProjectSet {
    const TOTAL: usize = 4106;
    const CLEAN: usize = 1097;
    let mut ps = isbsg_like(TOTAL, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    // spread the defective projects over the whole period
    let mut idx: Vec<usize> = (0..TOTAL).collect();
    for i in (1..TOTAL).rev() {
        idx.swap(i, rng.random_range(0..=i));
    }
    for (k, &i) in idx.iter().take(TOTAL - CLEAN).enumerate() {
        let r = &mut ps.records[i];
        match k % 7 {
            0 => r.elapsed_time = f64::NAN,
            1 => r.quality_rating = Some(if k % 2 == 0 { "C" } else { "D" }.into()),
            2 => r.fp_version = Some(3.0),
            3 => r.effort = f64::NAN,
            4 => r.size = f64::NAN,
            5 => r.web = true,
            _ => {
                r.categoricals.remove("platform");
                r.missing_fields.insert("platform".into());
            }
        }
        r.pdr = r.effort / r.size;
    }
    ps
}

/// Projects whose old segment follows a shifted effort relation.
pub struct RegimeShift {
    /// Chronological; the last record is from the recent regime and is meant
    /// as the holdout.
    pub set: ProjectSet,
    /// Completion date of the first recent-regime project.
    pub change_date: NaiveDate,
}

pub struct RegimeShiftSpec {
    /// Projects before the holdout.
    pub n: usize,
    pub old_fraction: f64,
    pub old_factor: f64,
    pub effort_sd: f64,
    pub seed: u64,
}

impl Default for RegimeShiftSpec {
    fn default() -> Self {
        RegimeShiftSpec {
            n: 250,
            old_fraction: 0.2,
            old_factor: 4.0,
            effort_sd: 0.1,
            seed: 0,
        }
    }
}

pub fn regime_shift(spec: &RegimeShiftSpec) -> RegimeShift {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let draw = Draw::new(spec.effort_sd);
    let n_old = (spec.n as f64 * spec.old_fraction).round() as usize;
    let mut records = Vec::with_capacity(spec.n + 1);
    let mut change_date = origin();
    for i in 0..=spec.n {
        let old = i < n_old;
        let (size, effort, elapsed) = draw.project(&mut rng, if old { spec.old_factor } else { 1.0 });
        let date = origin() + Duration::days(7 * i as i64);
        if i == n_old {
            change_date = date;
        }
        records.push(ProjectRecord::new(format!("R{i:04}"), date, size, effort, elapsed));
    }
    RegimeShift {
        set: ProjectSet::from_records(records),
        change_date,
    }
}

/// A set whose age chain is periodic (strictly alternating durations) in
/// every window except those reaching back to the `window`-th newest
/// project, where one repeated duration breaks the period.
///
/// Completion dates are spaced so the newest `window` projects span
/// `window_years`. The oldest `old_fraction` of the projects follow an
/// effort relation inflated by a factor of 4. The returned set has
/// `n + 1` records, the last being the holdout.
pub fn calibrated_window(n: usize, window: usize, window_years: f64, old_fraction: f64, seed: u64) -> ProjectSet {
    assert!(window >= 2 && window <= n, "window must fit in the set");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = Draw::new(0.1);
    let step = window_years * 365.25 / (window - 1) as f64;
    let n_old = (n as f64 * old_fraction).round() as usize;
    let first = n - window;
    let mut phase = 0usize;
    let records = (0..=n)
        .map(|i| {
            let (size, effort, _) = draw.project(&mut rng, if i < n_old { 4.0 } else { 1.0 });
            // repeat the previous duration once, at the window's second project
            if i != first + 1 {
                phase += 1;
            }
            let elapsed = if phase % 2 == 0 { 6.0 } else { 12.0 };
            ProjectRecord::new(
                format!("C{i:04}"),
                origin() + Duration::days((i as f64 * step).round() as i64),
                size,
                effort,
                elapsed,
            )
        })
        .collect();
    ProjectSet::from_records(records)
}

/// Strictly alternating durations: every window's age chain has period 2.
pub fn periodic_ages(n: usize, seed: u64) -> ProjectSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = Draw::new(0.2);
    let records = (0..n)
        .map(|i| {
            let (size, effort, _) = draw.project(&mut rng, 1.0);
            let elapsed = if i % 2 == 0 { 3.0 } else { 9.0 };
            ProjectRecord::new(format!("A{i:04}"), origin() + Duration::days(10 * i as i64), size, effort, elapsed)
        })
        .collect();
    ProjectSet::from_records(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{filter_quality, FilterSpec};

    #[test]
    fn filter_fixture_retains_1097() {
        let (kept, report) = filter_quality(filter_fixture(3), &FilterSpec::default());
        assert_eq!(report.input, 4106);
        assert_eq!(kept.len(), 1097);
        assert_eq!(report.retained, 1097);
        assert!(report.removed.iter().all(|(_, c)| *c > 0));
    }

    #[test]
    fn generators_are_chronological_and_seeded() {
        let a = isbsg_like(200, 9);
        assert!(a.records.windows(2).all(|w| w[0].completion_date <= w[1].completion_date));
        assert_eq!(a, isbsg_like(200, 9));
        let r = regime_shift(&RegimeShiftSpec::default());
        assert_eq!(r.set.len(), 251);
        assert!(r.set.records.iter().all(|p| p.effort > 0.0 && p.size > 0.0 && p.elapsed_time > 0.0));
    }

    #[test]
    fn calibrated_window_breaks_period_once() {
        let ps = calibrated_window(100, 30, 2.0, 0.2, 1);
        let ages: Vec<f64> = ps.records.iter().map(|r| r.elapsed_time).collect();
        let repeats: Vec<usize> = (1..ages.len()).filter(|&i| ages[i] == ages[i - 1]).collect();
        assert_eq!(repeats, vec![71]);
    }
}
