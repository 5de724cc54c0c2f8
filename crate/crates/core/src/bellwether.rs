//! The moving-window search and the growing-portfolio baseline.
//!
//! A candidate is always a suffix of the chronologically sorted training
//! projects, identified by the index of its oldest project. The parts of
//! the original strata older than the candidate are the validation windows.
//!
//! A candidate wins on validation window `j` when its metric there is
//! strictly lower than that of a model trained, unweighted, on the pooled
//! remaining validation windows (every window except `j`). With a single
//! validation window that pool is empty and the comparison falls back to
//! predicting the candidate's weighted mean effort. Validation windows are
//! never weighted.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Feature, ProjectRecord, ProjectSet, TransformSet};
use crate::error::{Error, Result};
use crate::learners::{fit_records, FittedModel, LearnerConfig, LearnerKind};
use crate::markov::{window_dimensions, window_stationarity, ChainStatus, MarkovConfig, StationaryResult};
use crate::metrics::{error_summary, ErrorSummary, Metric};
use crate::stratify::Window;
use crate::weighting::{apply_weights, Kernel, WeightedWindow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub learner: LearnerKind,
    pub kernel: Kernel,
    pub metric: Metric,
    /// A candidate needs wins on strictly more than this fraction of the
    /// validation windows.
    pub majority_rule: f64,
    pub max_adjustments: usize,
    pub adjust_step: usize,
    /// Seeds the network initialisation.
    pub seed: u64,
    pub markov: MarkovConfig,
    pub model: LearnerConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            learner: LearnerKind::Mlr,
            kernel: Kernel::Gaussian,
            metric: Metric::Mae,
            majority_rule: 0.5,
            max_adjustments: 50,
            adjust_step: 5,
            seed: 1,
            markov: MarkovConfig::default(),
            model: LearnerConfig::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.majority_rule > 0.0 && self.majority_rule <= 1.0) {
            return Err(Error::Config(format!("majority_rule must lie in (0,1], got {}", self.majority_rule)));
        }
        if self.adjust_step == 0 {
            return Err(Error::Config("adjust_step must be at least 1".into()));
        }
        Ok(())
    }

    fn learner_config(&self) -> LearnerConfig {
        let mut m = self.model.clone();
        m.dnn.seed = self.seed;
        m
    }

    pub fn fit(&self, records: &[ProjectRecord], weights: &[f64], transforms: &TransformSet) -> Result<FittedModel> {
        fit_records(self.learner, records, weights, &self.learner_config(), transforms)
    }
}

/// Raw-hour estimates and actuals for every record, then the summary.
fn score_model(model: &FittedModel, records: &[ProjectRecord], transforms: &TransformSet) -> Result<ErrorSummary> {
    let est = records
        .iter()
        .map(|r| model.estimate_hours(r))
        .collect::<Result<Vec<_>>>()?;
    let act: Vec<f64> = records.iter().map(|r| transforms.inverse(Feature::Effort, r.effort)).collect();
    error_summary(&act, &est)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    /// Index of the original stratum this validation window comes from.
    pub window_index: usize,
    pub size: usize,
    pub candidate_metric: f64,
    pub baseline_metric: f64,
    pub win: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreLedger {
    pub per_window: Vec<WindowScore>,
    pub wins: usize,
    pub mean_metric: f64,
    /// Set when the learner could not be fitted on the candidate.
    pub failure: Option<String>,
}

impl ScoreLedger {
    pub fn majority(&self, rule: f64) -> bool {
        !self.per_window.is_empty() && self.wins as f64 > rule * self.per_window.len() as f64
    }

    /// Larger share of wins first, then lower mean metric.
    fn better_than(&self, other: &ScoreLedger) -> bool {
        let (a, b) = (self.wins * other.per_window.len(), other.wins * self.per_window.len());
        a > b || (a == b && self.mean_metric < other.mean_metric)
    }
}

pub fn cross_window_score(
    candidate: &WeightedWindow,
    others: &[Window],
    transforms: &TransformSet,
    cfg: &SearchConfig,
) -> Result<ScoreLedger> {
    if others.is_empty() {
        return Err(Error::InsufficientData("no validation window to score against".into()));
    }
    let cand_ids: HashSet<&str> = candidate.window.records.iter().map(|r| r.id.as_str()).collect();
    if let Some(r) = others.iter().flat_map(|w| &w.records).find(|r| cand_ids.contains(r.id.as_str())) {
        return Err(Error::Parameter(format!("project {} is in both the candidate and a validation window", r.id)));
    }
    let model = cfg.fit(&candidate.window.records, &candidate.weights, transforms);
    let mean_effort = {
        let raw: Vec<f64> = candidate
            .window
            .records
            .iter()
            .map(|r| transforms.inverse(Feature::Effort, r.effort))
            .collect();
        let wsum: f64 = candidate.weights.iter().sum();
        raw.iter().zip(&candidate.weights).map(|(e, w)| e * w).sum::<f64>() / wsum
    };

    let scores: Vec<Result<WindowScore>> = others
        .par_iter()
        .enumerate()
        .map(|(j, w)| {
            let baseline_metric = baseline_metric(others, j, mean_effort, transforms, cfg)?;
            let candidate_metric = match &model {
                Ok(m) => score_model(m, &w.records, transforms).map(|s| cfg.metric.of(&s)).unwrap_or(f64::INFINITY),
                Err(_) => f64::INFINITY,
            };
            Ok(WindowScore {
                window_index: w.index,
                size: w.len(),
                candidate_metric,
                baseline_metric,
                win: candidate_metric < baseline_metric,
            })
        })
        .collect();
    let per_window = scores.into_iter().collect::<Result<Vec<_>>>()?;
    let wins = per_window.iter().filter(|s| s.win).count();
    let mean_metric = per_window.iter().map(|s| s.candidate_metric).sum::<f64>() / per_window.len() as f64;
    Ok(ScoreLedger {
        per_window,
        wins,
        mean_metric,
        failure: model.err().map(|e| e.to_string()),
    })
}

fn baseline_metric(
    others: &[Window],
    j: usize,
    mean_effort: f64,
    transforms: &TransformSet,
    cfg: &SearchConfig,
) -> Result<f64> {
    let target = &others[j].records;
    let pool: Vec<ProjectRecord> = others
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != j)
        .flat_map(|(_, w)| w.records.iter().cloned())
        .collect();
    if !pool.is_empty() {
        let fitted = cfg.fit(&pool, &vec![1.0; pool.len()], transforms);
        if let Ok(s) = fitted.and_then(|m| score_model(&m, target, transforms)) {
            return Ok(cfg.metric.of(&s));
        }
    }
    let act: Vec<f64> = target.iter().map(|r| transforms.inverse(Feature::Effort, r.effort)).collect();
    let s = error_summary(&act, &vec![mean_effort; act.len()])?;
    Ok(cfg.metric.of(&s))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchOutcome {
    /// Ergodic and wins a majority.
    Found,
    /// Ergodic, but no candidate reached a majority; the best is reported.
    BestEffort,
    /// No candidate passed the ergodicity check.
    NoBellwether,
}

impl SearchOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            SearchOutcome::Found => "found",
            SearchOutcome::BestEffort => "best_effort",
            SearchOutcome::NoBellwether => "no_bellwether",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub action: String,
    /// Position of the candidate's oldest project in the training sequence.
    pub start: usize,
    pub size: usize,
    pub age: f64,
    pub status: ChainStatus,
    pub wins: usize,
    pub validation_windows: usize,
    pub mean_metric: f64,
    pub per_window_metric: Vec<f64>,
    /// Whether the search moved to this candidate.
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BellwetherResult {
    pub outcome: SearchOutcome,
    /// Absent only for [`SearchOutcome::NoBellwether`].
    pub window: Option<WeightedWindow>,
    pub size: usize,
    pub age: f64,
    pub stationarity: Option<StationaryResult>,
    /// Chain rows that had no departures and were made uniform.
    pub uniform_rows: usize,
    pub wins: Option<ScoreLedger>,
    pub trace: Vec<TraceRow>,
    pub stop_reason: String,
}

struct Evaluated {
    start: usize,
    window: WeightedWindow,
    stationarity: Option<StationaryResult>,
    uniform_rows: usize,
    ledger: ScoreLedger,
}

impl Evaluated {
    fn eligible(&self) -> bool {
        self.stationarity.as_ref().is_some_and(StationaryResult::is_ergodic)
    }

    fn status(&self) -> ChainStatus {
        self.stationarity.as_ref().map_or(ChainStatus::NotConverged, |s| s.status)
    }
}

struct Search<'a> {
    records: Vec<ProjectRecord>,
    /// (stratum index, first position, end position) in `records`.
    bounds: Vec<(usize, usize, usize)>,
    transforms: &'a TransformSet,
    cfg: &'a SearchConfig,
}

impl Search<'_> {
    fn validation_windows(&self, start: usize) -> Vec<Window> {
        self.bounds
            .iter()
            .filter(|&&(_, lo, _)| lo < start)
            .map(|&(index, lo, hi)| Window {
                index,
                records: self.records[lo..hi.min(start)].to_vec(),
            })
            .collect()
    }

    fn evaluate(&self, start: usize) -> Result<Evaluated> {
        let window = Window {
            index: self.bounds.last().map_or(1, |b| b.0),
            records: self.records[start..].to_vec(),
        };
        let weighted = apply_weights(&window, self.cfg.kernel)?;
        let (stationarity, uniform_rows) = match window_stationarity(&window, &self.cfg.markov) {
            Ok((_, tpm, st)) => (Some(st), tpm.uniform_rows.len()),
            Err(_) => (None, 0),
        };
        let ledger = cross_window_score(&weighted, &self.validation_windows(start), self.transforms, self.cfg)?;
        Ok(Evaluated {
            start,
            window: weighted,
            stationarity,
            uniform_rows,
            ledger,
        })
    }

    fn trace_row(&self, iteration: usize, action: &str, e: &Evaluated, accepted: bool) -> TraceRow {
        let (size, age) = window_dimensions(&e.window.window);
        TraceRow {
            iteration,
            action: action.to_string(),
            start: e.start,
            size,
            age,
            status: e.status(),
            wins: e.ledger.wins,
            validation_windows: e.ledger.per_window.len(),
            mean_metric: e.ledger.mean_metric,
            per_window_metric: e.ledger.per_window.iter().map(|s| s.candidate_metric).collect(),
            accepted,
        }
    }
}

/// Hill-climbs from the newest stratum over grow/shrink moves at the old
/// end of the candidate.
pub fn search_bellwether(strata: &[Window], transforms: &TransformSet, cfg: &SearchConfig) -> Result<BellwetherResult> {
    cfg.validate()?;
    if strata.len() < 2 {
        return Err(Error::InsufficientData(format!("the search needs at least 2 strata, got {}", strata.len())));
    }
    let mut records = Vec::new();
    let mut bounds = Vec::new();
    for w in strata {
        if w.is_empty() {
            return Err(Error::InsufficientData(format!("stratum {} is empty", w.index)));
        }
        bounds.push((w.index, records.len(), records.len() + w.len()));
        records.extend(w.records.iter().cloned());
    }
    if records.windows(2).any(|p| p[0].completion_date > p[1].completion_date) {
        return Err(Error::Parameter("strata are not in chronological order".into()));
    }
    let n = records.len();
    let min_size = cfg.adjust_step.max(cfg.model.predictors.len() + cfg.model.categoricals.len() + 3);
    let search = Search {
        records,
        bounds,
        transforms,
        cfg,
    };

    let mut visited: HashSet<usize> = HashSet::new();
    let start0 = search.bounds.last().expect("two strata").1;
    let mut current = search.evaluate(start0)?;
    visited.insert(start0);
    let mut trace = vec![search.trace_row(0, "initial", &current, true)];
    let mut best: Option<Evaluated> = None;
    let mut stop = "max_adjustments";

    let consider = |best: &mut Option<Evaluated>, e: &Evaluated| {
        if e.eligible() && best.as_ref().is_none_or(|b| e.ledger.better_than(&b.ledger)) {
            *best = Some(Evaluated {
                start: e.start,
                window: e.window.clone(),
                stationarity: e.stationarity.clone(),
                uniform_rows: e.uniform_rows,
                ledger: e.ledger.clone(),
            });
        }
    };
    consider(&mut best, &current);

    if current.eligible() && current.ledger.majority(cfg.majority_rule) {
        stop = "majority";
    } else {
        for iteration in 1..=cfg.max_adjustments {
            // a 0 start would leave nothing to validate on
            let grow = match current.start.checked_sub(cfg.adjust_step) {
                Some(s) if s >= 1 => Some(s),
                _ if current.start > 1 => Some(1),
                _ => None,
            }
            .filter(|s| !visited.contains(s));
            let shrink = Some(current.start + cfg.adjust_step).filter(|&s| n - s.min(n) >= min_size && !visited.contains(&s));
            let (g, s) = rayon::join(
                || grow.map(|st| search.evaluate(st)).transpose(),
                || shrink.map(|st| search.evaluate(st)).transpose(),
            );
            let neighbours: Vec<(&str, Evaluated)> = [("grow", g?), ("shrink", s?)]
                .into_iter()
                .filter_map(|(a, e)| e.map(|e| (a, e)))
                .collect();
            if neighbours.is_empty() {
                stop = "exhausted";
                break;
            }
            for (_, e) in &neighbours {
                visited.insert(e.start);
                consider(&mut best, e);
            }
            let pick = neighbours
                .iter()
                .enumerate()
                .filter(|(_, (_, e))| e.eligible())
                .fold(None::<usize>, |acc, (i, (_, e))| match acc {
                    Some(b) if !e.ledger.better_than(&neighbours[b].1.ledger) => Some(b),
                    _ => Some(i),
                });
            let choice = match pick {
                Some(i) if !current.eligible() || neighbours[i].1.ledger.better_than(&current.ledger) => Some(i),
                Some(_) => None,
                // nothing eligible nearby: keep moving towards larger windows
                None if !current.eligible() => Some(0),
                None => None,
            };
            let mut moved = None;
            for (i, (action, e)) in neighbours.iter().enumerate() {
                trace.push(search.trace_row(iteration, action, e, choice == Some(i)));
                if choice == Some(i) {
                    moved = Some(i);
                }
            }
            let Some(i) = moved else {
                stop = "no_improvement";
                break;
            };
            current = neighbours.into_iter().nth(i).expect("chosen neighbour").1;
            if current.eligible() && current.ledger.majority(cfg.majority_rule) {
                stop = "majority";
                break;
            }
        }
    }

    Ok(match best {
        Some(b) => {
            let (size, age) = window_dimensions(&b.window.window);
            BellwetherResult {
                outcome: if b.ledger.majority(cfg.majority_rule) {
                    SearchOutcome::Found
                } else {
                    SearchOutcome::BestEffort
                },
                window: Some(b.window),
                size,
                age,
                stationarity: b.stationarity,
                uniform_rows: b.uniform_rows,
                wins: Some(b.ledger),
                trace,
                stop_reason: stop.to_string(),
            }
        }
        None => BellwetherResult {
            outcome: SearchOutcome::NoBellwether,
            window: None,
            size: 0,
            age: 0.0,
            stationarity: None,
            uniform_rows: 0,
            wins: None,
            trace,
            stop_reason: stop.to_string(),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioReport {
    pub learner: LearnerKind,
    /// Folds that produced a prediction.
    pub folds: usize,
    pub skipped: usize,
    pub summary: Option<ErrorSummary>,
    /// (id, actual hours, estimated hours) per completed fold.
    pub predictions: Vec<(String, f64, f64)>,
}

/// Leave-one-out over every project: fit on the rest, predict the one left
/// out. Failed folds are skipped and counted.
pub fn growing_portfolio(ps: &ProjectSet, cfg: &SearchConfig) -> Result<PortfolioReport> {
    let n = ps.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!("leave-one-out needs at least 3 projects, got {n}")));
    }
    let folds: Vec<Option<(String, f64, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let train: Vec<ProjectRecord> = ps
                .records
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, r)| r.clone())
                .collect();
            let test = &ps.records[i];
            let m = cfg.fit(&train, &vec![1.0; n - 1], &ps.transforms).ok()?;
            let est = m.estimate_hours(test).ok()?;
            Some((test.id.clone(), ps.transforms.inverse(Feature::Effort, test.effort), est))
        })
        .collect();
    let predictions: Vec<(String, f64, f64)> = folds.into_iter().flatten().collect();
    let skipped = n - predictions.len();
    let summary = if predictions.is_empty() {
        None
    } else {
        let act: Vec<f64> = predictions.iter().map(|p| p.1).collect();
        let est: Vec<f64> = predictions.iter().map(|p| p.2).collect();
        Some(error_summary(&act, &est)?)
    };
    Ok(PortfolioReport {
        learner: cfg.learner,
        folds: predictions.len(),
        skipped,
        summary,
        predictions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutComparison {
    pub id: String,
    pub actual: f64,
    pub bellwether_estimate: Option<f64>,
    pub bellwether_abs_error: Option<f64>,
    pub portfolio_estimate: f64,
    pub portfolio_abs_error: f64,
    pub window_size: usize,
    pub window_age: f64,
}

/// Fails when the holdout appears in any of the given training sets.
pub fn assert_no_leakage<'a>(holdout: &ProjectRecord, sets: impl IntoIterator<Item = &'a [ProjectRecord]>) -> Result<()> {
    for set in sets {
        if set.iter().any(|r| r.id == holdout.id) {
            return Err(Error::Parameter(format!("holdout {} leaked into a training set", holdout.id)));
        }
    }
    Ok(())
}

/// Predicts the holdout from the Bellwether window (kernel-weighted) and
/// from the whole portfolio (unweighted).
pub fn evaluate_holdout(
    result: &BellwetherResult,
    portfolio: &ProjectSet,
    holdout: &ProjectRecord,
    cfg: &SearchConfig,
) -> Result<HoldoutComparison> {
    let transforms = &portfolio.transforms;
    let actual = transforms.inverse(Feature::Effort, holdout.effort);
    assert_no_leakage(holdout, [portfolio.records.as_slice()])?;
    let bellwether_estimate = match &result.window {
        Some(w) => {
            assert_no_leakage(holdout, [w.window.records.as_slice()])?;
            let m = cfg.fit(&w.window.records, &w.weights, transforms)?;
            Some(m.estimate_hours(holdout)?)
        }
        None => None,
    };
    let pm = cfg.fit(&portfolio.records, &vec![1.0; portfolio.len()], transforms)?;
    let portfolio_estimate = pm.estimate_hours(holdout)?;
    Ok(HoldoutComparison {
        id: holdout.id.clone(),
        actual,
        bellwether_estimate,
        bellwether_abs_error: bellwether_estimate.map(|e| (e - actual).abs()),
        portfolio_estimate,
        portfolio_abs_error: (portfolio_estimate - actual).abs(),
        window_size: result.size,
        window_age: result.age,
    })
}
