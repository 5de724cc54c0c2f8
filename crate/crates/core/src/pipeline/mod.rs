//! End-to-end run: preprocess, stratify, search every learner x kernel cell,
//! evaluate against the holdout and the growing portfolio, then render the
//! report files in memory. Nothing touches the disk until
//! [`RunOutput::write_to`].

mod config;
mod render;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{
    quoted, set_override, CooksConfig, HoldoutPolicy, RunConfig, SearchParams, StatsConfig, StratifyConfig, TransformChoice,
};
pub use render::{cells_csv, figures_csv, markdown, removals_csv, trace_csv, fmt4};

use crate::bellwether::{
    evaluate_holdout, growing_portfolio, search_bellwether, BellwetherResult, HoldoutComparison, PortfolioReport,
    SearchOutcome, TraceRow,
};
use crate::dataset::{
    cooks_filter, filter_quality, load_projects, log_transform, sort_chronologically, zscore_normalize, CooksReport,
    Feature, FilterReport, ProjectRecord, ProjectSet,
};
use crate::error::{Error, Result};
use crate::learners::{FittedModel, LearnerKind};
use crate::markov::ChainStatus;
use crate::metrics::{error_summary, kruskal_wallis, pairwise_comparison, Metric, TestResult, GLASS_DELTA_THRESHOLD};
use crate::stats::{confidence_interval, mean, moments, normality_gate, prediction_probability, sample_sd, ConfidenceInterval};
use crate::stratify::{default_k_range, stratify, xmeans, Window};
use crate::weighting::Kernel;

/// Cleaned data in two views sharing one chronological order.
#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub input_rows: usize,
    pub filter: FilterReport,
    pub cooks: Option<CooksReport>,
    /// Transformed values; carries the transform log and removal ledger.
    pub data: ProjectSet,
    /// The same records with their original values.
    pub raw: ProjectSet,
}

/// Load, filter, transform, drop influential points, sort.
pub fn preprocess(cfg: &RunConfig) -> Result<Preprocessed> {
    if cfg.input.as_os_str().is_empty() {
        return Err(Error::Config("no input file given".into()));
    }
    let loaded = load_projects(&cfg.input, &cfg.columns)?;
    preprocess_set(loaded, cfg)
}

pub fn preprocess_set(loaded: ProjectSet, cfg: &RunConfig) -> Result<Preprocessed> {
    let input_rows = loaded.len() + loaded.rejected.len();
    let (filtered, filter) = filter_quality(loaded, &cfg.filters);
    if filtered.is_empty() {
        return Err(Error::EmptyInput("no project passed the quality filters".into()));
    }
    let raw_by_id: HashMap<String, ProjectRecord> =
        filtered.records.iter().map(|r| (r.id.clone(), r.clone())).collect();
    if raw_by_id.len() != filtered.len() {
        return Err(Error::Schema("project ids are not unique".into()));
    }
    let transformed = apply_transform(filtered, cfg.transform, &cfg.transform_features)?;
    let (cleaned, cooks) = if cfg.cooks.enabled {
        let (ps, rep) = cooks_filter(transformed, Feature::Effort, &cfg.cooks.predictors, cfg.cooks.threshold)?;
        (ps, Some(rep))
    } else {
        (transformed, None)
    };
    if cleaned.is_empty() {
        return Err(Error::EmptyInput("no project survived the influence filter".into()));
    }
    let data = sort_chronologically(cleaned);
    let mut raw = data.clone();
    raw.transforms = Default::default();
    raw.records = data.records.iter().map(|r| raw_by_id[&r.id].clone()).collect();
    Ok(Preprocessed {
        input_rows,
        filter,
        cooks,
        data,
        raw,
    })
}

fn apply_transform(ps: ProjectSet, choice: TransformChoice, features: &[Feature]) -> Result<ProjectSet> {
    match choice {
        TransformChoice::Log => log_transform(ps, features),
        TransformChoice::Zscore => zscore_normalize(ps, features),
    }
}

/// The portfolio with the holdout removed, plus the holdout itself.
#[derive(Debug, Clone)]
pub struct Split {
    pub portfolio: ProjectSet,
    pub holdout: Option<ProjectRecord>,
}

pub fn split_holdout(data: &ProjectSet, cfg: &RunConfig) -> Result<Split> {
    let id = match cfg.holdout {
        HoldoutPolicy::None => {
            return Ok(Split {
                portfolio: data.clone(),
                holdout: None,
            })
        }
        HoldoutPolicy::Latest => data
            .records
            .last()
            .map(|r| r.id.clone())
            .ok_or_else(|| Error::EmptyInput("no project left for the holdout".into()))?,
        HoldoutPolicy::ById => cfg.holdout_id.clone().unwrap_or_default(),
    };
    let (holdout, portfolio) = data
        .take_record(&id)
        .ok_or_else(|| Error::Config(format!("holdout project `{id}` is not in the cleaned data")))?;
    Ok(Split {
        portfolio,
        holdout: Some(holdout),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratification {
    pub q: usize,
    /// True when `q` came from the config rather than X-means.
    pub fixed: bool,
    pub kmin: usize,
    pub kmax: usize,
    /// (k, BIC) for every model X-means scored.
    pub bic_trace: Vec<(usize, f64)>,
    pub sizes: Vec<usize>,
}

pub fn choose_strata(portfolio: &ProjectSet, cfg: &RunConfig) -> Result<(Stratification, Vec<Window>)> {
    let (dk, dx) = default_k_range(portfolio.len());
    let kmin = cfg.stratify.kmin.unwrap_or(dk);
    let kmax = cfg.stratify.kmax.unwrap_or(dx.max(kmin));
    let (q, bic_trace, fixed) = match cfg.stratify.q {
        Some(q) => (q, Vec::new(), true),
        None => {
            let c = xmeans(portfolio, &cfg.stratify.features, kmin, kmax, cfg.stratify.seed)?;
            (c.q, c.trace, false)
        }
    };
    let strata = stratify(portfolio, q)?;
    Ok((
        Stratification {
            q,
            fixed,
            kmin,
            kmax,
            bic_trace,
            sizes: strata.iter().map(Window::len).collect(),
        },
        strata,
    ))
}

/// Everything up to the search, shared by the subcommands.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub pre: Preprocessed,
    pub split: Split,
    pub stratification: Stratification,
    pub strata: Vec<Window>,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let pre = preprocess(cfg)?;
    prepare_from(pre, cfg)
}

pub fn prepare_from(pre: Preprocessed, cfg: &RunConfig) -> Result<Prepared> {
    let split = split_holdout(&pre.data, cfg)?;
    let (stratification, strata) = choose_strata(&split.portfolio, cfg)?;
    Ok(Prepared {
        pre,
        split,
        stratification,
        strata,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityRow {
    pub transform: TransformChoice,
    pub feature: Feature,
    pub window: usize,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRow {
    pub transform: TransformChoice,
    pub feature: Feature,
    pub interval: Option<ConfidenceInterval>,
}

/// Per-stratum shape of each feature under both transforms, with the
/// interval over the stratum means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityTable {
    pub rows: Vec<NormalityRow>,
    pub intervals: Vec<IntervalRow>,
}

impl NormalityTable {
    pub fn pass_rate(&self, transform: TransformChoice) -> f64 {
        let rows: Vec<&NormalityRow> = self.rows.iter().filter(|r| r.transform == transform).collect();
        if rows.is_empty() {
            return 0.0;
        }
        rows.iter().filter(|r| r.pass).count() as f64 / rows.len() as f64
    }
}

/// `raw` must be chronological and untransformed.
pub fn normality_table(raw: &ProjectSet, q: usize, features: &[Feature], cfg: &RunConfig) -> Result<NormalityTable> {
    let mut rows = Vec::new();
    let mut intervals = Vec::new();
    for choice in [TransformChoice::Log, TransformChoice::Zscore] {
        let ps = apply_transform(raw.clone(), choice, features)?;
        let strata = stratify(&ps, q)?;
        for &f in features {
            let mut means = Vec::with_capacity(q);
            for w in &strata {
                let xs: Vec<f64> = w.records.iter().map(|r| r.get(f)).collect();
                let Ok(m) = moments(&xs) else { continue };
                let v = normality_gate(&m, cfg.stats.skew_tol, cfg.stats.kurt_tol);
                means.push(m.mean);
                rows.push(NormalityRow {
                    transform: choice,
                    feature: f,
                    window: w.index,
                    n: m.n,
                    mean: m.mean,
                    sd: m.sd,
                    skewness: m.skewness,
                    kurtosis: m.kurtosis,
                    pass: v.pass,
                });
            }
            let interval = if means.len() >= 2 {
                confidence_interval(mean(&means), sample_sd(&means), means.len(), cfg.alpha).ok()
            } else {
                None
            };
            intervals.push(IntervalRow {
                transform: choice,
                feature: f,
                interval,
            });
        }
    }
    Ok(NormalityTable { rows, intervals })
}

/// Accuracy of one cell's Bellwether model on every portfolio project
/// outside its window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub n: usize,
    pub mae: f64,
    pub mbre: f64,
    pub mibre: f64,
    /// Fraction of estimates within the configured relative-error band.
    pub prediction_probability: f64,
    /// Per-project values of the search metric, in portfolio order.
    pub per_case: Vec<f64>,
}

impl Validation {
    pub fn metric(&self, m: Metric) -> f64 {
        match m {
            Metric::Mae => self.mae,
            Metric::Mbre => self.mbre,
            Metric::Mibre => self.mibre,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub learner: LearnerKind,
    pub kernel: Kernel,
    pub outcome: SearchOutcome,
    pub stop_reason: String,
    pub window_size: usize,
    pub window_age: f64,
    pub window_first_id: Option<String>,
    pub window_last_id: Option<String>,
    pub status: Option<ChainStatus>,
    /// Age states of the window's chain that fell back to the uniform row.
    pub uniform_rows: usize,
    pub wins: Option<usize>,
    pub validation_windows: usize,
    /// Trace iteration whose candidate became the reported window.
    pub trace_iteration: Option<usize>,
    pub validation: Option<Validation>,
    pub holdout: Option<HoldoutComparison>,
}

impl CellReport {
    pub fn has_window(&self) -> bool {
        self.outcome != SearchOutcome::NoBellwether
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub treatment: Kernel,
    pub control: Kernel,
    pub result: Option<TestResult>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerTests {
    pub learner: LearnerKind,
    pub kruskal_wallis: Option<TestResult>,
    pub note: Option<String>,
    pub pairwise: Vec<PairwiseTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub version: String,
    pub config: RunConfig,
    pub input_rows: usize,
    pub rejected_rows: usize,
    pub filter: FilterReport,
    pub cooks_threshold: Option<f64>,
    pub cooks_removed: usize,
    pub retained: usize,
    pub portfolio_size: usize,
    pub holdout_id: Option<String>,
    pub stratification: Stratification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub metadata: RunMetadata,
    pub normality: NormalityTable,
    pub cells: Vec<CellReport>,
    pub portfolio: Vec<PortfolioReport>,
    pub tests: Vec<LearnerTests>,
}

impl EvaluationReport {
    /// True when not a single cell produced a Bellwether window.
    pub fn no_bellwether(&self) -> bool {
        self.cells.iter().all(|c| !c.has_window())
    }

    pub fn cell(&self, learner: LearnerKind, kernel: Kernel) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.learner == learner && c.kernel == kernel)
    }

    pub fn portfolio_for(&self, learner: LearnerKind) -> Option<&PortfolioReport> {
        self.portfolio.iter().find(|p| p.learner == learner)
    }
}

/// One searched cell with the artifacts that do not go into the report.
struct CellRun {
    report: CellReport,
    trace: Vec<TraceRow>,
    model: Option<FittedModel>,
}

fn run_cell(prep: &Prepared, cfg: &RunConfig, learner: LearnerKind, kernel: Kernel) -> Result<CellRun> {
    let scfg = cfg.search_config(learner, kernel);
    let transforms = &prep.split.portfolio.transforms;
    let result: BellwetherResult = search_bellwether(&prep.strata, transforms, &scfg)?;
    let holdout = match &prep.split.holdout {
        Some(h) => Some(evaluate_holdout(&result, &prep.split.portfolio, h, &scfg)?),
        None => None,
    };
    let (model, validation) = match &result.window {
        Some(ww) => {
            let model = scfg.fit(&ww.window.records, &ww.weights, transforms)?;
            let inside: std::collections::HashSet<&str> = ww.window.ids().into_iter().collect();
            let targets: Vec<&ProjectRecord> =
                prep.split.portfolio.records.iter().filter(|r| !inside.contains(r.id.as_str())).collect();
            let validation = if targets.is_empty() {
                None
            } else {
                let est = targets.iter().map(|r| model.estimate_hours(r)).collect::<Result<Vec<_>>>()?;
                let act: Vec<f64> = targets.iter().map(|r| transforms.inverse(Feature::Effort, r.effort)).collect();
                let s = error_summary(&act, &est)?;
                let per_case = s
                    .per_case
                    .iter()
                    .map(|c| match scfg.metric {
                        Metric::Mae => c.absolute,
                        Metric::Mbre => c.bre,
                        Metric::Mibre => c.ibre,
                    })
                    .collect();
                Some(Validation {
                    n: s.n,
                    mae: s.mae,
                    mbre: s.mbre,
                    mibre: s.mibre,
                    prediction_probability: prediction_probability(&est, &act, cfg.stats.tau)?,
                    per_case,
                })
            };
            (Some(model), validation)
        }
        None => (None, None),
    };
    let window = result.window.as_ref().map(|w| &w.window);
    let trace_iteration = result.window.as_ref().and_then(|w| {
        let first = w.window.records.first()?.id.as_str();
        let start = prep.split.portfolio.records.iter().position(|r| r.id == first)?;
        result
            .trace
            .iter()
            .find(|t| t.start == start && t.size == w.window.len())
            .map(|t| t.iteration)
    });
    Ok(CellRun {
        report: CellReport {
            learner,
            kernel,
            outcome: result.outcome,
            stop_reason: result.stop_reason.clone(),
            window_size: result.size,
            window_age: result.age,
            window_first_id: window.and_then(|w| w.records.first()).map(|r| r.id.clone()),
            window_last_id: window.and_then(|w| w.records.last()).map(|r| r.id.clone()),
            status: result.stationarity.as_ref().map(|s| s.status),
            uniform_rows: result.uniform_rows,
            wins: result.wins.as_ref().map(|l| l.wins),
            validation_windows: result.wins.as_ref().map_or(0, |l| l.per_window.len()),
            trace_iteration,
            validation,
            holdout,
        },
        trace: result.trace,
        model,
    })
}

/// Kruskal-Wallis across the kernels of each learner and Welch + Glass'
/// delta for every kernel pair, on the per-project search metric.
pub fn learner_tests(cells: &[CellReport], learners: &[LearnerKind], kernels: &[Kernel]) -> Vec<LearnerTests> {
    learners
        .iter()
        .map(|&learner| {
            let groups: Vec<(Kernel, &Vec<f64>)> = kernels
                .iter()
                .filter_map(|&k| {
                    let c = cells.iter().find(|c| c.learner == learner && c.kernel == k)?;
                    Some((k, &c.validation.as_ref()?.per_case))
                })
                .collect();
            let (kruskal_wallis, note) = if groups.len() < 2 {
                (None, Some("fewer than two kernels produced a window".to_string()))
            } else {
                let gs: Vec<Vec<f64>> = groups.iter().map(|(_, g)| (*g).clone()).collect();
                match kruskal_wallis(&gs) {
                    Ok(r) => (Some(r), None),
                    Err(e) => (None, Some(e.to_string())),
                }
            };
            let mut pairwise = Vec::new();
            for i in 0..groups.len() {
                for j in i + 1..groups.len() {
                    let (control, c) = groups[i];
                    let (treatment, t) = groups[j];
                    let (result, note) = match pairwise_comparison(t, c) {
                        Ok(r) => (Some(r), None),
                        Err(e) => (None, Some(e.to_string())),
                    };
                    pairwise.push(PairwiseTest {
                        treatment,
                        control,
                        result,
                        note,
                    });
                }
            }
            LearnerTests {
                learner,
                kruskal_wallis,
                note,
                pairwise,
            }
        })
        .collect()
}

/// `"*"` when `p < alpha`, strictly.
pub fn p_marker(p: f64, alpha: f64) -> &'static str {
    if p < alpha {
        "*"
    } else {
        ""
    }
}

/// `"**"` when Glass' delta exceeds 0.5, strictly.
pub fn delta_marker(delta: f64) -> &'static str {
    if delta > GLASS_DELTA_THRESHOLD {
        "**"
    } else {
        ""
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KwRow {
    pub learner: LearnerKind,
    pub h: String,
    pub p: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub learner: LearnerKind,
    pub treatment: Kernel,
    pub control: Kernel,
    pub t: String,
    pub df: String,
    pub p: String,
    pub delta: String,
}

/// Significance tables with markers appended to the formatted values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTables {
    pub alpha: f64,
    pub kruskal_wallis: Vec<KwRow>,
    pub pairwise: Vec<PairRow>,
}

pub fn compare_report(report: &EvaluationReport, alpha: f64) -> ComparisonTables {
    let na = || "n/a".to_string();
    let mut kw = Vec::new();
    let mut pairs = Vec::new();
    for lt in &report.tests {
        kw.push(match &lt.kruskal_wallis {
            Some(r) => KwRow {
                learner: lt.learner,
                h: fmt4(r.statistic),
                p: format!("{}{}", fmt4(r.p_value), p_marker(r.p_value, alpha)),
            },
            None => KwRow {
                learner: lt.learner,
                h: na(),
                p: na(),
            },
        });
        for pt in &lt.pairwise {
            pairs.push(match &pt.result {
                Some(r) => PairRow {
                    learner: lt.learner,
                    treatment: pt.treatment,
                    control: pt.control,
                    t: fmt4(r.statistic),
                    df: fmt4(r.df),
                    p: format!("{}{}", fmt4(r.p_value), p_marker(r.p_value, alpha)),
                    delta: r
                        .effect_size
                        .map_or_else(na, |d| format!("{}{}", fmt4(d), delta_marker(d))),
                },
                None => PairRow {
                    learner: lt.learner,
                    treatment: pt.treatment,
                    control: pt.control,
                    t: na(),
                    df: na(),
                    p: na(),
                    delta: na(),
                },
            });
        }
    }
    ComparisonTables {
        alpha,
        kruskal_wallis: kw,
        pairwise: pairs,
    }
}

/// The report plus every rendered file, keyed by path relative to the
/// output directory.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: EvaluationReport,
    pub files: BTreeMap<String, Vec<u8>>,
}

impl RunOutput {
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|source| Error::Io {
                    path: parent.to_path_buf(),
                    source,
                })?;
            }
            std::fs::write(&path, bytes).map_err(|source| Error::Io { path, source })?;
        }
        Ok(())
    }
}

pub fn run_pipeline(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let pre = preprocess(cfg)?;
    run_prepared(prepare_from(pre, cfg)?, cfg)
}

/// Runs the grid on already prepared data.
pub fn run_prepared(prep: Prepared, cfg: &RunConfig) -> Result<RunOutput> {
    let grid: Vec<(LearnerKind, Kernel)> = cfg
        .learners
        .iter()
        .flat_map(|&l| cfg.kernels.iter().map(move |&k| (l, k)))
        .collect();
    let runs: Vec<CellRun> = grid
        .par_iter()
        .map(|&(l, k)| run_cell(&prep, cfg, l, k))
        .collect::<Result<Vec<_>>>()?;
    let portfolio: Vec<PortfolioReport> = cfg
        .learners
        .par_iter()
        .map(|&l| growing_portfolio(&prep.split.portfolio, &cfg.search_config(l, Kernel::Rectangular)))
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<CellReport> = runs.iter().map(|r| r.report.clone()).collect();
    let tests = learner_tests(&cells, &cfg.learners, &cfg.kernels);
    let normality = normality_table(
        &without(&prep.pre.raw, prep.split.holdout.as_ref()),
        prep.stratification.q,
        &cfg.transform_features,
        cfg,
    )?;

    let pre = &prep.pre;
    let report = EvaluationReport {
        metadata: RunMetadata {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: cfg.clone(),
            input_rows: pre.input_rows,
            rejected_rows: pre.data.rejected.len(),
            filter: pre.filter.clone(),
            cooks_threshold: pre.cooks.as_ref().map(|c| c.threshold),
            cooks_removed: pre.cooks.as_ref().map_or(0, |c| c.removed.len()),
            retained: pre.data.len(),
            portfolio_size: prep.split.portfolio.len(),
            holdout_id: prep.split.holdout.as_ref().map(|h| h.id.clone()),
            stratification: prep.stratification.clone(),
        },
        normality,
        cells,
        portfolio,
        tests,
    };

    let mut files = BTreeMap::new();
    files.insert("report.json".into(), json_bytes(&report)?);
    files.insert("report.md".into(), markdown(&report).into_bytes());
    files.insert("cells.csv".into(), cells_csv(&report).into_bytes());
    files.insert("figures.csv".into(), figures_csv(&report).into_bytes());
    let traces: Vec<(LearnerKind, Kernel, &[TraceRow])> =
        runs.iter().map(|r| (r.report.learner, r.report.kernel, r.trace.as_slice())).collect();
    files.insert("trace.csv".into(), trace_csv(&traces).into_bytes());
    files.insert("removals.csv".into(), removals_csv(&pre.data).into_bytes());
    files.insert("transforms.json".into(), json_bytes(&pre.data.transforms)?);
    files.insert("config.toml".into(), cfg.to_toml()?.into_bytes());
    let mut clean = Vec::new();
    let window_index = window_index(&prep);
    crate::dataset::write_projects(&pre.raw, &cfg.columns, Some(&window_index), &mut clean)?;
    files.insert("clean_data.csv".into(), clean);
    for r in &runs {
        if let Some(m) = &r.model {
            let name = format!("models/{}_{}.json", r.report.learner.as_str(), r.report.kernel.as_str());
            files.insert(name, m.to_json()?.into_bytes());
        }
    }
    Ok(RunOutput { report, files })
}

fn without(ps: &ProjectSet, holdout: Option<&ProjectRecord>) -> ProjectSet {
    let mut out = ps.clone();
    if let Some(h) = holdout {
        out.records.retain(|r| r.id != h.id);
    }
    out
}

/// Stratum number per cleaned record in `pre.raw` order; the holdout gets
/// `q` (one past the last stratum).
fn window_index(prep: &Prepared) -> Vec<usize> {
    let mut by_id: HashMap<&str, usize> = HashMap::new();
    for w in &prep.strata {
        for r in &w.records {
            by_id.insert(r.id.as_str(), w.index);
        }
    }
    prep.pre
        .raw
        .records
        .iter()
        .map(|r| by_id.get(r.id.as_str()).copied().unwrap_or(prep.strata.len()))
        .collect()
}

/// Pretty JSON with a trailing newline.
pub fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(v)?;
    out.push(b'\n');
    Ok(out)
}
