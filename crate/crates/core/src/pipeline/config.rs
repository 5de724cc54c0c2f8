use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnMapping, Feature, FilterSpec};
use crate::error::{Error, Result};
use crate::learners::{LearnerConfig, LearnerKind};
use crate::markov::MarkovConfig;
use crate::metrics::Metric;
use crate::stats::{DEFAULT_KURT_TOL, DEFAULT_SKEW_TOL, DEFAULT_TAU};
use crate::weighting::Kernel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformChoice {
    Log,
    Zscore,
}

impl TransformChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            TransformChoice::Log => "log",
            TransformChoice::Zscore => "zscore",
        }
    }
}

impl std::str::FromStr for TransformChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "log" => Ok(TransformChoice::Log),
            "zscore" | "z-score" => Ok(TransformChoice::Zscore),
            other => Err(Error::Config(format!("unknown transform `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoldoutPolicy {
    /// The chronologically latest project (ties broken by id).
    Latest,
    /// The project named by `holdout_id`.
    ById,
    /// No holdout; only the search and the leave-one-out baseline run.
    None,
}

impl std::str::FromStr for HoldoutPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "latest" => Ok(HoldoutPolicy::Latest),
            "by_id" => Ok(HoldoutPolicy::ById),
            "none" => Ok(HoldoutPolicy::None),
            other => Err(Error::Config(format!("unknown holdout policy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CooksConfig {
    pub enabled: bool,
    /// `None` uses 4/n.
    pub threshold: Option<f64>,
    pub predictors: Vec<Feature>,
}

impl Default for CooksConfig {
    fn default() -> Self {
        CooksConfig {
            enabled: true,
            threshold: None,
            predictors: vec![Feature::Size],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StratifyConfig {
    /// `None` picks the default range from the project count.
    pub kmin: Option<usize>,
    pub kmax: Option<usize>,
    pub seed: u64,
    /// Skips X-means and cuts into exactly this many windows.
    pub q: Option<usize>,
    pub features: Vec<Feature>,
}

impl Default for StratifyConfig {
    fn default() -> Self {
        StratifyConfig {
            kmin: None,
            kmax: None,
            seed: 1,
            q: None,
            features: vec![Feature::Size, Feature::Effort, Feature::ElapsedTime, Feature::Pdr],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchParams {
    pub metric: Metric,
    pub majority_rule: f64,
    pub max_adjustments: usize,
    pub adjust_step: usize,
    pub seed: u64,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            metric: Metric::Mae,
            majority_rule: 0.5,
            max_adjustments: 50,
            adjust_step: 5,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    pub skew_tol: f64,
    pub kurt_tol: f64,
    /// Relative-error band for the prediction probability column.
    pub tau: f64,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            skew_tol: DEFAULT_SKEW_TOL,
            kurt_tol: DEFAULT_KURT_TOL,
            tau: DEFAULT_TAU,
        }
    }
}

/// Everything a run needs. Loaded from TOML; omitted keys take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: PathBuf,
    pub output_dir: PathBuf,
    pub transform: TransformChoice,
    pub transform_features: Vec<Feature>,
    pub holdout: HoldoutPolicy,
    pub holdout_id: Option<String>,
    pub learners: Vec<LearnerKind>,
    pub kernels: Vec<Kernel>,
    pub alpha: f64,
    pub columns: ColumnMapping,
    pub filters: FilterSpec,
    pub cooks: CooksConfig,
    pub stratify: StratifyConfig,
    pub markov: MarkovConfig,
    pub search: SearchParams,
    pub model: LearnerConfig,
    pub stats: StatsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: PathBuf::new(),
            output_dir: PathBuf::from("out"),
            transform: TransformChoice::Log,
            transform_features: vec![Feature::Size, Feature::Effort, Feature::ElapsedTime, Feature::Pdr],
            holdout: HoldoutPolicy::Latest,
            holdout_id: None,
            learners: LearnerKind::ALL.to_vec(),
            kernels: Kernel::ALL.to_vec(),
            alpha: 0.05,
            columns: ColumnMapping::default(),
            filters: FilterSpec::default(),
            cooks: CooksConfig::default(),
            stratify: StratifyConfig::default(),
            markov: MarkovConfig::default(),
            search: SearchParams::default(),
            model: LearnerConfig::default(),
            stats: StatsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_table(t: toml::Table) -> Result<Self> {
        RunConfig::deserialize(t).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// A config file (if any) with `key=value` overrides applied in order.
    /// `default_output` fills `output_dir` only when neither sets it.
    pub fn layered(file: Option<&Path>, overrides: &[String], default_output: Option<PathBuf>) -> Result<Self> {
        let mut table = match file {
            Some(path) => {
                let text =
                    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            set_override(&mut table, o)?;
        }
        if let Some(dir) = default_output {
            if !table.contains_key("output_dir") {
                table.insert("output_dir".into(), toml::Value::String(dir.to_string_lossy().into_owned()));
            }
        }
        Self::from_table(table)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.learners.is_empty() {
            return Err(Error::Config("at least one learner must be selected".into()));
        }
        if self.kernels.is_empty() {
            return Err(Error::Config("at least one kernel must be selected".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        if self.holdout == HoldoutPolicy::ById && self.holdout_id.is_none() {
            return Err(Error::Config("holdout = \"by_id\" needs holdout_id".into()));
        }
        if let (Some(a), Some(b)) = (self.stratify.kmin, self.stratify.kmax) {
            if a == 0 || a > b {
                return Err(Error::Config(format!("invalid X-means range [{a}, {b}]")));
            }
        }
        if self.stratify.q == Some(0) {
            return Err(Error::Config("stratify.q must be at least 1".into()));
        }
        if self.stratify.features.is_empty() {
            return Err(Error::Config("stratify.features is empty".into()));
        }
        if !(self.stats.tau > 0.0) {
            return Err(Error::Config("stats.tau must be positive".into()));
        }
        self.model.dnn.validate()?;
        self.search_config(LearnerKind::Mlr, Kernel::Rectangular).validate()
    }

    /// Search settings for one learner x kernel cell.
    pub fn search_config(&self, learner: LearnerKind, kernel: Kernel) -> crate::bellwether::SearchConfig {
        crate::bellwether::SearchConfig {
            learner,
            kernel,
            metric: self.search.metric,
            majority_rule: self.search.majority_rule,
            max_adjustments: self.search.max_adjustments,
            adjust_step: self.search.adjust_step,
            seed: self.search.seed,
            markov: self.markov.clone(),
            model: self.model.clone(),
        }
    }
}

/// A string as a TOML literal, for building overrides.
pub fn quoted(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

/// Applies `dotted.key=value` to a TOML table. The value is parsed as TOML
/// and falls back to a plain string.
pub fn set_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for p in path {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` in override `{key}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.input = "data/x.csv".into();
        cfg.stratify.kmax = Some(4);
        cfg.kernels = vec![Kernel::Gaussian];
        let back = RunConfig::from_toml_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn empty_file_is_default() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::from_toml_str("colour = 1"), Err(Error::Config(_))));
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let mut t = toml::Table::new();
        set_override(&mut t, "search.adjust_step=2").unwrap();
        set_override(&mut t, "input=data/a.csv").unwrap();
        set_override(&mut t, "kernels=[\"gaussian\"]").unwrap();
        let cfg = RunConfig::from_table(t).unwrap();
        assert_eq!(cfg.search.adjust_step, 2);
        assert_eq!(cfg.input, PathBuf::from("data/a.csv"));
        assert_eq!(cfg.kernels, vec![Kernel::Gaussian]);
        assert!(set_override(&mut toml::Table::new(), "novalue").is_err());
    }

    #[test]
    fn layering_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "alpha = 0.1\n[search]\nadjust_step = 3\n").unwrap();
        let cfg = RunConfig::layered(Some(&path), &["search.adjust_step=7".into()], Some("envdir".into())).unwrap();
        assert_eq!(cfg.alpha, 0.1);
        assert_eq!(cfg.search.adjust_step, 7);
        assert_eq!(cfg.output_dir, PathBuf::from("envdir"));
        let cfg = RunConfig::layered(None, &[format!("output_dir={}", quoted("a b"))], Some("envdir".into())).unwrap();
        assert_eq!(cfg.output_dir, PathBuf::from("a b"));
    }

    #[test]
    fn validation() {
        let mut cfg = RunConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.learners.clear();
        assert!(cfg.validate().is_err());
        let cfg = RunConfig {
            holdout: HoldoutPolicy::ById,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
