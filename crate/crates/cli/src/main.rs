use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bellwether::bellwether::{search_bellwether, SearchOutcome};
use bellwether::dataset::{parse_date, write_projects, Feature, ProjectRecord};
use bellwether::learners::{FittedModel, LearnerKind};
use bellwether::pipeline::{
    self, normality_table, prepare, quoted, trace_csv, RunConfig, TransformChoice,
};
use bellwether::synthetic;
use bellwether::weighting::Kernel;
use bellwether::{Error, Result, Stage};
use clap::{Args, Parser, Subcommand, ValueEnum};

const OUTPUT_ENV: &str = "BELLWETHER_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "bellwether", version, about = "Find the Bellwether moving window in a project history and estimate effort from it")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: preprocess, stratify, search every learner x kernel, report.
    Run(RunArgs),
    /// Load, filter, transform and write the cleaned data.
    Preprocess(RunArgs),
    /// Choose the number of strata and print the windows.
    Stratify(RunArgs),
    /// Search a single learner x kernel cell and write its trace.
    Search {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "mlr")]
        learner: LearnerKind,
        #[arg(long, default_value = "gaussian")]
        kernel: Kernel,
    },
    /// Estimate effort for one project with a saved model.
    Predict(PredictArgs),
    /// Per-stratum normality of each feature under log and z-score.
    Stats(RunArgs),
    /// Write a synthetic project history as CSV.
    Synth(SynthArgs),
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// TOML config file; flags below override it.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(short, long)]
    input: Option<PathBuf>,
    /// Output directory (default: $BELLWETHER_OUTPUT_DIR, then `out`).
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long)]
    transform: Option<TransformChoice>,
    /// Comma-separated: mlr, atlm, dnn.
    #[arg(long, value_delimiter = ',')]
    learners: Vec<LearnerKind>,
    /// Comma-separated: rectangular, triangular, epanechnikov, gaussian.
    #[arg(long, value_delimiter = ',')]
    kernels: Vec<Kernel>,
    /// latest, by-id or none.
    #[arg(long)]
    holdout: Option<String>,
    #[arg(long)]
    holdout_id: Option<String>,
    /// mae, mbre or mibre.
    #[arg(long)]
    metric: Option<String>,
    /// Fixed number of strata (skips X-means).
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    kmin: Option<usize>,
    #[arg(long)]
    kmax: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    adjust_step: Option<usize>,
    #[arg(long)]
    max_adjustments: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Any config key, e.g. `--set markov.eps=1e-10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl RunArgs {
    fn overrides(&self) -> Vec<String> {
        let mut o = Vec::new();
        let s = |v: &str| quoted(v);
        let list = |xs: Vec<&str>| format!("[{}]", xs.into_iter().map(quoted).collect::<Vec<_>>().join(", "));
        if let Some(v) = &self.input {
            o.push(format!("input={}", s(&v.to_string_lossy())));
        }
        if let Some(v) = &self.output {
            o.push(format!("output_dir={}", s(&v.to_string_lossy())));
        }
        if let Some(v) = self.transform {
            o.push(format!("transform={}", s(v.as_str())));
        }
        if !self.learners.is_empty() {
            o.push(format!("learners={}", list(self.learners.iter().map(|l| l.as_str()).collect())));
        }
        if !self.kernels.is_empty() {
            o.push(format!("kernels={}", list(self.kernels.iter().map(|k| k.as_str()).collect())));
        }
        if let Some(v) = &self.holdout {
            o.push(format!("holdout={}", s(&v.replace('-', "_"))));
        }
        if let Some(v) = &self.holdout_id {
            o.push(format!("holdout_id={}", s(v)));
        }
        if let Some(v) = &self.metric {
            o.push(format!("search.metric={}", s(v)));
        }
        if let Some(v) = self.q {
            o.push(format!("stratify.q={v}"));
        }
        if let Some(v) = self.kmin {
            o.push(format!("stratify.kmin={v}"));
        }
        if let Some(v) = self.kmax {
            o.push(format!("stratify.kmax={v}"));
        }
        if let Some(v) = self.seed {
            o.push(format!("search.seed={v}"));
            o.push(format!("stratify.seed={v}"));
        }
        if let Some(v) = self.adjust_step {
            o.push(format!("search.adjust_step={v}"));
        }
        if let Some(v) = self.max_adjustments {
            o.push(format!("search.max_adjustments={v}"));
        }
        if let Some(v) = self.alpha {
            o.push(format!("alpha={v:?}"));
        }
        o.extend(self.sets.iter().cloned());
        o
    }

    fn config(&self) -> Result<RunConfig> {
        let env = std::env::var_os(OUTPUT_ENV).map(PathBuf::from);
        let cfg = RunConfig::layered(self.config.as_deref(), &self.overrides(), env)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct PredictArgs {
    /// A model file written by `run` or `search` (models/<learner>_<kernel>.json).
    #[arg(short, long)]
    model: PathBuf,
    #[arg(long)]
    size: f64,
    /// Elapsed time in months; needed when the model uses it.
    #[arg(long)]
    elapsed_time: Option<f64>,
    #[arg(long, default_value = "2000-01-01")]
    completion_date: String,
    /// Categorical value as NAME=LEVEL. Repeatable.
    #[arg(long = "category", value_name = "NAME=LEVEL")]
    categories: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    /// Clean ISBSG-shaped history.
    Isbsg,
    /// 4106 projects of which 1097 pass the quality filters.
    Filter,
    /// Old projects follow an inflated effort relation.
    RegimeShift,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "isbsg")]
    kind: SynthKind,
    #[arg(short, long, default_value_t = 400)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Destination CSV; stdout when absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e.stage() {
        Stage::Config => 2,
        Stage::Data => 3,
        Stage::Search => 4,
        Stage::Model | Stage::Internal => 5,
    }
}

fn stage_name(s: Stage) -> &'static str {
    match s {
        Stage::Config => "config",
        Stage::Data => "data",
        Stage::Model => "model",
        Stage::Search => "search",
        Stage::Internal => "internal",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error [{}]: {e}", stage_name(e.stage()));
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(cmd: Command) -> Result<u8> {
    match cmd {
        Command::Run(args) => run(&args.config()?),
        Command::Preprocess(args) => preprocess(&args.config()?),
        Command::Stratify(args) => stratify(&args.config()?),
        Command::Search { run, learner, kernel } => search(&run.config()?, learner, kernel),
        Command::Predict(args) => predict(&args),
        Command::Stats(args) => stats(&args.config()?),
        Command::Synth(args) => synth(&args),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|source| Error::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn run(cfg: &RunConfig) -> Result<u8> {
    let out = pipeline::run_pipeline(cfg)?;
    out.write_to(&cfg.output_dir)?;
    let r = &out.report;
    println!(
        "{} of {} projects retained; q = {}; holdout {}",
        r.metadata.retained,
        r.metadata.input_rows,
        r.metadata.stratification.q,
        r.metadata.holdout_id.as_deref().unwrap_or("none")
    );
    for c in &r.cells {
        println!(
            "{:<5} {:<13} {:<13} size {:>5}  age {:>7.3}",
            c.learner.as_str(),
            c.kernel.as_str(),
            c.outcome.as_str(),
            c.window_size,
            c.window_age
        );
    }
    println!("report written to {}", cfg.output_dir.join("report.md").display());
    if r.no_bellwether() {
        eprintln!("error [search]: no cell found a Bellwether window");
        return Ok(4);
    }
    Ok(0)
}

fn preprocess(cfg: &RunConfig) -> Result<u8> {
    let pre = pipeline::preprocess(cfg)?;
    let mut clean = Vec::new();
    write_projects(&pre.raw, &cfg.columns, None, &mut clean)?;
    let transforms = pipeline::json_bytes(&pre.data.transforms)?;
    write_file(&cfg.output_dir.join("clean_data.csv"), &clean)?;
    write_file(&cfg.output_dir.join("removals.csv"), pipeline::removals_csv(&pre.data).as_bytes())?;
    write_file(&cfg.output_dir.join("transforms.json"), &transforms)?;
    println!("input rows: {}", pre.input_rows);
    println!("rejected at load: {}", pre.data.rejected.len());
    for (kind, n) in &pre.filter.removed {
        println!("filter {}: {n}", kind.as_str());
    }
    if let Some(c) = &pre.cooks {
        println!("cooks distance > {:.4}: {}", c.threshold, c.removed.len());
    }
    println!("retained: {}", pre.data.len());
    Ok(0)
}

fn stratify(cfg: &RunConfig) -> Result<u8> {
    let prep = prepare(cfg)?;
    let s = &prep.stratification;
    if s.fixed {
        println!("q = {} (fixed)", s.q);
    } else {
        println!("q = {} (X-means over [{}, {}])", s.q, s.kmin, s.kmax);
        for (k, bic) in &s.bic_trace {
            println!("  k = {k:>2}  BIC {bic:.4}");
        }
    }
    for w in &prep.strata {
        let (first, last) = (&w.records[0], &w.records[w.len() - 1]);
        println!(
            "window {}: {} projects, {} .. {}",
            w.index,
            w.len(),
            first.completion_date,
            last.completion_date
        );
    }
    Ok(0)
}

fn search(cfg: &RunConfig, learner: LearnerKind, kernel: Kernel) -> Result<u8> {
    let prep = prepare(cfg)?;
    let scfg = cfg.search_config(learner, kernel);
    let result = search_bellwether(&prep.strata, &prep.split.portfolio.transforms, &scfg)?;
    let trace = trace_csv(&[(learner, kernel, result.trace.as_slice())]);
    write_file(&cfg.output_dir.join("trace.csv"), trace.as_bytes())?;
    println!("{} after {} ({} trace rows)", result.outcome.as_str(), result.stop_reason, result.trace.len());
    if let Some(w) = &result.window {
            let model = scfg.fit(&w.window.records, &w.weights, &prep.split.portfolio.transforms)?;
            let path = cfg
                .output_dir
                .join(format!("models/{}_{}.json", learner.as_str(), kernel.as_str()));
            write_file(&path, model.to_json()?.as_bytes())?;
            println!("window: {} projects over {:.3} years", result.size, result.age);
            println!("model written to {}", path.display());
    }
    Ok(if result.outcome == SearchOutcome::NoBellwether { 4 } else { 0 })
}

fn predict(args: &PredictArgs) -> Result<u8> {
    let text = std::fs::read_to_string(&args.model).map_err(|source| Error::Io {
        path: args.model.clone(),
        source,
    })?;
    let model = FittedModel::from_json(&text)?;
    let date = parse_date(&args.completion_date, None)
        .ok_or_else(|| Error::Config(format!("unparseable date `{}`", args.completion_date)))?;
    let mut rec = ProjectRecord::new("query", date, args.size, f64::NAN, args.elapsed_time.unwrap_or(f64::NAN));
    for c in &args.categories {
        let (k, v) = c
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("category `{c}` is not NAME=LEVEL")))?;
        rec.categoricals.insert(k.to_string(), v.to_string());
    }
    if !(rec.get(Feature::Size) > 0.0) {
        return Err(Error::Config("size must be positive".into()));
    }
    let hours = model.predict(&rec)?;
    println!("{hours}");
    Ok(0)
}

fn stats(cfg: &RunConfig) -> Result<u8> {
    let prep = prepare(cfg)?;
    let mut raw = prep.pre.raw.clone();
    if let Some(h) = &prep.split.holdout {
        raw.records.retain(|r| r.id != h.id);
    }
    let t = normality_table(&raw, prep.stratification.q, &cfg.transform_features, cfg)?;
    println!("transform,feature,stratum,n,mean,sd,skewness,kurtosis,normal");
    for r in &t.rows {
        println!(
            "{},{},{},{},{:.4},{:.4},{:.4},{:.4},{}",
            r.transform.as_str(),
            r.feature.as_str(),
            r.window,
            r.n,
            r.mean,
            r.sd,
            r.skewness,
            r.kurtosis,
            r.pass
        );
    }
    println!(
        "pass rate: log {:.4}, zscore {:.4}",
        t.pass_rate(TransformChoice::Log),
        t.pass_rate(TransformChoice::Zscore)
    );
    Ok(0)
}

fn synth(args: &SynthArgs) -> Result<u8> {
    let ps = match args.kind {
        SynthKind::Isbsg => synthetic::isbsg_like(args.n, args.seed),
        SynthKind::Filter => synthetic::filter_fixture(args.seed),
        SynthKind::RegimeShift => {
            synthetic::regime_shift(&synthetic::RegimeShiftSpec {
                n: args.n,
                seed: args.seed,
                ..Default::default()
            })
            .set
        }
    };
    let mut buf = Vec::new();
    write_projects(&ps, &synthetic::column_mapping(), None, &mut buf)?;
    match &args.out {
        Some(p) => write_file(p, &buf)?,
        None => print!("{}", String::from_utf8_lossy(&buf)),
    }
    Ok(0)
}
