use std::fmt::Write as _;

use super::{compare_report, EvaluationReport, TransformChoice};
use crate::bellwether::TraceRow;
use crate::dataset::ProjectSet;
use crate::learners::LearnerKind;
use crate::metrics::Metric;
use crate::weighting::Kernel;

/// Four decimals, the precision of every table cell; `n/a` for non-finite.
pub fn fmt4(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.4}")
    } else {
        "n/a".into()
    }
}

fn opt4(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), fmt4)
}

fn full(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

fn opt_full(v: Option<f64>) -> String {
    v.map(full).unwrap_or_default()
}

/// One accuracy table cell: (formatted value, is row minimum).
fn metric_row(report: &EvaluationReport, learner: LearnerKind, metric: Metric) -> Vec<(Kernel, String, bool)> {
    let kernels = &report.metadata.config.kernels;
    let values: Vec<Option<f64>> = kernels
        .iter()
        .map(|&k| {
            report
                .cell(learner, k)
                .and_then(|c| c.validation.as_ref())
                .map(|v| v.metric(metric))
                .filter(|v| v.is_finite())
        })
        .collect();
    let min = values.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    kernels
        .iter()
        .zip(values)
        .map(|(&k, v)| (k, opt4(v), v.is_some_and(|v| v == min)))
        .collect()
}

/// One line per learner x kernel x metric with the same strings as the
/// markdown tables.
pub fn cells_csv(report: &EvaluationReport) -> String {
    let mut out = String::from("learner,kernel,metric,value,row_min,outcome,window_size,window_age,trace_iteration\n");
    for &learner in &report.metadata.config.learners {
        for metric in Metric::ALL {
            for (k, value, is_min) in metric_row(report, learner, metric) {
                let c = report.cell(learner, k).expect("cell for every configured pair");
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{}",
                    learner.as_str(),
                    k.as_str(),
                    metric.as_str(),
                    value,
                    is_min,
                    c.outcome.as_str(),
                    c.window_size,
                    fmt4(c.window_age),
                    c.trace_iteration.map(|i| i.to_string()).unwrap_or_default()
                );
            }
        }
    }
    out
}

/// Holdout comparison, one row per cell, for bar plots.
pub fn figures_csv(report: &EvaluationReport) -> String {
    let mut out = String::from(
        "learner,kernel,holdout_id,actual,bellwether_estimate,bellwether_abs_error,portfolio_estimate,portfolio_abs_error,window_size,window_age\n",
    );
    for c in &report.cells {
        let Some(h) = &c.holdout else { continue };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            c.learner.as_str(),
            c.kernel.as_str(),
            h.id,
            full(h.actual),
            opt_full(h.bellwether_estimate),
            opt_full(h.bellwether_abs_error),
            full(h.portfolio_estimate),
            full(h.portfolio_abs_error),
            h.window_size,
            full(h.window_age)
        );
    }
    out
}

pub fn trace_csv(traces: &[(LearnerKind, Kernel, &[TraceRow])]) -> String {
    let mut out = String::from(
        "learner,kernel,iteration,action,start,size,age,status,ergodic,wins,validation_windows,mean_metric,per_window_metric,accepted\n",
    );
    for (learner, kernel, rows) in traces {
        for t in rows.iter() {
            let per: Vec<String> = t.per_window_metric.iter().map(|v| full(*v)).collect();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                learner.as_str(),
                kernel.as_str(),
                t.iteration,
                t.action,
                t.start,
                t.size,
                full(t.age),
                t.status.as_str(),
                t.status == crate::markov::ChainStatus::Ergodic,
                t.wins,
                t.validation_windows,
                full(t.mean_metric),
                per.join(";"),
                t.accepted
            );
        }
    }
    out
}

/// Rejected input rows and every removed project with its reason.
pub fn removals_csv(ps: &ProjectSet) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let _ = w.write_record(["id", "stage", "reason"]);
    for r in &ps.rejected {
        let _ = w.write_record([format!("line {}", r.line), "load".into(), r.reason.clone()]);
    }
    for r in &ps.removals {
        let _ = w.write_record([r.id.as_str(), r.stage.as_str(), r.reason.as_str()]);
    }
    String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default()
}

fn table(out: &mut String, header: &[String], rows: &[Vec<String>]) {
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}", header.iter().map(|_| "---|").collect::<String>());
    for r in rows {
        let _ = writeln!(out, "| {} |", r.join(" | "));
    }
    out.push('\n');
}

fn strs(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

pub fn markdown(report: &EvaluationReport) -> String {
    let m = &report.metadata;
    let cfg = &m.config;
    let mut out = String::new();
    let _ = writeln!(out, "# Bellwether moving window report\n");
    let _ = writeln!(out, "- version: {}", m.version);
    let _ = writeln!(out, "- input: `{}`", cfg.input.display());
    let _ = writeln!(out, "- input rows: {} ({} rejected at load)", m.input_rows, m.rejected_rows);
    for (kind, n) in &m.filter.removed {
        let _ = writeln!(out, "- filter `{}`: {} removed", kind.as_str(), n);
    }
    if let Some(t) = m.cooks_threshold {
        let _ = writeln!(out, "- Cook's distance > {}: {} removed", fmt4(t), m.cooks_removed);
    }
    let _ = writeln!(
        out,
        "- retained: {} of {} ({}%)",
        m.retained,
        m.input_rows,
        fmt4(100.0 * m.retained as f64 / m.input_rows.max(1) as f64)
    );
    let _ = writeln!(out, "- holdout: {}", m.holdout_id.as_deref().unwrap_or("none"));
    let s = &m.stratification;
    let how = if s.fixed {
        "fixed by config".to_string()
    } else {
        format!("X-means over k in [{}, {}]", s.kmin, s.kmax)
    };
    let sizes: Vec<String> = s.sizes.iter().map(|n| n.to_string()).collect();
    let _ = writeln!(out, "- strata: q = {} ({how}); sizes {}", s.q, sizes.join(", "));
    let _ = writeln!(
        out,
        "- search: metric {}, majority > {}, step {}, budget {}, seed {}\n",
        cfg.search.metric.as_str(),
        cfg.search.majority_rule,
        cfg.search.adjust_step,
        cfg.search.max_adjustments,
        cfg.search.seed
    );

    let _ = writeln!(out, "## Stratum normality\n");
    let rows: Vec<Vec<String>> = report
        .normality
        .rows
        .iter()
        .map(|r| {
            vec![
                match r.transform {
                    TransformChoice::Log => "log".into(),
                    TransformChoice::Zscore => "z-score".into(),
                },
                r.feature.as_str().into(),
                r.window.to_string(),
                r.n.to_string(),
                fmt4(r.mean),
                fmt4(r.sd),
                fmt4(r.skewness),
                fmt4(r.kurtosis),
                if r.pass { "yes" } else { "no" }.into(),
            ]
        })
        .collect();
    table(
        &mut out,
        &strs(&["transform", "feature", "stratum", "n", "mean", "sd", "skewness", "kurtosis", "normal"]),
        &rows,
    );
    let rows: Vec<Vec<String>> = report
        .normality
        .intervals
        .iter()
        .map(|r| {
            let t = match r.transform {
                TransformChoice::Log => "log",
                TransformChoice::Zscore => "z-score",
            };
            match &r.interval {
                Some(ci) => vec![t.into(), r.feature.as_str().into(), fmt4(ci.lower), fmt4(ci.upper)],
                None => vec![t.into(), r.feature.as_str().into(), "n/a".into(), "n/a".into()],
            }
        })
        .collect();
    let _ = writeln!(out, "Interval over stratum means at alpha = {}:\n", cfg.alpha);
    table(&mut out, &strs(&["transform", "feature", "lower", "upper"]), &rows);

    let _ = writeln!(out, "## Bellwether windows\n");
    let rows: Vec<Vec<String>> = report
        .cells
        .iter()
        .map(|c| {
            vec![
                c.learner.label().into(),
                c.kernel.as_str().into(),
                c.outcome.as_str().into(),
                c.window_size.to_string(),
                fmt4(c.window_age),
                c.wins.map_or_else(|| "n/a".into(), |w| format!("{w}/{}", c.validation_windows)),
                c.status.map_or("n/a", |s| s.as_str()).into(),
                c.uniform_rows.to_string(),
                c.stop_reason.clone(),
            ]
        })
        .collect();
    table(
        &mut out,
        &strs(&["learner", "kernel", "outcome", "size", "age (years)", "wins", "chain", "uniform rows", "stop"]),
        &rows,
    );

    for metric in Metric::ALL {
        let _ = writeln!(
            out,
            "## {} of the Bellwether model on the remaining projects\n",
            metric.as_str().to_uppercase()
        );
        let mut header = vec!["learner".to_string()];
        header.extend(cfg.kernels.iter().map(|k| k.as_str().to_string()));
        header.push("portfolio (LOOCV)".into());
        let rows: Vec<Vec<String>> = cfg
            .learners
            .iter()
            .map(|&l| {
                let mut row = vec![l.label().to_string()];
                row.extend(
                    metric_row(report, l, metric)
                        .into_iter()
                        .map(|(_, v, is_min)| if is_min { format!("{v} (min)") } else { v }),
                );
                row.push(opt4(report.portfolio_for(l).and_then(|p| p.summary.as_ref()).map(|s| metric.of(s))));
                row
            })
            .collect();
        table(&mut out, &header, &rows);
    }

    let cmp = compare_report(report, cfg.alpha);
    let _ = writeln!(
        out,
        "## Kruskal-Wallis across kernels ({})\n\n* p < {}\n",
        cfg.search.metric.as_str(),
        cfg.alpha
    );
    let rows: Vec<Vec<String>> = cmp
        .kruskal_wallis
        .iter()
        .map(|r| vec![r.learner.label().into(), r.h.clone(), r.p.clone()])
        .collect();
    table(&mut out, &strs(&["learner", "H", "p"]), &rows);

    let _ = writeln!(
        out,
        "## Pairwise kernel comparison (Welch t, Glass' delta)\n\n* p < {}, ** delta > 0.5\n",
        cfg.alpha
    );
    let rows: Vec<Vec<String>> = cmp
        .pairwise
        .iter()
        .map(|r| {
            vec![
                r.learner.label().into(),
                format!("{} vs. {}", r.treatment.as_str(), r.control.as_str()),
                r.t.clone(),
                r.df.clone(),
                r.p.clone(),
                r.delta.clone(),
            ]
        })
        .collect();
    table(&mut out, &strs(&["learner", "treatment vs. control", "t", "df", "p", "delta"]), &rows);

    if report.cells.iter().any(|c| c.holdout.is_some()) {
        let _ = writeln!(out, "## Holdout project\n");
        let rows: Vec<Vec<String>> = report
            .cells
            .iter()
            .filter_map(|c| {
                let h = c.holdout.as_ref()?;
                Some(vec![
                    c.learner.label().into(),
                    c.kernel.as_str().into(),
                    h.id.clone(),
                    fmt4(h.actual),
                    opt4(h.bellwether_estimate),
                    opt4(h.bellwether_abs_error),
                    fmt4(h.portfolio_estimate),
                    fmt4(h.portfolio_abs_error),
                ])
            })
            .collect();
        table(
            &mut out,
            &strs(&[
                "learner",
                "kernel",
                "project",
                "actual",
                "bellwether",
                "|error|",
                "portfolio",
                "|error|",
            ]),
            &rows,
        );
    }

    let _ = writeln!(
        out,
        "## Prediction probability (postulation check, not an accuracy measure)\n\nShare of remaining projects estimated within {}% of actual effort.\n",
        fmt4(cfg.stats.tau * 100.0)
    );
    let mut header = vec!["learner".to_string()];
    header.extend(cfg.kernels.iter().map(|k| k.as_str().to_string()));
    let rows: Vec<Vec<String>> = cfg
        .learners
        .iter()
        .map(|&l| {
            let mut row = vec![l.label().to_string()];
            row.extend(cfg.kernels.iter().map(|&k| {
                opt4(
                    report
                        .cell(l, k)
                        .and_then(|c| c.validation.as_ref())
                        .map(|v| v.prediction_probability),
                )
            }));
            row
        })
        .collect();
    table(&mut out, &header, &rows);

    let portfolio_rows: Vec<Vec<String>> = report
        .portfolio
        .iter()
        .map(|p| vec![p.learner.label().into(), p.folds.to_string(), p.skipped.to_string()])
        .collect();
    let _ = writeln!(out, "## Growing portfolio folds\n");
    table(&mut out, &strs(&["learner", "folds", "skipped"]), &portfolio_rows);
    out
}
