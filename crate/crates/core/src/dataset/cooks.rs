use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Feature, ProjectSet, Removal};
use crate::error::{Error, Result};
use crate::linalg::weighted_lstsq;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooksReport {
    pub threshold: f64,
    /// (record id, Cook's distance) in input order.
    pub distances: Vec<(String, f64)>,
    pub removed: Vec<String>,
}

/// Cook's distance of every record for the OLS fit of `target` on
/// `predictors` (intercept included).
pub fn cooks_distances(ps: &ProjectSet, target: Feature, predictors: &[Feature]) -> Result<Vec<f64>> {
    let n = ps.len();
    let k = predictors.len() + 1;
    if n < predictors.len() + 2 || n <= k {
        return Err(Error::InsufficientData(format!(
            "Cook's distance with {} predictors needs more than {k} records, got {n}",
            predictors.len()
        )));
    }
    let x = DMatrix::from_fn(n, k, |i, j| if j == 0 { 1.0 } else { ps.records[i].get(predictors[j - 1]) });
    let y = DVector::from_iterator(n, ps.records.iter().map(|r| r.get(target)));
    let mut names = vec!["intercept".to_string()];
    names.extend(predictors.iter().map(|p| p.to_string()));
    let fit = weighted_lstsq(&x, &y, None, &names).map_err(|e| match e {
        Error::RankDeficient { columns } => Error::RankDeficient {
            columns: columns
                .into_iter()
                .map(|c| format!("{c} (remove this predictor)"))
                .collect(),
        },
        other => other,
    })?;

    let resid = &y - &x * &fit.coefficients;
    let sse = resid.norm_squared();
    let s2 = sse / (n - k) as f64;
    let dist = (0..n)
        .map(|i| {
            let h = fit.q.row(i).norm_squared();
            if s2 == 0.0 {
                return 0.0;
            }
            let e = resid[i];
            e * e / (k as f64 * s2) * h / (1.0 - h).powi(2)
        })
        .collect();
    Ok(dist)
}

/// Removes records whose Cook's distance exceeds `threshold` (default `4/n`).
pub fn cooks_filter(
    mut ps: ProjectSet,
    target: Feature,
    predictors: &[Feature],
    threshold: Option<f64>,
) -> Result<(ProjectSet, CooksReport)> {
    let dist = cooks_distances(&ps, target, predictors)?;
    let threshold = threshold.unwrap_or(4.0 / ps.len() as f64);
    let mut removed = Vec::new();
    let distances: Vec<(String, f64)> = ps.records.iter().map(|r| r.id.clone()).zip(dist.iter().copied()).collect();
    let mut keep = dist.iter().map(|d| !(*d > threshold));
    ps.records.retain(|_| keep.next().unwrap_or(true));
    for (id, d) in &distances {
        if *d > threshold {
            removed.push(id.clone());
            ps.removals.push(Removal {
                id: id.clone(),
                stage: "cooks".into(),
                reason: format!("cooks_distance={d:.6} > {threshold:.6}"),
            });
        }
    }
    Ok((
        ps,
        CooksReport {
            threshold,
            distances,
            removed,
        },
    ))
}

#[cfg(test)]
mod tests {
    use chrono::NaiveDate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::dataset::ProjectRecord;

    fn set(points: &[(f64, f64)]) -> ProjectSet {
        let d = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
        ProjectSet::from_records(
            points
                .iter()
                .enumerate()
                .map(|(i, &(x, y))| ProjectRecord::new(format!("p{i:02}"), d, x, y, 1.0))
                .collect(),
        )
    }

    /// Normal-equations OLS, independent of the QR path.
    fn ols(xs: &[f64], ys: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let b = sxy / sxx;
        (my - b * mx, b)
    }

    /// Leave-one-out refit definition of Cook's distance.
    fn cooks_oracle(points: &[(f64, f64)]) -> Vec<f64> {
        let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
        let (a, b) = ols(&xs, &ys);
        let n = xs.len();
        let s2 = xs.iter().zip(&ys).map(|(x, y)| (y - a - b * x).powi(2)).sum::<f64>() / (n - 2) as f64;
        (0..n)
            .map(|i| {
                let xo: Vec<f64> = xs.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v).collect();
                let yo: Vec<f64> = ys.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v).collect();
                let (ai, bi) = ols(&xo, &yo);
                xs.iter().map(|x| (a + b * x - ai - bi * x).powi(2)).sum::<f64>() / (2.0 * s2)
            })
            .collect()
    }

    #[test]
    fn collinear_predictor_is_singular() {
        let ps = set(&[(1.0, 2.0), (2.0, 3.0), (3.0, 5.0), (4.0, 4.0)]);
        let err = cooks_distances(&ps, Feature::Effort, &[Feature::Size, Feature::Size]).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { .. }));
        assert!(err.to_string().contains("remove"));
    }

    #[test]
    fn gross_outlier_is_removed() {
        let mut pts: Vec<(f64, f64)> = (0..20).map(|i| (i as f64, 2.0 * i as f64 + 1.0)).collect();
        pts.push((60.0, -50.0));
        let oracle = cooks_oracle(&pts);
        let got = cooks_distances(&set(&pts), Feature::Effort, &[Feature::Size]).unwrap();
        for (g, o) in got.iter().zip(&oracle) {
            assert!((g - o).abs() < 1e-9 * o.max(1.0), "{g} vs {o}");
        }
        let (ps, report) = cooks_filter(set(&pts), Feature::Effort, &[Feature::Size], None).unwrap();
        assert!(report.removed.contains(&"p20".to_string()));
        assert!(!ps.records.iter().any(|r| r.id == "p20"));
        assert!((report.threshold - 4.0 / 21.0).abs() < 1e-15);
    }

    #[test]
    fn iid_points_keep_everything_at_threshold_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<(f64, f64)> = (0..30)
            .map(|_| {
                let x: f64 = rng.random_range(0.0..1.0);
                (x, 0.5 * x + rng.random_range(-0.1..0.1))
            })
            .collect();
        let oracle = cooks_oracle(&pts);
        assert!(oracle.iter().cloned().fold(0.0, f64::max) < 1.0);
        let (ps, report) = cooks_filter(set(&pts), Feature::Effort, &[Feature::Size], Some(1.0)).unwrap();
        assert!(report.removed.is_empty());
        assert_eq!(ps.len(), 30);
    }

    #[test]
    fn never_removes_below_threshold() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(5..=30);
            let pts: Vec<(f64, f64)> = (0..n)
                .map(|_| {
                    let x: f64 = rng.random_range(0.0..10.0);
                    let y = x + rng.random_range(-3.0..3.0) + if rng.random_bool(0.1) { 20.0 } else { 0.0 };
                    (x, y)
                })
                .collect();
            let oracle = cooks_oracle(&pts);
            let threshold = 4.0 / n as f64;
            let (_, report) = cooks_filter(set(&pts), Feature::Effort, &[Feature::Size], None).unwrap();
            for (i, d) in oracle.iter().enumerate() {
                let id = format!("p{i:02}");
                assert_eq!(report.removed.contains(&id), *d > threshold, "seed {seed} record {i} D={d}");
            }
        }
    }
}
