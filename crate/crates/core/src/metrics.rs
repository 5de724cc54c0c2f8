//! Error measures (MAE, MBRE, MIBRE) and the comparison tests: Welch's t,
//! Kruskal-Wallis H and Glass' delta.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::stats::{mean, sample_sd};

/// Glass' delta strictly above this marks a practically significant effect.
pub const GLASS_DELTA_THRESHOLD: f64 = 0.5;

/// Group assignments at or below this count get an exact permutation
/// p-value in [`kruskal_wallis`]; larger designs use the chi-square
/// approximation.
pub const KW_EXACT_LIMIT: u64 = 400_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Mae,
    Mbre,
    Mibre,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Mae, Metric::Mbre, Metric::Mibre];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Mae => "mae",
            Metric::Mbre => "mbre",
            Metric::Mibre => "mibre",
        }
    }

    pub fn of(self, s: &ErrorSummary) -> f64 {
        match self {
            Metric::Mae => s.mae,
            Metric::Mbre => s.mbre,
            Metric::Mibre => s.mibre,
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mae" => Ok(Metric::Mae),
            "mbre" => Ok(Metric::Mbre),
            "mibre" => Ok(Metric::Mibre),
            other => Err(Error::Config(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseError {
    pub absolute: f64,
    pub bre: f64,
    pub ibre: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub mae: f64,
    pub mbre: f64,
    pub mibre: f64,
    pub n: usize,
    pub per_case: Vec<CaseError>,
}

pub fn error_summary(actual: &[f64], estimated: &[f64]) -> Result<ErrorSummary> {
    if actual.len() != estimated.len() {
        return Err(Error::LengthMismatch {
            left: actual.len(),
            right: estimated.len(),
        });
    }
    if actual.is_empty() {
        return Err(Error::InsufficientData("error summary of zero cases".into()));
    }
    let mut per_case = Vec::with_capacity(actual.len());
    for (&a, &e) in actual.iter().zip(estimated) {
        if !(a > 0.0 && e > 0.0) || !a.is_finite() || !e.is_finite() {
            return Err(Error::Undefined(format!(
                "balanced relative error needs positive values, got actual {a}, estimate {e}"
            )));
        }
        let absolute = (a - e).abs();
        per_case.push(CaseError {
            absolute,
            bre: absolute / a.min(e),
            ibre: absolute / a.max(e),
        });
    }
    let n = per_case.len() as f64;
    Ok(ErrorSummary {
        mae: per_case.iter().map(|c| c.absolute).sum::<f64>() / n,
        mbre: per_case.iter().map(|c| c.bre).sum::<f64>() / n,
        mibre: per_case.iter().map(|c| c.ibre).sum::<f64>() / n,
        n: per_case.len(),
        per_case,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Welch-Satterthwaite df, or groups - 1 for Kruskal-Wallis.
    pub df: f64,
    pub effect_size: Option<f64>,
    /// Chi-square p-value; equals `p_value` unless the exact distribution
    /// was enumerated.
    pub p_asymptotic: f64,
    pub exact: bool,
    pub degenerate: bool,
}

/// Two-sided Welch t-test.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "Welch t needs two samples of at least 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sample_sd(a).powi(2) / na, sample_sd(b).powi(2) / nb);
    if va == 0.0 && vb == 0.0 {
        return Err(Error::Undefined("Welch t with zero variance in both samples".into()));
    }
    let diff = mean(a) - mean(b);
    let se2 = va + vb;
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Undefined(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0);
    Ok(TestResult {
        statistic: t,
        p_value: p,
        df,
        effect_size: None,
        p_asymptotic: p,
        exact: false,
        degenerate: false,
    })
}

/// Midranks (1-based) of the pooled observations plus the tie-group sizes.
fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &k in &idx[start..end] {
            ranks[k] = r;
        }
        ties.push(end - start);
        start = end;
    }
    (ranks, ties)
}

fn assignment_count(sizes: &[usize]) -> u64 {
    // multinomial N! / prod(n_g!), saturating
    let mut total = 0u64;
    let mut count = 1u128;
    for &s in sizes {
        for k in 1..=s as u64 {
            total += 1;
            count = count * u128::from(total) / u128::from(k);
            if count > u128::from(u64::MAX) {
                return u64::MAX;
            }
        }
    }
    count as u64
}

/// Counts group assignments whose sum of `R_g^2 / n_g` reaches `observed`.
fn exact_tail(ranks: &[f64], sizes: &[usize], observed: f64) -> f64 {
    struct Walk<'a> {
        ranks: &'a [f64],
        sizes: &'a [usize],
        fill: Vec<usize>,
        sums: Vec<f64>,
        observed: f64,
        hits: u64,
        total: u64,
    }
    impl Walk<'_> {
        fn go(&mut self, i: usize) {
            if i == self.ranks.len() {
                let stat: f64 = self
                    .sums
                    .iter()
                    .zip(self.sizes)
                    .map(|(s, &n)| s * s / n as f64)
                    .sum();
                self.total += 1;
                if stat >= self.observed - 1e-9 * self.observed.abs().max(1.0) {
                    self.hits += 1;
                }
                return;
            }
            for g in 0..self.sizes.len() {
                if self.fill[g] < self.sizes[g] {
                    self.fill[g] += 1;
                    self.sums[g] += self.ranks[i];
                    self.go(i + 1);
                    self.sums[g] -= self.ranks[i];
                    self.fill[g] -= 1;
                }
            }
        }
    }
    let mut w = Walk {
        ranks,
        sizes,
        fill: vec![0; sizes.len()],
        sums: vec![0.0; sizes.len()],
        observed,
        hits: 0,
        total: 0,
    };
    w.go(0);
    w.hits as f64 / w.total as f64
}

/// Kruskal-Wallis H with midranks and the tie correction. Small designs
/// (at most [`KW_EXACT_LIMIT`] assignments) report the exact permutation
/// p-value; `p_asymptotic` always carries the chi-square value.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<TestResult> {
    if groups.len() < 2 {
        return Err(Error::InsufficientData("Kruskal-Wallis needs at least 2 groups".into()));
    }
    if groups.iter().any(|g| g.is_empty()) {
        return Err(Error::InsufficientData("Kruskal-Wallis group is empty".into()));
    }
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    let n = pooled.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!("Kruskal-Wallis needs N >= 3, got {n}")));
    }
    let df = (groups.len() - 1) as f64;
    let (ranks, ties) = midranks(&pooled);
    let nf = n as f64;
    let correction = 1.0 - ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (nf * nf * nf - nf);
    if correction <= 0.0 {
        return Ok(TestResult {
            statistic: 0.0,
            p_value: 1.0,
            df,
            effect_size: None,
            p_asymptotic: 1.0,
            exact: false,
            degenerate: true,
        });
    }
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let mut offset = 0;
    let mut stat_sum = 0.0;
    for &s in &sizes {
        let r: f64 = ranks[offset..offset + s].iter().sum();
        stat_sum += r * r / s as f64;
        offset += s;
    }
    let h = (12.0 / (nf * (nf + 1.0)) * stat_sum - 3.0 * (nf + 1.0)) / correction;
    let h = h.max(0.0);
    let chi = ChiSquared::new(df).map_err(|e| Error::Undefined(e.to_string()))?;
    let p_asymptotic = chi.sf(h).clamp(0.0, 1.0);
    let exact = assignment_count(&sizes) <= KW_EXACT_LIMIT;
    let p_value = if exact {
        exact_tail(&ranks, &sizes, stat_sum)
    } else {
        p_asymptotic
    };
    Ok(TestResult {
        statistic: h,
        p_value,
        df,
        effect_size: None,
        p_asymptotic,
        exact,
        degenerate: false,
    })
}

/// `|mean(treatment) - mean(control)| / sd(control)`, sample sd.
pub fn glass_delta(treatment: &[f64], control: &[f64]) -> Result<f64> {
    if treatment.is_empty() {
        return Err(Error::InsufficientData("Glass' delta with empty treatment group".into()));
    }
    let sd = sample_sd(control);
    if !(sd > 0.0) {
        return Err(Error::Undefined("Glass' delta with zero control standard deviation".into()));
    }
    Ok((mean(treatment) - mean(control)).abs() / sd)
}

pub fn practically_significant(delta: f64) -> bool {
    delta > GLASS_DELTA_THRESHOLD
}

/// Welch t on two samples with Glass' delta attached (second sample is the
/// control group).
pub fn pairwise_comparison(treatment: &[f64], control: &[f64]) -> Result<TestResult> {
    let mut r = welch_t(treatment, control)?;
    r.effect_size = Some(glass_delta(treatment, control)?);
    Ok(r)
}
