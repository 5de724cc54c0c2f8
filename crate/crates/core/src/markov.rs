//! Project-age Markov chains over a window.
//!
//! Ages are binned into states, consecutive projects in chronological order
//! define transitions, and the resulting transition matrix is squared until
//! it stops changing. A window is stationary when that limit exists, has
//! identical all-positive rows, and is a fixed point of the original chain.

use serde::{Deserialize, Serialize};

use crate::dataset::DAYS_PER_YEAR;
use crate::error::{Error, Result};
use crate::stratify::Window;

pub const DEFAULT_EPS: f64 = 1e-8;
pub const DEFAULT_MAX_SQUARINGS: u32 = 64;
/// Tolerance for "rows equal" and "limit is a fixed point" at convergence.
const LIMIT_TOL: f64 = 1e-6;

/// Where a project's age comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgeSource {
    /// The record's elapsed (development) time, as stored.
    #[default]
    ElapsedTime,
    /// Years between the record's completion and the newest completion in
    /// the window.
    CompletionOffset,
}

impl std::str::FromStr for AgeSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "elapsed_time" => Ok(AgeSource::ElapsedTime),
            "completion_offset" => Ok(AgeSource::CompletionOffset),
            other => Err(Error::Config(format!("unknown age_source `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    pub width: f64,
    pub origin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSequence {
    /// 0-based state ids in the window's record order.
    pub states: Vec<usize>,
    /// Bin-centre age of each state, ascending.
    pub state_values: Vec<f64>,
    pub binning: Binning,
    /// One record or one state only.
    pub degenerate: bool,
}

impl StateSequence {
    pub fn n_states(&self) -> usize {
        self.state_values.len()
    }
}

pub fn window_ages(w: &Window, source: AgeSource) -> Vec<f64> {
    match source {
        AgeSource::ElapsedTime => w.records.iter().map(|r| r.elapsed_time).collect(),
        AgeSource::CompletionOffset => {
            let latest = w
                .records
                .iter()
                .map(|r| r.completion_years())
                .fold(f64::NEG_INFINITY, f64::max);
            w.records.iter().map(|r| latest - r.completion_years()).collect()
        }
    }
}

/// `(max - min) / ceil(sqrt(n))`, or 1 when every age is equal.
pub fn default_bin_width(ages: &[f64]) -> f64 {
    let (lo, hi) = min_max(ages);
    let span = hi - lo;
    if !(span > 0.0) {
        return 1.0;
    }
    span / (ages.len() as f64).sqrt().ceil()
}

fn min_max(xs: &[f64]) -> (f64, f64) {
    xs.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Quantizes ages into bins anchored at the minimum age. Only occupied bins
/// become states, numbered in ascending age.
pub fn states_from_ages(ages: &[f64], bin_width: f64) -> Result<StateSequence> {
    if ages.is_empty() {
        return Err(Error::InsufficientData("no ages to bin".into()));
    }
    if !(bin_width > 0.0) || !bin_width.is_finite() {
        return Err(Error::Parameter(format!("bin width must be positive, got {bin_width}")));
    }
    if let Some(a) = ages.iter().find(|a| !a.is_finite()) {
        return Err(Error::Parameter(format!("non-finite age {a}")));
    }
    let (origin, hi) = min_max(ages);
    let last_bin = ((hi - origin) / bin_width + 1e-9).floor() as usize;
    let bins: Vec<usize> = ages
        .iter()
        .map(|a| (((a - origin) / bin_width + 1e-9).floor() as usize).min(last_bin))
        .collect();
    let mut occupied: Vec<usize> = bins.clone();
    occupied.sort_unstable();
    occupied.dedup();
    let states = bins
        .iter()
        .map(|b| occupied.binary_search(b).expect("bin is occupied"))
        .collect();
    let state_values: Vec<f64> = occupied
        .iter()
        .map(|&b| origin + (b as f64 + 0.5) * bin_width)
        .collect();
    Ok(StateSequence {
        states,
        degenerate: ages.len() < 2 || state_values.len() < 2,
        state_values,
        binning: Binning {
            width: bin_width,
            origin,
        },
    })
}

/// Bins the window's ages; `bin_width = None` uses [`default_bin_width`].
pub fn ages_to_states(w: &Window, bin_width: Option<f64>, source: AgeSource) -> Result<StateSequence> {
    let ages = window_ages(w, source);
    let width = bin_width.unwrap_or_else(|| default_bin_width(&ages));
    states_from_ages(&ages, width)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub dim: usize,
    pub p: Vec<Vec<f64>>,
    /// Power-of-two exponent applied so far (0 for the empirical matrix).
    pub step: u32,
    /// States that had no observed departures and received the uniform row.
    pub uniform_rows: Vec<usize>,
}

impl TransitionMatrix {
    /// Wraps a matrix after checking it is square and row-stochastic.
    pub fn new(p: Vec<Vec<f64>>) -> Result<Self> {
        let dim = p.len();
        if dim == 0 {
            return Err(Error::Parameter("empty transition matrix".into()));
        }
        for (i, row) in p.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::Parameter(format!("row {i} has {} entries, expected {dim}", row.len())));
            }
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Parameter(format!("row {i} has an entry outside [0,1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Parameter(format!("row {i} sums to {s}")));
            }
        }
        Ok(TransitionMatrix {
            dim,
            p,
            step: 0,
            uniform_rows: Vec::new(),
        })
    }

    pub fn to_csv(&self) -> String {
        matrix_csv(&self.p)
    }
}

/// Rows of comma-separated values, full precision.
pub fn matrix_csv(m: &[Vec<f64>]) -> String {
    let mut out = String::new();
    for row in m {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Transition counts over consecutive states, normalized per row.
pub fn build_tpm(seq: &StateSequence) -> Result<TransitionMatrix> {
    if seq.states.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "a transition matrix needs at least 2 states in sequence, got {}",
            seq.states.len()
        )));
    }
    let s = seq.n_states();
    let mut counts = vec![vec![0.0f64; s]; s];
    for pair in seq.states.windows(2) {
        counts[pair[0]][pair[1]] += 1.0;
    }
    let mut uniform_rows = Vec::new();
    for (i, row) in counts.iter_mut().enumerate() {
        let total: f64 = row.iter().sum();
        if total == 0.0 {
            row.iter_mut().for_each(|v| *v = 1.0 / s as f64);
            uniform_rows.push(i);
        } else {
            row.iter_mut().for_each(|v| *v /= total);
        }
    }
    Ok(TransitionMatrix {
        dim: s,
        p: counts,
        step: 0,
        uniform_rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainStatus {
    Ergodic,
    Periodic,
    Reducible,
    NotConverged,
}

impl ChainStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ChainStatus::Ergodic => "ergodic",
            ChainStatus::Periodic => "periodic",
            ChainStatus::Reducible => "reducible",
            ChainStatus::NotConverged => "not_converged",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryResult {
    pub status: ChainStatus,
    /// The last power computed (the limit when converged).
    pub limit: Vec<Vec<f64>>,
    /// Stationary distribution; present only when ergodic.
    pub pi: Option<Vec<f64>>,
    /// Number of squarings performed.
    pub iterations: u32,
    /// Max-abs change of the last squaring.
    pub last_delta: f64,
}

impl StationaryResult {
    pub fn is_ergodic(&self) -> bool {
        self.status == ChainStatus::Ergodic
    }
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i][k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                c[i][j] += aik * b[k][j];
            }
        }
    }
    c
}

fn renormalize(m: &mut [Vec<f64>]) {
    for row in m {
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
}

fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Whether the support graph of `p` is strongly connected.
fn irreducible(p: &[Vec<f64>]) -> bool {
    let n = p.len();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let edge = if forward { p[i][j] } else { p[j][i] };
                if edge > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Squares `P` until successive powers differ by at most `eps`.
///
/// Oscillation is declared when the squaring distance has been
/// non-decreasing over three checks while the powers repeat with period two;
/// a period that is a power of two converges under squaring instead and is
/// caught by the fixed-point check `L P = L`.
pub fn iterate_to_stationary(tpm: &TransitionMatrix, eps: f64, max_squarings: u32) -> StationaryResult {
    let p0 = &tpm.p;
    let mut history: Vec<Vec<Vec<f64>>> = vec![p0.clone()];
    let mut deltas: Vec<f64> = Vec::new();
    let mut current = p0.clone();
    for it in 1..=max_squarings {
        let mut next = matmul(&current, &current);
        renormalize(&mut next);
        let delta = max_abs_diff(&next, &current);
        deltas.push(delta);
        history.push(next.clone());
        current = next;
        if delta <= eps {
            return classify(p0, current, it, delta);
        }
        let k = deltas.len();
        if k >= 3 && deltas[k - 3] <= deltas[k - 2] && deltas[k - 2] <= deltas[k - 1] {
            let back = &history[history.len() - 3];
            if max_abs_diff(&current, back) <= eps {
                return StationaryResult {
                    status: ChainStatus::Periodic,
                    limit: current,
                    pi: None,
                    iterations: it,
                    last_delta: delta,
                };
            }
        }
        if history.len() > 3 {
            history.remove(0);
        }
    }
    StationaryResult {
        status: ChainStatus::NotConverged,
        limit: current,
        pi: None,
        iterations: max_squarings,
        last_delta: deltas.last().copied().unwrap_or(f64::NAN),
    }
}

fn classify(p: &[Vec<f64>], limit: Vec<Vec<f64>>, iterations: u32, last_delta: f64) -> StationaryResult {
    let fixed = max_abs_diff(&matmul(&limit, p), &limit) <= LIMIT_TOL;
    let status = if !irreducible(p) {
        ChainStatus::Reducible
    } else if !fixed {
        ChainStatus::Periodic
    } else {
        let rows_equal = limit.iter().all(|row| max_abs_diff(std::slice::from_ref(row), &limit[..1]) <= LIMIT_TOL);
        let positive = limit.iter().flatten().all(|&v| v > 0.0);
        if rows_equal && positive {
            ChainStatus::Ergodic
        } else {
            ChainStatus::Reducible
        }
    };
    let pi = (status == ChainStatus::Ergodic).then(|| {
        let n = limit.len() as f64;
        let mut pi: Vec<f64> = (0..limit.len())
            .map(|j| limit.iter().map(|row| row[j]).sum::<f64>() / n)
            .collect();
        let s: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|v| *v /= s);
        pi
    });
    StationaryResult {
        status,
        limit,
        pi,
        iterations,
        last_delta,
    }
}

/// Binning and convergence settings for the window stationarity check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarkovConfig {
    /// `None` uses [`default_bin_width`] per window.
    pub bin_width: Option<f64>,
    pub eps: f64,
    pub max_squarings: u32,
    pub age_source: AgeSource,
}

impl Default for MarkovConfig {
    fn default() -> Self {
        MarkovConfig {
            bin_width: None,
            eps: DEFAULT_EPS,
            max_squarings: DEFAULT_MAX_SQUARINGS,
            age_source: AgeSource::ElapsedTime,
        }
    }
}

/// Runs the full age-chain check on a window.
pub fn window_stationarity(w: &Window, cfg: &MarkovConfig) -> Result<(StateSequence, TransitionMatrix, StationaryResult)> {
    let seq = ages_to_states(w, cfg.bin_width, cfg.age_source)?;
    let tpm = build_tpm(&seq)?;
    let res = iterate_to_stationary(&tpm, cfg.eps, cfg.max_squarings);
    Ok((seq, tpm, res))
}

/// Window size (record count) and age (completion-date span in years).
pub fn window_dimensions(w: &Window) -> (usize, f64) {
    if w.records.is_empty() {
        return (0, 0.0);
    }
    let days: Vec<i64> = w
        .records
        .iter()
        .map(|r| r.completion_date.signed_duration_since(chrono::NaiveDate::MIN).num_days())
        .collect();
    let span = days.iter().max().unwrap() - days.iter().min().unwrap();
    (w.records.len(), span as f64 / DAYS_PER_YEAR)
}

#[cfg(test)]
mod tests {
    use chrono::{Duration, NaiveDate};
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::dataset::ProjectRecord;

    fn seq(ages: &[f64], width: f64) -> StateSequence {
        states_from_ages(ages, width).unwrap()
    }

    fn tpm(p: Vec<Vec<f64>>) -> TransitionMatrix {
        TransitionMatrix::new(p).unwrap()
    }

    /// Independent stationary solve: (Pᵀ - I) π = 0 with one equation
    /// replaced by Σπ = 1.
    fn eigen_oracle(p: &[Vec<f64>]) -> Vec<f64> {
        let n = p.len();
        let mut a = DMatrix::from_fn(n, n, |i, j| p[j][i] - if i == j { 1.0 } else { 0.0 });
        let mut b = DVector::zeros(n);
        for j in 0..n {
            a[(n - 1, j)] = 1.0;
        }
        b[n - 1] = 1.0;
        a.lu().solve(&b).unwrap().iter().copied().collect()
    }

    #[test]
    fn binning_examples() {
        let s = seq(&[1.0, 1.1, 2.0, 2.1], 0.5);
        assert_eq!(s.states, [0, 0, 1, 1]);
        assert_eq!(s.n_states(), 2);
        let s = seq(&[3.0; 5], 1.0);
        assert_eq!(s.n_states(), 1);
        assert!(s.degenerate);
        let s = seq(&[1.0, 2.0, 3.0, 1.0, 2.0, 3.0], 1.0);
        assert_eq!(s.states, [0, 1, 2, 0, 1, 2]);
    }

    #[test]
    fn bad_bin_width() {
        assert!(states_from_ages(&[1.0, 2.0], 0.0).is_err());
        assert!(states_from_ages(&[1.0, 2.0], -1.0).is_err());
    }

    #[test]
    fn tpm_examples() {
        let t = build_tpm(&seq(&[1.0, 2.0, 1.0, 2.0], 1.0)).unwrap();
        assert_eq!(t.p, vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        let t = build_tpm(&seq(&[1.0, 1.0, 2.0, 2.0], 1.0)).unwrap();
        assert_eq!(t.p, vec![vec![0.5, 0.5], vec![0.0, 1.0]]);
        assert!(t.uniform_rows.is_empty());
        // state 2 is only ever the last element
        let t = build_tpm(&seq(&[1.0, 1.0, 2.0], 1.0)).unwrap();
        assert_eq!(t.p[1], vec![0.5, 0.5]);
        assert_eq!(t.uniform_rows, vec![1]);
        assert!(matches!(build_tpm(&seq(&[1.0], 1.0)), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn tpm_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let n = rng.random_range(2..60);
            let ages: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
            let t = build_tpm(&seq(&ages, default_bin_width(&ages))).unwrap();
            for row in &t.p {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn already_stationary() {
        let r = iterate_to_stationary(&tpm(vec![vec![0.5, 0.5], vec![0.5, 0.5]]), DEFAULT_EPS, 64);
        assert_eq!(r.status, ChainStatus::Ergodic);
        assert_eq!(r.iterations, 1);
        assert_eq!(r.pi.unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn two_state_chain() {
        let r = iterate_to_stationary(&tpm(vec![vec![0.9, 0.1], vec![0.5, 0.5]]), DEFAULT_EPS, 64);
        assert_eq!(r.status, ChainStatus::Ergodic);
        let pi = r.pi.unwrap();
        assert!((pi[0] - 5.0 / 6.0).abs() < 1e-6);
        assert!((pi[1] - 1.0 / 6.0).abs() < 1e-6);
    }

    #[test]
    fn period_two_and_three() {
        let r = iterate_to_stationary(&tpm(vec![vec![0.0, 1.0], vec![1.0, 0.0]]), DEFAULT_EPS, 64);
        assert_eq!(r.status, ChainStatus::Periodic);
        let cycle = vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]];
        let r = iterate_to_stationary(&tpm(cycle), DEFAULT_EPS, 64);
        assert_eq!(r.status, ChainStatus::Periodic);
    }

    #[test]
    fn absorbing_state_is_reducible() {
        let r = iterate_to_stationary(&tpm(vec![vec![0.5, 0.5], vec![0.0, 1.0]]), DEFAULT_EPS, 64);
        assert_eq!(r.status, ChainStatus::Reducible);
        assert!(r.pi.is_none());
    }

    #[test]
    fn not_converged_under_tiny_budget() {
        let r = iterate_to_stationary(&tpm(vec![vec![0.99, 0.01], vec![0.01, 0.99]]), DEFAULT_EPS, 2);
        assert_eq!(r.status, ChainStatus::NotConverged);
    }

    #[test]
    fn sticky_chain_is_not_mistaken_for_periodic() {
        let r = iterate_to_stationary(&tpm(vec![vec![0.999, 0.001], vec![0.002, 0.998]]), DEFAULT_EPS, 64);
        assert_eq!(r.status, ChainStatus::Ergodic);
        let pi = r.pi.unwrap();
        assert!((pi[0] - 2.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn random_chains_match_eigen_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let n = rng.random_range(2..8);
            let p: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    let row: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
                    let s: f64 = row.iter().sum();
                    row.into_iter().map(|v| v / s).collect()
                })
                .collect();
            let r = iterate_to_stationary(&tpm(p.clone()), DEFAULT_EPS, 64);
            assert_eq!(r.status, ChainStatus::Ergodic);
            let pi = r.pi.unwrap();
            for (a, b) in pi.iter().zip(eigen_oracle(&p)) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn dimensions() {
        let d0 = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
        let one = Window {
            index: 1,
            records: vec![ProjectRecord::new("a", d0, 1.0, 1.0, 1.0)],
        };
        assert_eq!(window_dimensions(&one), (1, 0.0));
        let two = Window {
            index: 1,
            records: vec![
                ProjectRecord::new("a", d0, 1.0, 1.0, 1.0),
                ProjectRecord::new("b", d0 + Duration::days(731), 1.0, 1.0, 1.0),
            ],
        };
        let (n, age) = window_dimensions(&two);
        assert_eq!(n, 2);
        assert!((age - 731.0 / 365.25).abs() < 1e-12);
    }

    #[test]
    fn csv_dump() {
        assert_eq!(matrix_csv(&[vec![0.5, 0.5], vec![0.0, 1.0]]), "0.5,0.5\n0,1\n");
    }
}
