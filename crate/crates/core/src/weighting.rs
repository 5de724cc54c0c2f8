//! Moving-window weighting kernels.
//!
//! A project's position in its window is measured as normalized time
//! distance from the newest project: `x = (t_latest - t) / (t_latest -
//! t_earliest) * n / (n + 1)`. The `n / (n + 1)` shrink keeps the oldest
//! project strictly below 1 so compact kernels never zero out an in-window
//! project.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stratify::Window;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Rectangular,
    Triangular,
    Epanechnikov,
    Gaussian,
}

impl Kernel {
    pub const ALL: [Kernel; 4] = [Kernel::Rectangular, Kernel::Triangular, Kernel::Epanechnikov, Kernel::Gaussian];

    pub fn as_str(self) -> &'static str {
        match self {
            Kernel::Rectangular => "rectangular",
            Kernel::Triangular => "triangular",
            Kernel::Epanechnikov => "epanechnikov",
            Kernel::Gaussian => "gaussian",
        }
    }
}

impl std::str::FromStr for Kernel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rectangular" | "uniform" => Ok(Kernel::Rectangular),
            "triangular" => Ok(Kernel::Triangular),
            "epanechnikov" => Ok(Kernel::Epanechnikov),
            "gaussian" => Ok(Kernel::Gaussian),
            other => Err(Error::Config(format!("unknown kernel `{other}`"))),
        }
    }
}

/// Kernel value at normalized distance `x >= 0`.
pub fn kernel_weight(kernel: Kernel, x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::Parameter(format!("kernel distance must be >= 0, got {x}")));
    }
    let compact = |v: f64| if x < 1.0 { v } else { 0.0 };
    Ok(match kernel {
        Kernel::Rectangular => compact(1.0),
        Kernel::Triangular => compact(1.0 - x),
        Kernel::Epanechnikov => compact(1.0 - x * x),
        Kernel::Gaussian => (-2.5 * x * x / 2.0).exp(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedWindow {
    pub window: Window,
    pub kernel: Kernel,
    pub weights: Vec<f64>,
    pub x_coords: Vec<f64>,
    /// Set when every project shares one completion date (or there is only
    /// one), leaving all weights at 1.
    pub degenerate: bool,
}

impl WeightedWindow {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

pub fn apply_weights(window: &Window, kernel: Kernel) -> Result<WeightedWindow> {
    let n = window.records.len();
    if n == 0 {
        return Err(Error::InsufficientData("cannot weight an empty window".into()));
    }
    let t: Vec<f64> = window.records.iter().map(|r| r.completion_years()).collect();
    let latest = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let earliest = t.iter().cloned().fold(f64::INFINITY, f64::min);
    let span = latest - earliest;
    let degenerate = n == 1 || span <= 0.0;
    let shrink = n as f64 / (n as f64 + 1.0);
    let x_coords: Vec<f64> = if degenerate {
        vec![0.0; n]
    } else {
        t.iter().map(|ti| (latest - ti) / span * shrink).collect()
    };
    let weights = x_coords
        .iter()
        .map(|&x| kernel_weight(kernel, x))
        .collect::<Result<Vec<_>>>()?;
    Ok(WeightedWindow {
        window: window.clone(),
        kernel,
        weights,
        x_coords,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use chrono::NaiveDate;

    use super::*;
    use crate::dataset::ProjectRecord;

    fn window(dates: &[(i32, u32, u32)]) -> Window {
        Window {
            index: 1,
            records: dates
                .iter()
                .enumerate()
                .map(|(i, &(y, m, d))| {
                    ProjectRecord::new(format!("p{i}"), NaiveDate::from_ymd_opt(y, m, d).unwrap(), 1.0, 1.0, 1.0)
                })
                .collect(),
        }
    }

    #[test]
    fn all_kernels_are_one_at_zero() {
        for k in Kernel::ALL {
            assert_eq!(kernel_weight(k, 0.0).unwrap(), 1.0);
        }
    }

    #[test]
    fn direct_values() {
        assert!((kernel_weight(Kernel::Triangular, 0.25).unwrap() - 0.75).abs() < 1e-15);
        assert!((kernel_weight(Kernel::Epanechnikov, 0.5).unwrap() - 0.75).abs() < 1e-15);
        let g = kernel_weight(Kernel::Gaussian, 1.0).unwrap();
        assert!((g - (-1.25f64).exp()).abs() < 1e-15);
        assert!((g - 0.286_50).abs() < 1e-5);
    }

    #[test]
    fn negative_distance_is_rejected() {
        assert!(kernel_weight(Kernel::Gaussian, -0.1).is_err());
    }

    #[test]
    fn only_gaussian_survives_past_one() {
        for x in [1.0, 1.5, 3.0] {
            for k in [Kernel::Rectangular, Kernel::Triangular, Kernel::Epanechnikov] {
                assert_eq!(kernel_weight(k, x).unwrap(), 0.0);
            }
            assert!(kernel_weight(Kernel::Gaussian, x).unwrap() > 0.0);
        }
    }

    #[test]
    fn kernels_non_increasing_on_grid() {
        for k in Kernel::ALL {
            let vals: Vec<f64> = (0..1000).map(|i| kernel_weight(k, i as f64 / 1000.0).unwrap()).collect();
            assert!(vals.windows(2).all(|w| w[1] <= w[0]), "{k:?}");
        }
    }

    #[test]
    fn rectangular_is_unweighted() {
        let w = apply_weights(&window(&[(2000, 1, 1), (2001, 6, 1), (2003, 1, 1)]), Kernel::Rectangular).unwrap();
        assert!(w.weights.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn two_projects_triangular() {
        let w = apply_weights(&window(&[(2000, 1, 1), (2002, 1, 1)]), Kernel::Triangular).unwrap();
        // oldest project: x = 1 * 2/3
        assert!((w.weights[0] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(w.weights[1], 1.0);
    }

    #[test]
    fn newest_project_weighs_most() {
        let win = window(&[(2000, 1, 1), (2003, 3, 1), (2001, 5, 1), (2002, 2, 1)]);
        for k in Kernel::ALL {
            let w = apply_weights(&win, k).unwrap();
            let max = w.weights.iter().cloned().fold(0.0, f64::max);
            assert_eq!(w.weights[1], max);
            assert!(w.weights.iter().all(|&v| v > 0.0 && v <= 1.0));
        }
    }

    #[test]
    fn single_project_is_degenerate() {
        let w = apply_weights(&window(&[(2000, 1, 1)]), Kernel::Gaussian).unwrap();
        assert!(w.degenerate);
        assert_eq!(w.weights, vec![1.0]);
    }
}
