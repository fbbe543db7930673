//! Small statistics helpers shared by the Monte Carlo estimators and
//! diagnostics.

use serde::{Deserialize, Serialize};

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

impl MomentEstimate {
    /// Mean and `sample-std / sqrt(n)` of `xs`.
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                value: f64::NAN,
                std_error: f64::NAN,
                n_samples: 0,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std_error = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self {
            value: mean,
            std_error,
            n_samples: n,
        }
    }

    /// `|value - target|` in units of the standard error. A zero SE with an
    /// exact match counts as 0.
    pub fn z_score(&self, target: f64) -> f64 {
        let diff = (self.value - target).abs();
        if self.std_error > 0.0 {
            diff / self.std_error
        } else if diff <= 1e-12 * (1.0 + target.abs()) {
            0.0
        } else {
            f64::INFINITY
        }
    }

    /// Whether `target` lies within `k` standard errors.
    pub fn agrees_with(&self, target: f64, k: f64) -> bool {
        self.z_score(target) <= k
    }
}

/// Delete-one jackknife for a statistic that is a smooth function of the
/// means of several per-sample columns.
///
/// `columns[c][s]` is the value of column `c` on sample `s`; `stat` maps a
/// vector of column means to the statistic. Uses running sums so the cost is
/// `O(n * columns)` evaluations of `stat`.
pub fn jackknife_of_means<F>(columns: &[Vec<f64>], stat: F) -> MomentEstimate
where
    F: Fn(&[f64]) -> f64,
{
    let n = columns.first().map_or(0, Vec::len);
    let sums: Vec<f64> = columns.iter().map(|c| c.iter().sum()).collect();
    let full_means: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();
    let value = stat(&full_means);
    if n < 2 {
        return MomentEstimate {
            value,
            std_error: 0.0,
            n_samples: n,
        };
    }
    let mut loo = vec![0.0; columns.len()];
    let mut replicates = Vec::with_capacity(n);
    for s in 0..n {
        for (c, col) in columns.iter().enumerate() {
            loo[c] = (sums[c] - col[s]) / (n - 1) as f64;
        }
        replicates.push(stat(&loo));
    }
    let mean_rep = replicates.iter().sum::<f64>() / n as f64;
    let var = replicates.iter().map(|r| (r - mean_rep).powi(2)).sum::<f64>() * (n - 1) as f64
        / n as f64;
    MomentEstimate {
        value,
        std_error: var.sqrt(),
        n_samples: n,
    }
}

/// Ordinary least-squares slope and intercept of `y` on `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Slope of `ln|y|` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.abs().ln()).collect();
    linear_fit(&lx, &ly).0
}

/// Median of a slice (averaging the middle pair for even lengths).
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
