//! Experimenter-side evaluation: the fixed-point residual under the true
//! plant, engagement and polarization summaries, sensitivity error, and
//! across-trial aggregation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::controller::{composite_gradient, polarization_gradient, ControllerConfig, Trajectory};
use crate::error::{check_len, Error, Result};
use crate::platform::{ClickModel, FjParams, SteadyStateMap};

/// Quantities recorded at a trigger instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerMetrics {
    pub k: usize,
    /// `‖𝒢(p^k)‖²` under the true plant.
    pub residual_sq: f64,
    /// Expected engagement cost at the current opinions.
    pub ctr_cost: f64,
    pub pol_cost: f64,
    /// NaN for policies without a sensitivity estimate.
    pub sens_rel_err: f64,
    pub mean_ctr_window: f64,
}

/// True composite gradient `Φ(p, h(p))` with exact click gradients and the
/// plant sensitivity.
pub fn true_composite_gradient(
    p: &DVector<f64>,
    map: &SteadyStateMap,
    clicks: &ClickModel,
    config: &ControllerConfig,
) -> DVector<f64> {
    let x = map.apply(p);
    let (grad_p, grad_x) = crate::controller::analytic_ctr_gradient(clicks, p, &x);
    let pol = polarization_gradient(&x, config.eps1, config.eps2);
    let zero = DVector::zeros(p.len());
    composite_gradient(&grad_p, &grad_x, map.sensitivity(), &pol, config.gamma, &zero, config.eta)
}

/// `𝒢(p) = (p - Π[p - η Φ(p, h(p))]) / η` given a precomputed steady-state map.
pub fn residual_with_map(
    p: &DVector<f64>,
    map: &SteadyStateMap,
    clicks: &ClickModel,
    config: &ControllerConfig,
) -> DVector<f64> {
    let phi = true_composite_gradient(p, map, clicks, config);
    projected_residual(p, &phi, config.eta)
}

/// `(p - Π[p - η Φ]) / η` for a given `Φ`.
pub fn projected_residual(p: &DVector<f64>, phi: &DVector<f64>, eta: f64) -> DVector<f64> {
    let image = (p - phi * eta).map(|v| v.clamp(-1.0, 1.0));
    (p - image) / eta
}

pub fn fixed_point_residual(
    p: &DVector<f64>,
    params: &FjParams,
    clicks: &ClickModel,
    config: &ControllerConfig,
) -> Result<DVector<f64>> {
    check_len(params.n(), p.len(), "positions")?;
    check_len(params.n(), clicks.n(), "click behaviours")?;
    let map = params.steady_state_map()?;
    Ok(residual_with_map(p, &map, clicks, config))
}

/// Average click rate over the final `window` steps and all users.
pub fn mean_ctr(trajectory: &Trajectory, window: usize) -> Result<f64> {
    if window == 0 {
        return Err(Error::EmptyWindow);
    }
    if trajectory.horizon < window {
        return Err(Error::ShortTrajectory {
            len: trajectory.horizon,
            window,
        });
    }
    let start = (trajectory.horizon - window) * trajectory.n;
    let total: u64 = trajectory.clicks[start..].iter().map(|&c| u64::from(c)).sum();
    Ok(total as f64 / (window * trajectory.n) as f64)
}

/// `‖Ĥ - H‖_F / ‖H‖_F`.
pub fn sensitivity_rel_error(h_hat: &DMatrix<f64>, h_true: &DMatrix<f64>) -> Result<f64> {
    if h_hat.shape() != h_true.shape() {
        return Err(Error::Dimension {
            expected: h_true.len(),
            got: h_hat.len(),
            context: "sensitivity estimate",
        });
    }
    let norm = h_true.norm();
    if norm == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((h_hat - h_true).norm() / norm)
}

/// Expands per-trigger residuals to every step: positions are constant
/// between triggers, so step `k` carries the value of the latest trigger at
/// or before it (steps before the first trigger stay NaN).
pub fn densify_residuals(trajectory: &Trajectory) -> Vec<f64> {
    let mut out = vec![f64::NAN; trajectory.horizon];
    let mut next = trajectory.triggers.iter().peekable();
    let mut current = f64::NAN;
    for (k, slot) in out.iter_mut().enumerate() {
        while let Some(t) = next.peek() {
            if t.metrics.k <= k {
                current = t.metrics.residual_sq;
                next.next();
            } else {
                break;
            }
        }
        *slot = current;
    }
    out
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    /// Standard error of the mean.
    pub fn sem(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            self.std / (self.count as f64).sqrt()
        }
    }
}

/// Two-pass mean and (n - 1)-normalized standard deviation. NaNs are skipped.
pub fn summarize(values: &[f64]) -> Summary {
    let finite: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
    let count = finite.len();
    if count == 0 {
        return Summary {
            count,
            mean: f64::NAN,
            std: f64::NAN,
        };
    }
    let mean = finite.iter().sum::<f64>() / count as f64;
    let std = if count < 2 {
        0.0
    } else {
        let ss: f64 = finite.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (count - 1) as f64).sqrt()
    };
    Summary { count, mean, std }
}

/// Per-index mean/std band across series of possibly unequal length.
pub fn band(series: &[Vec<f64>]) -> Vec<Summary> {
    let len = series.iter().map(Vec::len).max().unwrap_or(0);
    (0..len)
        .map(|t| {
            let column: Vec<f64> = series.iter().filter_map(|s| s.get(t).copied()).collect();
            summarize(&column)
        })
        .collect()
}

/// One-sided paired sign test: probability of at least `wins` successes out
/// of `trials` fair coin flips.
pub fn sign_test_p_value(wins: usize, trials: usize) -> f64 {
    let mut tail = 0.0;
    let mut coeff = 1.0f64;
    for k in 0..=trials {
        if k > 0 {
            coeff = coeff * (trials - k + 1) as f64 / k as f64;
        }
        if k >= wins {
            tail += coeff;
        }
    }
    tail / 2f64.powi(trials as i32)
}
