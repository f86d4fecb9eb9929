//! Empirical error bounds for the neural estimators and the smoothing
//! parameter of the forward-difference gradient.

use serde::{Deserialize, Serialize};

use super::bank::{DataFn, EstimatorBank};
use super::training::TrainingSet;
use crate::error::{Error, Result};

fn inf_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Empirical modulus of continuity on a finite sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Modulus {
    pub value: f64,
    /// `false` when no pair of distinct samples lies within the radius.
    pub has_pairs: bool,
}

/// `sup |v_i - v_j|` over sample pairs with `‖x_i - x_j‖∞ <= gamma`.
pub fn modulus_of_continuity(points: &[Vec<f64>], values: &[f64], gamma: f64) -> Result<Modulus> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidParameter("radius must be positive".into()));
    }
    if points.len() < 2 || points.len() != values.len() {
        return Err(Error::InvalidParameter(
            "need at least two samples with one value each".into(),
        ));
    }
    let mut value: f64 = 0.0;
    let mut has_pairs = false;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            if inf_dist(&points[i], &points[j]) <= gamma {
                has_pairs = true;
                value = value.max((values[i] - values[j]).abs());
            }
        }
    }
    if !has_pairs {
        log::warn!("no sample pair within radius {gamma}; modulus of continuity reported as 0");
    }
    Ok(Modulus { value, has_pairs })
}

/// Largest nearest-neighbour distance (∞-norm) within a sample set.
pub fn covering_radius(points: &[Vec<f64>]) -> f64 {
    (0..points.len())
        .map(|i| {
            (0..points.len())
                .filter(|&j| j != i)
                .map(|j| inf_dist(&points[i], &points[j]))
                .fold(f64::INFINITY, f64::min)
        })
        .filter(|d| d.is_finite())
        .fold(0.0, f64::max)
}

/// Breakdown of one estimator error bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBound {
    pub value: f64,
    pub radius: f64,
    pub training_error: f64,
    pub modulus: f64,
    pub output_bias: f64,
}

fn ann_terms(n: usize, training_error: f64, modulus: f64, radius: f64, bias: f64) -> f64 {
    (n as f64).sqrt() * (3.0 * training_error + 2.0 * modulus + radius * bias)
}

/// Per-user opinion samples `(p, y_i) -> x_i`, radius defaulting to the
/// covering radius of the first user's inputs.
fn sup_modulus(
    set: &TrainingSet,
    data: DataFn,
    radius: Option<f64>,
) -> Result<(f64, f64)> {
    let mut worst: f64 = 0.0;
    let mut used_radius: f64 = 0.0;
    for i in 0..set.n() {
        let (inputs, targets) = data(set, i);
        let r = match radius {
            Some(r) => r,
            None => covering_radius(&inputs),
        };
        used_radius = used_radius.max(r);
        let values: Vec<f64> = targets.iter().map(|t| t[0]).collect();
        if r > 0.0 {
            worst = worst.max(modulus_of_continuity(&inputs, &values, r)?.value);
        }
    }
    Ok((worst, used_radius))
}

/// Opinion estimation error bound
/// `√n [3 e_train + 2 sup ω(γx) + γx sup |v0|] + θx`.
///
/// When `gamma_x` is `None` each user's radius is the covering radius of
/// its training inputs and the largest is reported.
pub fn opinion_error_bound(
    bank: &EstimatorBank,
    set: &TrainingSet,
    gamma_x: Option<f64>,
    theta_x: f64,
) -> Result<ErrorBound> {
    let (modulus, radius) = sup_modulus(set, TrainingSet::opinion_data, gamma_x)?;
    let training_error = bank.opinion_training_error();
    let output_bias = bank.opinion_output_bias();
    Ok(ErrorBound {
        value: ann_terms(set.n(), training_error, modulus, radius, output_bias) + theta_x,
        radius,
        training_error,
        modulus,
        output_bias,
    })
}

/// Clicking estimation error bound
/// `√n [3 e_train + 2 sup ω(γy) + γy sup |w0|] + Mx εx + αy`.
pub fn clicking_error_bound(
    bank: &EstimatorBank,
    set: &TrainingSet,
    gamma_y: Option<f64>,
    lipschitz_x: f64,
    epsilon_x: f64,
    alpha_y: f64,
) -> Result<ErrorBound> {
    let (modulus, radius) = sup_modulus(set, TrainingSet::clicking_data, gamma_y)?;
    let training_error = bank.clicking_training_error();
    let output_bias = bank.clicking_output_bias();
    Ok(ErrorBound {
        value: ann_terms(set.n(), training_error, modulus, radius, output_bias)
            + lipschitz_x * epsilon_x
            + alpha_y,
        radius,
        training_error,
        modulus,
        output_bias,
    })
}

/// Upper bound on the forward-difference gradient error,
/// `L μ / 2 + 2 √n ε_g / μ`.
pub fn forward_difference_error_bound(n: usize, mu: f64, smoothness: f64, epsilon_g: f64) -> f64 {
    0.5 * smoothness * mu + 2.0 * (n as f64).sqrt() * epsilon_g / mu
}

/// Smoothing parameter minimising the forward-difference bound,
/// `2 n^{1/4} sqrt(ε_g / L)`.
pub fn optimal_smoothing(n: usize, epsilon_g: f64, smoothness: f64) -> f64 {
    2.0 * (n as f64).powf(0.25) * (epsilon_g / smoothness).sqrt()
}
