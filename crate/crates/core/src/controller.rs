//! Gradient estimation and the projected-gradient recommender loop.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::estimators::{EstimatorBank, LocalOpinionBank};
use crate::filter::{SensitivityFilter, TriggerLog, DEFAULT_TUNING_DIVISOR};
use crate::metrics::{residual_with_map, sensitivity_rel_error, TriggerMetrics};
use crate::platform::{ClickModel, Platform, SteadyStateMap};
use crate::seeds::{rng_from, stream, SimRng};

/// Controller hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    /// Step size of the projected update.
    pub eta: f64,
    /// Weight of the polarization cost against engagement.
    pub gamma: f64,
    /// Forward-difference smoothing.
    pub mu: f64,
    /// Standard deviation of the dither.
    pub sigma_pe: f64,
    /// Fraction of the horizon during which the dither is active.
    pub dither_cutoff: f64,
    /// Trigger period in steps.
    pub period: usize,
    pub eps1: f64,
    pub eps2: f64,
    /// Divisor in the process-noise heuristic of the sensitivity filter.
    /// Configured in the filter section of experiment files.
    #[serde(skip)]
    pub tuning_divisor: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            eta: 0.1,
            gamma: 1.0,
            mu: 0.1,
            sigma_pe: 0.07,
            dither_cutoff: 0.2,
            period: 60,
            eps1: -0.5,
            eps2: 0.5,
            tuning_divisor: DEFAULT_TUNING_DIVISOR,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.to_string()));
        if !(self.eta > 0.0) {
            return bad("eta must be positive");
        }
        if !(self.gamma >= 0.0) {
            return bad("gamma must be non-negative");
        }
        if !(self.mu > 0.0) {
            return bad("mu must be positive");
        }
        if !(self.sigma_pe >= 0.0) {
            return bad("sigma_pe must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.dither_cutoff) {
            return bad("dither_cutoff must lie in [0, 1]");
        }
        if self.period == 0 {
            return bad("trigger period must be at least 1");
        }
        if !(self.eps1 <= self.eps2) {
            return bad("eps1 must not exceed eps2");
        }
        if !(self.tuning_divisor > 0.0) {
            return bad("tuning divisor must be positive");
        }
        Ok(())
    }
}

/// Engagement cost `-Σ g_i`.
pub fn ctr_cost(g: &DVector<f64>) -> f64 {
    -g.sum()
}

/// Dead-band quadratic penalty on opinions outside `[eps1, eps2]`.
pub fn polarization_cost(x: &DVector<f64>, eps1: f64, eps2: f64) -> f64 {
    x.iter()
        .map(|&v| {
            if v < eps1 {
                (v - eps1).powi(2)
            } else if v > eps2 {
                (eps2 - v).powi(2)
            } else {
                0.0
            }
        })
        .sum()
}

pub fn polarization_gradient(x: &DVector<f64>, eps1: f64, eps2: f64) -> DVector<f64> {
    x.map(|v| {
        if v < eps1 {
            2.0 * (v - eps1)
        } else if v > eps2 {
            2.0 * (v - eps2)
        } else {
            0.0
        }
    })
}

/// A per-user clicking model `g_i(p_i, x_i)` that gradients can probe.
pub trait ClickSurrogate {
    fn users(&self) -> usize;
    /// Raw (unclamped) click probability of user `i`.
    fn raw(&self, i: usize, p_i: f64, x_i: f64) -> f64;
}

impl ClickSurrogate for EstimatorBank {
    fn users(&self) -> usize {
        self.n()
    }

    fn raw(&self, i: usize, p_i: f64, x_i: f64) -> f64 {
        self.raw_ctr(i, p_i, x_i)
    }
}

impl ClickSurrogate for ClickModel {
    fn users(&self) -> usize {
        self.n()
    }

    fn raw(&self, i: usize, p_i: f64, x_i: f64) -> f64 {
        self.behaviours()[i].probability(p_i, x_i)
    }
}

/// Forward-difference gradients of `φ̂(p, x) = -Σ ĝ_i(p_i, x_i)` in `p` and
/// in `x`. Each user's term depends only on its own coordinates, so probing
/// `e_i` changes the sum by the `i`-th term alone. Probes are not projected.
pub fn grad_ctr_forward_diff<S: ClickSurrogate + ?Sized>(
    surrogate: &S,
    p: &DVector<f64>,
    x: &DVector<f64>,
    mu: f64,
) -> (DVector<f64>, DVector<f64>) {
    let n = surrogate.users();
    let mut grad_p = DVector::zeros(n);
    let mut grad_x = DVector::zeros(n);
    for i in 0..n {
        let base = -surrogate.raw(i, p[i], x[i]);
        grad_p[i] = (-surrogate.raw(i, p[i] + mu, x[i]) - base) / mu;
        grad_x[i] = (-surrogate.raw(i, p[i], x[i] + mu) - base) / mu;
    }
    (grad_p, grad_x)
}

/// Exact gradients of the expected engagement cost for known behaviours.
pub fn analytic_ctr_gradient(
    model: &ClickModel,
    p: &DVector<f64>,
    x: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let n = model.n();
    let b = model.behaviours();
    (
        DVector::from_fn(n, |i, _| -b[i].grad_p(p[i], x[i])),
        DVector::from_fn(n, |i, _| -b[i].grad_x(p[i], x[i])),
    )
}

/// Gradient surrogate `∇p φ̂ + Ĥᵀ ∇x φ̂ + γ Ĥᵀ ∇φpol - w/η`.
pub fn composite_gradient(
    grad_p: &DVector<f64>,
    grad_x: &DVector<f64>,
    h_hat: &DMatrix<f64>,
    pol_grad: &DVector<f64>,
    gamma: f64,
    dither: &DVector<f64>,
    eta: f64,
) -> DVector<f64> {
    let through_opinions = grad_x + pol_grad * gamma;
    grad_p + h_hat.tr_mul(&through_opinions) - dither / eta
}

/// `Π[p - ζ η Φ̂]` onto `[-1, 1]^n`.
pub fn projected_update(p: &DVector<f64>, phi: &DVector<f64>, eta: f64, active: bool) -> DVector<f64> {
    if !active {
        return p.clone();
    }
    (p - phi * eta).map(|v| v.clamp(-1.0, 1.0))
}

/// Where the controller gets its opinion estimate.
#[derive(Debug, Clone, Copy)]
pub enum OpinionSource<'a> {
    /// Measured opinions `x^{k+1}`.
    Truth,
    /// Network-aware estimator `β̂_i(y_i, p)`.
    Network(&'a EstimatorBank),
    /// Network-agnostic estimator `β̂_i(y_i, p_i)`.
    Local(&'a LocalOpinionBank),
}

/// Where the controller gets its sensitivity.
#[derive(Debug, Clone)]
pub enum SensitivitySource {
    Known(DMatrix<f64>),
    Kalman(SensitivityFilter),
    Fixed(DMatrix<f64>),
}

impl SensitivitySource {
    pub fn current(&self) -> DMatrix<f64> {
        match self {
            SensitivitySource::Known(h) | SensitivitySource::Fixed(h) => h.clone(),
            SensitivitySource::Kalman(f) => f.sensitivity(),
        }
    }
}

/// Where the controller gets its engagement gradients.
#[derive(Debug, Clone, Copy)]
pub enum GradientSource<'a> {
    Analytic(&'a ClickModel),
    ForwardDifference(&'a EstimatorBank),
}

/// What a policy sees after each plant step.
pub struct StepObservation<'a> {
    pub k: usize,
    /// Positions in force during this step.
    pub p: &'a DVector<f64>,
    pub clicks: &'a [u8],
    /// Click-through ratio since the last trigger.
    pub ctr: &'a DVector<f64>,
    /// True opinions after the step (only oracle ingredients may read them).
    pub opinions: &'a DVector<f64>,
    pub triggered: bool,
}

/// What a policy reports back.
pub struct PolicyOutput {
    pub opinion_estimate: Option<DVector<f64>>,
    pub next_positions: DVector<f64>,
}

/// A recommender that chooses positions from the click stream.
pub trait PositionPolicy {
    /// Positions served at step 0.
    fn initial_positions(&mut self, n: usize) -> DVector<f64> {
        DVector::zeros(n)
    }

    fn observe(&mut self, obs: &StepObservation<'_>) -> Result<PolicyOutput>;

    /// Current sensitivity estimate, if the policy keeps one.
    fn sensitivity(&self) -> Option<DMatrix<f64>> {
        None
    }

    /// Current `(σq, σr)` of the sensitivity filter, if any.
    fn noise_levels(&self) -> Option<(f64, f64)> {
        None
    }
}

/// The projected-gradient recommender with pluggable ingredients.
pub struct OfoPolicy<'a> {
    pub opinions: OpinionSource<'a>,
    pub sensitivity: SensitivitySource,
    pub gradients: GradientSource<'a>,
    pub config: ControllerConfig,
    dither: bool,
    dither_until: usize,
    dither_rng: SimRng,
    /// Estimate and positions at the previous trigger.
    previous: Option<(DVector<f64>, DVector<f64>)>,
}

impl<'a> OfoPolicy<'a> {
    pub fn new(
        opinions: OpinionSource<'a>,
        sensitivity: SensitivitySource,
        gradients: GradientSource<'a>,
        config: ControllerConfig,
        horizon: usize,
        dither: bool,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            opinions,
            sensitivity,
            gradients,
            config,
            dither,
            dither_until: (config.dither_cutoff * horizon as f64).round() as usize,
            dither_rng: rng_from(seed, &[stream::DITHER]),
            previous: None,
        })
    }

    fn estimate(&self, obs: &StepObservation<'_>) -> DVector<f64> {
        match self.opinions {
            OpinionSource::Truth => obs.opinions.clone(),
            OpinionSource::Network(bank) => bank.estimate_opinions(obs.ctr, obs.p),
            OpinionSource::Local(bank) => bank.estimate_opinions(obs.ctr, obs.p),
        }
    }

    /// One triggered update given the current opinion estimate.
    pub fn update(&mut self, k: usize, p: &DVector<f64>, x_hat: &DVector<f64>) -> Result<DVector<f64>> {
        let cfg = self.config;
        if let (SensitivitySource::Kalman(filter), Some((prev_x, prev_p))) =
            (&mut self.sensitivity, &self.previous)
        {
            filter.observe(&(x_hat - prev_x), &(p - prev_p))?;
        }
        let h_hat = self.sensitivity.current();
        let (grad_p, grad_x) = match self.gradients {
            GradientSource::Analytic(model) => analytic_ctr_gradient(model, p, x_hat),
            GradientSource::ForwardDifference(bank) => grad_ctr_forward_diff(bank, p, x_hat, cfg.mu),
        };
        let pol_grad = polarization_gradient(x_hat, cfg.eps1, cfg.eps2);
        let n = p.len();
        let dither = if self.dither && cfg.sigma_pe > 0.0 && k < self.dither_until {
            DVector::from_fn(n, |_, _| cfg.sigma_pe * self.dither_rng.sample::<f64, _>(StandardNormal))
        } else {
            DVector::zeros(n)
        };
        let phi = composite_gradient(&grad_p, &grad_x, &h_hat, &pol_grad, cfg.gamma, &dither, cfg.eta);
        self.previous = Some((x_hat.clone(), p.clone()));
        Ok(projected_update(p, &phi, cfg.eta, true))
    }
}

impl PositionPolicy for OfoPolicy<'_> {
    fn observe(&mut self, obs: &StepObservation<'_>) -> Result<PolicyOutput> {
        let x_hat = self.estimate(obs);
        let next_positions = if obs.triggered {
            self.update(obs.k, obs.p, &x_hat)?
        } else {
            obs.p.clone()
        };
        Ok(PolicyOutput {
            opinion_estimate: Some(x_hat),
            next_positions,
        })
    }

    fn sensitivity(&self) -> Option<DMatrix<f64>> {
        Some(self.sensitivity.current())
    }

    fn noise_levels(&self) -> Option<(f64, f64)> {
        match &self.sensitivity {
            SensitivitySource::Kalman(f) => Some((f.sigma_q(), f.sigma_r())),
            _ => None,
        }
    }
}

/// Per-trigger record of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerRecord {
    pub metrics: TriggerMetrics,
    pub sigma_q: Option<f64>,
    pub sigma_r: Option<f64>,
    /// Column-stacked sensitivity estimate in force after the trigger.
    pub sensitivity: Option<Vec<f64>>,
}

/// Time-indexed record of one closed-loop run. Step `k` stores the
/// positions `p^k`, the opinions after the step `x^{k+1}`, the clicks `c^k`
/// and the opinion estimate `x̂^{k+1}` (NaN when the policy has none).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub n: usize,
    pub horizon: usize,
    pub positions: Vec<f64>,
    pub opinions: Vec<f64>,
    pub clicks: Vec<u8>,
    pub estimates: Vec<f64>,
    pub triggers: Vec<TriggerRecord>,
    pub trigger_log: TriggerLog,
}

impl Trajectory {
    fn row<T>(data: &[T], n: usize, k: usize) -> &[T] {
        &data[k * n..(k + 1) * n]
    }

    pub fn positions_at(&self, k: usize) -> &[f64] {
        Self::row(&self.positions, self.n, k)
    }

    pub fn opinions_at(&self, k: usize) -> &[f64] {
        Self::row(&self.opinions, self.n, k)
    }

    pub fn clicks_at(&self, k: usize) -> &[u8] {
        Self::row(&self.clicks, self.n, k)
    }

    pub fn estimates_at(&self, k: usize) -> &[f64] {
        Self::row(&self.estimates, self.n, k)
    }

    /// Opinions at the end of the horizon.
    pub fn final_opinions(&self) -> DVector<f64> {
        DVector::from_column_slice(self.opinions_at(self.horizon - 1))
    }

    pub fn final_positions(&self) -> DVector<f64> {
        DVector::from_column_slice(self.positions_at(self.horizon - 1))
    }

    /// Step table: `k,user,x,p,click,x_hat`.
    pub fn write_steps_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "user", "x", "p", "click", "x_hat"])?;
        for k in 0..self.horizon {
            for i in 0..self.n {
                let j = k * self.n + i;
                w.write_record([
                    k.to_string(),
                    i.to_string(),
                    self.opinions[j].to_string(),
                    self.positions[j].to_string(),
                    self.clicks[j].to_string(),
                    self.estimates[j].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Trigger table: `k,residual,ctr_cost,pol_cost,sens_rel_err`.
    pub fn write_triggers_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "residual", "ctr_cost", "pol_cost", "sens_rel_err"])?;
        for t in &self.triggers {
            let m = &t.metrics;
            w.write_record([
                m.k.to_string(),
                m.residual_sq.to_string(),
                m.ctr_cost.to_string(),
                m.pol_cost.to_string(),
                m.sens_rel_err.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Closes `policy` around the platform for `horizon` steps starting from
/// the policy's initial positions. Clicks are drawn from the stream derived from `seed`, so two
/// runs with the same seed share click noise wherever their inputs agree.
pub fn simulate<P: PositionPolicy + ?Sized>(
    platform: &Platform,
    policy: &mut P,
    config: &ControllerConfig,
    horizon: usize,
    seed: u64,
) -> Result<Trajectory> {
    config.validate()?;
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be positive".into()));
    }
    let n = platform.n();
    let truth: SteadyStateMap = platform.params.steady_state_map()?;
    let mut click_rng = rng_from(seed, &[stream::CLICKS]);
    let mut x = platform.x0.clone();
    let mut p = policy.initial_positions(n);
    check_len(n, p.len(), "initial positions")?;
    let mut window = DVector::<f64>::zeros(n);
    let mut window_len = 0usize;
    let mut log = TriggerLog::new(config.period);
    let mut traj = Trajectory {
        n,
        horizon,
        positions: Vec::with_capacity(horizon * n),
        opinions: Vec::with_capacity(horizon * n),
        clicks: Vec::with_capacity(horizon * n),
        estimates: Vec::with_capacity(horizon * n),
        triggers: Vec::new(),
        trigger_log: TriggerLog::new(config.period),
    };
    for k in 0..horizon {
        let x_next = platform.step(&x, &p);
        // Users click on what they are shown with the opinion they hold now.
        let clicks = platform.sample_clicks(&mut click_rng, &p, &x);
        for (w, &c) in window.iter_mut().zip(&clicks) {
            *w += f64::from(c);
        }
        window_len += 1;
        let ctr = &window / window_len as f64;
        let triggered = log.check(k);
        let out = policy.observe(&StepObservation {
            k,
            p: &p,
            clicks: &clicks,
            ctr: &ctr,
            opinions: &x_next,
            triggered,
        })?;
        check_len(n, out.next_positions.len(), "policy positions")?;
        traj.positions.extend(p.iter());
        traj.opinions.extend(x_next.iter());
        traj.clicks.extend(&clicks);
        match &out.opinion_estimate {
            Some(e) => traj.estimates.extend(e.iter()),
            None => traj.estimates.extend(std::iter::repeat_n(f64::NAN, n)),
        }
        if triggered {
            let g = platform.clicks.probabilities(&p, &x_next);
            let h_hat = policy.sensitivity();
            let sens_rel_err = match &h_hat {
                Some(h) => sensitivity_rel_error(h, truth.sensitivity())?,
                None => f64::NAN,
            };
            let residual = residual_with_map(&p, &truth, &platform.clicks, config);
            let (sigma_q, sigma_r) = policy.noise_levels().unzip();
            traj.triggers.push(TriggerRecord {
                metrics: TriggerMetrics {
                    k,
                    residual_sq: residual.norm_squared(),
                    ctr_cost: ctr_cost(&g),
                    pol_cost: polarization_cost(&x_next, config.eps1, config.eps2),
                    sens_rel_err,
                    mean_ctr_window: ctr.mean(),
                },
                sigma_q,
                sigma_r,
                sensitivity: h_hat.map(|h| h.as_slice().to_vec()),
            });
            window.fill(0.0);
            window_len = 0;
        }
        debug_assert!(out.next_positions.iter().all(|v| v.abs() <= 1.0));
        p = out.next_positions;
        x = x_next;
    }
    traj.trigger_log = log;
    Ok(traj)
}

/// Full data-driven recommender: network-aware opinion estimates, Kalman
/// sensitivity learning, and forward-difference gradients of the learned
/// clicking behaviour.
pub fn run_recommender(
    platform: &Platform,
    bank: &EstimatorBank,
    config: &ControllerConfig,
    horizon: usize,
    seed: u64,
) -> Result<Trajectory> {
    let filter = SensitivityFilter::new(platform.n(), config.tuning_divisor)?;
    let mut policy = OfoPolicy::new(
        OpinionSource::Network(bank),
        SensitivitySource::Kalman(filter),
        GradientSource::ForwardDifference(bank),
        *config,
        horizon,
        true,
        seed,
    )?;
    simulate(platform, &mut policy, config, horizon, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::trigger;
    use crate::platform::{ClickBehaviour, FjParams};

    fn v(values: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(values)
    }

    #[test]
    fn ctr_cost_examples() {
        assert_eq!(ctr_cost(&v(&[1.0, 1.0, 1.0])), -3.0);
        assert_eq!(ctr_cost(&v(&[0.0, 0.0])), 0.0);
        assert_eq!(ctr_cost(&v(&[0.5, 0.5])), -1.0);
    }

    #[test]
    fn polarization_examples() {
        assert_eq!(polarization_cost(&v(&[0.2, -0.4, 0.5]), -0.5, 0.5), 0.0);
        assert!((polarization_cost(&v(&[1.0, 1.0]), -0.5, 0.5) - 0.5).abs() < 1e-15);
        let x = v(&[0.3, -0.8, 1.0]);
        assert!((polarization_cost(&x, 0.0, 0.0) - x.norm_squared()).abs() < 1e-15);
        assert_eq!(polarization_gradient(&v(&[0.1, -0.2]), -0.5, 0.5), DVector::zeros(2));
        assert_eq!(polarization_gradient(&v(&[1.0]), -0.5, 0.5)[0], 1.0);
        assert_eq!(polarization_gradient(&v(&[-1.0]), -0.5, 0.5)[0], -1.0);
    }

    #[test]
    fn polarization_gradient_matches_central_differences() {
        let (e1, e2): (f64, f64) = (-0.5, 0.5);
        let step = 1e-6;
        for &xi in &[-0.95, -0.7, -0.3, 0.0, 0.45, 0.6, 0.99] {
            if (xi - e1).abs() < 2.0 * step || (xi - e2).abs() < 2.0 * step {
                continue;
            }
            let fd = (polarization_cost(&v(&[xi + step]), e1, e2)
                - polarization_cost(&v(&[xi - step]), e1, e2))
                / (2.0 * step);
            assert!((fd - polarization_gradient(&v(&[xi]), e1, e2)[0]).abs() < 1e-6);
        }
    }

    struct Affine {
        slope_p: Vec<f64>,
        slope_x: Vec<f64>,
    }

    impl ClickSurrogate for Affine {
        fn users(&self) -> usize {
            self.slope_p.len()
        }
        fn raw(&self, i: usize, p: f64, x: f64) -> f64 {
            0.3 + self.slope_p[i] * p + self.slope_x[i] * x
        }
    }

    #[test]
    fn forward_difference_is_exact_on_affine_surrogates() {
        let s = Affine {
            slope_p: vec![0.25, -0.5, 0.125],
            slope_x: vec![0.5, 0.0, -0.25],
        };
        let p = v(&[0.1, -0.6, 0.9]);
        let x = v(&[0.2, 0.3, -0.4]);
        let (gp, gx) = grad_ctr_forward_diff(&s, &p, &x, 0.1);
        for i in 0..3 {
            assert!((gp[i] + s.slope_p[i]).abs() < 1e-12);
            assert!((gx[i] + s.slope_x[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_difference_on_extremity_bias_is_exact() {
        let model = ClickModel(vec![ClickBehaviour::ExtremityBias; 3]);
        let p = v(&[0.1, -0.6, 0.9]);
        let x = v(&[0.2, 0.3, -0.4]);
        let (gp, gx) = grad_ctr_forward_diff(&model, &p, &x, 0.1);
        let (ap, ax) = analytic_ctr_gradient(&model, &p, &x);
        assert!((gp - &ap).amax() < 1e-12);
        assert!((gx - &ax).amax() < 1e-12);
        assert!((ap + &x * 0.5).amax() < 1e-15);
        assert!((ax + &p * 0.5).amax() < 1e-15);
    }

    #[test]
    fn composite_gradient_examples() {
        let gp = v(&[0.3, -0.2]);
        let gx = v(&[1.0, 2.0]);
        let pol = v(&[0.5, 0.5]);
        let zero = DVector::zeros(2);
        let h0 = DMatrix::zeros(2, 2);
        assert_eq!(composite_gradient(&gp, &gx, &h0, &pol, 0.0, &zero, 0.1), gp);
        let eta = 0.1;
        let w = DVector::from_element(2, eta);
        let phi = composite_gradient(&zero, &zero, &h0, &zero, 1.0, &w, eta);
        assert!((phi - DVector::from_element(2, -1.0)).amax() < 1e-15);
        let h = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.2, 0.4]);
        let phi = composite_gradient(&gp, &gx, &h, &pol, 2.0, &zero, eta);
        let expected = &gp + h.transpose() * (&gx + &pol * 2.0);
        assert!((phi - expected).amax() < 1e-15);
    }

    #[test]
    fn projected_update_examples() {
        let p = v(&[0.9, 0.0]);
        let phi = v(&[-3.0, 2.5]);
        assert_eq!(projected_update(&p, &phi, 0.1, false), p);
        let next = projected_update(&p, &phi, 0.1, true);
        assert_eq!(next[0], 1.0);
        assert!((next[1] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(ControllerConfig::default().validate().is_ok());
        let bad = ControllerConfig {
            eps1: 0.6,
            ..ControllerConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ControllerConfig {
            eta: 0.0,
            ..ControllerConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    fn small_platform() -> Platform {
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 0.5, 0.4, 0.3, 0.0, 0.6, 0.5, 0.5, 0.0]);
        let params = FjParams::new(
            a,
            v(&[0.2, 0.3, 0.1]),
            v(&[0.3, 0.1, 0.4]),
            v(&[0.6, -0.2, -0.8]),
        )
        .unwrap();
        Platform::new(
            params,
            ClickModel(vec![
                ClickBehaviour::ExtremityBias,
                ClickBehaviour::ProximityBias,
                ClickBehaviour::ExtremityBias,
            ]),
            v(&[0.6, -0.2, -0.8]),
        )
        .unwrap()
    }

    #[test]
    fn zero_step_size_freezes_positions() {
        let platform = small_platform();
        let h = fj_sensitivity(&platform);
        let config = ControllerConfig {
            eta: 1e-300,
            sigma_pe: 0.0,
            period: 10,
            ..ControllerConfig::default()
        };
        let mut policy = OfoPolicy::new(
            OpinionSource::Truth,
            SensitivitySource::Known(h),
            GradientSource::Analytic(&platform.clicks),
            config,
            2000,
            false,
            1,
        )
        .unwrap();
        let traj = simulate(&platform, &mut policy, &config, 2000, 1).unwrap();
        assert!(traj.positions.iter().all(|&p| p.abs() < 1e-250));
        let steady = platform.params.steady_state_map().unwrap().apply(&DVector::zeros(3));
        assert!((traj.final_opinions() - steady).amax() < 1e-9);
    }

    fn fj_sensitivity(platform: &Platform) -> DMatrix<f64> {
        crate::platform::fj_true_sensitivity(&platform.params).unwrap()
    }

    #[test]
    fn positions_constant_between_triggers_and_in_box() {
        let platform = small_platform();
        let config = ControllerConfig {
            eta: 0.5,
            period: 7,
            ..ControllerConfig::default()
        };
        let filter = SensitivityFilter::new(3, 10.0).unwrap();
        let mut policy = OfoPolicy::new(
            OpinionSource::Truth,
            SensitivitySource::Kalman(filter),
            GradientSource::Analytic(&platform.clicks),
            config,
            500,
            true,
            4,
        )
        .unwrap();
        let traj = simulate(&platform, &mut policy, &config, 500, 4).unwrap();
        assert!(traj.positions.iter().all(|p| p.abs() <= 1.0));
        for k in 1..traj.horizon {
            if !trigger(k - 1, config.period) {
                assert_eq!(traj.positions_at(k), traj.positions_at(k - 1));
            }
        }
        // the sensitivity estimate only changes at triggers
        assert_eq!(traj.triggers.len(), traj.trigger_log.instants.len());
        assert_eq!(traj.trigger_log.instants[0], 7);
    }

    #[test]
    fn same_seed_same_trajectory() {
        let platform = small_platform();
        let config = ControllerConfig {
            period: 5,
            ..ControllerConfig::default()
        };
        let run = || {
            let filter = SensitivityFilter::new(3, 10.0).unwrap();
            let mut policy = OfoPolicy::new(
                OpinionSource::Truth,
                SensitivitySource::Kalman(filter),
                GradientSource::Analytic(&platform.clicks),
                config,
                300,
                true,
                42,
            )
            .unwrap();
            let traj = simulate(&platform, &mut policy, &config, 300, 42).unwrap();
            let mut bytes = Vec::new();
            traj.write_steps_csv(&mut bytes).unwrap();
            traj.write_triggers_csv(&mut bytes).unwrap();
            bytes
        };
        assert_eq!(run(), run());
    }
}
