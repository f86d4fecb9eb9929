//! Online learning of the steady-state input-output sensitivity with a
//! Kalman filter over its column-stacked vectorization.
//!
//! The sensitivity is modelled as a random walk `ℓ' = ℓ + w` observed
//! through `Δx = (Δpᵀ ⊗ I) ℓ + v`, with `w ~ N(0, σq² I)` and
//! `v ~ N(0, σr² I)`. Updates only happen at trigger instants.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Fallback process-noise level when the estimate has no positive entry.
pub const SIGMA_Q_FLOOR: f64 = 1e-4;
/// Search interval for the measurement-noise level.
pub const SIGMA_R_RANGE: (f64, f64) = (1e-4, 2.0);
pub const DEFAULT_TUNING_DIVISOR: f64 = 10.0;
const PSD_TOLERANCE: f64 = 1e-9;

/// `true` iff `k` is a positive multiple of `period`.
pub fn trigger(k: usize, period: usize) -> bool {
    period >= 1 && k > 0 && k.is_multiple_of(period)
}

/// Record of the trigger instants seen so far.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerLog {
    pub period: usize,
    pub instants: Vec<usize>,
}

impl TriggerLog {
    pub fn new(period: usize) -> Self {
        Self {
            period,
            instants: Vec::new(),
        }
    }

    /// Returns whether `k` triggers, appending it if so.
    pub fn check(&mut self, k: usize) -> bool {
        let fired = trigger(k, self.period);
        if fired {
            self.instants.push(k);
        }
        fired
    }

    pub fn last(&self) -> Option<usize> {
        self.instants.last().copied()
    }
}

/// Column-stacked vectorization of a square matrix.
pub fn vec_sensitivity(h: &DMatrix<f64>) -> DVector<f64> {
    // nalgebra stores matrices column-major
    DVector::from_column_slice(h.as_slice())
}

/// Inverse of [`vec_sensitivity`].
pub fn unvec_sensitivity(ell: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = (ell.len() as f64).sqrt().round() as usize;
    check_len(n * n, ell.len(), "vectorized sensitivity (must be n^2)")?;
    Ok(DMatrix::from_column_slice(n, n, ell.as_slice()))
}

/// `Δpᵀ ⊗ I_n`, the `n x n²` regressor that maps `vec(H)` to `H Δp`.
pub fn regressor(delta_p: &DVector<f64>) -> DMatrix<f64> {
    let n = delta_p.len();
    let mut m = DMatrix::zeros(n, n * n);
    for j in 0..n {
        for r in 0..n {
            m[(r, j * n + r)] = delta_p[j];
        }
    }
    m
}

/// Process-noise level `min_{ℓ_i > 0} ℓ_i / M`, or [`SIGMA_Q_FLOOR`] when no
/// entry is positive.
pub fn tune_sigma_q(ell_hat: &DVector<f64>, divisor: f64) -> f64 {
    let min_positive = ell_hat
        .iter()
        .copied()
        .filter(|&v| v > 0.0)
        .fold(f64::INFINITY, f64::min);
    if min_positive.is_finite() {
        min_positive / divisor
    } else {
        SIGMA_Q_FLOOR
    }
}

/// Log-likelihood (up to a constant) of an innovation whose covariance has
/// eigenvalues `lambda` and projections `proj_sq = (uᵀν)²`, at noise level `sigma`.
fn innovation_log_likelihood(lambda: &[f64], proj_sq: &[f64], sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    -0.5 * lambda
        .iter()
        .zip(proj_sq)
        .map(|(l, a)| {
            let v = l.max(0.0) + s2;
            v.ln() + a / v
        })
        .sum::<f64>()
}

/// Kalman state over `vec(∇p h)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityFilter {
    ell_hat: DVector<f64>,
    sigma: DMatrix<f64>,
    sigma_q: f64,
    sigma_r: f64,
    divisor: f64,
}

impl SensitivityFilter {
    /// Starts from `ℓ̂ = 0.5 vec(I)` and `Σ = I`.
    pub fn new(n: usize, divisor: f64) -> Result<Self> {
        let ell_hat = vec_sensitivity(&(DMatrix::identity(n, n) * 0.5));
        let sigma_q = tune_sigma_q(&ell_hat, divisor);
        Self::with_state(ell_hat, DMatrix::identity(n * n, n * n), sigma_q, 1.0, divisor)
    }

    pub fn with_state(
        ell_hat: DVector<f64>,
        sigma: DMatrix<f64>,
        sigma_q: f64,
        sigma_r: f64,
        divisor: f64,
    ) -> Result<Self> {
        let n2 = ell_hat.len();
        unvec_sensitivity(&ell_hat)?;
        check_len(n2, sigma.nrows(), "covariance rows")?;
        check_len(n2, sigma.ncols(), "covariance columns")?;
        if !(sigma_q > 0.0) || !(sigma_r > 0.0) {
            return Err(Error::InvalidParameter("noise levels must be positive".into()));
        }
        if !(divisor > 0.0) {
            return Err(Error::InvalidParameter("tuning divisor must be positive".into()));
        }
        Ok(Self {
            ell_hat,
            sigma,
            sigma_q,
            sigma_r,
            divisor,
        })
    }

    pub fn n(&self) -> usize {
        (self.ell_hat.len() as f64).sqrt().round() as usize
    }

    pub fn ell_hat(&self) -> &DVector<f64> {
        &self.ell_hat
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn sigma_q(&self) -> f64 {
        self.sigma_q
    }

    pub fn sigma_r(&self) -> f64 {
        self.sigma_r
    }

    pub fn set_noise(&mut self, sigma_q: f64, sigma_r: f64) {
        self.sigma_q = sigma_q;
        self.sigma_r = sigma_r;
    }

    /// Current sensitivity estimate `Ĥ`.
    pub fn sensitivity(&self) -> DMatrix<f64> {
        unvec_sensitivity(&self.ell_hat).expect("state length is n^2 by construction")
    }

    fn check_deltas(&self, delta_x_hat: &DVector<f64>, delta_p: &DVector<f64>) -> Result<()> {
        let n = self.n();
        check_len(n, delta_x_hat.len(), "opinion change")?;
        check_len(n, delta_p.len(), "position change")
    }

    /// Measurement-noise level maximising the Gaussian likelihood of the
    /// innovation `Δx̂ - Δp̃ ℓ̂` under covariance `Δp̃ Σ Δp̃ᵀ + σr² I`.
    pub fn tune_sigma_r(&self, delta_x_hat: &DVector<f64>, delta_p: &DVector<f64>) -> Result<f64> {
        self.check_deltas(delta_x_hat, delta_p)?;
        let h = regressor(delta_p);
        let innovation = delta_x_hat - &h * &self.ell_hat;
        let s0 = &h * &self.sigma * h.transpose();
        let s0 = (&s0 + s0.transpose()) * 0.5;
        let eig = SymmetricEigen::new(s0);
        let lambda: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        let proj_sq: Vec<f64> = eig
            .eigenvectors
            .column_iter()
            .map(|u| u.dot(&innovation).powi(2))
            .collect();
        Ok(maximize_log_scale(
            |s| innovation_log_likelihood(&lambda, &proj_sq, s),
            SIGMA_R_RANGE,
        ))
    }

    /// One posterior update with the current `σq`, `σr`.
    pub fn kf_update(&mut self, delta_x_hat: &DVector<f64>, delta_p: &DVector<f64>) -> Result<()> {
        self.check_deltas(delta_x_hat, delta_p)?;
        let n = self.n();
        let h = regressor(delta_p);
        let sigma_ht = &self.sigma * h.transpose();
        let mut innovation_cov = &h * &sigma_ht;
        for i in 0..n {
            innovation_cov[(i, i)] += self.sigma_r * self.sigma_r;
        }
        let chol = innovation_cov
            .cholesky()
            .ok_or(Error::Singular("innovation covariance"))?;
        // K = Σ Hᵀ S⁻¹, computed as (S⁻¹ H Σ)ᵀ since S and Σ are symmetric.
        let gain = chol.solve(&sigma_ht.transpose()).transpose();
        let innovation = delta_x_hat - &h * &self.ell_hat;
        self.ell_hat += &gain * innovation;
        let correction = &gain * &h * &self.sigma;
        self.sigma -= correction;
        let q = self.sigma_q * self.sigma_q;
        for i in 0..n * n {
            self.sigma[(i, i)] += q;
        }
        self.condition_covariance();
        if self.ell_hat.iter().chain(self.sigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Singular("filter state became non-finite"));
        }
        Ok(())
    }

    /// Tunes `σq`, `σr` from the current state and measurement, then updates.
    pub fn observe(&mut self, delta_x_hat: &DVector<f64>, delta_p: &DVector<f64>) -> Result<()> {
        self.sigma_q = tune_sigma_q(&self.ell_hat, self.divisor);
        self.sigma_r = self.tune_sigma_r(delta_x_hat, delta_p)?;
        self.kf_update(delta_x_hat, delta_p)
    }

    /// Symmetrizes `Σ` and floors negative eigenvalues if it drifted.
    fn condition_covariance(&mut self) {
        let sym = (&self.sigma + self.sigma.transpose()) * 0.5;
        self.sigma = sym;
        let eig = SymmetricEigen::new(self.sigma.clone());
        if eig.eigenvalues.min() < -PSD_TOLERANCE {
            let floored = eig.eigenvalues.map(|v| v.max(0.0));
            let v = &eig.eigenvectors;
            let rebuilt = v * DMatrix::from_diagonal(&floored) * v.transpose();
            self.sigma = (&rebuilt + rebuilt.transpose()) * 0.5;
        }
    }
}

/// Maximises a 1-D function over `[lo, hi]` on a log scale: a dense grid
/// scan followed by golden-section refinement around the best grid point.
fn maximize_log_scale(f: impl Fn(f64) -> f64, (lo, hi): (f64, f64)) -> f64 {
    const GRID: usize = 400;
    let (a, b) = (lo.ln(), hi.ln());
    let at = |t: f64| f(t.exp());
    let step = (b - a) / GRID as f64;
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for i in 0..=GRID {
        let v = at(a + step * i as f64);
        if v > best_val {
            best_val = v;
            best = i;
        }
    }
    let mut left = a + step * best.saturating_sub(1) as f64;
    let mut right = (a + step * (best + 1) as f64).min(b);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = right - ratio * (right - left);
    let mut d = left + ratio * (right - left);
    let (mut fc, mut fd) = (at(c), at(d));
    for _ in 0..100 {
        if fc > fd {
            right = d;
            d = c;
            fd = fc;
            c = right - ratio * (right - left);
            fc = at(c);
        } else {
            left = c;
            c = d;
            fc = fd;
            d = left + ratio * (right - left);
            fd = at(d);
        }
        if right - left < 1e-12 {
            break;
        }
    }
    let refined = 0.5 * (left + right);
    let candidate = if at(refined) >= best_val {
        refined
    } else {
        a + step * best as f64
    };
    candidate.exp().clamp(lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn scalar_filter(ell: f64, sigma: f64, sigma_q: f64, sigma_r: f64) -> SensitivityFilter {
        SensitivityFilter::with_state(
            DVector::from_element(1, ell),
            DMatrix::from_element(1, 1, sigma),
            sigma_q,
            sigma_r,
            10.0,
        )
        .unwrap()
    }

    #[test]
    fn trigger_schedule() {
        assert!(trigger(60, 60));
        assert!(!trigger(61, 60));
        assert!(!trigger(0, 60));
        assert!(trigger(120, 60));
        let mut log = TriggerLog::new(3);
        let fired: Vec<usize> = (0..10).filter(|&k| log.check(k)).collect();
        assert_eq!(fired, vec![3, 6, 9]);
        assert_eq!(log.instants, fired);
    }

    #[test]
    fn scalar_hand_computed_update() {
        let mut f = scalar_filter(0.5, 1.0, 0.1, 1.0);
        f.kf_update(&DVector::from_element(1, 0.8), &DVector::from_element(1, 1.0))
            .unwrap();
        assert!((f.ell_hat()[0] - 0.65).abs() < 1e-12);
        assert!((f.covariance()[(0, 0)] - 0.51).abs() < 1e-12);
    }

    #[test]
    fn zero_innovation_keeps_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 3;
        let mut f = SensitivityFilter::new(n, 10.0).unwrap();
        let dp = DVector::from_iterator(n, (0..n).map(|_| rng.random_range(-1.0..1.0)));
        let dx = f.sensitivity() * &dp;
        let before = f.ell_hat().clone();
        f.kf_update(&dx, &dp).unwrap();
        assert!((f.ell_hat() - before).amax() < 1e-15);
    }

    #[test]
    fn regressor_matches_dense_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 4;
        let h = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let dp = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let via_kron = regressor(&dp) * vec_sensitivity(&h);
        assert!((via_kron - &h * &dp).amax() < 1e-14);
    }

    #[test]
    fn vec_conventions() {
        let ell = DVector::from_vec(vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(unvec_sensitivity(&ell).unwrap(), DMatrix::identity(2, 2));
        let f = SensitivityFilter::new(3, 10.0).unwrap();
        assert_eq!(f.sensitivity(), DMatrix::identity(3, 3) * 0.5);
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(vec_sensitivity(&m).as_slice(), &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(unvec_sensitivity(&vec_sensitivity(&m)).unwrap(), m);
        assert!(unvec_sensitivity(&DVector::zeros(5)).is_err());
    }

    #[test]
    fn sigma_q_heuristic() {
        let ell = DVector::from_vec(vec![0.5, 0.0, 0.2]);
        assert!((tune_sigma_q(&ell, 10.0) - 0.02).abs() < 1e-15);
        assert_eq!(tune_sigma_q(&DVector::zeros(4), 10.0), SIGMA_Q_FLOOR);
        assert_eq!(tune_sigma_q(&DVector::from_element(2, -0.3), 10.0), SIGMA_Q_FLOOR);
    }

    #[test]
    fn sigma_r_scalar_closed_form() {
        let f = scalar_filter(0.0, 0.0, 0.1, 1.0);
        let dp = DVector::from_element(1, 1.0);
        let sr = f.tune_sigma_r(&DVector::from_element(1, 0.37), &dp).unwrap();
        assert!((sr - 0.37).abs() < 1e-6, "{sr}");
        let sr = f.tune_sigma_r(&DVector::from_element(1, 0.0), &dp).unwrap();
        assert!((sr - SIGMA_R_RANGE.0).abs() < 1e-12, "{sr}");
        let sr = f.tune_sigma_r(&DVector::from_element(1, 5.0), &dp).unwrap();
        assert!((sr - SIGMA_R_RANGE.1).abs() < 1e-12, "{sr}");
    }

    /// Log-likelihood via a dense determinant and inverse.
    fn dense_log_likelihood(f: &SensitivityFilter, dx: &DVector<f64>, dp: &DVector<f64>, sr: f64) -> f64 {
        let h = regressor(dp);
        let nu = dx - &h * f.ell_hat();
        let n = dx.len();
        let s = &h * f.covariance() * h.transpose() + DMatrix::identity(n, n) * (sr * sr);
        let inv = s.clone().try_inverse().unwrap();
        -0.5 * (s.determinant().ln() + (nu.transpose() * inv * &nu)[(0, 0)])
    }

    #[test]
    fn sigma_r_beats_grid_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 3;
        for _ in 0..5 {
            let a = DMatrix::from_fn(n * n, n * n, |_, _| rng.random_range(-0.3..0.3));
            let sigma = &a * a.transpose();
            let ell = DVector::from_fn(n * n, |_, _| rng.random_range(0.0..0.5));
            let f = SensitivityFilter::with_state(ell, sigma, 0.01, 0.5, 10.0).unwrap();
            let dp = DVector::from_fn(n, |_, _| rng.random_range(-0.2..0.2));
            let dx = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
            let sr = f.tune_sigma_r(&dx, &dp).unwrap();
            let best = dense_log_likelihood(&f, &dx, &dp, sr);
            for i in 0..50 {
                let cand = SIGMA_R_RANGE.0 + (SIGMA_R_RANGE.1 - SIGMA_R_RANGE.0) * i as f64 / 49.0;
                assert!(best >= dense_log_likelihood(&f, &dx, &dp, cand) - 1e-9);
            }
        }
    }

    /// Update-then-predict Kalman step written with explicit inverses.
    fn textbook_step(
        x: &DVector<f64>,
        p: &DMatrix<f64>,
        z: &DVector<f64>,
        obs: &DMatrix<f64>,
        q: f64,
        r: f64,
    ) -> (DVector<f64>, DMatrix<f64>) {
        let m = obs.nrows();
        let s = obs * p * obs.transpose() + DMatrix::identity(m, m) * r;
        let k = p * obs.transpose() * s.try_inverse().unwrap();
        let x_new = x + &k * (z - obs * x);
        let eye = DMatrix::identity(p.nrows(), p.nrows());
        let p_new = (eye.clone() - &k * obs) * p + eye * q;
        (x_new, p_new)
    }

    #[test]
    fn matches_textbook_kalman_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 2;
        let mut f = SensitivityFilter::new(n, 10.0).unwrap();
        let mut x = f.ell_hat().clone();
        let mut p = f.covariance().clone();
        for _ in 0..10 {
            let dp = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let dx = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let (sq, sr) = (0.03, 0.2);
            f.set_noise(sq, sr);
            f.kf_update(&dx, &dp).unwrap();
            let (x2, p2) = textbook_step(&x, &p, &dx, &regressor(&dp), sq * sq, sr * sr);
            x = x2;
            p = (&p2 + p2.transpose()) * 0.5;
            assert!((f.ell_hat() - &x).amax() < 1e-10);
            assert!((f.covariance() - &p).amax() < 1e-10);
        }
    }

    #[test]
    fn huge_measurement_noise_freezes_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 3;
        let mut f = SensitivityFilter::new(n, 10.0).unwrap();
        f.set_noise(0.01, 1e9f64.sqrt());
        let before = f.ell_hat().clone();
        let dp = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let dx = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        f.kf_update(&dx, &dp).unwrap();
        assert!((f.ell_hat() - before).norm() <= 1e-6);
    }

    #[test]
    fn covariance_stays_symmetric_psd_over_many_updates() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 3;
        let mut f = SensitivityFilter::new(n, 10.0).unwrap();
        for _ in 0..1000 {
            let scale = 10f64.powf(rng.random_range(-3.0..0.0));
            let dp = DVector::from_fn(n, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
            let dx = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
            f.observe(&dx, &dp).unwrap();
            let s = f.covariance();
            assert!((s - s.transpose()).amax() <= 1e-9);
            assert!(SymmetricEigen::new(s.clone()).eigenvalues.min() >= -1e-9);
            assert!(f.sigma_q() > 0.0 && f.sigma_r() > 0.0);
        }
    }

    proptest! {
        #[test]
        fn vec_round_trip(values in proptest::collection::vec(-5.0f64..5.0, 9)) {
            let m = DMatrix::from_row_slice(3, 3, &values);
            prop_assert_eq!(unvec_sensitivity(&vec_sensitivity(&m)).unwrap(), m);
        }
    }
}
