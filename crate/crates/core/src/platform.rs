//! The social platform: extended Friedkin–Johnsen opinion dynamics driven by
//! recommendations, its affine steady-state map, and stochastic clicking.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

const POWER_ITERATIONS: usize = 500;
const POWER_TOLERANCE: f64 = 1e-9;
const RANGE_SLACK: f64 = 1e-12;

/// Parameters of the extended Friedkin–Johnsen model
/// `x' = (I - Γp - Γd) A x + Γp p + Γd d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FjParamsRepr", into = "FjParamsRepr")]
pub struct FjParams {
    adjacency: DMatrix<f64>,
    gamma_p: DVector<f64>,
    gamma_d: DVector<f64>,
    influence: DVector<f64>,
}

/// Plain row-major form used in config and artifact files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FjParamsRepr {
    pub adjacency: Vec<Vec<f64>>,
    pub gamma_p: Vec<f64>,
    pub gamma_d: Vec<f64>,
    pub influence: Vec<f64>,
}

impl TryFrom<FjParamsRepr> for FjParams {
    type Error = Error;

    fn try_from(repr: FjParamsRepr) -> Result<Self> {
        let n = repr.adjacency.len();
        for row in &repr.adjacency {
            check_len(n, row.len(), "adjacency row")?;
        }
        let adjacency = DMatrix::from_fn(n, n, |i, j| repr.adjacency[i][j]);
        FjParams::new(
            adjacency,
            DVector::from_vec(repr.gamma_p),
            DVector::from_vec(repr.gamma_d),
            DVector::from_vec(repr.influence),
        )
    }
}

impl From<FjParams> for FjParamsRepr {
    fn from(params: FjParams) -> Self {
        let n = params.n();
        FjParamsRepr {
            adjacency: (0..n)
                .map(|i| (0..n).map(|j| params.adjacency[(i, j)]).collect())
                .collect(),
            gamma_p: params.gamma_p.iter().copied().collect(),
            gamma_d: params.gamma_d.iter().copied().collect(),
            influence: params.influence.iter().copied().collect(),
        }
    }
}

impl FjParams {
    /// Builds a validated parameter set.
    ///
    /// Requires `A >= 0` with row sums at most one, `0 < Γp`, `0 <= Γd`,
    /// `Γp + Γd <= 1`, `d` in `[-1, 1]`, and a spectral radius of
    /// `(I - Γp - Γd) A` strictly below one.
    pub fn new(
        adjacency: DMatrix<f64>,
        gamma_p: DVector<f64>,
        gamma_d: DVector<f64>,
        influence: DVector<f64>,
    ) -> Result<Self> {
        let params = Self::new_unchecked(adjacency, gamma_p, gamma_d, influence)?;
        params.validate()?;
        Ok(params)
    }

    /// Builds a parameter set checking only dimensions. Degenerate plants
    /// (frozen dynamics, zero susceptibility) are useful in tests.
    pub fn new_unchecked(
        adjacency: DMatrix<f64>,
        gamma_p: DVector<f64>,
        gamma_d: DVector<f64>,
        influence: DVector<f64>,
    ) -> Result<Self> {
        let n = adjacency.nrows();
        check_len(n, adjacency.ncols(), "adjacency columns")?;
        check_len(n, gamma_p.len(), "gamma_p")?;
        check_len(n, gamma_d.len(), "gamma_d")?;
        check_len(n, influence.len(), "external influence")?;
        Ok(Self {
            adjacency,
            gamma_p,
            gamma_d,
            influence,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(Error::InvalidParameter("empty population".into()));
        }
        for i in 0..n {
            let row = self.adjacency.row(i);
            if row.iter().any(|&a| !(a >= 0.0) || !a.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "adjacency row {i} has a negative or non-finite entry"
                )));
            }
            if row.sum() > 1.0 + RANGE_SLACK {
                return Err(Error::InvalidParameter(format!(
                    "adjacency row {i} sums to {} > 1",
                    row.sum()
                )));
            }
            let (gp, gd) = (self.gamma_p[i], self.gamma_d[i]);
            if !(gp > 0.0) || !(gd >= 0.0) || gp + gd > 1.0 + RANGE_SLACK {
                return Err(Error::InvalidParameter(format!(
                    "user {i}: need 0 < gamma_p, 0 <= gamma_d, gamma_p + gamma_d <= 1 (got {gp}, {gd})"
                )));
            }
            if !(self.influence[i].abs() <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "external influence of user {i} outside [-1, 1]"
                )));
            }
        }
        let rho = spectral_radius(&self.state_matrix());
        if !(rho < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "spectral radius of the state matrix is {rho} >= 1"
            )));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn gamma_p(&self) -> &DVector<f64> {
        &self.gamma_p
    }

    pub fn gamma_d(&self) -> &DVector<f64> {
        &self.gamma_d
    }

    pub fn influence(&self) -> &DVector<f64> {
        &self.influence
    }

    /// `(I - Γp - Γd) A`.
    pub fn state_matrix(&self) -> DMatrix<f64> {
        let mut m = self.adjacency.clone();
        for i in 0..self.n() {
            let keep = 1.0 - self.gamma_p[i] - self.gamma_d[i];
            m.row_mut(i).scale_mut(keep);
        }
        m
    }

    /// `I - (I - Γp - Γd) A`, the matrix inverted by the steady-state map.
    fn system_matrix(&self) -> DMatrix<f64> {
        DMatrix::identity(self.n(), self.n()) - self.state_matrix()
    }

    /// Precomputes the affine steady-state map `h(p) = H p + h0`.
    pub fn steady_state_map(&self) -> Result<SteadyStateMap> {
        let n = self.n();
        let lu = self.system_matrix().lu();
        let gamma_p = DMatrix::from_diagonal(&self.gamma_p);
        let sensitivity = lu
            .solve(&gamma_p)
            .ok_or(Error::Singular("steady-state system matrix"))?;
        let forcing = self.gamma_d.component_mul(&self.influence);
        let offset = lu
            .solve(&forcing)
            .ok_or(Error::Singular("steady-state system matrix"))?;
        if sensitivity.iter().chain(offset.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Singular("steady-state system matrix"));
        }
        debug_assert_eq!(sensitivity.nrows(), n);
        Ok(SteadyStateMap {
            sensitivity,
            offset,
        })
    }
}

/// Perron root estimate of a non-negative matrix.
///
/// Returns the infinity norm directly when it already certifies `< 1`;
/// otherwise runs shifted power iteration and brackets the root with
/// Collatz–Wielandt ratios over the non-negligible entries.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let inf_norm = (0..n)
        .map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if inf_norm < 1.0 {
        return inf_norm;
    }
    let mut v = DVector::from_element(n, 1.0);
    let mut upper = inf_norm;
    for _ in 0..POWER_ITERATIONS {
        let mv = m * &v;
        let floor = v.amax() * 1e-12;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in (0..n).filter(|&i| v[i] > floor) {
            let r = mv[i] / v[i];
            lo = lo.min(r);
            hi = hi.max(r);
        }
        upper = hi;
        if hi - lo < POWER_TOLERANCE {
            break;
        }
        // The identity shift keeps periodic structures from oscillating.
        let w = mv + &v;
        v = &w / w.amax();
    }
    upper
}

/// The affine steady-state map `h(p, d) = H p + h0` of a fixed plant.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateMap {
    sensitivity: DMatrix<f64>,
    offset: DVector<f64>,
}

impl SteadyStateMap {
    pub fn apply(&self, p: &DVector<f64>) -> DVector<f64> {
        &self.sensitivity * p + &self.offset
    }

    /// True sensitivity `∇p h = (I - (I - Γp - Γd) A)^-1 Γp`.
    pub fn sensitivity(&self) -> &DMatrix<f64> {
        &self.sensitivity
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }
}

/// A concrete simulated population: plant parameters, clicking behaviour,
/// and initial opinions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Platform {
    pub params: FjParams,
    pub clicks: ClickModel,
    pub x0: DVector<f64>,
}

impl Platform {
    pub fn new(params: FjParams, clicks: ClickModel, x0: DVector<f64>) -> Result<Self> {
        check_len(params.n(), clicks.n(), "click model")?;
        check_len(params.n(), x0.len(), "initial opinions")?;
        if x0.iter().any(|v| !(v.abs() <= 1.0)) {
            return Err(Error::InvalidParameter("initial opinions outside [-1, 1]".into()));
        }
        Ok(Self { params, clicks, x0 })
    }

    pub fn n(&self) -> usize {
        self.params.n()
    }

    /// Advances the opinions one step under positions `p`.
    pub fn step(&self, x: &DVector<f64>, p: &DVector<f64>) -> DVector<f64> {
        fj_step(x, p, &self.params).expect("platform dimensions are validated at construction")
    }

    /// Draws one click per user for positions `p` and opinions `x`.
    pub fn sample_clicks<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        p: &DVector<f64>,
        x: &DVector<f64>,
    ) -> Vec<u8> {
        self.clicks
            .behaviours()
            .iter()
            .enumerate()
            .map(|(i, b)| sample_click(rng, b.probability(p[i], x[i])))
            .collect()
    }
}

/// One step of the opinion dynamics.
pub fn fj_step(x: &DVector<f64>, p: &DVector<f64>, params: &FjParams) -> Result<DVector<f64>> {
    let n = params.n();
    check_len(n, x.len(), "opinions")?;
    check_len(n, p.len(), "positions")?;
    let mut next = params.adjacency() * x;
    for i in 0..n {
        let (gp, gd) = (params.gamma_p[i], params.gamma_d[i]);
        next[i] = (1.0 - gp - gd) * next[i] + gp * p[i] + gd * params.influence[i];
    }
    debug_assert!(
        next.iter().all(|v| v.abs() <= 1.0 + 1e-9) || x.iter().chain(p.iter()).any(|v| v.abs() > 1.0),
        "opinion left [-1, 1] from in-range inputs"
    );
    Ok(next)
}

/// Steady-state opinions for a constant position vector.
pub fn fj_steady_state(p: &DVector<f64>, params: &FjParams) -> Result<DVector<f64>> {
    check_len(params.n(), p.len(), "positions")?;
    let rhs = params.gamma_p.component_mul(p) + params.gamma_d.component_mul(&params.influence);
    let x = params
        .system_matrix()
        .lu()
        .solve(&rhs)
        .ok_or(Error::Singular("steady-state system matrix"))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("steady-state system matrix"));
    }
    Ok(x)
}

/// Jacobian of the steady-state map with respect to the positions.
pub fn fj_true_sensitivity(params: &FjParams) -> Result<DMatrix<f64>> {
    Ok(params.steady_state_map()?.sensitivity)
}

/// How a user decides to click on a recommended position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClickBehaviour {
    /// `1/2 + 1/2 x p`: engaged by extreme content aligned with the opinion.
    #[serde(rename = "extremity")]
    ExtremityBias,
    /// `1/2 + 1/2 exp(-4 (x - p)^2)`: engaged by content close to the opinion.
    #[serde(rename = "proximity")]
    ProximityBias,
}

const PROXIMITY_RATE: f64 = 4.0;

impl ClickBehaviour {
    pub fn probability(self, p: f64, x: f64) -> f64 {
        match self {
            ClickBehaviour::ExtremityBias => 0.5 + 0.5 * x * p,
            ClickBehaviour::ProximityBias => {
                0.5 + 0.5 * (-PROXIMITY_RATE * (x - p) * (x - p)).exp()
            }
        }
    }

    /// Partial derivative of the click probability in the position.
    pub fn grad_p(self, p: f64, x: f64) -> f64 {
        match self {
            ClickBehaviour::ExtremityBias => 0.5 * x,
            ClickBehaviour::ProximityBias => {
                let u = x - p;
                PROXIMITY_RATE * u * (-PROXIMITY_RATE * u * u).exp()
            }
        }
    }

    /// Partial derivative of the click probability in the opinion.
    pub fn grad_x(self, p: f64, x: f64) -> f64 {
        match self {
            ClickBehaviour::ExtremityBias => 0.5 * p,
            ClickBehaviour::ProximityBias => -self.grad_p(p, x),
        }
    }

    /// Lipschitz constant in the opinion over `[-1, 1]^2`.
    pub fn lipschitz_x(self) -> f64 {
        match self {
            ClickBehaviour::ExtremityBias => 0.5,
            // max of |4u exp(-4u^2)| at u = 1/sqrt(8)
            ClickBehaviour::ProximityBias => {
                PROXIMITY_RATE / 8f64.sqrt() * (-0.5f64).exp()
            }
        }
    }
}

/// Per-user clicking behaviour of the population.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClickModel(pub Vec<ClickBehaviour>);

impl ClickModel {
    pub fn n(&self) -> usize {
        self.0.len()
    }

    pub fn behaviours(&self) -> &[ClickBehaviour] {
        &self.0
    }

    pub fn probabilities(&self, p: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.n(),
            self.0
                .iter()
                .enumerate()
                .map(|(i, b)| b.probability(p[i], x[i])),
        )
    }

    pub fn lipschitz_x(&self) -> f64 {
        self.0.iter().map(|b| b.lipschitz_x()).fold(0.0, f64::max)
    }
}

pub fn click_probability(behaviour: ClickBehaviour, p: f64, x: f64) -> f64 {
    behaviour.probability(p, x)
}

/// Bernoulli draw. Always consumes exactly one uniform so that paired runs
/// stay aligned on the same random stream.
pub fn sample_click<R: Rng + ?Sized>(rng: &mut R, prob: f64) -> u8 {
    let u: f64 = rng.random();
    u8::from(u < prob)
}

/// Per-user fraction of clicks over a window of click vectors.
pub fn ctr_window<C: AsRef<[u8]>>(clicks: &[C]) -> Result<DVector<f64>> {
    let first = clicks.first().ok_or(Error::EmptyWindow)?;
    let n = first.as_ref().len();
    let mut sums = DVector::zeros(n);
    for c in clicks {
        let c = c.as_ref();
        check_len(n, c.len(), "click vector")?;
        for (s, &ci) in sums.iter_mut().zip(c) {
            *s += f64::from(ci);
        }
    }
    Ok(sums / clicks.len() as f64)
}
