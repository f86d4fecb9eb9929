use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, TrainParams, TrainReport};
use super::training::TrainingSet;
use crate::error::{check_len, Error, Result};
use crate::seeds::{rng_from, stream};

/// Hidden width of the clicking networks.
pub const CLICKING_HIDDEN: [usize; 3] = [5, 5, 5];

const OPINION_KIND: u64 = 0;
const CLICKING_KIND: u64 = 1;
const LOCAL_KIND: u64 = 2;

pub fn opinion_architecture(n: usize) -> Vec<usize> {
    vec![n + 1, n + 2, 1]
}

pub fn clicking_architecture() -> Vec<usize> {
    let mut sizes = vec![2];
    sizes.extend(CLICKING_HIDDEN);
    sizes.push(1);
    sizes
}

/// Architecture of the network-agnostic opinion nets: inputs `(p_i, y_i)`.
pub fn local_opinion_architecture() -> Vec<usize> {
    vec![2, 3, 1]
}

/// A trained per-user network with its training diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedNet {
    pub net: Mlp,
    pub report: TrainReport,
    /// Largest absolute error on held-out samples, if any were given.
    pub test_error: Option<f64>,
}

/// Per-user opinion estimators `β̂_i(y_i, p)` and clicking estimators
/// `ĝ_i(p_i, x_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorBank {
    pub opinion_nets: Vec<FittedNet>,
    pub clicking_nets: Vec<FittedNet>,
}

/// Network-agnostic opinion estimators `β̂_i(y_i, p_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalOpinionBank {
    pub nets: Vec<FittedNet>,
}

pub(crate) type DataFn = fn(&TrainingSet, usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>);

#[allow(clippy::too_many_arguments)]
fn fit_user(
    sizes: &[usize],
    data: DataFn,
    train: &TrainingSet,
    test: Option<&TrainingSet>,
    user: usize,
    params: &TrainParams,
    seed: u64,
    kind: u64,
) -> Result<FittedNet> {
    let mut rng = rng_from(seed, &[stream::NET_INIT, kind, user as u64]);
    let mut net = Mlp::random(sizes, &mut rng)?;
    let (inputs, targets) = data(train, user);
    let report = net.train(&inputs, &targets, params, &mut rng)?;
    let test_error = test.filter(|t| !t.is_empty()).map(|t| {
        let (inputs, targets) = data(t, user);
        net.max_abs_error(&inputs, &targets)
    });
    Ok(FittedNet {
        net,
        report,
        test_error,
    })
}

#[allow(clippy::too_many_arguments)]
fn fit_all(
    n: usize,
    sizes: &[usize],
    data: DataFn,
    train: &TrainingSet,
    test: Option<&TrainingSet>,
    params: &TrainParams,
    seed: u64,
    kind: u64,
) -> Result<Vec<FittedNet>> {
    (0..n)
        .into_par_iter()
        .map(|i| fit_user(sizes, data, train, test, i, params, seed, kind))
        .collect()
}

impl EstimatorBank {
    /// Trains all `2n` networks. Each net draws its initialization from its
    /// own stream of `seed`, so the result does not depend on scheduling.
    pub fn train(
        train: &TrainingSet,
        test: Option<&TrainingSet>,
        params: &TrainParams,
        seed: u64,
    ) -> Result<Self> {
        let n = train.n();
        let opinion_nets = fit_all(
            n,
            &opinion_architecture(n),
            TrainingSet::opinion_data,
            train,
            test,
            params,
            seed,
            OPINION_KIND,
        )?;
        let clicking_nets = fit_all(
            n,
            &clicking_architecture(),
            TrainingSet::clicking_data,
            train,
            test,
            params,
            seed,
            CLICKING_KIND,
        )?;
        let bank = Self {
            opinion_nets,
            clicking_nets,
        };
        bank.check_architecture()?;
        Ok(bank)
    }

    /// All-zero networks: every raw output is zero.
    pub fn zeros(n: usize) -> Result<Self> {
        let zero = |sizes: Vec<usize>| -> Result<FittedNet> {
            Ok(FittedNet {
                net: Mlp::zeros(&sizes)?,
                report: TrainReport {
                    initial_mse: 0.0,
                    final_mse: 0.0,
                    max_error: 0.0,
                },
                test_error: None,
            })
        };
        Ok(Self {
            opinion_nets: (0..n).map(|_| zero(opinion_architecture(n))).collect::<Result<_>>()?,
            clicking_nets: (0..n).map(|_| zero(clicking_architecture())).collect::<Result<_>>()?,
        })
    }

    pub fn n(&self) -> usize {
        self.opinion_nets.len()
    }

    pub fn check_architecture(&self) -> Result<()> {
        let n = self.n();
        check_len(n, self.clicking_nets.len(), "clicking nets")?;
        let opinion = opinion_architecture(n);
        let clicking = clicking_architecture();
        for f in &self.opinion_nets {
            if f.net.layer_sizes() != opinion {
                return Err(Error::InvalidParameter(format!(
                    "opinion net has widths {:?}, expected {opinion:?}",
                    f.net.layer_sizes()
                )));
            }
        }
        for f in &self.clicking_nets {
            if f.net.layer_sizes() != clicking {
                return Err(Error::InvalidParameter(format!(
                    "clicking net has widths {:?}, expected {clicking:?}",
                    f.net.layer_sizes()
                )));
            }
        }
        Ok(())
    }

    /// `x̂_i = β̂_i(y_i, p)`, clamped to `[-1, 1]`.
    pub fn estimate_opinions(&self, y: &DVector<f64>, p: &DVector<f64>) -> DVector<f64> {
        let n = self.n();
        let mut input: Vec<f64> = p.iter().copied().collect();
        input.push(0.0);
        DVector::from_iterator(
            n,
            self.opinion_nets.iter().enumerate().map(|(i, f)| {
                input[n] = y[i];
                f.net.predict_scalar(&input).clamp(-1.0, 1.0)
            }),
        )
    }

    /// Unclamped clicking estimate of user `i`.
    pub fn raw_ctr(&self, i: usize, p_i: f64, x_i: f64) -> f64 {
        self.clicking_nets[i].net.predict_scalar(&[p_i, x_i])
    }

    /// `ĝ(p, x)`, clamped to `[0, 1]`.
    pub fn estimate_ctr(&self, p: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.n(),
            (0..self.n()).map(|i| self.raw_ctr(i, p[i], x[i]).clamp(0.0, 1.0)),
        )
    }

    pub fn opinion_training_error(&self) -> f64 {
        sup(self.opinion_nets.iter().map(|f| f.report.max_error))
    }

    pub fn clicking_training_error(&self) -> f64 {
        sup(self.clicking_nets.iter().map(|f| f.report.max_error))
    }

    /// Largest absolute output bias of the opinion nets.
    pub fn opinion_output_bias(&self) -> f64 {
        sup(self.opinion_nets.iter().map(|f| f.net.output_bias()[0].abs()))
    }

    pub fn clicking_output_bias(&self) -> f64 {
        sup(self.clicking_nets.iter().map(|f| f.net.output_bias()[0].abs()))
    }
}

impl LocalOpinionBank {
    pub fn train(
        train: &TrainingSet,
        test: Option<&TrainingSet>,
        params: &TrainParams,
        seed: u64,
    ) -> Result<Self> {
        let nets = fit_all(
            train.n(),
            &local_opinion_architecture(),
            TrainingSet::local_opinion_data,
            train,
            test,
            params,
            seed,
            LOCAL_KIND,
        )?;
        Ok(Self { nets })
    }

    pub fn n(&self) -> usize {
        self.nets.len()
    }

    /// `x̂_i = β̂_i(y_i, p_i)`, clamped to `[-1, 1]`.
    pub fn estimate_opinions(&self, y: &DVector<f64>, p: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.n(),
            self.nets
                .iter()
                .enumerate()
                .map(|(i, f)| f.net.predict_scalar(&[p[i], y[i]]).clamp(-1.0, 1.0)),
        )
    }
}

fn sup(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn zero_bank_outputs_zero() {
        let bank = EstimatorBank::zeros(4).unwrap();
        bank.check_architecture().unwrap();
        let y = DVector::from_element(4, 0.7);
        let p = DVector::from_element(4, -0.2);
        assert_eq!(bank.estimate_opinions(&y, &p), DVector::zeros(4));
        assert_eq!(bank.estimate_ctr(&p, &y), DVector::zeros(4));
    }

    #[test]
    fn architectures_match_the_stated_widths() {
        assert_eq!(opinion_architecture(15), vec![16, 17, 1]);
        assert_eq!(clicking_architecture(), vec![2, 5, 5, 5, 1]);
    }

    #[test]
    fn outputs_are_clamped() {
        let mut bank = EstimatorBank::zeros(1).unwrap();
        *bank.opinion_nets[0].net.parameters_mut().last().unwrap() = 1.7;
        *bank.clicking_nets[0].net.parameters_mut().last().unwrap() = -0.05;
        let v = DVector::from_element(1, 0.0);
        assert_eq!(bank.estimate_opinions(&v, &v)[0], 1.0);
        assert_eq!(bank.estimate_ctr(&v, &v)[0], 0.0);
        assert_eq!(bank.raw_ctr(0, 0.0, 0.0), -0.05);
    }

    #[test]
    fn fits_a_noiseless_linear_plant() {
        // x = 0.4 p_0 - 0.2 p_1 + 0.1, y = 1/2 + 1/2 x p (extremity bias)
        let m = 120;
        let n = 2;
        let mut positions = DMatrix::zeros(n, m);
        let mut opinions = DMatrix::zeros(n, m);
        let mut ctr = DMatrix::zeros(n, m);
        for j in 0..m {
            let p0 = -1.0 + 2.0 * ((j * 37) % m) as f64 / m as f64;
            let p1 = -1.0 + 2.0 * ((j * 53 + 11) % m) as f64 / m as f64;
            for i in 0..n {
                let p = [p0, p1];
                let x: f64 = 0.4 * p[0] - 0.2 * p[1] + 0.1 * (i as f64 + 1.0);
                positions[(i, j)] = p[i];
                opinions[(i, j)] = x;
                ctr[(i, j)] = 0.5 + 0.5 * x * p[i];
            }
        }
        let set = TrainingSet::new(positions, opinions, ctr).unwrap();
        let params = TrainParams::default();
        let bank = EstimatorBank::train(&set, None, &params, 3).unwrap();
        for j in (0..m).step_by(17) {
            let p = set.positions.column(j).into_owned();
            let y = set.ctr.column(j).into_owned();
            let xh = bank.estimate_opinions(&y, &p);
            for i in 0..n {
                let err = (xh[i] - set.opinions[(i, j)]).abs();
                assert!(err <= bank.opinion_training_error() + 1e-12);
            }
        }
        assert!(bank.opinion_training_error() < 0.05);
        let again = EstimatorBank::train(&set, None, &params, 3).unwrap();
        assert_eq!(again, bank);
    }
}
