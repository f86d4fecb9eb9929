//! Offline data collection: hold a random position for a while, then record
//! the users' rating (final opinion) and their recent click-through ratio.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::platform::Platform;

/// Columns are samples: `positions`, `opinions` and `ctr` are all `n x m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub positions: DMatrix<f64>,
    pub opinions: DMatrix<f64>,
    pub ctr: DMatrix<f64>,
}

impl TrainingSet {
    pub fn new(positions: DMatrix<f64>, opinions: DMatrix<f64>, ctr: DMatrix<f64>) -> Result<Self> {
        let (n, m) = positions.shape();
        check_len(n, opinions.nrows(), "opinion rows")?;
        check_len(n, ctr.nrows(), "ctr rows")?;
        check_len(m, opinions.ncols(), "opinion samples")?;
        check_len(m, ctr.ncols(), "ctr samples")?;
        let in_box = |v: &f64| v.abs() <= 1.0;
        if !positions.iter().all(in_box) || !opinions.iter().all(in_box) {
            return Err(Error::InvalidParameter("training positions/opinions outside [-1, 1]".into()));
        }
        if !ctr.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter("training CTR outside [0, 1]".into()));
        }
        Ok(Self {
            positions,
            opinions,
            ctr,
        })
    }

    pub fn n(&self) -> usize {
        self.positions.nrows()
    }

    pub fn len(&self) -> usize {
        self.positions.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Splits off the first `first` samples.
    pub fn split(&self, first: usize) -> (TrainingSet, TrainingSet) {
        let first = first.min(self.len());
        let rest = self.len() - first;
        let take = |m: &DMatrix<f64>, start: usize, len: usize| m.columns(start, len).into_owned();
        (
            TrainingSet {
                positions: take(&self.positions, 0, first),
                opinions: take(&self.opinions, 0, first),
                ctr: take(&self.ctr, 0, first),
            },
            TrainingSet {
                positions: take(&self.positions, first, rest),
                opinions: take(&self.opinions, first, rest),
                ctr: take(&self.ctr, first, rest),
            },
        )
    }

    /// Network-aware opinion regression data for user `i`:
    /// inputs `(p, y_i)`, targets `x_i`.
    pub fn opinion_data(&self, i: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        (0..self.len())
            .map(|j| {
                let mut input: Vec<f64> = self.positions.column(j).iter().copied().collect();
                input.push(self.ctr[(i, j)]);
                (input, vec![self.opinions[(i, j)]])
            })
            .unzip()
    }

    /// Network-agnostic opinion data for user `i`: inputs `(p_i, y_i)`.
    pub fn local_opinion_data(&self, i: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        (0..self.len())
            .map(|j| {
                (
                    vec![self.positions[(i, j)], self.ctr[(i, j)]],
                    vec![self.opinions[(i, j)]],
                )
            })
            .unzip()
    }

    /// Clicking regression data for user `i`: inputs `(p_i, x_i)`, targets `y_i`.
    pub fn clicking_data(&self, i: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        (0..self.len())
            .map(|j| {
                (
                    vec![self.positions[(i, j)], self.opinions[(i, j)]],
                    vec![self.ctr[(i, j)]],
                )
            })
            .unzip()
    }
}

/// Runs `samples` offline trials of `horizon` steps, each holding a uniformly
/// drawn position; records the final opinions and the click-through ratio
/// over the last `window + 1` steps.
pub fn collect_training_data<R: Rng + ?Sized>(
    platform: &Platform,
    samples: usize,
    horizon: usize,
    window: usize,
    rng: &mut R,
) -> Result<TrainingSet> {
    if window >= horizon {
        return Err(Error::InvalidParameter(format!(
            "CTR window {window} must be shorter than the horizon {horizon}"
        )));
    }
    let n = platform.n();
    let mut positions = DMatrix::zeros(n, samples);
    let mut opinions = DMatrix::zeros(n, samples);
    let mut ctr = DMatrix::zeros(n, samples);
    for j in 0..samples {
        let p = DVector::from_iterator(n, (0..n).map(|_| rng.random_range(-1.0..=1.0)));
        let mut x = platform.x0.clone();
        let mut clicks = DVector::<f64>::zeros(n);
        for k in 0..=horizon {
            if k >= horizon - window {
                for (c, ci) in clicks.iter_mut().zip(platform.sample_clicks(rng, &p, &x)) {
                    *c += f64::from(ci);
                }
            }
            if k < horizon {
                x = platform.step(&x, &p);
            }
        }
        positions.set_column(j, &p);
        opinions.set_column(j, &x);
        ctr.set_column(j, &(clicks / (window + 1) as f64));
    }
    TrainingSet::new(positions, opinions, ctr)
}
