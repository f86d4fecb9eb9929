use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use sha2::{Digest, Sha256};

use super::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::platform::{ClickBehaviour, ClickModel, FjParams, Platform};

const MAX_DRAWS: usize = 10;

fn draw<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Result<Platform> {
    let n = config.n;
    let mut a = DMatrix::from_fn(n, n, |_, _| {
        let keep = rng.random::<f64>() >= config.sparsity;
        let value: f64 = rng.random();
        if keep {
            value
        } else {
            0.0
        }
    });
    for i in 0..n {
        let scale = (a.row(i).sum() * (1.0 + config.row_slack)).max(1.0);
        a.row_mut(i).scale_mut(1.0 / scale);
    }
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0));
    let gamma_d = x0.abs() * 0.5;
    let (lo, hi) = config.gamma_p_range;
    let gamma_p = DVector::from_fn(n, |_, _| rng.random_range(lo..=hi));
    let mut behaviours: Vec<ClickBehaviour> = (0..n)
        .map(|i| {
            if i < config.behaviour_split {
                ClickBehaviour::ExtremityBias
            } else {
                ClickBehaviour::ProximityBias
            }
        })
        .collect();
    behaviours.shuffle(rng);
    let params = FjParams::new(a, gamma_p, gamma_d, x0.clone())?;
    Platform::new(params, ClickModel(behaviours), x0)
}

/// Random population: sparse non-negative influence weights with row sums
/// strictly below one, `d = x⁰ ~ U[-1, 1]`, `Γd = ½|x⁰|`, uniform `Γp`, and
/// `behaviour_split` extremity-biased users at random positions.
pub fn generate_scenario<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Result<Platform> {
    let mut last = None;
    for _ in 0..MAX_DRAWS {
        match draw(config, rng) {
            Ok(p) => return Ok(p),
            Err(e) => last = Some(e),
        }
    }
    Err(Error::InvalidParameter(format!(
        "no valid scenario in {MAX_DRAWS} draws: {}",
        last.map(|e| e.to_string()).unwrap_or_default()
    )))
}

/// SHA-256 over the canonical JSON form of the population.
pub fn scenario_hash(platform: &Platform) -> String {
    let json = serde_json::to_vec(platform).expect("platform serializes");
    hex::encode(Sha256::digest(&json))
}
