//! Monte-Carlo estimation of the long-run average reward of a finite-memory
//! strategy.
//!
//! Each run draws from its own ChaCha8 stream (seed = master seed, stream =
//! run index), so results do not depend on how rayon schedules the runs.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::chain::ChainError;
use crate::model::{Distr, Pomdp, RewardFn};
use crate::rational;
use crate::strategy::FiniteMemoryStrategy;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimConfig {
    pub steps: usize,
    pub runs: usize,
    pub seed: u64,
    /// Steps discarded before averaging; `None` means steps / 10.
    pub burn_in: Option<usize>,
}

impl SimConfig {
    pub fn new(steps: usize, runs: usize, seed: u64) -> SimConfig {
        SimConfig { steps, runs, seed, burn_in: None }
    }

    pub fn effective_burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.steps / 10)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("steps and runs must be at least 1, and burn-in below steps")]
    BadConfig,
    #[error(transparent)]
    Strategy(#[from] ChainError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimResult {
    pub per_run: Vec<f64>,
    pub mean: f64,
    pub std_error: f64,
    pub min: f64,
    pub max: f64,
}

impl SimResult {
    /// |mean − x| ≤ k·SE, with a tiny absolute slack for a zero SE.
    pub fn within(&self, x: f64, k: f64) -> bool {
        (self.mean - x).abs() <= k * self.std_error + 1e-12
    }
}

type Row = Vec<(usize, f64)>;

struct Tables {
    next: Vec<Row>,
    trans: Vec<Vec<Option<Row>>>,
    reward: Vec<Vec<f64>>,
}

fn to_f64(d: &Distr) -> Row {
    d.entries().iter().map(|(x, p)| (*x, rational::to_f64(p))).collect()
}

fn sample(rng: &mut ChaCha8Rng, d: &[(usize, f64)]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for &(x, p) in d {
        acc += p;
        if u < acc {
            return x;
        }
    }
    d.last().expect("distributions are non-empty").0
}

pub fn simulate(g: &Pomdp, r: &RewardFn, sigma: &FiniteMemoryStrategy, cfg: SimConfig) -> Result<SimResult, SimError> {
    let burn = cfg.effective_burn_in();
    if cfg.steps == 0 || cfg.runs == 0 || burn >= cfg.steps {
        return Err(SimError::BadConfig);
    }
    // The product chain both checks σ against g and surfaces missing
    // updates before any sampling happens.
    crate::chain::product_chain(g, r, sigma)?;
    let na = g.num_actions();
    let tables = Tables {
        next: sigma.next.iter().map(to_f64).collect(),
        trans: (0..g.num_states())
            .map(|s| (0..na).map(|a| g.delta(s, a).map(to_f64)).collect())
            .collect(),
        reward: (0..g.num_states())
            .map(|s| (0..na).map(|a| r.get(s, a).map_or(0.0, rational::to_f64)).collect())
            .collect(),
    };
    let per_run: Vec<f64> = (0..cfg.runs)
        .into_par_iter()
        .map(|run| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(run as u64);
            let (mut s, mut m) = (g.initial(), sigma.initial);
            let mut total = 0.0;
            for step in 0..cfg.steps {
                let a = sample(&mut rng, &tables.next[m]);
                if step >= burn {
                    total += tables.reward[s][a];
                }
                let t = sample(&mut rng, tables.trans[s][a].as_ref().expect("checked by the product chain"));
                let u = sigma.update_for(m, g.obs_of(t), a).expect("checked by the product chain");
                m = sample(&mut rng, &to_f64(u));
                s = t;
            }
            total / (cfg.steps - burn) as f64
        })
        .collect();
    let n = per_run.len() as f64;
    let mean = per_run.iter().sum::<f64>() / n;
    let var = if per_run.len() > 1 { per_run.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    let min = per_run.iter().copied().fold(f64::INFINITY, f64::min);
    let max = per_run.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(SimResult { std_error: (var / n).sqrt(), mean, min, max, per_run })
}
