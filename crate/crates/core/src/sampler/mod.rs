//! Parallel-tempered posterior sampler.
//!
//! Chain t targets prior × likelihood^κ_t. Every iteration each chain runs
//! a Gibbs sweep over the coefficients, Metropolis updates of the change
//! points, the hyperparameter updates and one reversible-jump knot move;
//! then one swap between a uniformly chosen pair of adjacent rungs is
//! attempted. Draws are kept from the κ = 1 chain.

mod chain;
mod output;
mod rj;

pub use chain::{design_columns, gibbs_beta, slab_log_odds, update_alpha, update_hypers, Chain};
pub use output::{read_draws, write_diagnostics, write_draws};
pub use rj::{affected_marginal, rj_knot_move, Marginal, RjOutcome};

use crate::error::{Error, Result};
use crate::knot_tree::{KnotTree, MoveKind};
use crate::model::{
    log_prior, n_coefficients, sample_alpha, Dataset, Hyperparameters, ModelState, Signature,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// The twelve-rung ladder used for the simulation studies.
pub fn default_temperatures() -> Vec<f64> {
    [30.0, 24.0, 12.0, 9.0, 5.0, 3.5, 2.0, 1.7, 1.3, 1.2, 1.1, 1.0].iter().map(|d| 1.0 / d).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    /// Total iterations, burn-in included.
    pub n_iters: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Strictly increasing likelihood powers ending at 1.
    pub temperatures: Vec<f64>,
    /// Initial random-walk scale for change points (working units).
    pub alpha_step: f64,
    pub seed: u64,
    /// Absolute standard-error target for orthant probabilities.
    pub orthant_target: f64,
    /// Replace the likelihood by a constant (prior simulation).
    pub flat_likelihood: bool,
    /// Adapt change-point step sizes during burn-in.
    pub adapt: bool,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            n_iters: 50_000,
            burn_in: 10_000,
            thin: 10,
            temperatures: default_temperatures(),
            alpha_step: 0.1,
            seed: 1,
            orthant_target: 1e-4,
            flat_likelihood: false,
            adapt: true,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        let t = &self.temperatures;
        if t.is_empty() {
            return Err(Error::Config("at least one temperature is required".into()));
        }
        if t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("temperatures must be strictly increasing".into()));
        }
        if t[0] <= 0.0 || *t.last().unwrap() != 1.0 {
            return Err(Error::Config("temperatures must lie in (0, 1] and end at 1".into()));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.burn_in > self.n_iters {
            return Err(Error::Config("burn_in exceeds n_iters".into()));
        }
        if !(self.alpha_step >= 0.0 && self.alpha_step.is_finite()) {
            return Err(Error::Config("alpha_step must be nonnegative".into()));
        }
        if !(self.orthant_target > 0.0) {
            return Err(Error::Config("orthant_target must be positive".into()));
        }
        Ok(())
    }
}

/// One retained state of the κ = 1 chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub iteration: usize,
    pub tree: KnotTree,
    pub beta0: f64,
    pub beta: Vec<f64>,
    /// Change points in original predictor units.
    pub alpha: Vec<f64>,
    /// Predictor interval the draw was fitted on.
    pub interval: (f64, f64),
    pub pi: f64,
    pub lambda: f64,
    pub sigma2: f64,
    pub loglik: f64,
    pub logpost: f64,
    pub signature: Signature,
}

impl Draw {
    fn from_chain(iteration: usize, state: &ModelState, data: &Dataset, loglik: f64, logpost: f64) -> Self {
        Self {
            iteration,
            tree: state.tree.clone(),
            beta0: state.beta0,
            beta: state.beta.clone(),
            alpha: state.alpha.iter().map(|&a| data.to_original(a)).collect(),
            interval: data.interval(),
            pi: state.pi,
            lambda: state.lambda,
            sigma2: state.sigma2,
            loglik,
            logpost,
            signature: state.signature(),
        }
    }

    /// Change points back in working units.
    pub fn working_alpha(&self) -> Vec<f64> {
        let (lo, hi) = self.interval;
        self.alpha.iter().map(|&a| (a - lo) / (hi - lo) - 0.5).collect()
    }

    pub fn to_state(&self) -> ModelState {
        ModelState {
            tree: self.tree.clone(),
            beta0: self.beta0,
            beta: self.beta.clone(),
            alpha: self.working_alpha(),
            pi: self.pi,
            lambda: self.lambda,
            sigma2: self.sigma2,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub attempts: u64,
    pub accepts: u64,
}

impl Rate {
    fn record(&mut self, accepted: bool) {
        self.attempts += 1;
        self.accepts += accepted as u64;
    }

    pub fn rate(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.accepts as f64 / self.attempts as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub temperatures: Vec<f64>,
    /// Change-point acceptance per rung.
    pub alpha: Vec<Rate>,
    pub rj_insert: Vec<Rate>,
    pub rj_delete: Vec<Rate>,
    /// Moves rejected because the marginal could not be evaluated.
    pub rj_failures: Vec<u64>,
    /// Swaps between rung i and i + 1.
    pub swaps: Vec<Rate>,
    /// Final change-point step size per rung.
    pub alpha_steps: Vec<f64>,
    /// Tree size of the κ = 1 chain at every retained draw.
    pub tree_size: Vec<usize>,
    pub logpost: Vec<f64>,
}

fn initial_state<R: Rng + ?Sized>(hp: &Hyperparameters, data: &Dataset, rng: &mut R) -> ModelState {
    let tree = KnotTree::root_only();
    let k = n_coefficients(&tree, hp.order);
    let n = data.n().max(1) as f64;
    let mean = data.ys().iter().sum::<f64>() / n;
    let var = data.ys().iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
    ModelState {
        tree,
        beta0: data.ys().first().copied().unwrap_or(0.0),
        beta: vec![0.0; k],
        alpha: sample_alpha(hp, rng),
        pi: hp.nu / (hp.nu + hp.omega),
        lambda: (hp.delta / hp.kappa).max(10.0 * hp.lambda_floor),
        sigma2: if var > 0.0 { var } else { 1.0 },
    }
}

/// Robbins–Monro adaptation target for change-point acceptance.
const ALPHA_TARGET_RATE: f64 = 0.3;

/// Run the tempered sampler; returns the retained draws of the κ = 1 chain.
pub fn run_tempered(data: &Dataset, hp: &Hyperparameters, config: &ChainConfig) -> Result<(Vec<Draw>, Diagnostics)> {
    hp.validate()?;
    config.validate()?;
    data.require(hp.order)?;
    let temps = &config.temperatures;
    let n_chains = temps.len();
    let flat = if config.flat_likelihood { 0.0 } else { 1.0 };
    let mut rngs: Vec<ChaCha8Rng> = (0..=n_chains)
        .map(|t| {
            let mut r = ChaCha8Rng::seed_from_u64(config.seed);
            r.set_stream(t as u64);
            r
        })
        .collect();
    let mut swap_rng = rngs.pop().expect("swap stream");
    let mut chains = Vec::with_capacity(n_chains);
    for (t, rng) in rngs.iter_mut().enumerate() {
        chains.push(Chain::new(initial_state(hp, data, rng), hp, data, temps[t] * flat)?);
    }
    let mut steps = vec![config.alpha_step; n_chains];
    let mut diag = Diagnostics {
        temperatures: temps.clone(),
        alpha: vec![Rate::default(); n_chains],
        rj_insert: vec![Rate::default(); n_chains],
        rj_delete: vec![Rate::default(); n_chains],
        rj_failures: vec![0; n_chains],
        swaps: vec![Rate::default(); n_chains.saturating_sub(1)],
        alpha_steps: vec![],
        tree_size: vec![],
        logpost: vec![],
    };
    let mut lls = vec![0.0; n_chains];
    let mut draws = Vec::new();
    for iter in 0..config.n_iters {
        for t in 0..n_chains {
            let chain = &mut chains[t];
            let rng = &mut rngs[t];
            gibbs_beta(chain, data, hp, rng);
            let acc = update_alpha(chain, data, hp, rng, steps[t])?;
            if hp.h > 0 {
                for i in 0..hp.h {
                    diag.alpha[t].record(i < acc);
                }
                if config.adapt && iter < config.burn_in {
                    let gamma = 1.0 / (iter as f64 + 1.0).powf(0.6);
                    let rate = acc as f64 / hp.h as f64;
                    steps[t] = (steps[t].ln() + gamma * (rate - ALPHA_TARGET_RATE)).exp().clamp(1e-5, 2.0);
                }
            }
            update_hypers(chain, data, hp, rng);
            let out = rj_knot_move(chain, data, hp, config.orthant_target, rng)?;
            match out.kind {
                MoveKind::Insert => diag.rj_insert[t].record(out.accepted),
                MoveKind::Delete => diag.rj_delete[t].record(out.accepted),
            }
            diag.rj_failures[t] += out.failed as u64;
            if iter % 100 == 99 {
                chain.refresh_fitted(data.n());
            }
            lls[t] = chain.loglik(data) * flat;
        }
        if n_chains > 1 {
            let i = swap_rng.random_range(0..n_chains - 1);
            let u: f64 = swap_rng.random();
            let log_a = (temps[i] - temps[i + 1]) * (lls[i + 1] - lls[i]);
            let accepted = u.ln() < log_a;
            if accepted {
                // states move, powers stay with their rung
                chains.swap(i, i + 1);
                chains[i].power = temps[i] * flat;
                chains[i + 1].power = temps[i + 1] * flat;
                lls.swap(i, i + 1);
            }
            diag.swaps[i].record(accepted);
        }
        let kept = iter + 1;
        if kept > config.burn_in && (kept - config.burn_in).is_multiple_of(config.thin) {
            let chain = &chains[n_chains - 1];
            let ll = chain.loglik(data);
            let lp = log_prior(&chain.state, hp) + ll;
            draws.push(Draw::from_chain(kept, &chain.state, data, ll, lp));
            diag.tree_size.push(chain.state.tree.len());
            diag.logpost.push(lp);
        }
    }
    diag.alpha_steps = steps;
    Ok((draws, diag))
}
