//! One tempered chain: the parameter state plus the cached design matrix,
//! and the fixed-dimension updates.

use crate::bspline::{LxBasis, MIN_ALPHA_SEPARATION};
use crate::dist::{gamma_ln_pdf, log_norm_cdf, normal_above};
use crate::error::Result;
use crate::model::{gaussian_loglik, knot_vector, sample_beta_prior, Dataset, Hyperparameters, ModelState, SigmaPrior};
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, Normal, StandardNormal};

/// A model state together with everything derived from it that the
/// updates need: the basis, the design columns on the data and the fitted
/// values. `power` is the exponent applied to the likelihood.
#[derive(Debug, Clone)]
pub struct Chain {
    pub state: ModelState,
    pub power: f64,
    basis: LxBasis,
    /// Column 0 is the intercept.
    cols: Vec<Vec<f64>>,
    col_sq: Vec<f64>,
    fitted: Vec<f64>,
}

/// Design columns of `basis` at working-unit points.
pub fn design_columns(basis: &LxBasis, ws: &[f64]) -> Vec<Vec<f64>> {
    let p = basis.n_columns();
    let mut cols = vec![vec![0.0; ws.len()]; p];
    let mut row = vec![0.0; p];
    for (i, &w) in ws.iter().enumerate() {
        basis.eval_row(w, &mut row);
        for (c, &v) in row.iter().enumerate() {
            cols[c][i] = v;
        }
    }
    cols
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn fitted_values(cols: &[Vec<f64>], beta0: f64, beta: &[f64], n: usize) -> Vec<f64> {
    let mut f = vec![beta0; n];
    for (col, &b) in cols[1..].iter().zip(beta) {
        if b != 0.0 {
            for (fi, &x) in f.iter_mut().zip(col) {
                *fi += b * x;
            }
        }
    }
    f
}

impl Chain {
    pub fn new(state: ModelState, hp: &Hyperparameters, data: &Dataset, power: f64) -> Result<Self> {
        state.validate(hp)?;
        let basis = LxBasis::new(knot_vector(&state.tree, hp.order)?, state.alpha.clone(), hp.m)?;
        let cols = design_columns(&basis, data.working_xs());
        let col_sq = cols.iter().map(|c| dot(c, c)).collect();
        let fitted = fitted_values(&cols, state.beta0, &state.beta, data.n());
        Ok(Self { state, power, basis, cols, col_sq, fitted })
    }

    pub(crate) fn replace(&mut self, state: ModelState, basis: LxBasis, cols: Vec<Vec<f64>>, n: usize) {
        self.col_sq = cols.iter().map(|c| dot(c, c)).collect();
        self.fitted = fitted_values(&cols, state.beta0, &state.beta, n);
        self.state = state;
        self.basis = basis;
        self.cols = cols;
    }

    pub fn basis(&self) -> &LxBasis {
        &self.basis
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.cols
    }

    pub fn fitted(&self) -> &[f64] {
        &self.fitted
    }

    pub fn ssr(&self, data: &Dataset) -> f64 {
        data.ys().iter().zip(&self.fitted).map(|(y, f)| (y - f).powi(2)).sum()
    }

    /// Untempered log likelihood.
    pub fn loglik(&self, data: &Dataset) -> f64 {
        gaussian_loglik(self.ssr(data), data.n(), self.state.sigma2)
    }

    /// Recompute fitted values from scratch, removing drift from the
    /// incremental updates.
    pub fn refresh_fitted(&mut self, n: usize) {
        self.fitted = fitted_values(&self.cols, self.state.beta0, &self.state.beta, n);
    }
}

/// Log odds of β_k ≠ 0 against β_k = 0 under the full conditional, and the
/// parameters (m̃, s) of the positive-truncated normal slab.
///
/// `bb = bᵀb` and `br = bᵀr` with r the residual excluding column k; the
/// likelihood enters with weight `power / sigma2`.
pub fn slab_log_odds(bb: f64, br: f64, sigma2: f64, power: f64, pi: f64, lambda: f64) -> (f64, f64, f64) {
    let m = br / bb;
    let s2 = sigma2 / (power * bb);
    let mt = m - lambda * s2;
    let s = s2.sqrt();
    let log_odds = ((1.0 - pi) / pi).ln()
        + lambda.ln()
        + 0.5 * (2.0 * std::f64::consts::PI * s2).ln()
        + log_norm_cdf(mt / s)
        + mt * mt / (2.0 * s2);
    (log_odds, mt, s)
}

/// Redraw β₀ and every β_k from their full conditionals.
pub fn gibbs_beta<R: Rng + ?Sized>(chain: &mut Chain, data: &Dataset, hp: &Hyperparameters, rng: &mut R) {
    let n = data.n();
    let sigma2 = chain.state.sigma2;
    let power = chain.power;
    let mut r: Vec<f64> = data.ys().iter().zip(&chain.fitted).map(|(y, f)| y - f).collect();

    // intercept
    let old0 = chain.state.beta0;
    let prec = 1.0 / hp.c + power * n as f64 / sigma2;
    let sum_r: f64 = r.iter().sum::<f64>() + n as f64 * old0;
    let mean = power * sum_r / sigma2 / prec;
    let new0 = mean + rng.sample::<f64, _>(StandardNormal) / prec.sqrt();
    let d0 = new0 - old0;
    r.iter_mut().for_each(|v| *v -= d0);
    chain.state.beta0 = new0;

    let (pi, lambda) = (chain.state.pi, chain.state.lambda);
    for k in 0..chain.state.beta.len() {
        let col = &chain.cols[k + 1];
        let bb = chain.col_sq[k + 1];
        let old = chain.state.beta[k];
        let new = if power * bb > 0.0 {
            let br = dot(col, &r) + old * bb;
            let (log_odds, mt, s) = slab_log_odds(bb, br, sigma2, power, pi, lambda);
            let p_nonzero = 1.0 / (1.0 + (-log_odds).exp());
            if rng.random::<f64>() < p_nonzero {
                normal_above(mt, s, 0.0, rng).max(f64::MIN_POSITIVE)
            } else {
                0.0
            }
        } else {
            // the column carries no likelihood information
            sample_beta_prior(pi, lambda, rng)
        };
        if new != old {
            let d = new - old;
            for (ri, &x) in r.iter_mut().zip(col) {
                *ri -= d * x;
            }
            chain.state.beta[k] = new;
        }
    }
    for ((f, y), ri) in chain.fitted.iter_mut().zip(data.ys()).zip(&r) {
        *f = y - ri;
    }
}

/// Random-walk Metropolis on each change point. Returns the number of
/// accepted proposals out of `h`.
pub fn update_alpha<R: Rng + ?Sized>(
    chain: &mut Chain,
    data: &Dataset,
    hp: &Hyperparameters,
    rng: &mut R,
    step: f64,
) -> Result<usize> {
    let (a, b) = hp.bounds();
    let prior = hp.alpha_prior();
    let mut accepted = 0;
    for h in 0..chain.state.alpha.len() {
        let z: f64 = rng.sample(StandardNormal);
        let u: f64 = rng.random();
        let old = chain.state.alpha[h];
        let prop = old + step * z;
        if step == 0.0 || !(a..=b).contains(&prop) {
            continue;
        }
        if chain
            .state
            .alpha
            .iter()
            .enumerate()
            .any(|(i, &x)| i != h && (x - prop).abs() < MIN_ALPHA_SEPARATION)
        {
            continue;
        }
        let mut alpha = chain.state.alpha.clone();
        alpha[h] = prop;
        let basis = LxBasis::new(chain.basis.knots().clone(), alpha.clone(), hp.m)?;
        let cols = design_columns(&basis, data.working_xs());
        let fitted = fitted_values(&cols, chain.state.beta0, &chain.state.beta, data.n());
        let ssr_new: f64 = data.ys().iter().zip(&fitted).map(|(y, f)| (y - f).powi(2)).sum();
        let ssr_old = chain.ssr(data);
        let log_ratio = -chain.power * (ssr_new - ssr_old) / (2.0 * chain.state.sigma2) + prior.ln_pdf(prop)
            - prior.ln_pdf(old);
        if u.ln() < log_ratio {
            let mut state = chain.state.clone();
            state.alpha = alpha;
            chain.col_sq = cols.iter().map(|c| dot(c, c)).collect();
            chain.state = state;
            chain.basis = basis;
            chain.cols = cols;
            chain.fitted = fitted;
            accepted += 1;
        }
    }
    Ok(accepted)
}

/// Step size of the random walk on log σ under the standard-deviation prior.
const LOG_SIGMA_STEP: f64 = 0.2;

/// Conjugate updates for π, λ and the noise.
pub fn update_hypers<R: Rng + ?Sized>(chain: &mut Chain, data: &Dataset, hp: &Hyperparameters, rng: &mut R) {
    let beta = &chain.state.beta;
    let nz = beta.iter().filter(|&&b| b > 0.0).count();
    let zeros = beta.len() - nz;
    let sum: f64 = beta.iter().sum();
    let beta_dist = Beta::new(hp.nu + zeros as f64, hp.omega + nz as f64).expect("valid beta");
    chain.state.pi = loop {
        let p: f64 = beta_dist.sample(rng);
        if p > 0.0 && p < 1.0 {
            break p;
        }
    };
    chain.state.lambda =
        crate::dist::TruncatedGamma::new(hp.delta + nz as f64, hp.kappa + sum, hp.lambda_floor).sample(rng);

    let ssr = chain.ssr(data);
    let n = data.n() as f64;
    match hp.sigma_prior {
        SigmaPrior::Precision => {
            let shape = hp.sigma2_shape + chain.power * n / 2.0;
            let rate = hp.sigma2_rate + chain.power * ssr / 2.0;
            let g = Gamma::new(shape, 1.0 / rate).expect("valid gamma");
            chain.state.sigma2 = loop {
                let tau: f64 = g.sample(rng);
                let s2 = 1.0 / tau;
                if s2 > 0.0 && s2.is_finite() {
                    break s2;
                }
            };
        }
        SigmaPrior::Sd => {
            let sd = chain.state.sigma2.sqrt();
            let z: f64 = Normal::new(0.0, LOG_SIGMA_STEP).expect("valid normal").sample(rng);
            let sd_new = sd * z.exp();
            let log_target = |s: f64| {
                chain.power * gaussian_loglik(ssr, data.n(), s * s) + gamma_ln_pdf(s, hp.sigma2_shape, hp.sigma2_rate) + s.ln()
            };
            let u: f64 = rng.random();
            if sd_new.is_finite() && sd_new > 0.0 && u.ln() < log_target(sd_new) - log_target(sd) {
                chain.state.sigma2 = sd_new * sd_new;
            }
        }
    }
}
