//! Parameter state, priors, likelihood and curve evaluation.
//!
//! Predictors are mapped onto the working interval [-0.5, 0.5] before any
//! basis is built. Change points and the prior bounds `a`, `b` live in
//! working units; [`Dataset::to_original`] maps them back.

use crate::bspline::{KnotVector, LxBasis, MIN_ALPHA_SEPARATION};
use crate::dist::{beta_ln_pdf, gamma_ln_pdf, normal_ln_pdf, TruncatedGamma, TruncatedNormal};
use crate::error::{Error, Result};
use crate::knot_tree::KnotTree;
use rand::Rng;
use rand_distr::{Beta, Distribution, Exp, Gamma, Normal};
use serde::{Deserialize, Serialize};

/// Working-interval end points.
pub const WORK_LO: f64 = -0.5;
pub const WORK_HI: f64 = 0.5;

/// Paired observations on a closed predictor interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    xs: Vec<f64>,
    ys: Vec<f64>,
    lo: f64,
    hi: f64,
    wx: Vec<f64>,
}

impl Dataset {
    /// Uses [min x, max x] as the predictor interval.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if xs.is_empty() {
            return Self::with_interval(xs, ys, 0.0, 1.0);
        }
        Self::with_interval(xs, ys, lo, hi)
    }

    pub fn with_interval(xs: Vec<f64>, ys: Vec<f64>, lo: f64, hi: f64) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::Domain(format!("{} x values but {} y values", xs.len(), ys.len())));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Domain(format!("degenerate predictor interval [{lo}, {hi}]")));
        }
        if let Some(v) = xs.iter().chain(&ys).find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite observation {v}")));
        }
        if let Some(x) = xs.iter().find(|&&x| x < lo || x > hi) {
            return Err(Error::Domain(format!("x = {x} outside the interval [{lo}, {hi}]")));
        }
        let mut data = Self { xs, ys, lo, hi, wx: Vec::new() };
        data.wx = data.xs.iter().map(|&x| data.to_working(x)).collect();
        Ok(data)
    }

    /// Errors unless there are at least `order + 2` observations.
    pub fn require(&self, order: usize) -> Result<()> {
        if self.n() < order + 2 {
            return Err(Error::InsufficientData { n: self.n(), needed: order + 2 });
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.xs.len()
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    /// Predictors mapped to the working interval.
    pub fn working_xs(&self) -> &[f64] {
        &self.wx
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn to_working(&self, x: f64) -> f64 {
        let w = (x - self.lo) / (self.hi - self.lo) - 0.5;
        w.clamp(WORK_LO, WORK_HI)
    }

    /// Unclamped inverse map, used for change points outside the interval.
    pub fn to_original(&self, w: f64) -> f64 {
        self.lo + (w + 0.5) * (self.hi - self.lo)
    }
}

/// Prior bounds for the change points: the interval widened by half its
/// width on each side.
pub fn default_bounds(lo: f64, hi: f64) -> Result<(f64, f64)> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::Domain(format!("degenerate interval [{lo}, {hi}]")));
    }
    let delta = (hi - lo) / 2.0;
    Ok((lo - delta, hi + delta))
}

/// Which scale carries the Gamma prior for the noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SigmaPrior {
    /// σ⁻² ~ Gamma(shape, rate); conjugate.
    #[default]
    Precision,
    /// σ ~ Gamma(shape, rate); updated by Metropolis.
    Sd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    /// Maximum number of extrema H.
    pub h: usize,
    /// B-spline order j (2 = piecewise linear).
    pub order: usize,
    /// Signed scale M.
    pub m: f64,
    pub nu: f64,
    pub omega: f64,
    pub delta: f64,
    pub kappa: f64,
    pub lambda_floor: f64,
    /// Prior variance of the intercept.
    pub c: f64,
    pub sigma2_shape: f64,
    pub sigma2_rate: f64,
    pub sigma_prior: SigmaPrior,
    /// Change-point prior bounds in working units; default from
    /// [`default_bounds`] applied to the working interval.
    pub a: Option<f64>,
    pub b: Option<f64>,
    /// Change-point prior mean in working units. Defaults to (b - a)/2
    /// measured from the lower end of the unit-width interval.
    pub alpha_prior_mean: Option<f64>,
    pub alpha_prior_var: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            h: 2,
            order: 2,
            m: 100.0,
            nu: 2.0,
            omega: 18.0,
            delta: 0.2,
            kappa: 2.0,
            lambda_floor: 1e-5,
            c: 100.0,
            sigma2_shape: 1.0,
            sigma2_rate: 1.0,
            sigma_prior: SigmaPrior::Precision,
            a: None,
            b: None,
            alpha_prior_mean: None,
            alpha_prior_var: 1.0,
        }
    }
}

impl Hyperparameters {
    pub fn with_h(mut self, h: usize) -> Self {
        self.h = h;
        self
    }

    pub fn bounds(&self) -> (f64, f64) {
        let (da, db) = default_bounds(WORK_LO, WORK_HI).expect("working interval is valid");
        (self.a.unwrap_or(da), self.b.unwrap_or(db))
    }

    pub fn alpha_prior(&self) -> TruncatedNormal {
        let (a, b) = self.bounds();
        let mean = self.alpha_prior_mean.unwrap_or((b - a) / 2.0 + WORK_LO);
        TruncatedNormal::new(mean, self.alpha_prior_var.sqrt(), a, b)
    }

    pub fn lambda_prior(&self) -> TruncatedGamma {
        TruncatedGamma::new(self.delta, self.kappa, self.lambda_floor)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("nu", self.nu),
            ("omega", self.omega),
            ("delta", self.delta),
            ("kappa", self.kappa),
            ("lambda_floor", self.lambda_floor),
            ("c", self.c),
            ("sigma2_shape", self.sigma2_shape),
            ("sigma2_rate", self.sigma2_rate),
            ("alpha_prior_var", self.alpha_prior_var),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.order == 0 || self.order > crate::bspline::MAX_ORDER {
            return Err(Error::Config(format!("order must be in 1..=6, got {}", self.order)));
        }
        if self.h > 8 {
            return Err(Error::Config(format!("h must be at most 8, got {}", self.h)));
        }
        if self.m == 0.0 || !self.m.is_finite() {
            return Err(Error::Config("m must be a nonzero finite number".into()));
        }
        let (a, b) = self.bounds();
        if !(a < WORK_LO && b > WORK_HI) {
            return Err(Error::Config(format!(
                "change-point bounds [{a}, {b}] must strictly contain the working interval [-0.5, 0.5]"
            )));
        }
        Ok(())
    }
}

/// One point in the trans-dimensional parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub tree: KnotTree,
    pub beta0: f64,
    pub beta: Vec<f64>,
    /// Change points in working units.
    pub alpha: Vec<f64>,
    pub pi: f64,
    pub lambda: f64,
    pub sigma2: f64,
}

/// Number of non-intercept coefficients for a tree and order.
pub fn n_coefficients(tree: &KnotTree, order: usize) -> usize {
    tree.len() + 2 + order - 2
}

pub fn knot_vector(tree: &KnotTree, order: usize) -> Result<KnotVector> {
    KnotVector::new(tree.working_knots(), order)
}

impl ModelState {
    pub fn basis(&self, hp: &Hyperparameters) -> Result<LxBasis> {
        LxBasis::new(knot_vector(&self.tree, hp.order)?, self.alpha.clone(), hp.m)
    }

    /// β₀ followed by β.
    pub fn coefficients(&self) -> Vec<f64> {
        let mut c = Vec::with_capacity(self.beta.len() + 1);
        c.push(self.beta0);
        c.extend_from_slice(&self.beta);
        c
    }

    /// Checks every invariant; returns the first violation.
    pub fn validate(&self, hp: &Hyperparameters) -> Result<()> {
        let want = n_coefficients(&self.tree, hp.order);
        if self.beta.len() != want {
            return Err(Error::Domain(format!("{} coefficients, tree needs {want}", self.beta.len())));
        }
        if let Some((i, &v)) = self.beta.iter().enumerate().find(|(_, &v)| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::ConstraintViolation { index: i + 1, value: v });
        }
        if self.alpha.len() != hp.h {
            return Err(Error::Domain(format!("{} change points, expected {}", self.alpha.len(), hp.h)));
        }
        let (a, b) = hp.bounds();
        if let Some(&x) = self.alpha.iter().find(|&&x| !(a..=b).contains(&x)) {
            return Err(Error::Domain(format!("change point {x} outside [{a}, {b}]")));
        }
        for (i, &x) in self.alpha.iter().enumerate() {
            for &y in &self.alpha[i + 1..] {
                if (x - y).abs() < MIN_ALPHA_SEPARATION {
                    return Err(Error::DegenerateAlpha { first: x, second: y, min_sep: MIN_ALPHA_SEPARATION });
                }
            }
        }
        if !(self.pi > 0.0 && self.pi < 1.0) {
            return Err(Error::Domain(format!("pi = {} outside (0, 1)", self.pi)));
        }
        if !(self.lambda > hp.lambda_floor && self.lambda.is_finite()) {
            return Err(Error::Domain(format!("lambda = {} not above the floor", self.lambda)));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::Domain(format!("sigma2 = {} must be positive", self.sigma2)));
        }
        if !self.beta0.is_finite() {
            return Err(Error::Domain("intercept is not finite".into()));
        }
        Ok(())
    }
}

/// Log prior density of the noise parameter, on the scale named by
/// `hp.sigma_prior` (precision or standard deviation).
pub fn sigma_log_prior(sigma2: f64, hp: &Hyperparameters) -> f64 {
    match hp.sigma_prior {
        SigmaPrior::Precision => gamma_ln_pdf(1.0 / sigma2, hp.sigma2_shape, hp.sigma2_rate),
        SigmaPrior::Sd => gamma_ln_pdf(sigma2.sqrt(), hp.sigma2_shape, hp.sigma2_rate),
    }
}

/// Log prior of a coefficient under the spike-and-slab prior.
#[inline]
pub fn beta_log_prior(beta: f64, pi: f64, lambda: f64) -> f64 {
    if beta == 0.0 {
        pi.ln()
    } else if beta > 0.0 {
        (1.0 - pi).ln() + lambda.ln() - lambda * beta
    } else {
        f64::NEG_INFINITY
    }
}

/// Joint log prior; −∞ for any state outside the support.
pub fn log_prior(state: &ModelState, hp: &Hyperparameters) -> f64 {
    if state.validate(hp).is_err() {
        return f64::NEG_INFINITY;
    }
    let alpha_prior = hp.alpha_prior();
    state.tree.log_prior()
        + state.beta.iter().map(|&b| beta_log_prior(b, state.pi, state.lambda)).sum::<f64>()
        + normal_ln_pdf(state.beta0, 0.0, hp.c)
        + beta_ln_pdf(state.pi, hp.nu, hp.omega)
        + hp.lambda_prior().ln_pdf(state.lambda)
        + state.alpha.iter().map(|&a| alpha_prior.ln_pdf(a)).sum::<f64>()
        + sigma_log_prior(state.sigma2, hp)
}

/// Gaussian log likelihood from a residual sum of squares.
#[inline]
pub fn gaussian_loglik(ssr: f64, n: usize, sigma2: f64) -> f64 {
    -0.5 * n as f64 * (2.0 * std::f64::consts::PI * sigma2).ln() - 0.5 * ssr / sigma2
}

pub fn log_likelihood(state: &ModelState, data: &Dataset, hp: &Hyperparameters) -> Result<f64> {
    if !(state.sigma2 > 0.0) {
        return Err(Error::Domain(format!("sigma2 = {} must be positive", state.sigma2)));
    }
    let fitted = fitted_working(state, hp, data.working_xs())?;
    let ssr: f64 = fitted.iter().zip(data.ys()).map(|(f, y)| (y - f).powi(2)).sum();
    Ok(gaussian_loglik(ssr, data.n(), state.sigma2))
}

/// f at working-unit points.
pub fn fitted_working(state: &ModelState, hp: &Hyperparameters, ws: &[f64]) -> Result<Vec<f64>> {
    let basis = state.basis(hp)?;
    if state.beta.len() != basis.n_basis() {
        return Err(Error::Domain("coefficient count does not match the basis".into()));
    }
    let coefs = state.coefficients();
    let mut row = vec![0.0; basis.n_columns()];
    let mut out = Vec::with_capacity(ws.len());
    for &w in ws {
        if !(WORK_LO..=WORK_HI).contains(&w) {
            return Err(Error::Domain(format!("working x = {w} outside [-0.5, 0.5]")));
        }
        basis.eval_row(w, &mut row);
        out.push(row.iter().zip(&coefs).map(|(r, c)| r * c).sum());
    }
    Ok(out)
}

/// f at points given in original units.
pub fn curve_eval(state: &ModelState, hp: &Hyperparameters, data: &Dataset, xs: &[f64]) -> Result<Vec<f64>> {
    let (lo, hi) = data.interval();
    if let Some(x) = xs.iter().find(|&&x| x < lo || x > hi) {
        return Err(Error::Domain(format!("x = {x} outside [{lo}, {hi}]")));
    }
    let ws: Vec<f64> = xs.iter().map(|&x| data.to_working(x)).collect();
    fitted_working(state, hp, &ws)
}

/// (number of α at or below the interval, strictly inside, at or above).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Signature {
    pub below: usize,
    pub inside: usize,
    pub above: usize,
}

impl Signature {
    pub fn new(below: usize, inside: usize, above: usize) -> Self {
        Self { below, inside, above }
    }

    pub fn h(&self) -> usize {
        self.below + self.inside + self.above
    }
}

/// Signature of working-unit change points relative to [lo, hi].
pub fn shape_signature(alpha: &[f64], lo: f64, hi: f64) -> Signature {
    let mut s = Signature::new(0, 0, 0);
    for &a in alpha {
        if a <= lo {
            s.below += 1;
        } else if a >= hi {
            s.above += 1;
        } else {
            s.inside += 1;
        }
    }
    s
}

impl ModelState {
    pub fn signature(&self) -> Signature {
        shape_signature(&self.alpha, WORK_LO, WORK_HI)
    }
}

/// Draw change points independently from their prior, redrawing any that
/// land within the minimum separation of an earlier one.
pub fn sample_alpha<R: Rng + ?Sized>(hp: &Hyperparameters, rng: &mut R) -> Vec<f64> {
    let prior = hp.alpha_prior();
    let mut out: Vec<f64> = Vec::with_capacity(hp.h);
    while out.len() < hp.h {
        let a = prior.sample(rng);
        if out.iter().all(|&x| (x - a).abs() >= MIN_ALPHA_SEPARATION) {
            out.push(a);
        }
    }
    out
}

/// Draw a noise variance from its prior.
pub fn sample_sigma2<R: Rng + ?Sized>(hp: &Hyperparameters, rng: &mut R) -> f64 {
    let g = Gamma::new(hp.sigma2_shape, 1.0 / hp.sigma2_rate).expect("valid gamma");
    loop {
        let v: f64 = g.sample(rng);
        let s2 = match hp.sigma_prior {
            SigmaPrior::Precision => 1.0 / v,
            SigmaPrior::Sd => v * v,
        };
        if s2 > 0.0 && s2.is_finite() {
            return s2;
        }
    }
}

/// Draw a coefficient from the spike-and-slab prior.
pub fn sample_beta_prior<R: Rng + ?Sized>(pi: f64, lambda: f64, rng: &mut R) -> f64 {
    if rng.random::<f64>() < pi {
        0.0
    } else {
        Exp::new(lambda).expect("positive rate").sample(rng)
    }
}

/// A draw from the joint prior.
pub fn sample_prior<R: Rng + ?Sized>(hp: &Hyperparameters, rng: &mut R) -> ModelState {
    let tree = KnotTree::sample_prior(rng);
    let pi = loop {
        let p: f64 = Beta::new(hp.nu, hp.omega).expect("valid beta").sample(rng);
        if p > 0.0 && p < 1.0 {
            break p;
        }
    };
    let lambda = hp.lambda_prior().sample(rng);
    let k = n_coefficients(&tree, hp.order);
    let beta = (0..k).map(|_| sample_beta_prior(pi, lambda, rng)).collect();
    let beta0 = Normal::new(0.0, hp.c.sqrt()).expect("valid normal").sample(rng);
    ModelState { tree, beta0, beta, alpha: sample_alpha(hp, rng), pi, lambda, sigma2: sample_sigma2(hp, rng) }
}
