//! Reversible-jump knot insertion and deletion with the affected
//! coefficients integrated out.
//!
//! Inserting the knot τ at padded position p changes exactly the B-splines
//! whose knot sequence contains τ: indices p-j..=p in the larger model and
//! p-j..p in the smaller one. Every other basis function, and its
//! coefficient, is shared. Conditioning on the shared coefficients, the
//! affected coefficients are integrated out of each model under the
//! spike-and-slab prior, which is a sum over spike/slab patterns of
//! Gaussian integrals over the positive orthant.

use super::chain::{design_columns, dot, Chain};
use crate::bspline::LxBasis;
use crate::dist::{log_norm_cdf, log_sum_exp, normal_above};
use crate::error::{Error, Result};
use crate::knot_tree::{KnotTree, MoveKind};
use crate::model::{knot_vector, sample_beta_prior, Dataset, Hyperparameters};
use crate::orthant::{ln_bvn_upper, ln_tvn_upper, orthant_prob, sample_truncated, OrthantProblem};
use rand::Rng;
use serde::Serialize;

/// Pivot threshold, relative to the largest diagonal entry, below which a
/// precision block counts as singular.
const SINGULAR_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RjOutcome {
    pub kind: MoveKind,
    pub accepted: bool,
    /// The marginal could not be evaluated; the move was rejected.
    pub failed: bool,
    pub log_h: f64,
}

/// One spike/slab pattern's contribution to the marginal.
#[derive(Debug, Clone)]
struct Pattern {
    /// Positions (within the informative coordinates) in the slab.
    slab: Vec<usize>,
    log_term: f64,
    mean: Vec<f64>,
    cov: Vec<f64>,
    prec: Vec<f64>,
    log_prob: f64,
}

/// The affected coefficients' contribution to the marginal likelihood,
/// relative to setting them all to zero.
#[derive(Debug, Clone)]
pub struct Marginal {
    pub log_total: f64,
    /// Coordinates whose column carries likelihood information.
    informative: Vec<usize>,
    dim: usize,
    patterns: Vec<Pattern>,
}

/// Small dense Cholesky; `None` when a pivot is not clearly positive.
fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let scale = (0..d).map(|i| a[i * d + i]).fold(0.0, f64::max);
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let s = a[i * d + j] - (0..j).map(|k| l[i * d + k] * l[j * d + k]).sum::<f64>();
            if i == j {
                if !(s > SINGULAR_TOL * scale) {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

fn chol_solve(l: &[f64], d: usize, b: &[f64]) -> Vec<f64> {
    let mut y = b.to_vec();
    for i in 0..d {
        for k in 0..i {
            y[i] -= l[i * d + k] * y[k];
        }
        y[i] /= l[i * d + i];
    }
    for i in (0..d).rev() {
        for k in i + 1..d {
            y[i] -= l[k * d + i] * y[k];
        }
        y[i] /= l[i * d + i];
    }
    y
}

fn chol_inverse(l: &[f64], d: usize) -> Vec<f64> {
    let mut inv = vec![0.0; d * d];
    let mut e = vec![0.0; d];
    for c in 0..d {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[c] = 1.0;
        let col = chol_solve(l, d, &e);
        for r in 0..d {
            inv[r * d + c] = col[r];
        }
    }
    // symmetrise against rounding
    for r in 0..d {
        for c in 0..r {
            let v = 0.5 * (inv[r * d + c] + inv[c * d + r]);
            inv[r * d + c] = v;
            inv[c * d + r] = v;
        }
    }
    inv
}

/// log P(N(mean, cov) > 0).
fn log_positive_prob<R: Rng + ?Sized>(mean: &[f64], cov: &[f64], target: f64, rng: &mut R) -> Result<f64> {
    let d = mean.len();
    match d {
        1 => Ok(log_norm_cdf(mean[0] / cov[0].sqrt())),
        2 => {
            let (s1, s2) = (cov[0].sqrt(), cov[3].sqrt());
            let rho = (cov[1] / (s1 * s2)).clamp(-1.0, 1.0);
            if let Some(v) = ln_bvn_upper(-mean[0] / s1, -mean[1] / s2, rho) {
                return Ok(v);
            }
            let prob = OrthantProblem::new(mean.to_vec(), cov.to_vec(), vec![0.0; d])?;
            Ok(orthant_prob(&prob, target, rng)?.log_prob)
        }
        3 => {
            let s: Vec<f64> = (0..3).map(|i| cov[i * 4].sqrt()).collect();
            let r = |i: usize, j: usize| (cov[i * 3 + j] / (s[i] * s[j])).clamp(-1.0, 1.0);
            let a = [-mean[0] / s[0], -mean[1] / s[1], -mean[2] / s[2]];
            if let Some(v) = ln_tvn_upper(a, [r(0, 1), r(0, 2), r(1, 2)]) {
                return Ok(v);
            }
            let prob = OrthantProblem::new(mean.to_vec(), cov.to_vec(), vec![0.0; d])?;
            Ok(orthant_prob(&prob, target, rng)?.log_prob)
        }
        _ => {
            let prob = OrthantProblem::new(mean.to_vec(), cov.to_vec(), vec![0.0; d])?;
            Ok(orthant_prob(&prob, target, rng)?.log_prob)
        }
    }
}

/// Marginal of the affected coefficients with columns `cols`, given the
/// residual `r` that excludes them.
///
/// Each pattern S contributes
/// `π^(d-|S|) ((1-π)λ)^|S| ∫_{β_S>0} exp(bᵀβ - ½βᵀQβ) dβ` with
/// `Q = power·X_SᵀX_S/σ²` and `b = power·X_Sᵀr/σ² - λ`, and the integral is
/// `(2π)^(|S|/2) |Q|^(-1/2) exp(½bᵀQ⁻¹b) P(N(Q⁻¹b, Q⁻¹) > 0)`. Columns
/// without likelihood weight integrate to one and drop out.
#[allow(clippy::too_many_arguments)]
pub fn affected_marginal<R: Rng + ?Sized>(
    cols: &[&[f64]],
    r: &[f64],
    sigma2: f64,
    power: f64,
    pi: f64,
    lambda: f64,
    target: f64,
    rng: &mut R,
) -> Result<Marginal> {
    let informative: Vec<usize> = (0..cols.len()).filter(|&k| power * dot(cols[k], cols[k]) > 0.0).collect();
    let d = informative.len();
    let w = power / sigma2;
    let gram: Vec<f64> = (0..d * d)
        .map(|k| w * dot(cols[informative[k / d]], cols[informative[k % d]]))
        .collect();
    let xr: Vec<f64> = informative.iter().map(|&k| w * dot(cols[k], r) - lambda).collect();
    let (ln_pi, ln_slab) = (pi.ln(), (1.0 - pi).ln() + lambda.ln());
    let mut patterns = Vec::with_capacity(1 << d);
    for mask in 0u32..(1 << d) {
        let slab: Vec<usize> = (0..d).filter(|&i| mask >> i & 1 == 1).collect();
        let s = slab.len();
        let base = (d - s) as f64 * ln_pi + s as f64 * ln_slab;
        if s == 0 {
            patterns.push(Pattern { slab, log_term: base, mean: vec![], cov: vec![], prec: vec![], log_prob: 0.0 });
            continue;
        }
        let q: Vec<f64> = (0..s * s).map(|k| gram[slab[k / s] * d + slab[k % s]]).collect();
        let b: Vec<f64> = slab.iter().map(|&i| xr[i]).collect();
        let l = cholesky(&q, s).ok_or_else(|| Error::Matrix("affected design block is singular".into()))?;
        let mean = chol_solve(&l, s, &b);
        let cov = chol_inverse(&l, s);
        let log_det: f64 = 2.0 * (0..s).map(|i| l[i * s + i].ln()).sum::<f64>();
        let log_prob = log_positive_prob(&mean, &cov, target, rng)?;
        let log_int = 0.5 * s as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det + 0.5 * dot(&b, &mean) + log_prob;
        let log_term = base + log_int;
        if !log_term.is_finite() && log_term != f64::NEG_INFINITY {
            return Err(Error::Matrix("non-finite marginal term".into()));
        }
        patterns.push(Pattern { slab, log_term, mean, cov, prec: q, log_prob });
    }
    let terms: Vec<f64> = patterns.iter().map(|p| p.log_term).collect();
    let log_total = log_sum_exp(&terms);
    if !log_total.is_finite() {
        return Err(Error::Matrix("marginal is not finite".into()));
    }
    Ok(Marginal { log_total, informative, dim: cols.len(), patterns })
}

impl Marginal {
    /// Draw the affected coefficients from their conditional posterior.
    pub fn sample<R: Rng + ?Sized>(&self, pi: f64, lambda: f64, rng: &mut R) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        for k in 0..self.dim {
            if !self.informative.contains(&k) {
                out[k] = sample_beta_prior(pi, lambda, rng);
            }
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = self.patterns.len() - 1;
        for (i, p) in self.patterns.iter().enumerate() {
            acc += (p.log_term - self.log_total).exp();
            if u < acc {
                chosen = i;
                break;
            }
        }
        let p = &self.patterns[chosen];
        let s = p.slab.len();
        let draw = match s {
            0 => vec![],
            1 => vec![normal_above(p.mean[0], p.cov[0].sqrt(), 0.0, rng).max(f64::MIN_POSITIVE)],
            _ => {
                let problem = OrthantProblem::new(p.mean.clone(), p.cov.clone(), vec![0.0; s])?;
                sample_truncated(&problem, &p.prec, p.log_prob.exp(), rng)?
                    .into_iter()
                    .map(|v| v.max(f64::MIN_POSITIVE))
                    .collect()
            }
        };
        for (&i, v) in p.slab.iter().zip(draw) {
            out[self.informative[i]] = v;
        }
        Ok(out)
    }

    /// Probability of each slab pattern, keyed by the informative
    /// coordinates it switches on.
    pub fn pattern_probs(&self) -> Vec<(Vec<usize>, f64)> {
        self.patterns
            .iter()
            .map(|p| (p.slab.iter().map(|&i| self.informative[i]).collect(), (p.log_term - self.log_total).exp()))
            .collect()
    }
}

/// Padded position of `label`'s knot in the larger tree.
fn padded_position(big: &KnotTree, value: f64, order: usize) -> usize {
    let knots = big.working_knots();
    let pos = knots.iter().position(|&t| t == value).expect("toggled knot present in larger tree");
    order - 1 + pos
}

/// One reversible-jump knot move.
pub fn rj_knot_move<R: Rng + ?Sized>(
    chain: &mut Chain,
    data: &Dataset,
    hp: &Hyperparameters,
    target: f64,
    rng: &mut R,
) -> Result<RjOutcome> {
    let j = hp.order;
    let tree = &chain.state.tree;
    let mv = tree.propose_move(rng);
    let u: f64 = rng.random();
    let new_tree = tree.apply(&mv)?;
    let insert = mv.kind == MoveKind::Insert;
    let big = if insert { &new_tree } else { tree };
    let p = padded_position(big, mv.label.value() - 0.5, j);
    let (small_aff, big_aff) = ((p - j)..p, (p - j)..(p + 1));
    let (cur_aff, prop_aff) = if insert { (small_aff, big_aff) } else { (big_aff, small_aff) };

    let new_basis = LxBasis::new(knot_vector(&new_tree, j)?, chain.state.alpha.clone(), hp.m)?;
    let new_cols = design_columns(&new_basis, data.working_xs());

    let cur_cols = chain.columns();
    let mut r: Vec<f64> = data.ys().iter().zip(chain.fitted()).map(|(y, f)| y - f).collect();
    for k in cur_aff.clone() {
        let b = chain.state.beta[k];
        if b != 0.0 {
            for (ri, &x) in r.iter_mut().zip(&cur_cols[k + 1]) {
                *ri += b * x;
            }
        }
    }
    let s = &chain.state;
    let fail = |log_h| Ok(RjOutcome { kind: mv.kind, accepted: false, failed: true, log_h });
    let cur_refs: Vec<&[f64]> = cur_aff.clone().map(|k| cur_cols[k + 1].as_slice()).collect();
    let prop_refs: Vec<&[f64]> = prop_aff.clone().map(|k| new_cols[k + 1].as_slice()).collect();
    let m_cur = match affected_marginal(&cur_refs, &r, s.sigma2, chain.power, s.pi, s.lambda, target, rng) {
        Ok(m) => m,
        Err(_) => return fail(f64::NAN),
    };
    let m_prop = match affected_marginal(&prop_refs, &r, s.sigma2, chain.power, s.pi, s.lambda, target, rng) {
        Ok(m) => m,
        Err(_) => return fail(f64::NAN),
    };
    let log_h = new_tree.log_prior() - tree.log_prior() + m_prop.log_total - m_cur.log_total + mv.reverse_prob.ln()
        - mv.forward_prob.ln();
    if !(u.ln() < log_h) {
        return Ok(RjOutcome { kind: mv.kind, accepted: false, failed: false, log_h });
    }
    let drawn = match m_prop.sample(s.pi, s.lambda, rng) {
        Ok(d) => d,
        Err(_) => return fail(log_h),
    };
    let old = &s.beta;
    let mut beta = Vec::with_capacity(new_basis.n_basis());
    beta.extend_from_slice(&old[..p - j]);
    beta.extend_from_slice(&drawn);
    beta.extend_from_slice(&old[cur_aff.end..]);
    debug_assert_eq!(beta.len(), new_basis.n_basis());
    let mut state = s.clone();
    state.tree = new_tree;
    state.beta = beta;
    chain.replace(state, new_basis, new_cols, data.n());
    Ok(RjOutcome { kind: mv.kind, accepted: true, failed: false, log_h })
}
