//! Multivariate normal orthant probabilities P(X > lower), X ~ N(μ, Σ).
//!
//! The estimator is Genz's separation-of-variables transform with
//! Genz–Bretz variable reordering, integrated by a randomly shifted rank-1
//! Kronecker lattice with the tent (baker) transform. Each integrand value
//! is a product of normal tail masses and is carried on the log scale, so
//! very small probabilities keep their relative accuracy.

use crate::dist::{log_norm_cdf, log_sum_exp, norm_cdf, norm_isf_log, norm_ln_pdf, norm_pdf, std_normal_above};
use crate::quadrature::GaussLegendre;
use std::sync::OnceLock;
use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub const MAX_DIM: usize = 16;
/// Number of independent random shifts of the lattice.
pub const N_SHIFTS: usize = 12;
/// Largest number of lattice points per shift.
pub const MAX_POINTS: usize = 1 << 17;
const START_POINTS: usize = 16;
/// Relative standard-error target used alongside the absolute one.
pub const REL_TARGET: f64 = 1e-2;

const PRIMES: [f64; MAX_DIM] = [2., 3., 5., 7., 11., 13., 17., 19., 23., 29., 31., 37., 41., 43., 47., 53.];

#[derive(Debug, Clone, PartialEq)]
pub struct OrthantProblem {
    mean: Vec<f64>,
    /// Row-major d × d.
    cov: Vec<f64>,
    lower: Vec<f64>,
}

impl OrthantProblem {
    /// `cov` is row-major. Lower bounds may be `-inf`.
    pub fn new(mean: Vec<f64>, cov: Vec<f64>, lower: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || d > MAX_DIM {
            return Err(Error::Matrix(format!("dimension {d} outside 1..={MAX_DIM}")));
        }
        if cov.len() != d * d || lower.len() != d {
            return Err(Error::Matrix("mean, covariance and bounds disagree in size".into()));
        }
        if mean.iter().chain(&cov).any(|v| !v.is_finite()) || lower.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::Matrix("non-finite entries".into()));
        }
        for i in 0..d {
            if cov[i * d + i] < 0.0 {
                return Err(Error::Matrix("negative variance".into()));
            }
            for j in 0..i {
                let (x, y) = (cov[i * d + j], cov[j * d + i]);
                if (x - y).abs() > 1e-10 * (1.0 + x.abs().max(y.abs())) {
                    return Err(Error::Matrix(format!("covariance not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { mean, cov, lower })
    }

    /// Standard normal coordinates with equal correlation `rho`.
    pub fn equicorrelated(d: usize, rho: f64, lower: Vec<f64>) -> Result<Self> {
        let cov = (0..d * d).map(|k| if k / d == k % d { 1.0 } else { rho }).collect();
        Self::new(vec![0.0; d], cov, lower)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &[f64] {
        &self.cov
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    /// The same problem with coordinates reordered by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let d = self.dim();
        let mean = perm.iter().map(|&p| self.mean[p]).collect();
        let lower = perm.iter().map(|&p| self.lower[p]).collect();
        let cov = (0..d * d).map(|k| self.cov[perm[k / d] * d + perm[k % d]]).collect();
        Self::new(mean, cov, lower)
    }

    fn shifted_bounds(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.mean).map(|(l, m)| l - m).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrthantEstimate {
    pub prob: f64,
    /// log of `prob`, accurate even when `prob` underflows.
    pub log_prob: f64,
    /// Estimated standard error of `prob`.
    pub std_error: f64,
    /// Lattice points used per shift (0 for closed forms).
    pub points: usize,
}

impl OrthantEstimate {
    fn exact(log_prob: f64) -> Self {
        Self { prob: log_prob.exp(), log_prob, std_error: 0.0, points: 0 }
    }
}

/// Cholesky factor with Genz–Bretz ordering, plus the reordered bounds.
struct Sov {
    d: usize,
    /// Row-major lower triangle.
    l: Vec<f64>,
    a: Vec<f64>,
}

impl Sov {
    fn build(p: &OrthantProblem) -> Result<Self> {
        match Self::factor(p, 0.0) {
            Some(s) => Ok(s),
            None => {
                let d = p.dim();
                let maxdiag = (0..d).map(|i| p.cov[i * d + i]).fold(0.0, f64::max);
                Self::factor(p, 1e-10 * maxdiag.max(f64::MIN_POSITIVE))
                    .ok_or_else(|| Error::Matrix("covariance is not positive semidefinite".into()))
            }
        }
    }

    fn factor(p: &OrthantProblem, jitter: f64) -> Option<Self> {
        let d = p.dim();
        let mut c = p.cov.clone();
        for i in 0..d {
            c[i * d + i] += jitter;
        }
        let mut a = p.shifted_bounds();
        let mut l: Vec<f64> = vec![0.0; d * d];
        let mut y = vec![0.0; d];
        let scale = (0..d).map(|i| c[i * d + i]).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        for i in 0..d {
            // pick the remaining variable with the smallest conditional mass
            let mut best = i;
            let mut best_c = f64::NEG_INFINITY;
            let mut found = false;
            for k in i..d {
                let s2 = c[k * d + k] - (0..i).map(|j| l[k * d + j].powi(2)).sum::<f64>();
                if s2 <= 0.0 {
                    continue;
                }
                let ck = (a[k] - (0..i).map(|j| l[k * d + j] * y[j]).sum::<f64>()) / s2.sqrt();
                if !found || ck > best_c {
                    found = true;
                    best_c = ck;
                    best = k;
                }
            }
            if best != i {
                a.swap(i, best);
                for j in 0..d {
                    c.swap(i * d + j, best * d + j);
                }
                for j in 0..d {
                    c.swap(j * d + i, j * d + best);
                }
                for j in 0..i {
                    l.swap(i * d + j, best * d + j);
                }
            }
            let s2 = c[i * d + i] - (0..i).map(|j| l[i * d + j].powi(2)).sum::<f64>();
            if s2 <= 1e-14 * scale {
                return None;
            }
            let lii = s2.sqrt();
            l[i * d + i] = lii;
            for k in i + 1..d {
                let v = c[k * d + i] - (0..i).map(|j| l[k * d + j] * l[i * d + j]).sum::<f64>();
                l[k * d + i] = v / lii;
            }
            let ci = (a[i] - (0..i).map(|j| l[i * d + j] * y[j]).sum::<f64>()) / lii;
            y[i] = truncated_std_mean(ci);
        }
        Some(Self { d, l, a })
    }

    /// log of the integrand at a point of the unit cube (d - 1 coordinates).
    fn log_integrand(&self, u: &[f64], z: &mut [f64]) -> f64 {
        let d = self.d;
        let mut total = 0.0;
        for i in 0..d {
            let dot: f64 = (0..i).map(|j| self.l[i * d + j] * z[j]).sum();
            let c = (self.a[i] - dot) / self.l[i * d + i];
            let log_e = log_norm_cdf(-c);
            total += log_e;
            if i + 1 < d {
                let ui = u[i].clamp(1e-300, 1.0);
                z[i] = norm_isf_log(log_e + ui.ln()).max(c);
            }
        }
        total
    }
}

fn truncated_std_mean(c: f64) -> f64 {
    if c == f64::NEG_INFINITY {
        return 0.0;
    }
    let log_tail = log_norm_cdf(-c);
    (crate::dist::norm_ln_pdf(c) - log_tail).exp()
}

/// Closed-form P(X > lower) for d = 1 on the log scale.
fn log_prob_1d(p: &OrthantProblem) -> f64 {
    let sd = p.cov[0].sqrt();
    let a = p.lower[0] - p.mean[0];
    if sd == 0.0 {
        return if a < 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    log_norm_cdf(-a / sd)
}

/// Randomized quasi-Monte Carlo orthant probability.
///
/// Stops once the standard error is below `target` in absolute terms and
/// below [`REL_TARGET`] relative to the estimate, or when the point cap is
/// reached.
pub fn orthant_prob<R: Rng + ?Sized>(p: &OrthantProblem, target: f64, rng: &mut R) -> Result<OrthantEstimate> {
    let d = p.dim();
    let finite: Vec<usize> = (0..d).filter(|&i| p.lower[i] > f64::NEG_INFINITY).collect();
    if finite.is_empty() {
        return Ok(OrthantEstimate::exact(0.0));
    }
    if finite.len() < d {
        // coordinates without a bound marginalise out
        let q = OrthantProblem {
            mean: finite.iter().map(|&i| p.mean[i]).collect(),
            cov: finite.iter().flat_map(|&i| finite.iter().map(move |&j| (i, j))).map(|(i, j)| p.cov[i * d + j]).collect(),
            lower: finite.iter().map(|&i| p.lower[i]).collect(),
        };
        return orthant_prob(&q, target, rng);
    }
    if d == 1 {
        return Ok(OrthantEstimate::exact(log_prob_1d(p)));
    }
    let sov = Sov::build(p)?;
    let dim = d - 1;
    let gen: Vec<f64> = PRIMES[..dim].iter().map(|q| q.sqrt().fract()).collect();
    let shifts: Vec<Vec<f64>> = (0..N_SHIFTS).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect();
    // running log-sums per shift
    let mut log_sums = [f64::NEG_INFINITY; N_SHIFTS];
    let mut u = vec![0.0; dim];
    let mut z = vec![0.0; d];
    let mut done = 0usize;
    let mut n = START_POINTS;
    loop {
        for (s, shift) in shifts.iter().enumerate() {
            let mut acc = log_sums[s];
            for i in done..n {
                for k in 0..dim {
                    let x = (i as f64 * gen[k] + shift[k]).fract();
                    u[k] = 1.0 - (2.0 * x - 1.0).abs();
                }
                let v = sov.log_integrand(&u, &mut z);
                acc = log_add(acc, v);
            }
            log_sums[s] = acc;
        }
        done = n;
        let log_means: Vec<f64> = log_sums.iter().map(|v| v - (n as f64).ln()).collect();
        let log_prob = log_sum_exp(&log_means) - (N_SHIFTS as f64).ln();
        // standard error relative to the estimate, computed without underflow
        let rel: Vec<f64> = log_means.iter().map(|m| (m - log_prob).exp()).collect();
        let var = rel.iter().map(|r| (r - 1.0).powi(2)).sum::<f64>() / (N_SHIFTS * (N_SHIFTS - 1)) as f64;
        let rel_se = var.sqrt();
        let prob = log_prob.exp();
        let se = rel_se * prob;
        if (se <= target && rel_se <= REL_TARGET) || n >= MAX_POINTS {
            return Ok(OrthantEstimate { prob, log_prob, std_error: se, points: n });
        }
        n *= 2;
    }
}

#[inline]
fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Plain Monte Carlo estimate with its binomial standard error.
pub fn mc_oracle<R: Rng + ?Sized>(p: &OrthantProblem, n_samples: usize, rng: &mut R) -> Result<(f64, f64)> {
    let d = p.dim();
    let l = cholesky_psd(&p.cov, d)?;
    let mut z = vec![0.0; d];
    let mut hits = 0usize;
    for _ in 0..n_samples {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        let inside = (0..d).all(|i| {
            let x = p.mean[i] + (0..=i).map(|j| l[i * d + j] * z[j]).sum::<f64>();
            x > p.lower[i]
        });
        hits += inside as usize;
    }
    let est = hits as f64 / n_samples as f64;
    Ok((est, (est * (1.0 - est) / n_samples as f64).sqrt()))
}

/// Plain Cholesky with one jitter retry; row-major lower triangle.
fn cholesky_psd(cov: &[f64], d: usize) -> Result<Vec<f64>> {
    let maxdiag = (0..d).map(|i| cov[i * d + i]).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    for jitter in [0.0, 1e-10 * maxdiag] {
        let mut l = vec![0.0; d * d];
        let mut ok = true;
        'outer: for i in 0..d {
            for j in 0..=i {
                let s = cov[i * d + j] + if i == j { jitter } else { 0.0 }
                    - (0..j).map(|k| l[i * d + k] * l[j * d + k]).sum::<f64>();
                if i == j {
                    if s <= 0.0 {
                        if s > -1e-14 * maxdiag && jitter > 0.0 {
                            l[i * d + i] = 0.0;
                            continue;
                        }
                        ok = false;
                        break 'outer;
                    }
                    l[i * d + i] = s.sqrt();
                } else {
                    l[i * d + j] = if l[j * d + j] > 0.0 { s / l[j * d + j] } else { 0.0 };
                }
            }
        }
        if ok {
            return Ok(l);
        }
    }
    Err(Error::Matrix("covariance is not positive semidefinite".into()))
}

/// P(Z₁ > a, Z₂ > b) for standard normals with correlation `r`.
///
/// Drezner–Wesolowsky with Genz's refinements; absolute error about 1e-15.
pub fn bvn_upper(a: f64, b: f64, r: f64) -> f64 {
    use std::f64::consts::PI;
    const W6: [f64; 3] = [0.171_324_492_379_170_3, 0.360_761_573_048_138_6, 0.467_913_934_572_691_1];
    const X6: [f64; 3] = [-0.932_469_514_203_152, -0.661_209_386_466_264_5, -0.238_619_186_083_196_9];
    const W12: [f64; 6] = [
        0.047_175_336_386_511_83,
        0.106_939_325_995_318_4,
        0.160_078_328_543_346_2,
        0.203_167_426_723_065_9,
        0.233_492_536_538_354_8,
        0.249_147_045_813_402_8,
    ];
    const X12: [f64; 6] = [
        -0.981_560_634_246_719_3,
        -0.904_117_256_370_474_9,
        -0.769_902_674_194_304_7,
        -0.587_317_954_286_617_4,
        -0.367_831_498_998_180_2,
        -0.125_233_408_511_468_9,
    ];
    const W20: [f64; 10] = [
        0.017_614_007_139_152_12,
        0.040_601_429_800_386_94,
        0.062_672_048_334_109_06,
        0.083_276_741_576_704_75,
        0.101_930_119_817_240_4,
        0.118_194_531_961_518_4,
        0.131_688_638_449_176_6,
        0.142_096_109_318_382_1,
        0.149_172_986_472_603_7,
        0.152_753_387_130_725_9,
    ];
    const X20: [f64; 10] = [
        -0.993_128_599_185_094_9,
        -0.963_971_927_277_913_8,
        -0.912_234_428_251_326,
        -0.839_116_971_822_218_8,
        -0.746_331_906_460_150_8,
        -0.636_053_680_726_515,
        -0.510_867_001_950_827_1,
        -0.373_706_088_715_419_6,
        -0.227_785_851_141_645_1,
        -0.076_526_521_133_497_33,
    ];
    let (w, x): (&[f64], &[f64]) = if r.abs() < 0.3 {
        (&W6, &X6)
    } else if r.abs() < 0.75 {
        (&W12, &X12)
    } else {
        (&W20, &X20)
    };
    let (h, mut k) = (a, b);
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = (h * h + k * k) / 2.0;
        let asr = r.asin();
        for i in 0..w.len() {
            for sign in [-1.0, 1.0] {
                let sn = (asr * (sign * x[i] + 1.0) / 2.0).sin();
                bvn += w[i] * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            }
        }
        bvn = bvn * asr / (4.0 * PI) + norm_cdf(-h) * norm_cdf(-k);
    } else {
        if r < 0.0 {
            k = -k;
            hk = -hk;
        }
        if r.abs() < 1.0 {
            let as_ = (1.0 - r) * (1.0 + r);
            let mut aa = as_.sqrt();
            let bs = (h - k).powi(2);
            let c = (4.0 - hk) / 8.0;
            let d = (12.0 - hk) / 16.0;
            let asr = -(bs / as_ + hk) / 2.0;
            if asr > -100.0 {
                bvn = aa * asr.exp() * (1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_ * as_ / 5.0);
            }
            if -hk < 100.0 {
                let bb = bs.sqrt();
                bvn -= (-hk / 2.0).exp()
                    * (2.0 * PI).sqrt()
                    * norm_cdf(-bb / aa)
                    * bb
                    * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
            }
            aa /= 2.0;
            for i in 0..w.len() {
                for sign in [-1.0, 1.0] {
                    let xs = (aa * (sign * x[i] + 1.0)).powi(2);
                    let rs = (1.0 - xs).sqrt();
                    let asr = -(bs / xs + hk) / 2.0;
                    if asr > -100.0 {
                        bvn += aa
                            * w[i]
                            * asr.exp()
                            * ((-hk * xs / (2.0 * (1.0 + rs) * (1.0 + rs))).exp() / rs
                                - (1.0 + c * xs * (1.0 + d * xs)));
                    }
                }
            }
            bvn = -bvn / (2.0 * PI);
        }
        if r > 0.0 {
            bvn += norm_cdf(-h.max(k));
        } else {
            bvn = -bvn;
            if k > h {
                bvn += norm_cdf(k) - norm_cdf(h);
            }
        }
    }
    bvn.clamp(0.0, 1.0)
}

/// Coordinate to condition on in the trivariate integrals: the most
/// restrictive bound whose two conditional variances stay away from zero,
/// so the integrand's mass sits near the lower limit.
fn conditioning_index(a: &[f64; 3], corr: &dyn Fn(usize, usize) -> f64) -> Option<(usize, usize, usize)> {
    let mut order = [0usize, 1, 2];
    order.sort_by(|&x, &y| a[y].total_cmp(&a[x]));
    let ok = |i: usize, tol: f64| {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        (1.0 - corr(i, j).powi(2)).min(1.0 - corr(i, k).powi(2)) > tol
    };
    let i = order.into_iter().find(|&i| ok(i, 1e-2)).or_else(|| order.into_iter().find(|&i| ok(i, 1e-8)))?;
    Some((i, (i + 1) % 3, (i + 2) % 3))
}

/// P(Z₁ > a₁, Z₂ > a₂, Z₃ > a₃) for standard normals with correlations
/// `r = [r₁₂, r₁₃, r₂₃]`.
///
/// Conditions on one coordinate and integrates the exact bivariate upper
/// probability of the other two with composite Gauss–Legendre, doubling
/// the panel count until successive values agree to 1e-6 relative.
/// Returns `None` when the result is below 1e-12, when the conditional
/// variances degenerate, or when the refinement does not settle.
pub fn tvn_upper(a: [f64; 3], r: [f64; 3]) -> Option<f64> {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    let rule = RULE.get_or_init(|| GaussLegendre::new(10));
    let corr = |i: usize, j: usize| -> f64 {
        match (i.min(j), i.max(j)) {
            (0, 1) => r[0],
            (0, 2) => r[1],
            _ => r[2],
        }
    };
    // a tail beyond 7.1 already puts the probability below 1e-12
    if a.iter().any(|&x| x > 7.1) {
        return None;
    }
    let (i, j, k) = conditioning_index(&a, &corr)?;
    let (rij, rik) = (corr(i, j), corr(i, k));
    let (sj, sk) = ((1.0 - rij * rij).sqrt(), (1.0 - rik * rik).sqrt());
    let rho = ((corr(j, k) - rij * rik) / (sj * sk)).clamp(-1.0, 1.0);
    let lo = a[i].max(-9.0);
    let hi = (lo.max(0.0).powi(2) + 74.0).sqrt();
    if lo >= hi {
        return None;
    }
    let f = |z: f64| norm_pdf(z) * bvn_upper((a[j] - rij * z) / sj, (a[k] - rik * z) / sk, rho);
    let composite = |panels: usize| -> f64 {
        let h = (hi - lo) / panels as f64;
        (0..panels).map(|p| rule.integrate(lo + p as f64 * h, lo + (p + 1) as f64 * h, &f)).sum()
    };
    let mut prev = composite(2);
    let mut panels = 4;
    while panels <= 128 {
        let cur = composite(panels);
        if (cur - prev).abs() <= 1e-6 * cur.abs() + 1e-15 {
            return (cur > 1e-12).then_some(cur.min(1.0));
        }
        prev = cur;
        panels *= 2;
    }
    None
}

/// `ln ∫_lo^∞ exp(g(z)) dz` for a concave `g` whose mass lies to the right
/// of `lo`. The range is extended until `g` has fallen 40 below its
/// running maximum; panels double until the result moves by < 1e-8.
fn ln_tail_integral<F: Fn(f64) -> f64>(lo: f64, g: F) -> Option<f64> {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    let rule = RULE.get_or_init(|| GaussLegendre::new(10));
    let lo = lo.max(-38.0);
    let g0 = g(lo);
    if g0.is_nan() || g0 == f64::INFINITY {
        return None;
    }
    let mut gmax = g0;
    let mut t = 1.0 / lo.max(1.0);
    let mut prev = g0;
    let mut found = false;
    for _ in 0..80 {
        let gz = g(lo + t);
        if gz.is_nan() {
            return None;
        }
        gmax = gmax.max(gz);
        if gz < gmax - 40.0 && gz <= prev {
            found = true;
            break;
        }
        prev = gz;
        t *= 2.0;
    }
    if !found || gmax == f64::NEG_INFINITY {
        return None;
    }
    let composite = |panels: usize| -> f64 {
        let h = t / panels as f64;
        let mut terms = Vec::with_capacity(panels * rule.len());
        for p in 0..panels {
            let mid = lo + (p as f64 + 0.5) * h;
            for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
                terms.push((0.5 * h * w).ln() + g(mid + 0.5 * h * x));
            }
        }
        log_sum_exp(&terms)
    };
    let mut prev = composite(4);
    let mut panels = 8;
    while panels <= 256 {
        let cur = composite(panels);
        if (cur - prev).abs() < 1e-8 {
            return cur.is_finite().then_some(cur);
        }
        prev = cur;
        panels *= 2;
    }
    None
}

/// `ln P(Z₁ > a, Z₂ > b)` with relative accuracy also far in the tails.
/// `None` only for near-perfect negative correlation with a tiny result.
pub fn ln_bvn_upper(a: f64, b: f64, r: f64) -> Option<f64> {
    let p = bvn_upper(a, b, r);
    if p > 1e-10 {
        return Some(p.ln());
    }
    let (a, b) = if a >= b { (a, b) } else { (b, a) };
    let s2 = (1.0 - r) * (1.0 + r);
    if s2 < 1e-14 {
        return if r > 0.0 { Some(log_norm_cdf(-a)) } else { None };
    }
    let s = s2.sqrt();
    ln_tail_integral(a, |z| norm_ln_pdf(z) + log_norm_cdf((r * z - b) / s))
}

/// `ln P(Z₁ > a₁, Z₂ > a₂, Z₃ > a₃)`, as [`tvn_upper`] but keeping relative
/// accuracy for tiny probabilities.
pub fn ln_tvn_upper(a: [f64; 3], r: [f64; 3]) -> Option<f64> {
    if let Some(p) = tvn_upper(a, r) {
        return Some(p.ln());
    }
    let corr = |i: usize, j: usize| -> f64 {
        match (i.min(j), i.max(j)) {
            (0, 1) => r[0],
            (0, 2) => r[1],
            _ => r[2],
        }
    };
    let (i, j, k) = conditioning_index(&a, &corr)?;
    let (rij, rik) = (corr(i, j), corr(i, k));
    let (sj, sk) = ((1.0 - rij * rij).sqrt(), (1.0 - rik * rik).sqrt());
    let rho = ((corr(j, k) - rij * rik) / (sj * sk)).clamp(-1.0, 1.0);
    let failed = std::cell::Cell::new(false);
    let out = ln_tail_integral(a[i], |z| {
        match ln_bvn_upper((a[j] - rij * z) / sj, (a[k] - rik * z) / sk, rho) {
            Some(v) => norm_ln_pdf(z) + v,
            None => {
                failed.set(true);
                f64::NEG_INFINITY
            }
        }
    });
    if failed.get() {
        None
    } else {
        out
    }
}

/// Draw from N(mean, cov) truncated to x > lower, given the precision
/// matrix Q = cov⁻¹ (row-major). Uses rejection while the acceptance rate
/// is reasonable, otherwise a separation-of-variables draw followed by
/// Gibbs sweeps on the univariate conditionals.
pub fn sample_truncated<R: Rng + ?Sized>(
    p: &OrthantProblem,
    precision: &[f64],
    prob_hint: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let d = p.dim();
    let l = cholesky_psd(&p.cov, d)?;
    let mut x = vec![0.0; d];
    let mut z = vec![0.0; d];
    if prob_hint >= 0.05 {
        for _ in 0..400 {
            for v in z.iter_mut() {
                *v = StandardNormal.sample(rng);
            }
            for i in 0..d {
                x[i] = p.mean[i] + (0..=i).map(|j| l[i * d + j] * z[j]).sum::<f64>();
            }
            if (0..d).all(|i| x[i] > p.lower[i]) {
                return Ok(x);
            }
        }
    }
    // sequential conditional draw in the original ordering
    for i in 0..d {
        let dot: f64 = (0..i).map(|j| l[i * d + j] * z[j]).sum();
        let lii = l[i * d + i];
        if lii > 0.0 {
            let c = (p.lower[i] - p.mean[i] - dot) / lii;
            z[i] = std_normal_above(c, rng);
        } else {
            z[i] = 0.0;
        }
        x[i] = p.mean[i] + dot + lii * z[i];
        if x[i] <= p.lower[i] {
            x[i] = p.lower[i] + f64::EPSILON * p.lower[i].abs().max(1.0);
        }
    }
    for _ in 0..GIBBS_SWEEPS {
        for i in 0..d {
            let qii = precision[i * d + i];
            let shift: f64 = (0..d).filter(|&j| j != i).map(|j| precision[i * d + j] * (x[j] - p.mean[j])).sum();
            let m = p.mean[i] - shift / qii;
            let sd = 1.0 / qii.sqrt();
            x[i] = m + sd * std_normal_above((p.lower[i] - m) / sd, rng);
        }
    }
    Ok(x)
}

/// Gibbs sweeps applied after a sequential draw.
pub const GIBBS_SWEEPS: usize = 25;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn independent_quadrant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = OrthantProblem::equicorrelated(2, 0.0, vec![0.0, 0.0]).unwrap();
        let e = orthant_prob(&p, 1e-4, &mut rng).unwrap();
        assert!((e.prob - 0.25).abs() < 1e-4);
    }

    #[test]
    fn one_dimension_is_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = OrthantProblem::new(vec![1.0], vec![1.0], vec![0.0]).unwrap();
        let e = orthant_prob(&p, 1e-4, &mut rng).unwrap();
        assert!((e.prob - 0.841_344_746_068_542_9).abs() < 1e-14, "{}", e.prob);
        assert_eq!(e.points, 0);
    }

    #[test]
    fn bivariate_exact_formula() {
        for &rho in &[-0.95f64, -0.5, 0.0, 0.3, 0.8, 0.99] {
            let want = 0.25 + rho.asin() / (2.0 * std::f64::consts::PI);
            assert!((bvn_upper(0.0, 0.0, rho) - want).abs() < 1e-14, "rho = {rho}");
        }
        // independence with offsets
        let got = bvn_upper(0.3, -1.1, 0.0);
        assert!((got - norm_cdf(-0.3) * norm_cdf(1.1)).abs() < 1e-15);
    }

    #[test]
    fn unbounded_coordinates_drop_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = OrthantProblem::equicorrelated(3, 0.4, vec![f64::NEG_INFINITY; 3]).unwrap();
        assert_eq!(orthant_prob(&p, 1e-4, &mut rng).unwrap().prob, 1.0);
        let p = OrthantProblem::equicorrelated(3, 0.4, vec![0.5, f64::NEG_INFINITY, f64::NEG_INFINITY]).unwrap();
        let e = orthant_prob(&p, 1e-4, &mut rng).unwrap();
        assert!((e.prob - norm_cdf(-0.5)).abs() < 1e-14);
    }

    #[test]
    fn singular_covariance_is_repaired() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = OrthantProblem::new(vec![0.0, 0.0], vec![1.0, 1.0, 1.0, 1.0], vec![0.0, 0.0]).unwrap();
        let e = orthant_prob(&p, 1e-4, &mut rng).unwrap();
        assert!((e.prob - 0.5).abs() < 2e-3, "{}", e.prob);
        let bad = OrthantProblem::new(vec![0.0, 0.0], vec![1.0, 2.0, 2.0, 1.0], vec![0.0, 0.0]).unwrap();
        assert!(matches!(orthant_prob(&bad, 1e-4, &mut rng), Err(Error::Matrix(_))));
    }

    #[test]
    fn tiny_probability_keeps_relative_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = OrthantProblem::equicorrelated(2, 0.0, vec![9.0, 9.0]).unwrap();
        let e = orthant_prob(&p, 1e-4, &mut rng).unwrap();
        let want = 2.0 * log_norm_cdf(-9.0);
        assert!((e.log_prob - want).abs() < 1e-2, "{} vs {want}", e.log_prob);
    }

    #[test]
    fn asymmetric_covariance_rejected() {
        let r = OrthantProblem::new(vec![0.0, 0.0], vec![1.0, 0.5, 0.4, 1.0], vec![0.0, 0.0]);
        assert!(matches!(r, Err(Error::Matrix(_))));
    }

    #[test]
    fn log_bivariate_tails() {
        for (a, b) in [(8.0, 7.5), (12.0, -1.0), (5.0, 5.0)] {
            let exact = log_norm_cdf(-a) + log_norm_cdf(-b);
            assert!((ln_bvn_upper(a, b, 0.0).unwrap() - exact).abs() < 1e-7);
        }
        // perfect positive dependence limit
        let v = ln_bvn_upper(9.0, 8.0, 1.0 - 1e-15).unwrap();
        assert!((v - log_norm_cdf(-9.0)).abs() < 1e-6);
        // the tail integral agrees with the direct formula where both apply
        let (a, b, r) = (4.5, 4.0, 0.3);
        let direct = bvn_upper(a, b, r).ln();
        let tail = ln_tail_integral(a, |z| norm_ln_pdf(z) + log_norm_cdf((r * z - b) / (1.0 - r * r).sqrt())).unwrap();
        assert!((tail - direct).abs() < 1e-5, "{tail} vs {direct}");
    }

    #[test]
    fn log_trivariate_tails() {
        let a = [6.0, 7.0, 6.5];
        let exact: f64 = a.iter().map(|&x| log_norm_cdf(-x)).sum();
        assert!((ln_tvn_upper(a, [0.0; 3]).unwrap() - exact).abs() < 1e-7);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r = [0.5, -0.2, 0.3];
        let cov = vec![1.0, 0.5, -0.2, 0.5, 1.0, 0.3, -0.2, 0.3, 1.0];
        let a = [4.0, 3.5, 2.0];
        let v = ln_tvn_upper(a, r).unwrap();
        let prob = OrthantProblem::new(vec![0.0; 3], cov, a.to_vec()).unwrap();
        let e = orthant_prob(&prob, 1e-20, &mut rng).unwrap();
        assert!((v - e.log_prob).abs() < 0.05, "{v} vs {}", e.log_prob);
    }

    #[test]
    fn trivariate_zero_orthant_closed_form() {
        use std::f64::consts::PI;
        for r in [[0.0f64, 0.0, 0.0], [0.5, 0.3, -0.2], [0.9, 0.8, 0.75], [-0.45, -0.4, -0.1], [0.99, 0.0, 0.0]] {
            let exact = 0.125 + (r[0].asin() + r[1].asin() + r[2].asin()) / (4.0 * PI);
            let p = tvn_upper([0.0; 3], r).unwrap();
            assert!((p - exact).abs() < 1e-9, "{r:?}: {p} vs {exact}");
        }
    }

    #[test]
    fn trivariate_matches_lattice() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cov = vec![1.0, 0.6, -0.3, 0.6, 1.0, 0.2, -0.3, 0.2, 1.0];
        for a in [[0.3, -0.5, 1.0], [2.0, 1.5, 2.5], [-1.0, -2.0, 0.1]] {
            let p = tvn_upper(a, [0.6, -0.3, 0.2]).unwrap();
            let prob = OrthantProblem::new(vec![0.0; 3], cov.clone(), a.to_vec()).unwrap();
            let e = orthant_prob(&prob, 1e-7, &mut rng).unwrap();
            assert!((p - e.prob).abs() < 5.0 * e.std_error.max(1e-9) + 1e-8, "{a:?}: {p} vs {}", e.prob);
        }
    }
}
