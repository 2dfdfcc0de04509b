//! Normal, truncated-normal and truncated-gamma helpers.
//!
//! The truncated samplers invert the CDF on whichever tail keeps the target
//! probability small, so draws stay accurate deep in either tail.

use rand::Rng;
use libm::erfc;
use statrs::function::erf::erfc_inv;
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

#[inline]
pub fn norm_ln_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Standard normal CDF.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// log Φ(x), accurate far into the lower tail.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x > 5.0 {
        (-norm_cdf(-x)).ln_1p()
    } else if x > -30.0 {
        norm_cdf(x).ln()
    } else {
        // asymptotic Mills-ratio expansion
        let z2 = 1.0 / (x * x);
        let series = 1.0 - z2 * (1.0 - 3.0 * z2 * (1.0 - 5.0 * z2 * (1.0 - 7.0 * z2)));
        -0.5 * x * x - (-x).ln() - LN_SQRT_2PI + series.ln()
    }
}

/// Standard normal quantile.
#[inline]
pub fn norm_ppf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// The point `x` with `log Φ(-x) = log_q`, i.e. an upper-tail quantile given
/// on the log scale. Works past the underflow limit of `Φ`.
pub fn norm_isf_log(log_q: f64) -> f64 {
    if log_q >= 0.0 {
        return f64::NEG_INFINITY;
    }
    if log_q > -700.0 {
        return -norm_ppf(log_q.exp());
    }
    let mut x = (-2.0 * log_q).sqrt();
    for _ in 0..50 {
        let g = log_norm_cdf(-x) - log_q;
        let dg = -(norm_ln_pdf(x) - log_norm_cdf(-x)).exp();
        let step = g / dg;
        x -= step;
        if step.abs() < 1e-14 * x.abs() {
            break;
        }
    }
    x
}

/// Numerically stable log(Σ exp(v)).
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Draw a standard normal truncated to `[a, ∞)`.
pub fn std_normal_above<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    if a < 8.0 {
        // inverse CDF on the upper tail: X = S⁻¹(U·S(a)), S(x) = Φ(-x)
        let u: f64 = rng.random();
        let log_q = log_norm_cdf(-a) + (1.0 - u).ln();
        norm_isf_log(log_q).max(a)
    } else {
        // exponential rejection for the far tail
        let rate = 0.5 * (a + (a * a + 4.0).sqrt());
        loop {
            let e: f64 = -(1.0 - rng.random::<f64>()).ln() / rate;
            let z = a + e;
            let rho = (-0.5 * (z - rate) * (z - rate)).exp();
            if rng.random::<f64>() <= rho {
                return z;
            }
        }
    }
}

/// Draw from N(mean, sd²) truncated to `(lower, ∞)`.
pub fn normal_above<R: Rng + ?Sized>(mean: f64, sd: f64, lower: f64, rng: &mut R) -> f64 {
    mean + sd * std_normal_above((lower - mean) / sd, rng)
}

/// Normal distribution truncated to a finite interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedNormal {
    pub mean: f64,
    pub sd: f64,
    pub lo: f64,
    pub hi: f64,
}

impl TruncatedNormal {
    pub fn new(mean: f64, sd: f64, lo: f64, hi: f64) -> Self {
        Self { mean, sd, lo, hi }
    }

    fn std_bounds(&self) -> (f64, f64) {
        ((self.lo - self.mean) / self.sd, (self.hi - self.mean) / self.sd)
    }

    /// Probability mass of the untruncated normal inside `[lo, hi]`.
    pub fn mass(&self) -> f64 {
        let (a, b) = self.std_bounds();
        if a > 0.0 {
            norm_cdf(-a) - norm_cdf(-b)
        } else {
            norm_cdf(b) - norm_cdf(a)
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if !(self.lo..=self.hi).contains(&x) {
            return f64::NEG_INFINITY;
        }
        norm_ln_pdf((x - self.mean) / self.sd) - self.sd.ln() - self.mass().ln()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.lo {
            return 0.0;
        }
        if x >= self.hi {
            return 1.0;
        }
        let (a, _) = self.std_bounds();
        let z = (x - self.mean) / self.sd;
        let num = if a > 0.0 {
            norm_cdf(-a) - norm_cdf(-z)
        } else {
            norm_cdf(z) - norm_cdf(a)
        };
        (num / self.mass()).clamp(0.0, 1.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (a, b) = self.std_bounds();
        let u: f64 = rng.random();
        let z = if a > 0.0 {
            // work with upper tails: S(z) between S(b) and S(a)
            let (sa, sb) = (norm_cdf(-a), norm_cdf(-b));
            -norm_ppf(sb + u * (sa - sb))
        } else {
            let (fa, fb) = (norm_cdf(a), norm_cdf(b));
            norm_ppf(fa + u * (fb - fa))
        };
        (self.mean + self.sd * z).clamp(self.lo, self.hi)
    }
}

/// Gamma(shape, rate) restricted to `(floor, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedGamma {
    pub shape: f64,
    pub rate: f64,
    pub floor: f64,
}

impl TruncatedGamma {
    pub fn new(shape: f64, rate: f64, floor: f64) -> Self {
        Self { shape, rate, floor }
    }

    /// Mass of the untruncated gamma above the floor.
    pub fn upper_mass(&self) -> f64 {
        gamma_ur(self.shape, self.rate * self.floor)
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x <= self.floor {
            return f64::NEG_INFINITY;
        }
        self.shape * self.rate.ln() + (self.shape - 1.0) * x.ln()
            - self.rate * x
            - ln_gamma(self.shape)
            - self.upper_mass().ln()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.floor {
            return 0.0;
        }
        let z0 = self.rate * self.floor;
        let z = self.rate * x;
        let mass = gamma_ur(self.shape, z0);
        ((gamma_lr(self.shape, z) - gamma_lr(self.shape, z0)) / mass).clamp(0.0, 1.0)
    }

    /// Inverse-CDF draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let z0 = self.rate * self.floor;
        let mass = gamma_ur(self.shape, z0);
        // target upper-tail probability of the untruncated gamma
        let q = u * mass;
        let z = if q < 0.5 {
            invert_gamma_tail(self.shape, q, true, z0)
        } else {
            let p = gamma_lr(self.shape, z0) + (1.0 - u) * mass;
            invert_gamma_tail(self.shape, p, false, z0)
        };
        (z / self.rate).max(self.floor * (1.0 + 1e-12)).max(f64::MIN_POSITIVE)
    }
}

/// Solve `Q(shape, z) = target` (upper) or `P(shape, z) = target` (lower) for
/// `z >= min_z`, by safeguarded Newton on `ln z`.
fn invert_gamma_tail(shape: f64, target: f64, upper: bool, min_z: f64) -> f64 {
    let tail = |z: f64| {
        if upper {
            gamma_ur(shape, z)
        } else {
            gamma_lr(shape, z)
        }
    };
    if target <= 0.0 {
        return if upper { f64::INFINITY } else { min_z };
    }
    let log_target = target.ln();
    // bracket in t = ln z; g(t) = ln tail(e^t) - ln target is monotone
    let g = |t: f64| tail(t.exp()).ln() - log_target;
    let sign = if upper { -1.0 } else { 1.0 };
    let mut lo = if min_z > 0.0 { min_z.ln() } else { -700.0 };
    let mut hi = (shape.max(1.0) * 2.0).ln();
    while sign * g(hi) < 0.0 {
        hi += 1.0;
        if hi > 700.0 {
            break;
        }
    }
    if sign * g(lo) > 0.0 {
        return lo.exp();
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..200 {
        let z = t.exp();
        let val = tail(z);
        let gt = val.ln() - log_target;
        if sign * gt > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        // d/dt ln tail = ± z·pdf(z)/tail
        let ln_dens = shape * z.ln() - z - ln_gamma(shape);
        let deriv = sign * (ln_dens - val.ln()).exp();
        let mut next = t - gt / deriv;
        if !next.is_finite() || next <= lo || next >= hi {
            next = 0.5 * (lo + hi);
        }
        if (next - t).abs() < 1e-13 * (1.0 + t.abs()) || hi - lo < 1e-14 {
            t = next;
            break;
        }
        t = next;
    }
    t.exp()
}

/// ln Beta(a, b) density at x.
pub fn beta_ln_pdf(x: f64, a: f64, b: f64) -> f64 {
    if !(x > 0.0 && x < 1.0) {
        return f64::NEG_INFINITY;
    }
    (a - 1.0) * x.ln() + (b - 1.0) * (-x).ln_1p() + ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b)
}

/// ln Gamma(shape, rate) density at x.
pub fn gamma_ln_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() + (shape - 1.0) * x.ln() - rate * x - ln_gamma(shape)
}

/// ln N(mean, var) density at x.
pub fn normal_ln_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (2.0 * PI * var).ln() - 0.5 * d * d / var
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn log_cdf_matches_direct_and_tail() {
        for &x in &[-20.0, -5.0, -1.0, 0.0, 2.0, 6.0] {
            assert!((log_norm_cdf(x) - norm_cdf(x).ln()).abs() < 1e-10 * (1.0 + x * x));
        }
        // continuity across the asymptotic switch
        let left = log_norm_cdf(-30.0 - 1e-9);
        let right = log_norm_cdf(-30.0 + 1e-9);
        assert!((left - right).abs() < 1e-6);
    }

    #[test]
    fn upper_quantile_inverts_log_tail() {
        for &lq in &[-0.1, -5.0, -300.0, -800.0, -5000.0] {
            let x = norm_isf_log(lq);
            assert!((log_norm_cdf(-x) - lq).abs() < 1e-8 * lq.abs().max(1.0));
        }
    }

    #[test]
    fn truncated_normal_draws_respect_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &lower in &[-3.0, 0.0, 4.0, 12.0, 40.0] {
            for _ in 0..200 {
                assert!(normal_above(0.0, 1.0, lower, &mut rng) >= lower);
            }
        }
        let tn = TruncatedNormal::new(1.0, 1.0, -1.0, 1.0);
        for _ in 0..200 {
            let x = tn.sample(&mut rng);
            assert!((-1.0..=1.0).contains(&x));
        }
    }

    #[test]
    fn truncated_gamma_inverse_cdf_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for &(shape, rate) in &[(0.2, 2.0), (3.0, 10.0), (50.0, 400.0)] {
            let tg = TruncatedGamma::new(shape, rate, 1e-5);
            for _ in 0..100 {
                let x = tg.sample(&mut rng);
                assert!(x > 1e-5);
                let c = tg.cdf(x);
                assert!((0.0..=1.0).contains(&c));
            }
        }
    }
}
