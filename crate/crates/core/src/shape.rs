//! Shape hypotheses and Bayes factors on the change-point signature.
//!
//! A draw's shape is the triple (α at or below the interval, strictly
//! inside, at or above). The Bayes factor between two disjoint sets of
//! signatures is estimated as posterior odds divided by prior odds.

use crate::bspline::KnotVector;
use crate::error::{Error, Result};
use crate::model::{knot_vector, Hyperparameters, Signature, WORK_HI, WORK_LO};
use crate::sampler::Draw;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extremum {
    Max,
    Min,
}

impl fmt::Display for Extremum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Extremum::Max => "max",
            Extremum::Min => "min",
        })
    }
}

/// Interior extrema from left to right implied by a signature and the sign
/// of M. Left of every interior α the derivative has the sign of
/// M·(-1)^(inside + above), and it flips at each interior α.
pub fn extremum_pattern(sig: Signature, m: f64) -> Vec<Extremum> {
    let mut increasing = (m > 0.0) == (sig.inside + sig.above).is_multiple_of(2);
    (0..sig.inside)
        .map(|_| {
            let e = if increasing { Extremum::Max } else { Extremum::Min };
            increasing = !increasing;
            e
        })
        .collect()
}

/// Every signature with `h` change points.
pub fn all_signatures(h: usize) -> Vec<Signature> {
    let mut out = Vec::new();
    for below in 0..=h {
        for inside in 0..=h - below {
            out.push(Signature::new(below, inside, h - below - inside));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeHypothesis {
    pub signatures: BTreeSet<Signature>,
    pub label: Option<String>,
}

impl ShapeHypothesis {
    pub fn new<I: IntoIterator<Item = Signature>>(signatures: I, label: Option<String>) -> Self {
        Self { signatures: signatures.into_iter().collect(), label }
    }

    pub fn contains(&self, s: &Signature) -> bool {
        self.signatures.contains(s)
    }

    pub fn is_empty(&self) -> bool {
        self.signatures.is_empty()
    }

    /// Signatures with `h` change points not in this hypothesis.
    pub fn complement(&self, h: usize) -> Self {
        let label = self.label.as_ref().map(|l| format!("not {l}"));
        Self::new(all_signatures(h).into_iter().filter(|s| !self.contains(s)), label)
    }

    pub fn monotone(h: usize) -> Self {
        Self::new(all_signatures(h).into_iter().filter(|s| s.inside == 0), Some("monotone".into()))
    }

    pub fn has_extrema(h: usize, f: usize) -> Self {
        Self::new(all_signatures(h).into_iter().filter(|s| s.inside >= f), Some(format!("has-extrema({f})")))
    }

    pub fn exactly(h: usize, f: usize) -> Self {
        Self::new(all_signatures(h).into_iter().filter(|s| s.inside == f), Some(format!("exactly({f})")))
    }

    /// Signatures whose interior extrema follow `pattern` for the sign of `m`.
    pub fn pattern(h: usize, m: f64, pattern: &[Extremum]) -> Self {
        let text: Vec<String> = pattern.iter().map(|e| e.to_string()).collect();
        Self::new(
            all_signatures(h).into_iter().filter(|s| extremum_pattern(*s, m) == pattern),
            Some(format!("pattern({})", text.join(","))),
        )
    }

    /// Parse a hypothesis: `monotone`, `non-monotone`, `has-extrema(F)`,
    /// `exactly(F)`, `pattern(max,min,...)`, or explicit triples such as
    /// `0,2,0;1,1,0`. `complement` is resolved by [`parse_pair`].
    pub fn parse(spec: &str, h: usize, m: f64) -> Result<Self> {
        let s = spec.trim();
        let inner = |prefix: &str| -> Option<&str> { s.strip_prefix(prefix).and_then(|r| r.strip_suffix(')')) };
        let count = |v: &str| -> Result<usize> {
            v.trim().parse().map_err(|_| Error::Spec(format!("expected a count in {s:?}")))
        };
        let hyp = if s == "monotone" {
            Self::monotone(h)
        } else if s == "non-monotone" {
            let mut x = Self::has_extrema(h, 1);
            x.label = Some("non-monotone".into());
            x
        } else if let Some(v) = inner("has-extrema(") {
            Self::has_extrema(h, count(v)?)
        } else if let Some(v) = inner("exactly(") {
            Self::exactly(h, count(v)?)
        } else if let Some(v) = inner("pattern(") {
            let pat = v
                .split(',')
                .map(|p| match p.trim() {
                    "max" => Ok(Extremum::Max),
                    "min" => Ok(Extremum::Min),
                    other => Err(Error::Spec(format!("unknown extremum {other:?}; use max or min"))),
                })
                .collect::<Result<Vec<_>>>()?;
            Self::pattern(h, m, &pat)
        } else {
            let mut sigs = BTreeSet::new();
            for part in s.split(';').filter(|p| !p.trim().is_empty()) {
                let v: Vec<&str> = part.split(',').collect();
                if v.len() != 3 {
                    return Err(Error::Spec(format!("cannot parse hypothesis {s:?}")));
                }
                let sig = Signature::new(count(v[0])?, count(v[1])?, count(v[2])?);
                if sig.h() != h {
                    return Err(Error::Spec(format!(
                        "signature {},{},{} does not have {h} change points",
                        sig.below, sig.inside, sig.above
                    )));
                }
                sigs.insert(sig);
            }
            Self::new(sigs, Some(s.to_string()))
        };
        if hyp.is_empty() {
            return Err(Error::Spec(format!("hypothesis {s:?} contains no signature with h = {h}")));
        }
        Ok(hyp)
    }
}

/// Parse two hypotheses; either may be `complement` of the other. Errors
/// when they overlap.
pub fn parse_pair(spec1: &str, spec2: &str, h: usize, m: f64) -> Result<(ShapeHypothesis, ShapeHypothesis)> {
    let (c1, c2) = (spec1.trim() == "complement", spec2.trim() == "complement");
    let (h1, h2) = match (c1, c2) {
        (true, true) => return Err(Error::Spec("both hypotheses are 'complement'".into())),
        (false, true) => {
            let a = ShapeHypothesis::parse(spec1, h, m)?;
            let b = a.complement(h);
            (a, b)
        }
        (true, false) => {
            let b = ShapeHypothesis::parse(spec2, h, m)?;
            (b.complement(h), b)
        }
        _ => (ShapeHypothesis::parse(spec1, h, m)?, ShapeHypothesis::parse(spec2, h, m)?),
    };
    check_disjoint(&h1, &h2)?;
    if h2.is_empty() || h1.is_empty() {
        return Err(Error::Spec("a hypothesis is empty".into()));
    }
    Ok((h1, h2))
}

fn check_disjoint(a: &ShapeHypothesis, b: &ShapeHypothesis) -> Result<()> {
    if let Some(s) = a.signatures.intersection(&b.signatures).next() {
        return Err(Error::Spec(format!(
            "hypotheses overlap at signature {},{},{}",
            s.below, s.inside, s.above
        )));
    }
    Ok(())
}

/// Prior probabilities that one change point falls below, inside and
/// above the working interval.
pub fn location_probs(hp: &Hyperparameters) -> (f64, f64, f64) {
    let tn = hp.alpha_prior();
    let below = tn.cdf(WORK_LO);
    let upto = tn.cdf(WORK_HI);
    (below, upto - below, 1.0 - upto)
}

fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

/// Prior probability of a single signature (multinomial over independent
/// change points).
pub fn signature_prior(sig: Signature, hp: &Hyperparameters) -> f64 {
    let (pb, pin, pa) = location_probs(hp);
    let term = |p: f64, k: usize| if k == 0 { 0.0 } else { k as f64 * p.ln() };
    (ln_factorial(sig.h()) - ln_factorial(sig.below) - ln_factorial(sig.inside) - ln_factorial(sig.above)
        + term(pb, sig.below)
        + term(pin, sig.inside)
        + term(pa, sig.above))
    .exp()
}

pub fn prior_shape_prob(hyp: &ShapeHypothesis, hp: &Hyperparameters) -> Result<f64> {
    if hyp.is_empty() {
        return Err(Error::Domain("empty hypothesis".into()));
    }
    if let Some(s) = hyp.signatures.iter().find(|s| s.h() != hp.h) {
        return Err(Error::Domain(format!(
            "signature {},{},{} does not have h = {} change points",
            s.below, s.inside, s.above, hp.h
        )));
    }
    Ok(hyp.signatures.iter().map(|&s| signature_prior(s, hp)).sum())
}

/// Which count was raised from zero to one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    /// N₂ = 0: the reported BF is a lower bound.
    Lower,
    /// N₁ = 0: the reported BF is an upper bound.
    Upper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesFactor {
    pub bf: f64,
    pub n1: usize,
    pub n2: usize,
    pub q1: f64,
    pub q2: f64,
    pub bound: Option<Bound>,
}

/// BF₁₂ = (N₁/N₂)·(q₂/q₁) from signature counts.
pub fn bayes_factor(
    signatures: &[Signature],
    hyp1: &ShapeHypothesis,
    hyp2: &ShapeHypothesis,
    hp: &Hyperparameters,
) -> Result<BayesFactor> {
    if signatures.is_empty() {
        return Err(Error::Domain("no draws".into()));
    }
    check_disjoint(hyp1, hyp2)?;
    let q1 = prior_shape_prob(hyp1, hp)?;
    let q2 = prior_shape_prob(hyp2, hp)?;
    let n1 = signatures.iter().filter(|s| hyp1.contains(s)).count();
    let n2 = signatures.iter().filter(|s| hyp2.contains(s)).count();
    let (e1, e2, bound) = match (n1, n2) {
        (0, 0) => return Err(Error::Indeterminate("no draw falls in either hypothesis".into())),
        (_, 0) => (n1 as f64, 1.0, Some(Bound::Lower)),
        (0, _) => (1.0, n2 as f64, Some(Bound::Upper)),
        _ => (n1 as f64, n2 as f64, None),
    };
    Ok(BayesFactor { bf: (e1 / e2) * (q2 / q1), n1, n2, q1, q2, bound })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// BF of {no interior extremum} against {at least one}.
    FavorMonotone,
    /// The reciprocal arrangement.
    FavorNonMonotone,
}

pub fn monotonicity_test(signatures: &[Signature], direction: Direction, hp: &Hyperparameters) -> Result<BayesFactor> {
    let mono = ShapeHypothesis::monotone(hp.h);
    let non = ShapeHypothesis::has_extrema(hp.h, 1);
    match direction {
        Direction::FavorMonotone => bayes_factor(signatures, &mono, &non, hp),
        Direction::FavorNonMonotone => bayes_factor(signatures, &non, &mono, hp),
    }
}

/// True when some interior change point lies on a knot span where every
/// B-spline is switched off, so the curve is flat there and that α does
/// not mark a unique extremum.
pub fn has_flat_region(draw: &Draw, hp: &Hyperparameters) -> Result<bool> {
    let knots: KnotVector = knot_vector(&draw.tree, hp.order)?;
    let j = hp.order;
    for a in draw.working_alpha() {
        if a <= WORK_LO || a >= WORK_HI {
            continue;
        }
        let i = knots.span(a);
        let first = i + 1 - j;
        if draw.beta[first..=i].iter().all(|&b| b == 0.0) {
            return Ok(true);
        }
    }
    Ok(false)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeReport {
    pub hyp1: String,
    pub hyp2: String,
    pub signatures1: Vec<Signature>,
    pub signatures2: Vec<Signature>,
    pub draws: usize,
    pub n1: usize,
    pub n2: usize,
    pub prior1: f64,
    pub prior2: f64,
    pub bayes_factor: f64,
    pub bound: Option<Bound>,
    /// Draws with an interior change point inside a flat region.
    pub flat_region_draws: usize,
    /// Posterior count of each signature.
    pub signature_counts: Vec<(Signature, usize)>,
    /// Interior extremum order implied by each counted signature.
    pub patterns: Vec<(Signature, Vec<Extremum>)>,
    pub estimator: String,
}

pub fn shape_report(
    draws: &[Draw],
    hyp1: &ShapeHypothesis,
    hyp2: &ShapeHypothesis,
    hp: &Hyperparameters,
) -> Result<ShapeReport> {
    let sigs: Vec<Signature> = draws.iter().map(|d| d.signature).collect();
    let bf = bayes_factor(&sigs, hyp1, hyp2, hp)?;
    let mut flat = 0;
    for d in draws {
        flat += has_flat_region(d, hp)? as usize;
    }
    let signature_counts: Vec<(Signature, usize)> = all_signatures(hp.h)
        .into_iter()
        .map(|s| (s, sigs.iter().filter(|&&x| x == s).count()))
        .filter(|(_, c)| *c > 0)
        .collect();
    let patterns = signature_counts.iter().map(|(s, _)| (*s, extremum_pattern(*s, hp.m))).collect();
    let name = |h: &ShapeHypothesis| h.label.clone().unwrap_or_else(|| "custom".into());
    Ok(ShapeReport {
        hyp1: name(hyp1),
        hyp2: name(hyp2),
        signatures1: hyp1.signatures.iter().copied().collect(),
        signatures2: hyp2.signatures.iter().copied().collect(),
        draws: draws.len(),
        n1: bf.n1,
        n2: bf.n2,
        prior1: bf.q1,
        prior2: bf.q2,
        bayes_factor: bf.bf,
        bound: bf.bound,
        flat_region_draws: flat,
        signature_counts,
        patterns,
        estimator: "posterior odds divided by prior odds of the signature sets".into(),
    })
}
