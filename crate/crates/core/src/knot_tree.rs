//! Binary infill tree over dyadic labels.
//!
//! The root 1/2 sits at depth 0. A node a/2^(N+1) at depth N has children
//! (2a-1)/2^(N+2) and (2a+1)/2^(N+2), each present independently with
//! probability 0.5^(N+1). The present labels are the interior knots on
//! [0, 1].

use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

/// Deepest level at which insertions are proposed. Children below this
/// level have prior probability under 2^-31 and are never offered.
pub const MAX_DEPTH: u32 = 30;

/// A dyadic rational num/2^exp in (0, 1) with odd numerator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dyadic {
    num: u64,
    exp: u32,
}

impl Dyadic {
    pub const ROOT: Dyadic = Dyadic { num: 1, exp: 1 };

    pub fn new(num: u64, exp: u32) -> Result<Self> {
        if exp == 0 || exp > 62 {
            return Err(Error::Label(format!("{num}/2^{exp}: exponent must be in 1..=62")));
        }
        if num.is_multiple_of(2) {
            return Err(Error::Label(format!("{num}/2^{exp} is not in lowest dyadic form")));
        }
        if num >= 1u64 << exp {
            return Err(Error::Label(format!("{num}/2^{exp} is not inside (0, 1)")));
        }
        Ok(Self { num, exp })
    }

    /// Lowest-form label for a dyadic value in (0, 1) with denominator at
    /// most 2^(MAX_DEPTH + 1).
    pub fn from_value(x: f64) -> Result<Self> {
        if !(x > 0.0 && x < 1.0) {
            return Err(Error::Label(format!("{x} is not inside (0, 1)")));
        }
        let mut v = x;
        for exp in 1..=MAX_DEPTH + 1 {
            v *= 2.0;
            if v.fract() == 0.0 {
                return Self::new(v as u64, exp);
            }
        }
        Err(Error::Label(format!("{x} is not a dyadic rational")))
    }

    pub fn numerator(self) -> u64 {
        self.num
    }

    pub fn exponent(self) -> u32 {
        self.exp
    }

    /// Tree depth N, where the label is a/2^(N+1).
    pub fn depth(self) -> u32 {
        self.exp - 1
    }

    pub fn value(self) -> f64 {
        self.num as f64 / (1u64 << self.exp) as f64
    }

    pub fn children(self) -> (Dyadic, Dyadic) {
        let e = self.exp + 1;
        (Dyadic { num: 2 * self.num - 1, exp: e }, Dyadic { num: 2 * self.num + 1, exp: e })
    }

    pub fn parent(self) -> Option<Dyadic> {
        if self.exp == 1 {
            return None;
        }
        let lo = (self.num - 1) / 2;
        let num = if lo % 2 == 1 { lo } else { lo + 1 };
        Some(Dyadic { num, exp: self.exp - 1 })
    }

    /// Probability that each child experiment of this node succeeds.
    pub fn child_prob(self) -> f64 {
        0.5f64.powi(self.depth() as i32 + 1)
    }
}

impl Ord for Dyadic {
    fn cmp(&self, other: &Self) -> Ordering {
        let l = (self.num as u128) << other.exp;
        let r = (other.num as u128) << self.exp;
        l.cmp(&r)
    }
}

impl PartialOrd for Dyadic {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Dyadic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/2^{}", self.num, self.exp)
    }
}

impl FromStr for Dyadic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Label(format!("cannot parse {s:?}; expected a/2^m"));
        let (a, m) = s.trim().split_once("/2^").ok_or_else(bad)?;
        let num: u64 = a.trim().parse().map_err(|_| bad())?;
        let exp: u32 = m.trim().parse().map_err(|_| bad())?;
        Dyadic::new(num, exp)
    }
}

/// Children of a label given in text form.
pub fn children(label: &str) -> Result<(Dyadic, Dyadic)> {
    Ok(label.parse::<Dyadic>()?.children())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MoveKind {
    Insert,
    Delete,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoveProposal {
    pub kind: MoveKind,
    pub label: Dyadic,
    /// Probability of proposing this move from the current tree.
    pub forward_prob: f64,
    /// Probability of proposing the reverse move from the resulting tree.
    pub reverse_prob: f64,
}

/// A set of present labels, always containing the root, closed under
/// taking parents.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct KnotTree {
    nodes: BTreeSet<Dyadic>,
}

impl Default for KnotTree {
    fn default() -> Self {
        Self::root_only()
    }
}

impl KnotTree {
    pub fn root_only() -> Self {
        Self { nodes: BTreeSet::from([Dyadic::ROOT]) }
    }

    pub fn from_labels<I: IntoIterator<Item = Dyadic>>(labels: I) -> Result<Self> {
        let nodes: BTreeSet<Dyadic> = labels.into_iter().collect();
        if !nodes.contains(&Dyadic::ROOT) {
            return Err(Error::Label("tree must contain the root 1/2^1".into()));
        }
        for d in &nodes {
            if let Some(p) = d.parent() {
                if !nodes.contains(&p) {
                    return Err(Error::Label(format!("{d} is present but its parent {p} is not")));
                }
            }
        }
        Ok(Self { nodes })
    }

    /// The complete tree down to depth `n` inclusive.
    pub fn complete(n: u32) -> Self {
        let mut nodes = BTreeSet::new();
        for depth in 0..=n {
            let exp = depth + 1;
            for num in (1..(1u64 << exp)).step_by(2) {
                nodes.insert(Dyadic { num, exp });
            }
        }
        Self { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, d: Dyadic) -> bool {
        self.nodes.contains(&d)
    }

    /// Present labels in increasing order.
    pub fn labels(&self) -> impl Iterator<Item = Dyadic> + '_ {
        self.nodes.iter().copied()
    }

    /// Sorted knot locations on [0, 1]: the labels plus both ends.
    pub fn knot_set(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() + 2);
        out.push(0.0);
        out.extend(self.nodes.iter().map(|d| d.value()));
        out.push(1.0);
        out
    }

    /// Knots in working units, centred on zero: [-0.5, 0.5].
    pub fn working_knots(&self) -> Vec<f64> {
        self.knot_set().into_iter().map(|t| t - 0.5).collect()
    }

    pub fn log_prior(&self) -> f64 {
        self.nodes
            .iter()
            .map(|&d| {
                let p = d.child_prob();
                let (l, r) = d.children();
                [l, r]
                    .iter()
                    .map(|c| if self.nodes.contains(c) { p.ln() } else { (-p).ln_1p() })
                    .sum::<f64>()
            })
            .sum()
    }

    /// Absent children of present nodes, in increasing order.
    pub fn insertion_candidates(&self) -> Vec<Dyadic> {
        let mut out: Vec<Dyadic> = self
            .nodes
            .iter()
            .filter(|d| d.depth() < MAX_DEPTH)
            .flat_map(|d| {
                let (l, r) = d.children();
                [l, r]
            })
            .filter(|c| !self.nodes.contains(c))
            .collect();
        out.sort();
        out
    }

    /// Present childless nodes other than the root, in increasing order.
    pub fn deletion_candidates(&self) -> Vec<Dyadic> {
        self.nodes
            .iter()
            .copied()
            .filter(|&d| d != Dyadic::ROOT)
            .filter(|d| {
                let (l, r) = d.children();
                !self.nodes.contains(&l) && !self.nodes.contains(&r)
            })
            .collect()
    }

    fn kind_prob(&self, kind: MoveKind, n_ins: usize, n_del: usize) -> f64 {
        let p_insert = match (n_ins, n_del) {
            (_, 0) => 1.0,
            (0, _) => 0.0,
            _ => 0.5,
        };
        match kind {
            MoveKind::Insert => p_insert,
            MoveKind::Delete => 1.0 - p_insert,
        }
    }

    /// Probability of proposing `kind` at `label` from this tree.
    pub fn proposal_prob(&self, kind: MoveKind, label: Dyadic) -> f64 {
        let ins = self.insertion_candidates();
        let del = self.deletion_candidates();
        let pool = match kind {
            MoveKind::Insert => &ins,
            MoveKind::Delete => &del,
        };
        if !pool.contains(&label) {
            return 0.0;
        }
        self.kind_prob(kind, ins.len(), del.len()) / pool.len() as f64
    }

    pub fn propose_move<R: Rng + ?Sized>(&self, rng: &mut R) -> MoveProposal {
        let ins = self.insertion_candidates();
        let del = self.deletion_candidates();
        let p_insert = self.kind_prob(MoveKind::Insert, ins.len(), del.len());
        let kind = if p_insert >= 1.0 || rng.random::<f64>() < p_insert {
            MoveKind::Insert
        } else {
            MoveKind::Delete
        };
        let pool = if kind == MoveKind::Insert { &ins } else { &del };
        let label = pool[rng.random_range(0..pool.len())];
        let forward_prob = self.kind_prob(kind, ins.len(), del.len()) / pool.len() as f64;
        let next = self.apply_unchecked(kind, label);
        let reverse = match kind {
            MoveKind::Insert => MoveKind::Delete,
            MoveKind::Delete => MoveKind::Insert,
        };
        let reverse_prob = next.proposal_prob(reverse, label);
        MoveProposal { kind, label, forward_prob, reverse_prob }
    }

    fn apply_unchecked(&self, kind: MoveKind, label: Dyadic) -> Self {
        let mut nodes = self.nodes.clone();
        match kind {
            MoveKind::Insert => nodes.insert(label),
            MoveKind::Delete => nodes.remove(&label),
        };
        Self { nodes }
    }

    pub fn insert(&self, label: Dyadic) -> Result<Self> {
        if self.nodes.contains(&label) {
            return Err(Error::Label(format!("{label} is already present")));
        }
        match label.parent() {
            Some(p) if self.nodes.contains(&p) => Ok(self.apply_unchecked(MoveKind::Insert, label)),
            _ => Err(Error::Label(format!("{label} has no present parent"))),
        }
    }

    pub fn delete(&self, label: Dyadic) -> Result<Self> {
        if !self.deletion_candidates().contains(&label) {
            return Err(Error::Label(format!("{label} is not a deletable leaf")));
        }
        Ok(self.apply_unchecked(MoveKind::Delete, label))
    }

    pub fn apply(&self, mv: &MoveProposal) -> Result<Self> {
        match mv.kind {
            MoveKind::Insert => self.insert(mv.label),
            MoveKind::Delete => self.delete(mv.label),
        }
    }

    /// Draw a tree from the branching process.
    pub fn sample_prior<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut nodes = BTreeSet::from([Dyadic::ROOT]);
        let mut frontier = vec![Dyadic::ROOT];
        while let Some(d) = frontier.pop() {
            if d.depth() >= MAX_DEPTH {
                continue;
            }
            let p = d.child_prob();
            let (l, r) = d.children();
            for c in [l, r] {
                if rng.random::<f64>() < p {
                    nodes.insert(c);
                    frontier.push(c);
                }
            }
        }
        Self { nodes }
    }

    pub fn to_labels(&self) -> Vec<String> {
        self.nodes.iter().map(|d| d.to_string()).collect()
    }
}

impl fmt::Display for KnotTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_labels().join(","))
    }
}

impl FromStr for KnotTree {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let labels = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<Dyadic>>>()?;
        Self::from_labels(labels)
    }
}

impl TryFrom<Vec<String>> for KnotTree {
    type Error = Error;

    fn try_from(v: Vec<String>) -> Result<Self> {
        Self::from_labels(v.iter().map(|s| s.parse()).collect::<Result<Vec<Dyadic>>>()?)
    }
}

impl From<KnotTree> for Vec<String> {
    fn from(t: KnotTree) -> Self {
        t.to_labels()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn d(s: &str) -> Dyadic {
        s.parse().unwrap()
    }

    #[test]
    fn children_examples() {
        assert_eq!(d("3/2^3").children(), (d("5/2^4"), d("7/2^4")));
        assert_eq!(Dyadic::ROOT.children(), (d("1/2^2"), d("3/2^2")));
        assert_eq!(children("1/2^2").unwrap(), (d("1/2^3"), d("3/2^3")));
        assert!(matches!(children("2/2^3"), Err(Error::Label(_))));
        assert!(matches!(children("3/8"), Err(Error::Label(_))));
        assert!(Dyadic::from_value(0.3).is_err());
        assert_eq!(Dyadic::from_value(0.375).unwrap(), d("3/2^3"));
    }

    #[test]
    fn parent_inverts_children() {
        for exp in 1..8u32 {
            for num in (1..(1u64 << exp)).step_by(2) {
                let x = Dyadic::new(num, exp).unwrap();
                let (l, r) = x.children();
                assert_eq!(l.parent(), Some(x));
                assert_eq!(r.parent(), Some(x));
            }
        }
        assert_eq!(Dyadic::ROOT.parent(), None);
    }

    #[test]
    fn log_prior_examples() {
        let t = KnotTree::root_only();
        assert!((t.log_prior() - 0.25f64.ln()).abs() < 1e-15);
        let t = t.insert(d("1/2^2")).unwrap();
        assert!((t.log_prior() - 0.140625f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn candidate_examples() {
        let t = KnotTree::root_only();
        assert_eq!(t.insertion_candidates(), vec![d("1/2^2"), d("3/2^2")]);
        assert!(t.deletion_candidates().is_empty());
        let t1 = t.insert(d("1/2^2")).unwrap();
        assert_eq!(t1.insertion_candidates(), vec![d("1/2^3"), d("3/2^3"), d("3/2^2")]);
        let both = t1.insert(d("3/2^2")).unwrap();
        assert_eq!(both.deletion_candidates(), vec![d("1/2^2"), d("3/2^2")]);
        let chain = t1.insert(d("1/2^3")).unwrap();
        assert_eq!(chain.deletion_candidates(), vec![d("1/2^3")]);
    }

    #[test]
    fn proposal_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = KnotTree::root_only();
        for _ in 0..20 {
            let mv = t.propose_move(&mut rng);
            assert_eq!(mv.kind, MoveKind::Insert);
            assert_eq!(mv.forward_prob, 0.5);
            // the new leaf is the only deletion candidate
            assert_eq!(mv.reverse_prob, 0.5);
        }
        let t = KnotTree::complete(2);
        let mut kinds = [0usize; 2];
        for _ in 0..2000 {
            let mv = t.propose_move(&mut rng);
            let next = t.apply(&mv).unwrap();
            let rev = match mv.kind {
                MoveKind::Insert => MoveKind::Delete,
                MoveKind::Delete => MoveKind::Insert,
            };
            assert_eq!(next.proposal_prob(rev, mv.label), mv.reverse_prob);
            assert_eq!(t.proposal_prob(mv.kind, mv.label), mv.forward_prob);
            kinds[(mv.kind == MoveKind::Delete) as usize] += 1;
        }
        assert!((kinds[0] as f64 / 2000.0 - 0.5).abs() < 0.05);
    }

    #[test]
    fn insert_then_delete_is_identity() {
        let t = KnotTree::complete(1);
        for c in t.insertion_candidates() {
            let t2 = t.insert(c).unwrap();
            assert!(t2.deletion_candidates().contains(&c));
            assert_eq!(t2.delete(c).unwrap(), t);
        }
    }

    #[test]
    fn complete_tree_gap() {
        for n in 0..6 {
            let k = KnotTree::complete(n).knot_set();
            let gap = k.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
            assert_eq!(gap, 0.5f64.powi(n as i32 + 1));
        }
    }

    #[test]
    fn text_roundtrip() {
        let t = KnotTree::complete(2).insert(d("1/2^4")).unwrap();
        let s = t.to_string();
        assert_eq!(s.parse::<KnotTree>().unwrap(), t);
        let j = serde_json::to_string(&t).unwrap();
        assert_eq!(serde_json::from_str::<KnotTree>(&j).unwrap(), t);
        assert!("1/2^2".parse::<KnotTree>().is_err());
        assert!("1/2^1,1/2^3".parse::<KnotTree>().is_err());
    }
}
