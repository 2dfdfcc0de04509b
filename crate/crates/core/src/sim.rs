//! Simulation studies: true curves, replicate runs, IMSE and ROC/AUC.

use crate::dist::norm_cdf;
use crate::error::{Error, Result};
use crate::model::{curve_eval, Dataset, Hyperparameters, SigmaPrior};
use crate::sampler::{run_tempered, ChainConfig, Draw};
use crate::shape::{bayes_factor, Extremum, ShapeHypothesis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::time::Instant;

pub const FUNCTION_IDS: [&str; 16] =
    ["f1", "f2", "f3", "f4", "f5", "f6", "f7", "g1", "g2", "g3", "g4", "g5", "g6", "g7", "g8", "g9"];

fn g5(x: f64) -> f64 {
    1.0 + 2.0 * x - 1.56 * (-50.0 * (x - 0.5).powi(2)).exp()
}

fn wavy(x: f64) -> f64 {
    5.0 * (2.0 * PI * x).sin() / (x + 0.75).powi(3) - 2.5 * (x + 10.5)
}

/// Value of test curve `id` at `x`.
pub fn true_function(id: &str, x: f64) -> Result<f64> {
    let v = match id {
        "f1" => 10.0 * x * x,
        "f2" => 2.0 + 20.0 * norm_cdf((x - 0.5) / 0.071),
        "f3" => 5.0 * (PI * x).cos(),
        "f4" => 10.0 * (x - 0.5).powi(2),
        "f5" => -2.5 + 10.0 * (-50.0 * (x - 0.35).powi(2)).exp(),
        "f6" => 1.0 + 2.5 * (2.0 * PI * (x + 8.0)).sin() + 10.0 * x,
        "f7" => wavy(x),
        "g1" => 2.0 + 0.5 * x + norm_cdf((x - 0.5) / 0.071),
        "g2" => 0.5 * (2.0 * PI * (x + 8.0)).sin() + 4.75 * x,
        "g3" => 1.0 + 2.25 * x,
        "g4" => -2.0 * (x - 0.75).powi(2),
        "g5" | "g8" => g5(x),
        "g6" => {
            let cubic = if x < 0.5 { 15.0 * (x - 0.5).powi(3) } else { 0.0 };
            cubic + 0.3 * (x - 0.5) - (-250.0 * (x - 0.25).powi(2)).exp()
        }
        "g7" => 0.85 * (2.0 * PI * (x + 8.0)).sin() + 4.75 * x,
        "g9" => wavy(x) + 2.0,
        _ => return Err(Error::Lookup(format!("unknown function id {id:?}"))),
    };
    Ok(v)
}

/// Mean squared difference between fitted and true values.
pub fn imse(fitted: &[f64], truth: &[f64]) -> Result<f64> {
    if fitted.len() != truth.len() {
        return Err(Error::Domain(format!("length mismatch: {} fitted, {} true", fitted.len(), truth.len())));
    }
    if fitted.is_empty() {
        return Err(Error::Domain("no points".into()));
    }
    Ok(fitted.iter().zip(truth).map(|(f, t)| (f - t).powi(2)).sum::<f64>() / fitted.len() as f64)
}

/// Mann–Whitney area under the ROC curve; ties count one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Domain("scores and labels differ in length".into()));
    }
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(&s, _)| s).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Domain("need at least one positive and one negative label".into()));
    }
    let mut wins = 0.0;
    for &p in &pos {
        for &n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(wins / (pos.len() * neg.len()) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub function: String,
    pub n: usize,
    pub sigma2: f64,
    pub replicates: usize,
    /// Equidistant points for IMSE; equal to `n` means the design points.
    pub grid: usize,
    pub hp: Hyperparameters,
    pub chain: ChainConfig,
}

impl Scenario {
    /// `f1..f7` with `-lownoise` (σ² = 1) or `-highnoise` (σ² = 4) at
    /// n = 100, or `g1..g9` with `-n100`, `-n200`, `-n300`, `-n400` at
    /// σ² = 1. Ten replicates; Ga(1, 1) on σ.
    pub fn from_id(id: &str) -> Result<Self> {
        let unknown = || Error::Lookup(format!("unknown scenario {id:?}"));
        let (function, rest) = id.split_once('-').ok_or_else(unknown)?;
        true_function(function, 0.5).map_err(|_| unknown())?;
        let (n, sigma2) = match (function.as_bytes()[0], rest) {
            (b'f', "lownoise") => (100, 1.0),
            (b'f', "highnoise") => (100, 4.0),
            (b'g', "n100") => (100, 1.0),
            (b'g', "n200") => (200, 1.0),
            (b'g', "n300") => (300, 1.0),
            (b'g', "n400") => (400, 1.0),
            _ => return Err(unknown()),
        };
        let hp = Hyperparameters { sigma_prior: SigmaPrior::Sd, ..Hyperparameters::default() };
        Ok(Self {
            id: id.to_string(),
            function: function.to_string(),
            n,
            sigma2,
            replicates: 10,
            grid: n,
            hp,
            chain: ChainConfig::default(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        true_function(&self.function, 0.5)?;
        if self.n < 10 {
            return Err(Error::Config("scenario needs n >= 10".into()));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::Config("scenario noise variance must be positive".into()));
        }
        if self.grid < 2 {
            return Err(Error::Config("IMSE grid needs at least two points".into()));
        }
        self.hp.validate()?;
        self.chain.validate()
    }

    pub fn design(&self) -> Vec<f64> {
        equidistant(self.n)
    }

    fn imse_grid(&self) -> Vec<f64> {
        equidistant(self.grid)
    }

    /// Noisy observations on the design.
    pub fn generate(&self, rng: &mut ChaCha8Rng) -> Result<Dataset> {
        let noise = Normal::new(0.0, self.sigma2.sqrt()).map_err(|e| Error::Config(e.to_string()))?;
        let xs = self.design();
        let ys = xs
            .iter()
            .map(|&x| Ok(true_function(&self.function, x)? + noise.sample(rng)))
            .collect::<Result<Vec<f64>>>()?;
        Dataset::with_interval(xs, ys, 0.0, 1.0)
    }
}

fn equidistant(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// Pointwise posterior mean of the curve at `xs`.
pub fn posterior_mean(draws: &[Draw], hp: &Hyperparameters, data: &Dataset, xs: &[f64]) -> Result<Vec<f64>> {
    if draws.is_empty() {
        return Err(Error::Domain("no draws".into()));
    }
    let mut mean = vec![0.0; xs.len()];
    for d in draws {
        for (m, v) in mean.iter_mut().zip(curve_eval(&d.to_state(), hp, data, xs)?) {
            *m += v;
        }
    }
    let k = draws.len() as f64;
    mean.iter_mut().for_each(|m| *m /= k);
    Ok(mean)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub scenario: String,
    pub replicate: usize,
    pub seed: u64,
    pub imse: f64,
    /// Monotone increasing against non-monotone.
    pub bf_increasing: f64,
    /// Monotone against non-monotone.
    pub bf_monotone: f64,
    /// Maximum followed by minimum against everything else.
    pub bf_two_extrema: f64,
    pub seconds: f64,
}

/// Seed of the sampler for replicate `r`.
pub fn replicate_seed(seed: u64, r: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(r as u64)
}

fn shape_tests(hp: &Hyperparameters) -> [(ShapeHypothesis, ShapeHypothesis); 3] {
    let h = hp.h;
    let non = ShapeHypothesis::has_extrema(h, 1);
    let increasing = ShapeHypothesis::new(
        ShapeHypothesis::monotone(h).signatures.into_iter().filter(|s| (hp.m > 0.0) == ((s.above) % 2 == 0)),
        Some("increasing".into()),
    );
    let two = ShapeHypothesis::pattern(h, hp.m, &[Extremum::Max, Extremum::Min]);
    let rest = two.complement(h);
    [(increasing, non.clone()), (ShapeHypothesis::monotone(h), non), (two, rest)]
}

fn bf_or_nan(draws: &[Draw], pair: &(ShapeHypothesis, ShapeHypothesis), hp: &Hyperparameters) -> Result<f64> {
    if pair.0.is_empty() || pair.1.is_empty() {
        return Ok(f64::NAN);
    }
    let sigs: Vec<_> = draws.iter().map(|d| d.signature).collect();
    match bayes_factor(&sigs, &pair.0, &pair.1, hp) {
        Ok(bf) => Ok(bf.bf),
        Err(Error::Indeterminate(_)) => Ok(f64::NAN),
        Err(e) => Err(e),
    }
}

/// One replicate: data, sampler run, posterior-mean IMSE and shape BFs.
pub fn run_replicate(scenario: &Scenario, seed: u64, r: usize) -> Result<ReplicateRecord> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1_000 + r as u64);
    let data = scenario.generate(&mut rng)?;
    let chain = ChainConfig { seed: replicate_seed(seed, r), ..scenario.chain.clone() };
    let (draws, _) = run_tempered(&data, &scenario.hp, &chain)?;
    let grid = scenario.imse_grid();
    let fitted = posterior_mean(&draws, &scenario.hp, &data, &grid)?;
    let truth = grid.iter().map(|&x| true_function(&scenario.function, x)).collect::<Result<Vec<_>>>()?;
    let [inc, mono, two] = shape_tests(&scenario.hp);
    Ok(ReplicateRecord {
        scenario: scenario.id.clone(),
        replicate: r,
        seed: chain.seed,
        imse: imse(&fitted, &truth)?,
        bf_increasing: bf_or_nan(&draws, &inc, &scenario.hp)?,
        bf_monotone: bf_or_nan(&draws, &mono, &scenario.hp)?,
        bf_two_extrema: bf_or_nan(&draws, &two, &scenario.hp)?,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// All replicates of a scenario, run concurrently; records come back in
/// replicate order and depend only on `seed` (apart from `seconds`).
pub fn run_replicates(scenario: &Scenario, seed: u64) -> Result<Vec<ReplicateRecord>> {
    scenario.validate()?;
    (0..scenario.replicates).into_par_iter().map(|r| run_replicate(scenario, seed, r)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Self {
        let v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        let n = v.len() as f64;
        if v.is_empty() {
            return Self { mean: f64::NAN, se: f64::NAN };
        }
        let mean = v.iter().sum::<f64>() / n;
        let se = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            f64::NAN
        };
        Self { mean, se }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub replicates: usize,
    pub imse: MeanSe,
    pub bf_increasing: MeanSe,
    pub bf_monotone: MeanSe,
    pub bf_two_extrema: MeanSe,
    pub seconds: MeanSe,
    /// Replicates with each BF above 6.
    pub bf_increasing_over_6: usize,
    pub bf_monotone_over_6: usize,
    pub bf_two_extrema_over_6: usize,
}

pub fn summarize(scenario: &str, records: &[ReplicateRecord]) -> Summary {
    let col = |f: fn(&ReplicateRecord) -> f64| records.iter().map(f).collect::<Vec<_>>();
    let over = |f: fn(&ReplicateRecord) -> f64| records.iter().filter(|r| f(r) > 6.0).count();
    Summary {
        scenario: scenario.to_string(),
        replicates: records.len(),
        imse: MeanSe::of(&col(|r| r.imse)),
        bf_increasing: MeanSe::of(&col(|r| r.bf_increasing)),
        bf_monotone: MeanSe::of(&col(|r| r.bf_monotone)),
        bf_two_extrema: MeanSe::of(&col(|r| r.bf_two_extrema)),
        seconds: MeanSe::of(&col(|r| r.seconds)),
        bf_increasing_over_6: over(|r| r.bf_increasing),
        bf_monotone_over_6: over(|r| r.bf_monotone),
        bf_two_extrema_over_6: over(|r| r.bf_two_extrema),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn function_values() {
        assert_eq!(true_function("f1", 1.0).unwrap(), 10.0);
        assert_eq!(true_function("f4", 0.5).unwrap(), 0.0);
        assert!((true_function("f2", 0.5).unwrap() - 12.0).abs() < 1e-12);
        assert_eq!(true_function("g8", 0.3).unwrap(), true_function("g5", 0.3).unwrap());
        assert!(matches!(true_function("f8", 0.5), Err(Error::Lookup(_))));
    }

    #[test]
    fn scenario_ids() {
        let s = Scenario::from_id("f4-lownoise").unwrap();
        assert_eq!((s.n, s.sigma2, s.replicates), (100, 1.0, 10));
        assert_eq!(Scenario::from_id("f6-highnoise").unwrap().sigma2, 4.0);
        assert_eq!(Scenario::from_id("g7-n300").unwrap().n, 300);
        for bad in ["f4", "f4-n100", "g1-lownoise", "h1-n100", "g3-n500"] {
            assert!(matches!(Scenario::from_id(bad), Err(Error::Lookup(_))), "{bad}");
        }
    }

    #[test]
    fn imse_and_auc() {
        assert_eq!(imse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(imse(&[2.0, 3.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert!(imse(&[1.0], &[1.0, 2.0]).is_err());
        assert_eq!(roc_auc(&[0.9, 0.7, 0.8, 0.1], &[true, true, false, false]).unwrap(), 0.75);
        assert_eq!(roc_auc(&[1.0; 4], &[true, false, true, false]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[3.0, 4.0, 1.0], &[true, true, false]).unwrap(), 1.0);
        assert!(roc_auc(&[1.0, 2.0], &[true, true]).is_err());
    }

    #[test]
    fn zero_replicates() {
        let mut s = Scenario::from_id("f4-lownoise").unwrap();
        s.replicates = 0;
        assert!(run_replicates(&s, 1).unwrap().is_empty());
    }

    #[test]
    fn shape_test_sets() {
        let hp = Hyperparameters::default();
        let [inc, _, two] = shape_tests(&hp);
        use crate::model::Signature;
        let sigs: Vec<Signature> = inc.0.signatures.iter().copied().collect();
        assert_eq!(sigs, vec![Signature::new(0, 0, 2), Signature::new(2, 0, 0)]);
        assert_eq!(two.0.signatures.len(), 1);
        assert_eq!(two.1.signatures.len(), 5);
    }
}
