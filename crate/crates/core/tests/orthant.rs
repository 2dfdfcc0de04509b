use lxspline::orthant::{
    bvn_upper, ln_bvn_upper, ln_tvn_upper, mc_oracle, orthant_prob, sample_truncated, tvn_upper, OrthantProblem,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn random_problem(rng: &mut ChaCha8Rng, d: usize) -> OrthantProblem {
    let a: DMatrix<f64> = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    let cov: DMatrix<f64> = (&a * a.transpose()) / d as f64 + DMatrix::identity(d, d) * 0.1;
    let mean = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let lower = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    OrthantProblem::new(mean, cov.transpose().as_slice().to_vec(), lower).unwrap()
}

/// Plain Monte Carlo written independently of the library: nalgebra
/// Cholesky and direct counting.
fn brute_force(p: &OrthantProblem, n: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let d = p.dim();
    let cov = DMatrix::from_row_slice(d, d, p.cov());
    let l = cov.cholesky().unwrap().l();
    let mut hits = 0usize;
    for _ in 0..n {
        let z = nalgebra::DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let x = &l * z;
        hits += (0..d).all(|i| x[i] + p.mean()[i] > p.lower()[i]) as usize;
    }
    let est = hits as f64 / n as f64;
    (est, (est * (1.0 - est) / n as f64).sqrt())
}

#[test]
fn bivariate_zero_orthant_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for k in -9..=9 {
        let rho = k as f64 / 10.0;
        let want = 0.25 + rho.asin() / (2.0 * std::f64::consts::PI);
        let p = OrthantProblem::equicorrelated(2, rho, vec![0.0, 0.0]).unwrap();
        let e = orthant_prob(&p, 1e-4, &mut rng).unwrap();
        assert!((e.prob - want).abs() < 1e-3, "rho {rho}: {} vs {want}", e.prob);
        assert!((bvn_upper(0.0, 0.0, rho) - want).abs() < 1e-12);
    }
}

#[test]
fn qmc_agrees_with_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..50 {
        let d = 1 + trial % 6;
        let p = random_problem(&mut rng, d);
        let e = orthant_prob(&p, 1e-4, &mut rng).unwrap();
        let (mc, _) = brute_force(&p, 200_000, &mut rng);
        // binomial spread under the hypothesis that the lattice value is right
        let null_se = (e.prob * (1.0 - e.prob) / 200_000.0).sqrt();
        let se = (null_se.powi(2) + e.std_error.powi(2)).sqrt().max(1e-6);
        assert!((e.prob - mc).abs() < 3.0 * se, "trial {trial} d={d}: {} vs {mc} (se {se})", e.prob);
        let (lib, _) = mc_oracle(&p, 200_000, &mut rng).unwrap();
        assert!((e.prob - lib).abs() < 3.0 * se, "trial {trial} d={d}: {} vs library {lib}", e.prob);
    }
}

#[test]
fn permutation_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for d in 2..=6 {
        let p = random_problem(&mut rng, d);
        let perm: Vec<usize> = (0..d).rev().collect();
        let q = p.permuted(&perm).unwrap();
        let a = orthant_prob(&p, 1e-5, &mut rng).unwrap();
        let b = orthant_prob(&q, 1e-5, &mut rng).unwrap();
        let se = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt().max(1e-9);
        assert!((a.prob - b.prob).abs() < 4.0 * se, "d={d}: {} vs {}", a.prob, b.prob);
    }
}

#[test]
fn reproducible_under_seed() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = random_problem(&mut rng, 5);
    let a = orthant_prob(&p, 1e-4, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
    let b = orthant_prob(&p, 1e-4, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn unbounded_problem_has_probability_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for d in 1..=6 {
        let p = OrthantProblem::equicorrelated(d, 0.3, vec![f64::NEG_INFINITY; d]).unwrap();
        let e = orthant_prob(&p, 1e-4, &mut rng).unwrap();
        assert_eq!(e.prob, 1.0);
        assert_eq!(e.log_prob, 0.0);
    }
}

#[test]
fn invalid_inputs_rejected() {
    assert!(OrthantProblem::new(vec![], vec![], vec![]).is_err());
    assert!(OrthantProblem::new(vec![0.0], vec![1.0], vec![f64::INFINITY]).is_err());
    assert!(OrthantProblem::new(vec![0.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 0.0]).is_err());
    assert!(OrthantProblem::new(vec![f64::NAN], vec![1.0], vec![0.0]).is_err());
}

#[test]
fn trivariate_closed_forms_match_lattice() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..30 {
        let p = random_problem(&mut rng, 3);
        let c = p.cov();
        let s: Vec<f64> = (0..3).map(|i| c[i * 3 + i].sqrt()).collect();
        let a: Vec<f64> = (0..3).map(|i| (p.lower()[i] - p.mean()[i]) / s[i]).collect();
        let r = [c[1] / (s[0] * s[1]), c[2] / (s[0] * s[2]), c[5] / (s[1] * s[2])];
        let e = orthant_prob(&p, 1e-5, &mut rng).unwrap();
        let exact = tvn_upper([a[0], a[1], a[2]], r).unwrap();
        assert!((exact - e.prob).abs() < 4.0 * e.std_error.max(1e-6), "{exact} vs {}", e.prob);
        let ln = ln_tvn_upper([a[0], a[1], a[2]], r).unwrap();
        assert!((ln - exact.ln()).abs() < 1e-5);
        let b = ln_bvn_upper(a[0], a[1], r[0]).unwrap();
        assert!((b - bvn_upper(a[0], a[1], r[0]).ln()).abs() < 1e-9);
    }
}

#[test]
fn truncated_draws_respect_bounds_and_match_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cov = vec![1.0, 0.6, 0.6, 2.0];
    // one easy region and one where rejection would be hopeless
    for lower in [vec![-0.5, 0.0], vec![2.5, 3.0]] {
        let p = OrthantProblem::new(vec![0.0, 0.0], cov.clone(), lower.clone()).unwrap();
        let precision = DMatrix::from_row_slice(2, 2, &cov).try_inverse().unwrap();
        let prec: Vec<f64> = precision.transpose().as_slice().to_vec();
        let hint = orthant_prob(&p, 1e-5, &mut rng).unwrap().prob;
        let n = 4000;
        let mut mean = [0.0; 2];
        for _ in 0..n {
            let x = sample_truncated(&p, &prec, hint, &mut rng).unwrap();
            assert!(x[0] > lower[0] && x[1] > lower[1]);
            mean[0] += x[0] / n as f64;
            mean[1] += x[1] / n as f64;
        }
        // oracle: exact draw of x0 from its truncated marginal, then x1 | x0
        // with rejection on the second bound
        let mut oracle = [0.0; 2];
        let mut kept = 0usize;
        let l = DMatrix::from_row_slice(2, 2, &cov).cholesky().unwrap().l();
        while kept < 20_000 {
            let u: f64 = rng.random();
            let lo = lxspline::dist::norm_cdf(lower[0]);
            let x0 = lxspline::dist::norm_ppf(lo + u * (1.0 - lo));
            let z: f64 = StandardNormal.sample(&mut rng);
            let x1 = l[(1, 0)] * x0 + l[(1, 1)] * z;
            if x1 > lower[1] {
                oracle[0] += x0;
                oracle[1] += x1;
                kept += 1;
            }
        }
        oracle[0] /= 20_000.0;
        oracle[1] /= 20_000.0;
        for k in 0..2 {
            assert!((mean[k] - oracle[k]).abs() < 0.05, "lower {lower:?} coord {k}: {} vs {}", mean[k], oracle[k]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn raising_a_bound_lowers_probability(a in -3.0f64..3.0, b in -3.0f64..3.0, r in -0.95f64..0.95, step in 0.01f64..2.0) {
        prop_assert!(bvn_upper(a + step, b, r) <= bvn_upper(a, b, r) + 1e-15);
        let t = [a, b, 0.5];
        let rr = [r, 0.2 * r, 0.1];
        if let (Some(p0), Some(p1)) = (tvn_upper(t, rr), tvn_upper([a, b + step, 0.5], rr)) {
            prop_assert!(p1 <= p0 + 1e-9);
        }
    }

    #[test]
    fn bivariate_symmetric_in_arguments(a in -4.0f64..4.0, b in -4.0f64..4.0, r in -0.99f64..0.99) {
        prop_assert!((bvn_upper(a, b, r) - bvn_upper(b, a, r)).abs() < 1e-14);
        let p = bvn_upper(a, b, r);
        prop_assert!((0.0..=1.0).contains(&p));
    }
}
