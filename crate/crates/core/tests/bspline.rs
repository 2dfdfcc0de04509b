use lxspline::{bspline_eval, lx_basis_eval, lx_derivative_eval, lx_design_matrix, Error, KnotVector, LxBasis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Textbook Cox–de Boor recursion on an explicitly padded knot sequence,
/// with 0-based index `i` and order `j`.
fn naive_bspline(t: &[f64], i: usize, j: usize, x: f64) -> f64 {
    if j == 1 {
        let last = t[t.len() - 1];
        let inside = t[i] <= x && (x < t[i + 1] || (x == last && t[i + 1] == last && t[i] < last));
        return if inside { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let d1 = t[i + j - 1] - t[i];
    if d1 > 0.0 {
        v += (x - t[i]) / d1 * naive_bspline(t, i, j - 1, x);
    }
    let d2 = t[i + j] - t[i + 1];
    if d2 > 0.0 {
        v += (t[i + j] - x) / d2 * naive_bspline(t, i + 1, j - 1, x);
    }
    v
}

fn padded(breaks: &[f64], j: usize) -> Vec<f64> {
    let mut t = vec![breaks[0]; j - 1];
    t.extend_from_slice(breaks);
    t.extend(std::iter::repeat_n(*breaks.last().unwrap(), j - 1));
    t
}

fn random_breaks(rng: &mut ChaCha8Rng, lo: f64, hi: f64, interior: usize) -> Vec<f64> {
    let mut b: Vec<f64> = (0..interior).map(|_| rng.random_range(lo + 0.01..hi - 0.01)).collect();
    b.push(lo);
    b.push(hi);
    b.sort_by(f64::total_cmp);
    b.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
    b
}

fn breaks_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..0.99, 0..8).prop_map(|mut v| {
        v.push(0.0);
        v.push(1.0);
        v.sort_by(f64::total_cmp);
        v.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
        v
    })
}

proptest! {
    #[test]
    fn partition_of_unity(breaks in breaks_strategy(), j in 1usize..=4, x in 0.0f64..=1.0) {
        let kv = KnotVector::new(breaks, j).unwrap();
        let s: f64 = (1..=kv.n_basis()).map(|k| bspline_eval(&kv, k, x).unwrap()).sum();
        prop_assert!((s - 1.0).abs() < 1e-10);
    }

    #[test]
    fn bsplines_match_textbook_recursion(breaks in breaks_strategy(), j in 1usize..=5, x in 0.0f64..1.0) {
        let kv = KnotVector::new(breaks.clone(), j).unwrap();
        let t = padded(&breaks, j);
        for k in 1..=kv.n_basis() {
            let a = bspline_eval(&kv, k, x).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert!((a - naive_bspline(&t, k - 1, j, x)).abs() < 1e-12);
        }
    }

    #[test]
    fn basis_count_is_breaks_plus_order_minus_two(breaks in breaks_strategy(), j in 1usize..=6) {
        let kv = KnotVector::new(breaks.clone(), j).unwrap();
        prop_assert_eq!(kv.n_basis(), breaks.len() + j - 2);
    }

    #[test]
    fn derivative_sign_changes_bounded_by_h(
        breaks in breaks_strategy(),
        alpha in prop::collection::vec(-0.2f64..1.2, 2),
        seed in any::<u64>(),
    ) {
        prop_assume!((alpha[0] - alpha[1]).abs() > 1e-3);
        let kv = KnotVector::new(breaks, 2).unwrap();
        let basis = LxBasis::new(kv, alpha, 100.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut coeffs = vec![0.0];
        coeffs.extend((0..basis.n_basis()).map(|_| if rng.random::<f64>() < 0.3 { 0.0 } else { rng.random::<f64>() }));
        let mut signs = Vec::new();
        for i in 0..10_000 {
            let d = lx_derivative_eval(&basis, &coeffs, i as f64 / 9_999.0).unwrap();
            if d != 0.0 {
                signs.push(d > 0.0);
            }
        }
        let changes = signs.windows(2).filter(|w| w[0] != w[1]).count();
        prop_assert!(changes <= 2);
    }

    #[test]
    fn basis_linear_in_m(breaks in breaks_strategy(), a in 0.0f64..1.0, x in 0.0f64..=1.0, m in -50.0f64..50.0) {
        prop_assume!(m.abs() > 1e-3);
        let kv = KnotVector::new(breaks, 2).unwrap();
        let b1 = LxBasis::new(kv.clone(), vec![a], m).unwrap();
        let b2 = LxBasis::new(kv, vec![a], 2.0 * m).unwrap();
        for k in 1..=b1.n_basis() {
            let v1 = lx_basis_eval(&b1, k, x).unwrap();
            let v2 = lx_basis_eval(&b2, k, x).unwrap();
            prop_assert!((v2 - 2.0 * v1).abs() <= 1e-12 * v1.abs().max(1.0));
        }
    }
}

/// Composite Simpson on each knot span; exact for cubics, so exact for
/// B-splines of order up to 4.
fn simpson_support_integral(t: &[f64], i: usize, j: usize) -> f64 {
    let mut total = 0.0;
    for s in i..i + j {
        let (a, b) = (t[s], t[s + 1]);
        if b <= a {
            continue;
        }
        let n = 64;
        let h = (b - a) / n as f64;
        let f = |x: f64| {
            // evaluate from the right inside the span so the indicator picks this span
            let x = x.clamp(a, b - 1e-15 * (b - a).max(1.0));
            naive_bspline(t, i, j, x)
        };
        let mut acc = f(a) + f(b);
        for q in 1..n {
            acc += if q % 2 == 1 { 4.0 } else { 2.0 } * f(a + q as f64 * h);
        }
        total += acc * h / 3.0;
    }
    total
}

#[test]
fn support_integrals_equal_width_over_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..40 {
        let j = 1 + trial % 4;
        let breaks = random_breaks(&mut rng, 0.0, 1.0, 1 + trial % 6);
        let kv = KnotVector::new(breaks.clone(), j).unwrap();
        let t = padded(&breaks, j);
        let basis = LxBasis::new(kv.clone(), vec![], 1.0).unwrap();
        for k in 1..=kv.n_basis() {
            let (lo, hi) = kv.support(k);
            let expected = (hi - lo) / j as f64;
            assert!((basis.support_integral(k) - expected).abs() < 1e-10);
            assert!((simpson_support_integral(&t, k - 1, j) - expected).abs() < 1e-10);
        }
    }
}

/// M ∫_{τ₁}^{x} Π(ξ-α)·B_k(ξ) dξ by the trapezoid rule, span by span
/// (the B-spline is smooth inside each span), with `per_unit` subintervals
/// per unit length.
fn trapezoid_oracle(t: &[f64], j: usize, k: usize, alpha: &[f64], m: f64, x: f64, per_unit: f64) -> f64 {
    let mut total = 0.0;
    for s in (k - 1)..(k - 1 + j) {
        let (a, b) = (t[s], t[s + 1].min(x));
        if b <= a {
            continue;
        }
        let right = t[s + 1];
        let g = |xi: f64| {
            let xi = xi.clamp(a, right - 1e-15);
            alpha.iter().fold(1.0, |acc, al| acc * (xi - al)) * naive_bspline(t, k - 1, j, xi)
        };
        let n = ((b - a) * per_unit).ceil().max(1.0) as usize;
        let h = (b - a) / n as f64;
        let mut acc = 0.5 * (g(a) + g(b));
        for q in 1..n {
            acc += g(a + q as f64 * h);
        }
        total += acc * h;
    }
    m * total
}

#[test]
fn lx_basis_matches_dense_trapezoid() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let j = rng.random_range(1..=4);
        let interior = rng.random_range(0..5);
        let breaks = random_breaks(&mut rng, -0.5, 0.5, interior);
        let h = rng.random_range(0..=3);
        let alpha: Vec<f64> = (0..h).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = if rng.random::<bool>() { 100.0 } else { -3.0 };
        let kv = KnotVector::new(breaks.clone(), j).unwrap();
        let basis = LxBasis::new(kv.clone(), alpha.clone(), m).unwrap();
        let t = padded(&breaks, j);
        let x = rng.random_range(-0.5..=0.5);
        let k = rng.random_range(1..=kv.n_basis());
        let got = lx_basis_eval(&basis, k, x).unwrap();
        // 10⁶ subintervals across the unit working interval
        let want = trapezoid_oracle(&t, j, k, &alpha, m, x, 1e6);
        assert!((got - want).abs() < 1e-7, "j={j} k={k} x={x} alpha={alpha:?}: {got} vs {want}");
    }
}

#[test]
fn design_matrix_rows_and_errors() {
    let kv = KnotVector::new(vec![-0.5, -0.1, 0.2, 0.5], 3).unwrap();
    let basis = LxBasis::new(kv, vec![0.05, -0.3], -7.0).unwrap();
    let xs = [0.1, 0.1, 0.1];
    let x = lx_design_matrix(&basis, &xs).unwrap();
    assert_eq!(x.ncols(), basis.n_columns());
    assert_eq!(x.row(0), x.row(2));
    let rnd: Vec<f64> = (0..25).map(|i| -0.5 + i as f64 / 24.0).collect();
    let x = lx_design_matrix(&basis, &rnd).unwrap();
    for (r, &xv) in rnd.iter().enumerate() {
        for c in 0..basis.n_columns() {
            assert!((x[(r, c)] - lx_basis_eval(&basis, c, xv).unwrap()).abs() < 1e-12);
        }
    }
    assert!(matches!(lx_design_matrix(&basis, &[0.7]), Err(Error::Domain(_))));
    assert!(matches!(lx_basis_eval(&basis, 99, 0.0), Err(Error::BasisIndex { .. })));
    let mut coeffs = vec![0.0; basis.n_columns()];
    coeffs[2] = -1.0;
    assert!(matches!(lx_derivative_eval(&basis, &coeffs, 0.0), Err(Error::ConstraintViolation { .. })));
}

#[test]
fn complete_tree_knots_have_expected_gap() {
    use lxspline::knot_tree::KnotTree;
    for depth in 0u32..6 {
        let tree = KnotTree::complete(depth);
        let ks = tree.knot_set();
        let gap = ks.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        assert!((gap - 0.5f64.powi(depth as i32 + 1)).abs() < 1e-15);
    }
}
