//! B-splines and local extrema splines.
//!
//! A local extrema basis function is
//!
//! ```text
//! B*_k(x) = M ∫_{-∞}^{x} Π_h (ξ - α_h) · B_k(ξ) dξ
//! ```
//!
//! where `B_k` is an order-`j` B-spline. The integrand is a polynomial of
//! degree `j - 1 + H` on every knot span, so a Gauss–Legendre rule with
//! `⌈(j + H + 1)/2⌉` nodes per span integrates it exactly. With nonnegative
//! coefficients the derivative `M Π(x - α_h) Σ β_k B_k(x)` can only change
//! sign at the change points `α_h`.
//!
//! Indexing: B-splines are numbered `1..=n_basis()`; index `0` is reserved
//! for the constant intercept function in [`LxBasis`].

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;
use nalgebra::DMatrix;

/// Highest supported spline order.
pub const MAX_ORDER: usize = 6;

/// Minimum distance between two change points.
pub const MIN_ALPHA_SEPARATION: f64 = 1e-6;

/// Breakpoints plus spline order. End knots are padded to multiplicity
/// `order` internally.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    breaks: Vec<f64>,
    order: usize,
    padded: Vec<f64>,
}

impl KnotVector {
    pub fn new(breaks: Vec<f64>, order: usize) -> Result<Self> {
        if order == 0 || order > MAX_ORDER {
            return Err(Error::Domain(format!("spline order {order} outside 1..={MAX_ORDER}")));
        }
        if breaks.len() < 2 {
            return Err(Error::Domain("knot vector needs at least two knots".into()));
        }
        if breaks.iter().any(|t| !t.is_finite()) {
            return Err(Error::Domain("knots must be finite".into()));
        }
        if breaks.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Domain("knots must be sorted".into()));
        }
        let (first, last) = (breaks[0], breaks[breaks.len() - 1]);
        if first >= last {
            return Err(Error::Domain("knot vector needs two distinct knots".into()));
        }
        if breaks[1] == first || breaks[breaks.len() - 2] == last {
            return Err(Error::Domain("end knots must be simple; padding is added internally".into()));
        }
        let mut padded = Vec::with_capacity(breaks.len() + 2 * order - 2);
        padded.extend(std::iter::repeat_n(first, order - 1));
        padded.extend_from_slice(&breaks);
        padded.extend(std::iter::repeat_n(last, order - 1));
        for w in padded.windows(order + 1) {
            if w[order] == w[0] {
                return Err(Error::Domain("interior knot multiplicity exceeds the order".into()));
            }
        }
        Ok(Self { breaks, order, padded })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// The breakpoints τ₁ ≤ … ≤ τ_K, end knots included once.
    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    /// The padded knot sequence used by the recursion.
    pub fn padded(&self) -> &[f64] {
        &self.padded
    }

    pub fn lower(&self) -> f64 {
        self.breaks[0]
    }

    pub fn upper(&self) -> f64 {
        self.breaks[self.breaks.len() - 1]
    }

    /// Number of order-`j` B-splines: `K + j - 2`.
    pub fn n_basis(&self) -> usize {
        self.padded.len() - self.order
    }

    /// Support `[t_k, t_{k+j}]` of the 1-based B-spline `k`.
    pub fn support(&self, k: usize) -> (f64, f64) {
        (self.padded[k - 1], self.padded[k - 1 + self.order])
    }

    /// Index `i` into the padded sequence with `t_i <= x < t_{i+1}`; the
    /// right end belongs to the last nonempty span.
    pub fn span(&self, x: f64) -> usize {
        let j = self.order;
        let lo = j - 1;
        let hi = self.padded.len() - j - 1;
        if x >= self.padded[hi] {
            return hi;
        }
        // partition_point over [lo, hi]
        let slice = &self.padded[lo..=hi];
        let pos = slice.partition_point(|&t| t <= x);
        (lo + pos.saturating_sub(1)).clamp(lo, hi)
    }

    /// Values of the `j` B-splines nonzero on span `i` at `x`, i.e. the
    /// 0-based functions `i+1-j ..= i`, written into `out[..j]`.
    ///
    /// This is the triangular form of the Cox–de Boor recursion.
    #[inline]
    pub fn nonzero_basis(&self, i: usize, x: f64, out: &mut [f64]) {
        let j = self.order;
        let t = &self.padded;
        let mut left = [0.0; MAX_ORDER];
        let mut right = [0.0; MAX_ORDER];
        out[0] = 1.0;
        for d in 1..j {
            left[d] = x - t[i + 1 - d];
            right[d] = t[i + d] - x;
            let mut saved = 0.0;
            for r in 0..d {
                let denom = right[r + 1] + left[d - r];
                let temp = if denom != 0.0 { out[r] / denom } else { 0.0 };
                out[r] = saved + right[r + 1] * temp;
                saved = left[d - r] * temp;
            }
            out[d] = saved;
        }
    }

    fn check_domain(&self, x: f64) -> Result<()> {
        if !(self.lower()..=self.upper()).contains(&x) {
            return Err(Error::Domain(format!(
                "x = {x} outside knot span [{}, {}]",
                self.lower(),
                self.upper()
            )));
        }
        Ok(())
    }

    fn check_index(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.n_basis() {
            return Err(Error::BasisIndex { index: k, min: 1, max: self.n_basis() });
        }
        Ok(())
    }
}

/// B_{(j,k)}(x) for the 1-based index `k`.
pub fn bspline_eval(knots: &KnotVector, k: usize, x: f64) -> Result<f64> {
    knots.check_index(k)?;
    knots.check_domain(x)?;
    let j = knots.order();
    let i = knots.span(x);
    let first = i + 1 - j;
    let idx = k - 1;
    if idx < first || idx > i {
        return Ok(0.0);
    }
    let mut vals = [0.0; MAX_ORDER];
    knots.nonzero_basis(i, x, &mut vals);
    Ok(vals[idx - first])
}

/// Local extrema spline basis for a fixed knot vector, change points and
/// sign/scale `M`.
#[derive(Debug, Clone)]
pub struct LxBasis {
    knots: KnotVector,
    alpha: Vec<f64>,
    m: f64,
    rule: GaussLegendre,
    /// For each padded span `i`, `order` values: ∫ G·B_k from the start of
    /// B_k's support to t_i, for the functions active on span `i`.
    before: Vec<f64>,
    /// ∫ G·B_k over the whole support, per 0-based `k`.
    full: Vec<f64>,
}

impl LxBasis {
    pub fn new(knots: KnotVector, alpha: Vec<f64>, m: f64) -> Result<Self> {
        if m == 0.0 || !m.is_finite() {
            return Err(Error::Domain("M must be a nonzero finite number".into()));
        }
        if alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::Domain("change points must be finite".into()));
        }
        for (i, &a) in alpha.iter().enumerate() {
            for &b in &alpha[i + 1..] {
                if (a - b).abs() < MIN_ALPHA_SEPARATION {
                    return Err(Error::DegenerateAlpha {
                        first: a,
                        second: b,
                        min_sep: MIN_ALPHA_SEPARATION,
                    });
                }
            }
        }
        let j = knots.order();
        let n_nodes = (j + alpha.len() + 1).div_ceil(2);
        let rule = GaussLegendre::new(n_nodes);
        let t = knots.padded();
        let n_spans = t.len() - 1;
        let mut span_int = vec![0.0; n_spans * j];
        let mut vals = [0.0; MAX_ORDER];
        for i in (j - 1)..(t.len() - j) {
            let (a, b) = (t[i], t[i + 1]);
            if b <= a {
                continue;
            }
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (&node, &w) in rule.nodes.iter().zip(&rule.weights) {
                let xi = mid + half * node;
                knots.nonzero_basis(i, xi, &mut vals);
                let g = poly_from_roots(&alpha, xi) * w * half;
                for r in 0..j {
                    span_int[i * j + r] += g * vals[r];
                }
            }
        }
        let n_basis = knots.n_basis();
        let mut before = vec![0.0; n_spans * j];
        let mut full = vec![0.0; n_basis];
        for (k, total) in full.iter_mut().enumerate() {
            let mut acc = 0.0;
            for i in k..k + j {
                // position of B_k among the functions active on span i
                let r = k + j - 1 - i;
                before[i * j + r] = acc;
                acc += span_int[i * j + r];
            }
            *total = acc;
        }
        Ok(Self { knots, alpha, m, rule, before, full })
    }

    pub fn knots(&self) -> &KnotVector {
        &self.knots
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    /// Number of non-intercept functions.
    pub fn n_basis(&self) -> usize {
        self.knots.n_basis()
    }

    /// Columns of the design matrix: intercept plus every B*_k.
    pub fn n_columns(&self) -> usize {
        self.n_basis() + 1
    }

    /// Integral of G·B_k over the support of the 1-based B-spline `k`
    /// (before scaling by M).
    pub fn support_integral(&self, k: usize) -> f64 {
        self.full[k - 1]
    }

    /// Fill `row[0..n_columns]` with the intercept and every B*_k(x). `x`
    /// must lie inside the knot span; this is not checked.
    pub fn eval_row(&self, x: f64, row: &mut [f64]) {
        let j = self.knots.order();
        let t = self.knots.padded();
        let i = self.knots.span(x);
        let first = i + 1 - j;
        row[0] = 1.0;
        for k in 0..first {
            row[k + 1] = self.m * self.full[k];
        }
        let mut partial = [0.0; MAX_ORDER];
        let a = t[i];
        if x > a {
            let half = 0.5 * (x - a);
            let mid = 0.5 * (x + a);
            let mut vals = [0.0; MAX_ORDER];
            for (&node, &w) in self.rule.nodes.iter().zip(&self.rule.weights) {
                let xi = mid + half * node;
                self.knots.nonzero_basis(i, xi, &mut vals);
                let g = poly_from_roots(&self.alpha, xi) * w * half;
                for r in 0..j {
                    partial[r] += g * vals[r];
                }
            }
        }
        for r in 0..j {
            row[first + r + 1] = self.m * (self.before[i * j + r] + partial[r]);
        }
        for v in row.iter_mut().take(self.n_basis() + 1).skip(i + 2) {
            *v = 0.0;
        }
    }

    /// Value of the 1-based B-spline `k` under G at `x`: G(x)·B_k(x).
    fn derivative_factor(&self, coeffs: &[f64], x: f64) -> f64 {
        let j = self.knots.order();
        let i = self.knots.span(x);
        let first = i + 1 - j;
        let mut vals = [0.0; MAX_ORDER];
        self.knots.nonzero_basis(i, x, &mut vals);
        (0..j).map(|r| coeffs[first + r + 1] * vals[r]).sum()
    }

    /// Σ_{k≥1} β_k B_k(x): the nonnegative factor of the derivative.
    pub fn weighted_bspline_sum(&self, coeffs: &[f64], x: f64) -> Result<f64> {
        self.check_coeffs(coeffs)?;
        self.knots.check_domain(x)?;
        Ok(self.derivative_factor(coeffs, x))
    }

    fn check_coeffs(&self, coeffs: &[f64]) -> Result<()> {
        if coeffs.len() != self.n_columns() {
            return Err(Error::Domain(format!(
                "expected {} coefficients (intercept first), got {}",
                self.n_columns(),
                coeffs.len()
            )));
        }
        for (index, &value) in coeffs.iter().enumerate().skip(1) {
            if value < 0.0 || value.is_nan() {
                return Err(Error::ConstraintViolation { index, value });
            }
        }
        Ok(())
    }

    /// Build the exact piecewise-polynomial integrand G·B_k for the 1-based
    /// B-spline `k` (without the factor M).
    pub fn integrand(&self, k: usize) -> Result<PiecewisePoly> {
        self.knots.check_index(k)?;
        let j = self.knots.order();
        let t = self.knots.padded();
        let (lo, hi) = self.knots.support(k);
        let mut breaks = vec![lo];
        let mut coeffs = Vec::new();
        for i in (k - 1)..(k - 1 + j) {
            let (a, b) = (t[i], t[i + 1]);
            if b <= a {
                continue;
            }
            // interpolate B_k on the span at j Chebyshev points
            let r = k - 1 + j - 1 - i;
            let pts: Vec<f64> = (0..j)
                .map(|q| {
                    let c = ((2 * q + 1) as f64 * std::f64::consts::PI / (2 * j) as f64).cos();
                    0.5 * (a + b) + 0.5 * (b - a) * c
                })
                .collect();
            let mut vals = [0.0; MAX_ORDER];
            let ys: Vec<f64> = pts
                .iter()
                .map(|&x| {
                    self.knots.nonzero_basis(i, x, &mut vals);
                    vals[r]
                })
                .collect();
            let local: Vec<f64> = pts.iter().map(|&x| x - a).collect();
            let mut poly = monomial_interpolate(&local, &ys);
            for &alpha in &self.alpha {
                poly = poly_mul_linear(&poly, a - alpha);
            }
            if breaks.last() != Some(&a) {
                breaks.push(a);
            }
            breaks.push(b);
            coeffs.push(poly);
        }
        breaks.dedup();
        debug_assert_eq!(breaks[breaks.len() - 1], hi);
        Ok(PiecewisePoly { breaks, coeffs })
    }
}

/// B*_{(j,k)}(x); `k = 0` is the intercept.
pub fn lx_basis_eval(basis: &LxBasis, k: usize, x: f64) -> Result<f64> {
    if k > basis.n_basis() {
        return Err(Error::BasisIndex { index: k, min: 0, max: basis.n_basis() });
    }
    basis.knots.check_domain(x)?;
    if k == 0 {
        return Ok(1.0);
    }
    let mut row = vec![0.0; basis.n_columns()];
    basis.eval_row(x, &mut row);
    Ok(row[k])
}

/// f'(x) = M Π(x - α_h) Σ_{k≥1} β_k B_k(x). `coeffs[0]` is the intercept
/// and does not enter the derivative.
pub fn lx_derivative_eval(basis: &LxBasis, coeffs: &[f64], x: f64) -> Result<f64> {
    basis.check_coeffs(coeffs)?;
    basis.knots.check_domain(x)?;
    Ok(basis.m * poly_from_roots(&basis.alpha, x) * basis.derivative_factor(coeffs, x))
}

/// n × (n_basis + 1) design matrix; column 0 is the intercept.
pub fn lx_design_matrix(basis: &LxBasis, xs: &[f64]) -> Result<DMatrix<f64>> {
    for &x in xs {
        basis.knots.check_domain(x)?;
    }
    let p = basis.n_columns();
    let mut out = DMatrix::zeros(xs.len(), p);
    let mut row = vec![0.0; p];
    for (i, &x) in xs.iter().enumerate() {
        basis.eval_row(x, &mut row);
        for (c, &v) in row.iter().enumerate() {
            out[(i, c)] = v;
        }
    }
    Ok(out)
}

/// Π_h (x - α_h).
#[inline]
pub fn poly_from_roots(roots: &[f64], x: f64) -> f64 {
    roots.iter().fold(1.0, |acc, &a| acc * (x - a))
}

/// Piecewise polynomial with coefficients in the local variable `x - left`
/// on each piece.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewisePoly {
    breaks: Vec<f64>,
    coeffs: Vec<Vec<f64>>,
}

impl PiecewisePoly {
    pub fn new(breaks: Vec<f64>, coeffs: Vec<Vec<f64>>) -> Result<Self> {
        if breaks.len() != coeffs.len() + 1 || coeffs.is_empty() {
            return Err(Error::Domain("need one coefficient vector per piece".into()));
        }
        if breaks.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("breakpoints must be strictly increasing".into()));
        }
        Ok(Self { breaks, coeffs })
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn degree(&self) -> usize {
        self.coeffs.iter().map(|c| c.len().saturating_sub(1)).max().unwrap_or(0)
    }

    fn piece(&self, x: f64) -> usize {
        let n = self.coeffs.len();
        self.breaks[1..n].partition_point(|&b| b <= x)
    }

    /// Value at `x` (zero outside the breakpoints).
    pub fn eval(&self, x: f64) -> f64 {
        if x < self.breaks[0] || x > self.breaks[self.breaks.len() - 1] {
            return 0.0;
        }
        let p = self.piece(x);
        horner(&self.coeffs[p], x - self.breaks[p])
    }

    /// Value of piece `p` at `x`, even when `x` is that piece's right end.
    pub fn eval_piece(&self, p: usize, x: f64) -> f64 {
        horner(&self.coeffs[p], x - self.breaks[p])
    }

    pub fn n_pieces(&self) -> usize {
        self.coeffs.len()
    }

    /// ∫ from the first breakpoint to `x`, by exact antiderivatives.
    pub fn integral_to(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for (p, c) in self.coeffs.iter().enumerate() {
            let a = self.breaks[p];
            if x <= a {
                break;
            }
            let b = self.breaks[p + 1].min(x);
            let h = b - a;
            acc += c
                .iter()
                .enumerate()
                .map(|(d, &cd)| cd * h.powi(d as i32 + 1) / (d as f64 + 1.0))
                .sum::<f64>();
        }
        acc
    }
}

fn horner(c: &[f64], u: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &v| acc * u + v)
}

/// Multiply a local-variable polynomial by (u + shift).
fn poly_mul_linear(c: &[f64], shift: f64) -> Vec<f64> {
    let mut out = vec![0.0; c.len() + 1];
    for (d, &v) in c.iter().enumerate() {
        out[d] += v * shift;
        out[d + 1] += v;
    }
    out
}

/// Monomial coefficients of the interpolating polynomial through (x, y).
fn monomial_interpolate(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let v = DMatrix::from_fn(n, n, |r, c| xs[r].powi(c as i32));
    let y = nalgebra::DVector::from_column_slice(ys);
    v.lu().solve(&y).map(|s| s.as_slice().to_vec()).unwrap_or_else(|| vec![0.0; n])
}
