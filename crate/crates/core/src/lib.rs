//! Bayesian local extrema splines.
//!
//! Curves are modelled as `f(x) = β₀ + Σ β_k B*_k(x)` with nonnegative
//! `β_k`, so every local extremum of `f` sits at one of the change points
//! `α_h`. Posterior inference runs a parallel-tempered sampler over the
//! knot tree, coefficients, change points and hyperparameters, and shape
//! hypotheses are compared through Bayes factors on the extremum signature.

pub mod bspline;
pub mod dist;
pub mod error;
pub mod knot_tree;
pub mod model;
pub mod nnls;
pub mod orthant;
pub mod quadrature;
pub mod sampler;
pub mod shape;
pub mod sim;

pub use bspline::{bspline_eval, lx_basis_eval, lx_derivative_eval, lx_design_matrix, KnotVector, LxBasis, PiecewisePoly};
pub use error::{Error, Result};
