//! Monte Carlo solver for stochastic fixed point equations.
//!
//! The library approximates the pair (value, gradient) of a semilinear
//! Kolmogorov terminal value problem as the fixed point of
//!
//! ```text
//!     (Phi w)(t, x) = E[ g(X_T) Z_T + int_t^T f(r, X_r, w(r, X_r)) Z_r dr ]
//! ```
//!
//! where X is the Euler-Maruyama diffusion started at (t, x) and Z is the
//! Bismut-Elworthy-Li weight (1, (s-t)^{-1} int_t^s (sigma^-1 J)^T dW). The
//! gradient costs no extra regularity: it is read off the same paths through
//! Z, at the price of an integrable 1/sqrt(s-t) singularity that the solver's
//! quadrature and norms are built around.
//!
//! Module map:
//! * [`rng`]: counter-based Gaussians, reproducible per (seed, path, step);
//! * [`integral`]: the singular exponential integrals behind the contraction
//!   constants, plus their closed-form bounds;
//! * [`coefficients`]: drift/diffusion descriptions and built-in models;
//! * [`sde`]: path simulation with the variational (Jacobian) equation;
//! * [`bel`]: the weight process and its moment certificates;
//! * [`norms`]: singular weighted supremum norms and Lyapunov envelopes;
//! * [`grid`]: space-time value grids with clamped multilinear reads;
//! * [`solver`]: the fixed point iteration, contraction probes, diagnostics;
//! * [`manufactured`]: problems with known solutions for end-to-end checks;
//! * [`report`], [`config`], [`cli`]: artifacts, problem files, command line.

pub mod bel;
pub mod cli;
pub mod coefficients;
pub mod config;
pub mod error;
pub mod grid;
pub mod integral;
pub mod manufactured;
pub mod norms;
pub mod report;
pub mod rng;
pub mod sde;
pub mod solver;
pub mod time_grid;

pub use error::{Error, Result};
