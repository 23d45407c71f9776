//! mildkit: exact symbolic-numeric toolkit for certifying factorial-type
//! derivative growth bounds of exp-monomial functions.
//!
//! The crate is organized in layers:
//!
//! - [`hpreal`]: arbitrary-precision binary floats with a wide exponent
//!   range (doubly exponentially small magnitudes arise near the boundary).
//! - [`ratcalc`]: the exact function class — finite sums of terms
//!   `c * e^p * prod x_i^(a_i + b_i*alpha) * prod exp(s_i (1 - x_i^-alpha))`
//!   closed under differentiation, with exact rational-point evaluation.
//! - [`faadibruno`]: partition combinatorics for higher-order chain rules,
//!   univariate and multivariate, plus generic derivative composition.
//! - [`mildness`]: growth certificates `(A, B, C)` asserting
//!   `sup |f^(nu)| <= B * A^|nu| * (|nu|!)^(C+1)`, their composition and
//!   product calculus, numeric verification, and constant fitting.
//! - [`parametrize`]: certified chart families for the hyperbola family
//!   `x y = eps^2` with uniform-in-`eps` growth certificates.

pub mod error;
pub mod faadibruno;
pub mod hpreal;
pub mod mildness;
pub mod parametrize;
pub mod ratcalc;
pub mod scalar;

pub use error::{MildError, Result};
pub use hpreal::HPReal;
