//! Exact arithmetic for truncated Witt vectors over perfect polynomial
//! rings, untilt residue rings with digit normal forms, a small first-order
//! formula language with translation pipelines between valued-field
//! signatures, finite-model evaluation, and bounded congruence solvers.
//!
//! Everything is exact: coefficients live in F_q or Z/p^n, exponents are
//! rationals with p-power denominators, and no floating point appears
//! anywhere.

pub mod acceptance;
pub mod error;
pub mod exponent;
pub mod feval;
pub mod field;
pub mod formula;
pub mod interp;
pub mod perfect;
pub mod solver;
pub mod untilt;
pub mod witt;
pub mod wittpoly;

pub use error::{Error, Result};
pub use exponent::Exponent;
pub use field::{FqElem, PrimeConfig};
pub use perfect::{FracElem, PerfElem};
