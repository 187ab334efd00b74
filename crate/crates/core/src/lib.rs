//! Dirichlet-type approximation quantities for matrices, first minima of lattices along
//! diagonal flows, and a finite-depth nested-box construction of matrices with a
//! prescribed Dirichlet value.

pub mod approx;
pub mod constructor;
pub mod error;
pub mod exhaustion;
pub mod lattice_flow;
pub mod norms;
pub mod rational;

pub use error::{Error, Result};

/// Locale-independent float formatting with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}
