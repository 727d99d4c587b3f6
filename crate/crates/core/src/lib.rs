//! Numerical laboratory for solitary waves of the focusing NLS
//! `i u_t + Δu = -|u|^{p-1} u` outside a convex obstacle with Dirichlet data.

pub mod error;
pub mod fit;
pub mod fixedpoint;
pub mod grid;
pub mod ground_state;
pub mod linalg;
pub mod linearized;
pub mod modulation;
pub mod soliton;
pub mod evolve;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
