//! Exact multi-soliton solutions of the vector nonlinear Schrödinger equation
//! `i u_t + u_xx - 2 kappa |u|^2 u = 0` by Darboux dressing and by degenerate-kernel
//! GLM inversion, Bäcklund-transformation checks between solutions, and the
//! discrete vNLS lattice with a point defect together with its conserved charges.

pub mod backlund;
pub mod cli;
pub mod darboux;
pub mod dnls;
pub mod suite;
pub mod error;
pub mod field;
pub mod glm;
pub mod lax_core;
pub mod linalg;

pub use error::{Error, Result};
pub use field::{FieldClosure, FieldGrid, FnField, GridSpec};
pub use lax_core::{make_params, LaxParams};
pub use linalg::{C64, CMat};
