//! Stochastic Galerkin eigenpair expansions of `A(xi) = A_0 + sum_k xi_k A_k`
//! by a low-rank inexact Newton-Krylov method.

pub mod config;
pub mod error;
pub mod fem;
pub mod io;
pub mod kle;
pub mod krylov;
pub mod lowrank;
pub mod newton;
pub mod operator;
pub mod oracle;
pub mod pce;

pub use error::{Error, Result};
