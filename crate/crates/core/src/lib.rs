//! Learning to condition for MPE inference on binary graphical models.
//!
//! The crate bundles the model representation and UAI I/O ([`pgm`], [`uai`]),
//! Gibbs sampling ([`sampling`]), exact and mini-bucket elimination
//! ([`bounds`]), an anytime branch-and-bound solver ([`bnb`]), the solver-trace
//! data pipeline ([`data`]), the dual-head attention scorer ([`scorer`]),
//! conditioning strategies ([`conditioning`]) and evaluation metrics
//! ([`eval`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bnb;
pub mod bounds;
pub mod conditioning;
pub mod data;
pub mod error;
pub mod eval;
mod ext_real;
pub mod generate;
pub mod pgm;
pub mod sampling;
pub mod scorer;
pub mod uai;

pub use error::{Error, Result};
pub use pgm::{brute_force_mpe, Assignment, GraphicalModel, LogPotential, PrimalGraph};
