//! Discovery of PDE structure from scattered space-time measurements.
//!
//! For every non-empty subset of a library of differential operators
//! (`u_t`, `u_x`, `u_xx`, `u_xt`, `u_tt`), a solution network and a source
//! network are trained by alternating minimization of a hybrid data/physics
//! loss; the subset with the smallest Akaike information criterion wins.
//! A recurrent refinement network, warm-started from the solution network,
//! can be fitted per candidate before scoring.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod discovery;
pub mod error;
pub mod jet;
pub mod loss;
pub mod network;
pub mod operators;
pub mod selection;
pub mod trainer;
pub mod optim;
pub mod recurrent;

pub use error::{Error, Result};
