//! Soil-moisture retrieval from radar backscatter.
//!
//! Two retrieval routes share the same data plumbing:
//!
//! * [`wcm`] and [`calibrate`]: the closed-form Water Cloud Model, with its
//!   empirical parameters fitted by a Nelder–Mead simplex.
//! * [`lstm`] and [`kg`]: a knowledge-guided LSTM that consumes the
//!   vegetation-corrected soil backscatter (with a learnable vegetation
//!   factor `a = exp(log_a)`) and is trained under a soil-MSE plus
//!   physical-bounds loss.
//!
//! [`eval`] compares both under spatial k-fold cross-validation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod kg;
pub mod lstm;
pub mod nelder_mead;
pub mod wcm;

pub use error::{Error, Result};
pub use exec::Exec;
