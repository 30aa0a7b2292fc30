//! Node-perturbation learning driven by stochastic magnetic tunnel junction
//! noise.
//!
//! The crate covers the whole pipeline: telegraph-noise physics and trace
//! analysis ([`smtj`]), noise generators ([`noise`], [`live`]), a forward-only
//! MLP with input decorrelation ([`network`]), the NP/ANP/BP update rules and
//! optimizers ([`learning`]) and dataset handling ([`data`]).

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod learning;
pub mod live;
pub mod network;
pub mod noise;
pub mod numerics;
pub mod rng;
pub mod smtj;
pub mod trace_io;

pub use error::{Error, Result};
pub use numerics::{Matrix, Vector};
