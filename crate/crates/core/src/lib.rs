//! System identification of linear stochastic differential equations from
//! noisy sampled observations.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bo;
pub mod cli;
pub mod consistency;
pub mod egp;
pub mod em;
pub mod error;
pub mod gp;
pub mod harness;
pub mod kalman;
pub mod mle;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
