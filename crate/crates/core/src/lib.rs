//! Experimental-design algorithms for regret minimization and best-arm
//! identification in linear and combinatorial bandits.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod design_full;
pub mod error;
pub mod gwidth;
pub mod harness;
pub mod model;
pub mod oracle_opt;
pub mod oracles;
pub mod rounding;

pub use error::{Error, Result};
