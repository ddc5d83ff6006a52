//! Evolutionary algorithms tracking a moving Hamming ball.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algorithms;
pub mod analysis;
pub mod bits;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod operators;
pub mod stats;
pub mod verify;

pub use bits::Bitstring;
pub use dynamics::{DynamicFunction, MhbInstance, MhbParams};
pub use error::{Error, Result};
pub use operators::{MutationOp, SelectionSpec};
pub use stats::RngStream;
