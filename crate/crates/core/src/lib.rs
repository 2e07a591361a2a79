#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod calculus;
pub mod cli;
pub mod coupling;
pub mod error;
pub mod eulerian;
pub mod ot;
pub mod registry;
pub mod space;
pub mod transport;

pub use error::{Error, Result};
