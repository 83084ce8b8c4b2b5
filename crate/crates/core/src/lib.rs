// Negated comparisons are deliberate: they reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod forward_model;
pub mod model_file;
pub mod nn;
pub mod posterior;
pub mod samplers;
pub mod selftest;
pub mod surrogate;

pub use error::{Error, Result};
