#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod advsup;
pub mod batch;
pub mod detector;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod grasp;
pub mod image;
pub mod jsonl;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod scenegen;

pub use error::{Error, Result};
