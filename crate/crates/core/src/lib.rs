#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod distributions;
pub mod dominance;
pub mod error;
pub mod experiments;
pub mod ingest;
pub mod knn;
pub mod rng;
pub mod special;
pub mod stats;

pub use error::{Error, Result};
