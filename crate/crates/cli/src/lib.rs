//! Command-line front end and model-server bridge for the DiCo decoder.

// `!(x > y)` comparisons deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod app;
pub mod bridge;
pub mod compare;
pub mod config_file;
pub mod export;
pub mod source;
pub mod strategy;
pub mod trace_io;
