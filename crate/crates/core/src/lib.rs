//! Decoding controller for masked-diffusion language models.
//!
//! The controller drives any [`MaskPredictor`] through a three-phase schedule:
//!
//! 1. **Divide** picks spatially separated seed tokens with calibrated
//!    confidence and grows them into contiguous local clusters.
//! 2. **Conquer** unmasks tokens inside those clusters in parallel, sizing each
//!    step's parallel set from the members' confidences.
//! 3. **Finalize** clears the last scattered masks by logit margin, falling
//!    back to top-1 confidence decoding.
//!
//! Baseline decoders (vanilla top-1, top-k, fixed threshold) and the
//! semi-autoregressive block wrapper live in [`engine`]. [`oracle`] provides an
//! exact first-order Markov-chain predictor and [`theory`] computes the exact
//! joint and product-of-marginals distributions used to check the
//! total-variation bound for confidence-based parallel decoding.
//!
//! The crate is `no_std` and needs only `alloc`.

#![no_std]
#![deny(unsafe_code)]
// `!(x > y)` comparisons deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod config;
pub mod conquer;
pub mod divide;
pub mod engine;
mod error;
pub mod finalize;
pub mod oracle;
pub mod prediction;
pub mod predictor;
pub mod sequence;
pub mod session;
pub mod theory;
pub mod trace;

pub use config::{DecodeConfig, DecodeMode, ParallelRule};
pub use divide::{Cluster, ClusterSet};
pub use engine::{DecodeMetrics, DecodeResult, PhaseCalls, Strategy};
pub use error::{DecodeAbort, Error, Result};
pub use oracle::MarkovOracle;
pub use prediction::{PositionPrediction, PredictionGrid};
pub use predictor::MaskPredictor;
pub use sequence::{SequenceState, Slot, TokenId, MASK};
pub use session::{Session, Window};
pub use trace::{EventKind, Phase, TraceEvent};
