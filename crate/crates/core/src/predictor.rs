//! The mask-predictor interface driven by every decoder.

use crate::error::Result;
use crate::prediction::PredictionGrid;
use crate::sequence::SequenceState;

/// One forward pass: predictions for every masked response slot of `state`.
///
/// Implementations must be deterministic: an identical state yields an
/// identical grid. Decoders rely on this to reuse a grid while the state is
/// unchanged, and charge one predictor call per actual invocation.
///
/// A state without masked slots is an invalid-state error.
pub trait MaskPredictor {
    fn predict(&self, state: &SequenceState) -> Result<PredictionGrid>;
}

impl<P: MaskPredictor + ?Sized> MaskPredictor for &P {
    fn predict(&self, state: &SequenceState) -> Result<PredictionGrid> {
        (**self).predict(state)
    }
}
