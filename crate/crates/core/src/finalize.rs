//! Finalize phase: compound decoding of the remaining masks.
//!
//! Each pass unmasks, in parallel, every masked position whose top-2 logit
//! margin exceeds `tau3`. When none qualifies it falls back to unmasking the
//! single most confident position. With `tau3 = +inf` this is exactly vanilla
//! top-1 decoding.

use alloc::vec::Vec;

use crate::config::DecodeConfig;
use crate::error::Result;
use crate::prediction::{PositionPrediction, PredictionGrid};
use crate::predictor::MaskPredictor;
use crate::session::Session;
use crate::trace::EventKind;

pub fn logit_margin(pred: &PositionPrediction) -> f64 {
    pred.top1_logit - pred.top2_logit
}

/// Most confident entry; the smallest position wins ties.
pub(crate) fn top1(grid: &PredictionGrid) -> Option<&PositionPrediction> {
    grid.iter().fold(None, |best: Option<&PositionPrediction>, e| match best {
        Some(b) if b.top1_prob >= e.top1_prob => Some(b),
        _ => Some(e),
    })
}

pub fn finalize_phase<P: MaskPredictor + ?Sized>(
    session: &mut Session<'_, P>,
    cfg: &DecodeConfig,
) -> Result<()> {
    while session.window_has_masks() {
        let grid = session.forward()?;
        let eligible: Vec<&PositionPrediction> =
            grid.iter().filter(|e| logit_margin(e) > cfg.tau3).collect();
        if eligible.is_empty() {
            let Some(best) = top1(&grid) else { break };
            let (pos, conf, margin) = (best.position, best.top1_prob, logit_margin(best));
            session.emit(EventKind::Fallback, |ev| {
                ev.positions.push(pos);
                ev.confidences.push(conf);
                // largest margin on this pass, all at or below tau3
                ev.confidences.push(
                    grid.iter().map(logit_margin).fold(margin, f64::max),
                );
            });
            session.unmask(&[pos])?;
        } else {
            let selected: Vec<usize> = eligible.iter().map(|e| e.position).collect();
            session.unmask(&selected)?;
        }
    }
    Ok(())
}
