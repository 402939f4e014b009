//! Decoding trace events and replay.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sequence::{SequenceState, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Divide,
    Conquer,
    Finalize,
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Forward,
    SeedAccept,
    Unmask,
    ClusterForm,
    ClusterMerge,
    ClusterAdapt,
    ClusterDeactivate,
    PhaseTransition,
    Fallback,
}

/// One step of a decode session. Positions are response-relative and
/// cluster intervals are inclusive `[lo, hi]` pairs.
///
/// For `forward` events `positions`, `tokens` and `confidences` describe every
/// masked slot of the grid; for `unmask` events they describe the slots just
/// written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub step: u64,
    pub phase: Phase,
    pub kind: EventKind,
    pub positions: Vec<usize>,
    pub tokens: Vec<TokenId>,
    pub confidences: Vec<f64>,
    pub clusters: Vec<(usize, usize)>,
    pub unmask_ratio: f64,
}

impl TraceEvent {
    pub fn new(step: u64, phase: Phase, kind: EventKind, unmask_ratio: f64) -> Self {
        TraceEvent {
            step,
            phase,
            kind,
            positions: Vec::new(),
            tokens: Vec::new(),
            confidences: Vec::new(),
            clusters: Vec::new(),
            unmask_ratio,
        }
    }
}

/// Rebuilds the final state by applying every unmask event in order to a
/// fresh, fully masked response.
pub fn replay(prompt: &[TokenId], response_length: usize, events: &[TraceEvent]) -> Result<SequenceState> {
    let mut state = SequenceState::new(prompt.to_vec(), response_length)?;
    let mut last_step = 0;
    for (idx, ev) in events.iter().enumerate() {
        if ev.step < last_step {
            return Err(Error::integrity(format!(
                "event {idx}: step {} after step {last_step}",
                ev.step
            )));
        }
        last_step = ev.step;
        if ev.kind != EventKind::Unmask {
            continue;
        }
        if ev.positions.len() != ev.tokens.len() {
            return Err(Error::integrity(format!(
                "event {idx}: {} positions but {} tokens",
                ev.positions.len(),
                ev.tokens.len()
            )));
        }
        for (&pos, &tok) in ev.positions.iter().zip(&ev.tokens) {
            state
                .assign(pos, tok)
                .map_err(|e| Error::integrity(format!("event {idx}: {e}")))?;
        }
    }
    Ok(state)
}

/// Phases of the trace with consecutive repeats collapsed.
pub fn phase_sequence(events: &[TraceEvent]) -> Vec<Phase> {
    let mut out: Vec<Phase> = Vec::new();
    for ev in events {
        if out.last() != Some(&ev.phase) {
            out.push(ev.phase);
        }
    }
    out
}

/// Whether a collapsed phase sequence matches
/// `divide (conquer divide)* conquer? finalize`.
pub fn is_dico_phase_order(phases: &[Phase]) -> bool {
    let [Phase::Divide, middle @ .., Phase::Finalize] = phases else {
        return false;
    };
    // Collapsed, so adjacent entries already differ; alternation follows
    // from restricting the interior to the two cyclic phases.
    middle
        .iter()
        .all(|p| matches!(p, Phase::Divide | Phase::Conquer))
}
