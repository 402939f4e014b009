//! A single decode session: state, predictor handle, trace and active window.
//!
//! Phase logic sees only the active window (the whole response, or one block
//! under semi-autoregressive decoding) and addresses it with window-relative
//! positions. The session translates those back to response positions for the
//! state and the trace.
//!
//! The last grid is kept until the state changes. Predictors are
//! deterministic, so a forward pass on an unchanged state reuses that grid
//! instead of invoking the predictor again; only real invocations count as
//! predictor calls and emit `forward` events.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::prediction::PredictionGrid;
use crate::predictor::MaskPredictor;
use crate::sequence::SequenceState;
use crate::trace::{EventKind, Phase, TraceEvent};

/// Half-open range `[offset, offset + len)` of response positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub offset: usize,
    pub len: usize,
}

pub struct Session<'p, P: MaskPredictor + ?Sized> {
    predictor: &'p P,
    state: SequenceState,
    trace: Vec<TraceEvent>,
    phase: Phase,
    window: Window,
    grid: Option<PredictionGrid>,
}

impl<'p, P: MaskPredictor + ?Sized> Session<'p, P> {
    pub fn new(predictor: &'p P, state: SequenceState) -> Self {
        let window = Window {
            offset: 0,
            len: state.response_len(),
        };
        Session {
            predictor,
            state,
            trace: Vec::new(),
            phase: Phase::Baseline,
            window,
            grid: None,
        }
    }

    pub fn state(&self) -> &SequenceState {
        &self.state
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn into_parts(self) -> (SequenceState, Vec<TraceEvent>) {
        (self.state, self.trace)
    }

    pub fn take_trace(&mut self) -> Vec<TraceEvent> {
        core::mem::take(&mut self.trace)
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn set_window(&mut self, window: Window) -> Result<()> {
        if window.len == 0 || window.offset + window.len > self.state.response_len() {
            return Err(Error::invalid_argument("window outside the response"));
        }
        self.window = window;
        Ok(())
    }

    /// Length of the active window; this is `n` for position-based weights.
    pub fn window_len(&self) -> usize {
        self.window.len
    }

    /// Mask flags of the active window, window-relative.
    pub fn window_masks(&self) -> Vec<bool> {
        let w = self.window;
        self.state.response()[w.offset..w.offset + w.len]
            .iter()
            .map(Option::is_none)
            .collect()
    }

    pub fn window_masked_count(&self) -> usize {
        let w = self.window;
        self.state.response()[w.offset..w.offset + w.len]
            .iter()
            .filter(|s| s.is_none())
            .count()
    }

    pub fn window_has_masks(&self) -> bool {
        self.window_masked_count() > 0
    }

    /// Decoded fraction of the active window.
    pub fn window_ratio(&self) -> f64 {
        1.0 - self.window_masked_count() as f64 / self.window.len as f64
    }

    /// Emits a `phase_transition` event and switches the phase stamped on
    /// subsequent events.
    pub fn enter_phase(&mut self, phase: Phase) {
        self.phase = phase;
        self.emit(EventKind::PhaseTransition, |_| {});
    }

    /// Sets the phase without emitting a transition event. Baseline decoders
    /// use this.
    pub fn set_phase(&mut self, phase: Phase) {
        self.phase = phase;
    }

    /// Predictions for the masked slots of the active window, window-relative.
    pub fn forward(&mut self) -> Result<PredictionGrid> {
        if self.grid.is_none() {
            let grid = self.predictor.predict(&self.state)?;
            grid.check_covers(&self.state)
                .map_err(|e| Error::Predictor(alloc::format!("{e}")))?;
            let step = self.state.record_invocation();
            let mut ev = TraceEvent::new(step, self.phase, EventKind::Forward, self.state.unmask_ratio());
            for e in &grid {
                ev.positions.push(e.position);
                ev.tokens.push(e.argmax_token);
                ev.confidences.push(e.top1_prob);
            }
            self.trace.push(ev);
            self.grid = Some(grid);
        }
        let w = self.window;
        Ok(self.grid.as_ref().map(|g| g.window(w.offset, w.len)).unwrap_or_default())
    }

    /// Unmasks window-relative `selected` positions with the current grid's
    /// argmax tokens and emits one `unmask` event.
    pub fn unmask(&mut self, selected: &[usize]) -> Result<()> {
        if selected.is_empty() {
            return Ok(());
        }
        let grid = self
            .grid
            .take()
            .ok_or_else(|| Error::invalid_state("unmask requested without a current forward pass"))?;
        let absolute: Vec<usize> = selected.iter().map(|&p| p + self.window.offset).collect();
        if selected.iter().any(|&p| p >= self.window.len) {
            self.grid = Some(grid);
            return Err(Error::invalid_argument("position outside the active window"));
        }
        let tokens = match self.state.apply_transition(&grid, &absolute) {
            Ok(t) => t,
            Err(e) => {
                self.grid = Some(grid);
                return Err(e);
            }
        };
        let confidences = absolute
            .iter()
            .map(|&p| grid.get(p).map_or(0.0, |e| e.top1_prob))
            .collect();
        let mut ev = TraceEvent::new(
            self.state.step_counter(),
            self.phase,
            EventKind::Unmask,
            self.state.unmask_ratio(),
        );
        ev.positions = absolute;
        ev.tokens = tokens;
        ev.confidences = confidences;
        self.trace.push(ev);
        Ok(())
    }

    /// Emits an event of `kind`; `fill` receives it with window-relative
    /// positions and intervals, which are shifted to response positions after.
    pub fn emit(&mut self, kind: EventKind, fill: impl FnOnce(&mut TraceEvent)) {
        let mut ev = TraceEvent::new(self.state.step_counter(), self.phase, kind, self.state.unmask_ratio());
        fill(&mut ev);
        let off = self.window.offset;
        ev.positions.iter_mut().for_each(|p| *p += off);
        ev.clusters.iter_mut().for_each(|(lo, hi)| {
            *lo += off;
            *hi += off;
        });
        self.trace.push(ev);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::MarkovOracle;
    use alloc::vec;

    #[test]
    fn forward_reuses_grid_until_state_changes() {
        let o = MarkovOracle::random(1, 3, 6, 2.0).unwrap();
        let mut s = Session::new(&o, SequenceState::new(vec![], 6).unwrap());
        let g1 = s.forward().unwrap();
        let g2 = s.forward().unwrap();
        assert_eq!(g1, g2);
        assert_eq!(s.state().step_counter(), 1);
        s.unmask(&[0]).unwrap();
        s.forward().unwrap();
        assert_eq!(s.state().step_counter(), 2);
        let kinds: Vec<_> = s.trace().iter().map(|e| e.kind).collect();
        assert_eq!(kinds, vec![EventKind::Forward, EventKind::Unmask, EventKind::Forward]);
    }

    #[test]
    fn window_translates_positions() {
        let o = MarkovOracle::random(2, 3, 8, 2.0).unwrap();
        let mut s = Session::new(&o, SequenceState::new(vec![], 8).unwrap());
        s.set_window(Window { offset: 4, len: 4 }).unwrap();
        let g = s.forward().unwrap();
        assert_eq!(g.len(), 4);
        assert_eq!(g.entries()[0].position, 0);
        s.unmask(&[1]).unwrap();
        assert!(s.state().response()[5].is_some());
        assert_eq!(s.trace().last().unwrap().positions, vec![5]);
        assert!(s.unmask(&[4]).is_err());
        s.forward().unwrap();
        assert!(s.unmask(&[4]).is_err());
        assert_eq!(s.window_masked_count(), 3);
        assert!((s.window_ratio() - 0.25).abs() < 1e-12);
        assert!(s.set_window(Window { offset: 6, len: 4 }).is_err());
    }

    #[test]
    fn unmask_without_forward_is_rejected() {
        let o = MarkovOracle::random(2, 3, 4, 2.0).unwrap();
        let mut s = Session::new(&o, SequenceState::new(vec![], 4).unwrap());
        assert!(matches!(s.unmask(&[0]), Err(Error::InvalidState(_))));
    }
}
