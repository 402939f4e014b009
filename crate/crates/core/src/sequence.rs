//! The partially masked token sequence.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::prediction::PredictionGrid;

pub type TokenId = u32;

/// One response slot. `None` is the mask sentinel; it never collides with a
/// vocabulary id, so predictors map it to whatever mask token they use.
pub type Slot = Option<TokenId>;

pub const MASK: Slot = None;

/// Prompt plus response slots. The prompt is fixed at construction; response
/// slots only ever move from masked to decoded.
///
/// All positions handed to or returned from this type are response-relative:
/// position 0 is the first response slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceState {
    prompt: Vec<TokenId>,
    response: Vec<Slot>,
    step_counter: u64,
}

impl SequenceState {
    pub fn new(prompt: Vec<TokenId>, response_length: usize) -> Result<Self> {
        if response_length == 0 {
            return Err(Error::invalid_argument("response length must be at least 1"));
        }
        Ok(SequenceState {
            prompt,
            response: alloc::vec![MASK; response_length],
            step_counter: 0,
        })
    }

    pub fn prompt(&self) -> &[TokenId] {
        &self.prompt
    }

    pub fn response(&self) -> &[Slot] {
        &self.response
    }

    /// `n`, the number of response slots.
    pub fn response_len(&self) -> usize {
        self.response.len()
    }

    /// `L = m + n`.
    pub fn total_len(&self) -> usize {
        self.prompt.len() + self.response.len()
    }

    /// Predictor invocations charged to this state so far.
    pub fn step_counter(&self) -> u64 {
        self.step_counter
    }

    pub(crate) fn record_invocation(&mut self) -> u64 {
        self.step_counter += 1;
        self.step_counter
    }

    pub fn is_masked(&self, position: usize) -> bool {
        matches!(self.response.get(position), Some(None))
    }

    pub fn masked_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.response
            .iter()
            .enumerate()
            .filter_map(|(i, slot)| slot.is_none().then_some(i))
    }

    pub fn masked_count(&self) -> usize {
        self.response.iter().filter(|s| s.is_none()).count()
    }

    pub fn unmasked_count(&self) -> usize {
        self.response.len() - self.masked_count()
    }

    pub fn is_complete(&self) -> bool {
        self.response.iter().all(Option::is_some)
    }

    /// Fraction of response slots already decoded. The prompt is excluded.
    pub fn unmask_ratio(&self) -> f64 {
        self.unmasked_count() as f64 / self.response.len() as f64
    }

    /// The decoded response, or `None` while any slot is still masked.
    pub fn decoded(&self) -> Option<Vec<TokenId>> {
        self.response.iter().copied().collect()
    }

    /// Writes each selected position's argmax token from `grid`. Nothing is
    /// written unless every selected position is valid.
    ///
    /// Returns the tokens written, in the order of `selected`.
    pub fn apply_transition(
        &mut self,
        grid: &PredictionGrid,
        selected: &[usize],
    ) -> Result<Vec<TokenId>> {
        let mut tokens = Vec::with_capacity(selected.len());
        for (k, &pos) in selected.iter().enumerate() {
            if pos >= self.response.len() {
                return Err(Error::invalid_argument(format!(
                    "position {pos} outside response of length {}",
                    self.response.len()
                )));
            }
            if !self.is_masked(pos) {
                return Err(Error::invalid_argument(format!(
                    "position {pos} is already unmasked"
                )));
            }
            if selected[..k].contains(&pos) {
                return Err(Error::invalid_argument(format!(
                    "position {pos} selected twice"
                )));
            }
            let entry = grid.get(pos).ok_or_else(|| {
                Error::invalid_argument(format!("position {pos} has no prediction"))
            })?;
            tokens.push(entry.argmax_token);
        }
        for (&pos, &token) in selected.iter().zip(&tokens) {
            self.response[pos] = Some(token);
        }
        Ok(tokens)
    }

    /// Writes a single token into a masked slot. Used by trace replay.
    pub fn assign(&mut self, position: usize, token: TokenId) -> Result<()> {
        match self.response.get_mut(position) {
            Some(slot @ None) => {
                *slot = Some(token);
                Ok(())
            }
            Some(Some(_)) => Err(Error::invalid_argument(format!(
                "position {position} is already unmasked"
            ))),
            None => Err(Error::invalid_argument(format!(
                "position {position} outside response of length {}",
                self.response.len()
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prediction::PositionPrediction;
    use alloc::vec;

    fn grid(entries: &[(usize, TokenId)]) -> PredictionGrid {
        PredictionGrid::new(
            entries
                .iter()
                .map(|&(p, t)| PositionPrediction::point(p, t, 0.9, 0.0, -1.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn new_sequence_is_fully_masked() {
        let s = SequenceState::new(vec![3, 1], 4).unwrap();
        assert_eq!(s.response(), &[MASK; 4]);
        assert_eq!(s.step_counter(), 0);

        let s = SequenceState::new(vec![], 1).unwrap();
        assert_eq!(s.prompt().len(), 0);
        assert_eq!(s.response_len(), 1);

        let s = SequenceState::new(vec![0, 0], 12).unwrap();
        assert_eq!(s.total_len(), 14);
        assert_eq!(s.response_len(), 12);
    }

    #[test]
    fn zero_response_length_rejected() {
        assert!(matches!(
            SequenceState::new(vec![1], 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn transition_writes_only_selected() {
        let mut s = SequenceState::new(vec![], 4).unwrap();
        let g = grid(&[(0, 5), (1, 7), (2, 9), (3, 2)]);
        let before = s.clone();
        assert!(s.apply_transition(&g, &[]).unwrap().is_empty());
        assert_eq!(s, before);

        let written = s.apply_transition(&g, &[1, 3]).unwrap();
        assert_eq!(written, vec![7, 2]);
        assert_eq!(s.response(), &[None, Some(7), None, Some(2)]);
    }

    #[test]
    fn transition_rejects_bad_positions() {
        let mut s = SequenceState::new(vec![], 4).unwrap();
        let g = grid(&[(0, 5), (1, 7), (2, 9), (3, 2)]);
        s.apply_transition(&g, &[1]).unwrap();
        let snapshot = s.clone();
        assert!(matches!(
            s.apply_transition(&g, &[0, 1]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            s.apply_transition(&g, &[4]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            s.apply_transition(&g, &[2, 2]),
            Err(Error::InvalidArgument(_))
        ));
        // validation happens before any write
        assert_eq!(s, snapshot);
    }

    #[test]
    fn transition_requires_grid_entry() {
        let mut s = SequenceState::new(vec![], 3).unwrap();
        let g = grid(&[(0, 1)]);
        assert!(s.apply_transition(&g, &[2]).is_err());
    }

    #[test]
    fn unmask_ratio_counts_response_only() {
        let mut s = SequenceState::new(vec![4, 4, 4], 12).unwrap();
        assert_eq!(s.unmask_ratio(), 0.0);
        for p in [0, 5, 11] {
            s.assign(p, 1).unwrap();
        }
        assert_eq!(s.unmask_ratio(), 0.25);
        for p in 0..12 {
            let _ = s.assign(p, 1);
        }
        assert_eq!(s.unmask_ratio(), 1.0);
        assert!(s.is_complete());
        assert_eq!(s.decoded().unwrap().len(), 12);
    }

    #[test]
    fn disjoint_transitions_commute() {
        let g = grid(&[(0, 5), (1, 7), (2, 9), (3, 2), (4, 4)]);
        let base = SequenceState::new(vec![1], 5).unwrap();
        let mut ab = base.clone();
        ab.apply_transition(&g, &[0, 3]).unwrap();
        ab.apply_transition(&g, &[1, 4]).unwrap();
        let mut ba = base;
        ba.apply_transition(&g, &[1, 4]).unwrap();
        ba.apply_transition(&g, &[0, 3]).unwrap();
        assert_eq!(ab, ba);
    }
}
