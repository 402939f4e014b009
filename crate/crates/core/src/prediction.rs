//! Per-position summaries of one predictor forward pass.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sequence::{SequenceState, TokenId};

/// Probabilities are floored here before taking logarithms, so tabular
/// predictors report finite log-probability logits.
pub const LOG_FLOOR: f64 = 1e-30;

/// Default cap on the top-K list carried by each prediction.
pub const DEFAULT_TOPK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionPrediction {
    /// Response-relative index.
    pub position: usize,
    pub argmax_token: TokenId,
    pub top1_prob: f64,
    pub top1_logit: f64,
    pub top2_logit: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topk: Option<Vec<(TokenId, f64)>>,
}

impl PositionPrediction {
    /// A prediction without a top-K list.
    pub fn point(
        position: usize,
        argmax_token: TokenId,
        top1_prob: f64,
        top1_logit: f64,
        top2_logit: f64,
    ) -> Self {
        PositionPrediction {
            position,
            argmax_token,
            top1_prob,
            top1_logit,
            top2_logit,
            topk: None,
        }
    }

    /// Summarizes a full probability vector over the vocabulary. Logits are
    /// floored natural logs of the probabilities; ties go to the smaller id.
    pub fn from_distribution(position: usize, probs: &[f64], topk: usize) -> Self {
        let mut order: Vec<usize> = (0..probs.len()).collect();
        order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
        let first = order[0];
        let second = order.get(1).map_or(0.0, |&i| probs[i]);
        let k = topk.min(probs.len());
        PositionPrediction {
            position,
            argmax_token: first as TokenId,
            top1_prob: probs[first],
            top1_logit: floored_ln(probs[first]),
            top2_logit: floored_ln(second),
            topk: (k > 0).then(|| {
                order[..k]
                    .iter()
                    .map(|&i| (i as TokenId, probs[i]))
                    .collect()
            }),
        }
    }

    /// Gap between the highest and second-highest logits.
    pub fn logit_margin(&self) -> f64 {
        self.top1_logit - self.top2_logit
    }

    fn check(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.top1_prob) {
            return Err(Error::invalid_argument(format!(
                "position {}: top-1 probability {} outside [0, 1]",
                self.position, self.top1_prob
            )));
        }
        if self.top1_logit.is_nan()
            || self.top2_logit.is_nan()
            || self.top1_logit < self.top2_logit
        {
            return Err(Error::invalid_argument(format!(
                "position {}: top-1 logit {} below top-2 logit {}",
                self.position, self.top1_logit, self.top2_logit
            )));
        }
        Ok(())
    }
}

pub(crate) fn floored_ln(p: f64) -> f64 {
    libm::log(p.max(LOG_FLOOR))
}

/// One prediction per masked position, sorted by position.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictionGrid {
    entries: Vec<PositionPrediction>,
}

impl PredictionGrid {
    pub fn new(entries: Vec<PositionPrediction>) -> Result<Self> {
        for w in entries.windows(2) {
            if w[0].position >= w[1].position {
                return Err(Error::invalid_argument(format!(
                    "grid positions not strictly increasing at {}",
                    w[1].position
                )));
            }
        }
        for e in &entries {
            e.check()?;
        }
        Ok(PredictionGrid { entries })
    }

    pub fn entries(&self) -> &[PositionPrediction] {
        &self.entries
    }

    pub fn iter(&self) -> core::slice::Iter<'_, PositionPrediction> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, position: usize) -> Option<&PositionPrediction> {
        self.entries
            .binary_search_by_key(&position, |e| e.position)
            .ok()
            .map(|i| &self.entries[i])
    }

    /// Errors unless the entries cover exactly the masked slots of `state`.
    pub fn check_covers(&self, state: &SequenceState) -> Result<()> {
        let masked = state.masked_positions();
        if !self.entries.iter().map(|e| e.position).eq(masked) {
            return Err(Error::invalid_state(
                "prediction grid does not match the masked positions",
            ));
        }
        Ok(())
    }

    /// Entries inside `[offset, offset + len)`, re-based so `offset` becomes 0.
    pub fn window(&self, offset: usize, len: usize) -> PredictionGrid {
        let entries = self
            .entries
            .iter()
            .filter(|e| e.position >= offset && e.position < offset + len)
            .map(|e| PositionPrediction {
                position: e.position - offset,
                ..e.clone()
            })
            .collect();
        PredictionGrid { entries }
    }
}

impl<'a> IntoIterator for &'a PredictionGrid {
    type Item = &'a PositionPrediction;
    type IntoIter = core::slice::Iter<'a, PositionPrediction>;

    fn into_iter(self) -> Self::IntoIter {
        self.entries.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn distribution_summary_breaks_ties_low() {
        let p = PositionPrediction::from_distribution(3, &[0.25, 0.25, 0.5, 0.0], 16);
        assert_eq!(p.argmax_token, 2);
        assert_eq!(p.top1_prob, 0.5);
        assert_eq!(p.topk.as_ref().unwrap().len(), 4);
        assert_eq!(p.topk.as_ref().unwrap()[1], (0, 0.25));

        let u = PositionPrediction::from_distribution(0, &[0.5, 0.5], 16);
        assert_eq!(u.argmax_token, 0);
        assert_eq!(u.logit_margin(), 0.0);
    }

    #[test]
    fn zero_probability_logit_is_floored() {
        let p = PositionPrediction::from_distribution(0, &[1.0, 0.0, 0.0], 2);
        assert!(p.top2_logit.is_finite());
        assert!((p.logit_margin() - (-libm::log(LOG_FLOOR))).abs() < 1e-9);
        assert_eq!(p.topk.unwrap().len(), 2);
    }

    #[test]
    fn grid_rejects_unsorted_or_bad_entries() {
        let a = PositionPrediction::point(2, 0, 0.5, 0.0, -1.0);
        let b = PositionPrediction::point(1, 0, 0.5, 0.0, -1.0);
        assert!(PredictionGrid::new(vec![a.clone(), b]).is_err());
        let bad = PositionPrediction::point(4, 0, 1.5, 0.0, -1.0);
        assert!(PredictionGrid::new(vec![a.clone(), bad]).is_err());
        let inverted = PositionPrediction::point(4, 0, 0.5, -2.0, -1.0);
        assert!(PredictionGrid::new(vec![a, inverted]).is_err());
    }

    #[test]
    fn window_rebases_positions() {
        let g = PredictionGrid::new(
            (0..6)
                .map(|p| PositionPrediction::point(p, p as TokenId, 0.5, 0.0, 0.0))
                .collect(),
        )
        .unwrap();
        let w = g.window(2, 3);
        assert_eq!(w.len(), 3);
        assert_eq!(w.entries()[0].position, 0);
        assert_eq!(w.entries()[0].argmax_token, 2);
        assert!(w.get(3).is_none());
    }
}
