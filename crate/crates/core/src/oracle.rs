//! Exact tabular predictor backed by a first-order Markov chain.
//!
//! The prompt is treated as the first `m` observed states of the chain, so a
//! chain of length `L` serves a prompt of length `m` and a response of length
//! `L - m`. Conditional marginals given every observed slot come from a
//! normalized forward-backward pass over the transfer matrix.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prediction::{PositionPrediction, PredictionGrid, DEFAULT_TOPK};
use crate::predictor::MaskPredictor;
use crate::sequence::{SequenceState, TokenId};

const ROW_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OracleDocument")]
pub struct MarkovOracle {
    vocab_size: usize,
    length: usize,
    initial: Vec<f64>,
    transition: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct OracleDocument {
    vocab_size: usize,
    length: usize,
    initial: Vec<f64>,
    transition: Vec<Vec<f64>>,
}

impl TryFrom<OracleDocument> for MarkovOracle {
    type Error = Error;

    fn try_from(doc: OracleDocument) -> Result<Self> {
        MarkovOracle::new(doc.vocab_size, doc.length, doc.initial, doc.transition)
    }
}

fn check_distribution(what: &str, row: &[f64]) -> Result<()> {
    if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::invalid_argument(format!("{what} has a negative or non-finite entry")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_TOLERANCE {
        return Err(Error::invalid_argument(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

fn softmax_scaled(logits: &[f64], kappa: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits
        .iter()
        .map(|&u| libm::exp(kappa * (u - max)))
        .collect();
    let z: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / z).collect()
}

impl MarkovOracle {
    pub fn new(
        vocab_size: usize,
        length: usize,
        initial: Vec<f64>,
        transition: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if vocab_size < 2 {
            return Err(Error::invalid_argument("vocabulary size must be at least 2"));
        }
        if length == 0 {
            return Err(Error::invalid_argument("chain length must be positive"));
        }
        if initial.len() != vocab_size || transition.len() != vocab_size {
            return Err(Error::invalid_argument("distribution shape does not match vocabulary"));
        }
        check_distribution("initial distribution", &initial)?;
        for (u, row) in transition.iter().enumerate() {
            if row.len() != vocab_size {
                return Err(Error::invalid_argument(format!("transition row {u} has wrong length")));
            }
            check_distribution(&format!("transition row {u}"), row)?;
        }
        Ok(MarkovOracle {
            vocab_size,
            length,
            initial,
            transition,
        })
    }

    /// Rows are `softmax(kappa * logits)`. Larger `kappa` concentrates them.
    pub fn from_logits(
        length: usize,
        initial_logits: &[f64],
        transition_logits: &[Vec<f64>],
        kappa: f64,
    ) -> Result<Self> {
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::invalid_argument(format!(
                "concentration must be positive and finite, got {kappa}"
            )));
        }
        let initial = softmax_scaled(initial_logits, kappa);
        let transition = transition_logits
            .iter()
            .map(|row| softmax_scaled(row, kappa))
            .collect();
        MarkovOracle::new(initial_logits.len(), length, initial, transition)
    }

    /// A chain with uniform `[0, 1)` logits drawn from a seeded ChaCha8 stream
    /// (initial logits first, then transition rows in order).
    pub fn random(seed: u64, vocab_size: usize, length: usize, kappa: f64) -> Result<Self> {
        if vocab_size < 2 || length < 2 {
            return Err(Error::invalid_argument(
                "random oracles need a vocabulary and length of at least 2",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let initial: Vec<f64> = (0..vocab_size).map(|_| rng.random::<f64>()).collect();
        let transition: Vec<Vec<f64>> = (0..vocab_size)
            .map(|_| (0..vocab_size).map(|_| rng.random::<f64>()).collect())
            .collect();
        MarkovOracle::from_logits(length, &initial, &transition, kappa)
    }

    /// A chain that starts at `start` and always moves to `successor[u]`.
    pub fn deterministic(length: usize, start: usize, successor: &[usize]) -> Result<Self> {
        let v = successor.len();
        let one_hot = |k: usize| {
            let mut row = vec![0.0; v];
            if let Some(slot) = row.get_mut(k) {
                *slot = 1.0;
            }
            row
        };
        MarkovOracle::new(v, length, one_hot(start), successor.iter().map(|&s| one_hot(s)).collect())
    }

    pub fn uniform(vocab_size: usize, length: usize) -> Result<Self> {
        let p = 1.0 / vocab_size as f64;
        MarkovOracle::new(
            vocab_size,
            length,
            vec![p; vocab_size],
            vec![vec![p; vocab_size]; vocab_size],
        )
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Total chain length `L`, prompt included.
    pub fn length(&self) -> usize {
        self.length
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    /// Full conditional distributions `P(x_i = v | observed slots)` for every
    /// masked response position, in increasing position order.
    pub fn conditional_distributions(
        &self,
        state: &SequenceState,
    ) -> Result<Vec<(usize, Vec<f64>)>> {
        if state.total_len() != self.length {
            return Err(Error::invalid_argument(format!(
                "state length {} does not match chain length {}",
                state.total_len(),
                self.length
            )));
        }
        let v = self.vocab_size;
        let m = state.prompt().len();
        let mut observed: Vec<Option<usize>> = Vec::with_capacity(self.length);
        for &t in state.prompt() {
            observed.push(Some(self.token_index(t)?));
        }
        for slot in state.response() {
            observed.push(match slot {
                Some(t) => Some(self.token_index(*t)?),
                None => None,
            });
        }
        let evidence = |t: usize, u: usize| match observed[t] {
            Some(o) => (o == u) as u8 as f64,
            None => 1.0,
        };
        let inconsistent = || Error::invalid_state("observed tokens have zero probability under the chain");

        let len = self.length;
        let mut alpha = vec![vec![0.0; v]; len];
        for u in 0..v {
            alpha[0][u] = self.initial[u] * evidence(0, u);
        }
        normalize(&mut alpha[0]).ok_or_else(inconsistent)?;
        for t in 1..len {
            let (prev, cur) = alpha.split_at_mut(t);
            let prev = &prev[t - 1];
            let cur = &mut cur[0];
            for (w, slot) in cur.iter_mut().enumerate() {
                let e = evidence(t, w);
                if e == 0.0 {
                    continue;
                }
                *slot = e * (0..v).map(|u| prev[u] * self.transition[u][w]).sum::<f64>();
            }
            normalize(cur).ok_or_else(inconsistent)?;
        }

        let mut out = Vec::new();
        let mut beta = vec![1.0; v];
        let mut next = vec![0.0; v];
        for t in (0..len).rev() {
            if t >= m && observed[t].is_none() {
                let mut marginal: Vec<f64> = (0..v).map(|u| alpha[t][u] * beta[u]).collect();
                normalize(&mut marginal).ok_or_else(inconsistent)?;
                out.push((t - m, marginal));
            }
            if t == 0 {
                break;
            }
            for (u, slot) in next.iter_mut().enumerate() {
                *slot = (0..v)
                    .map(|w| self.transition[u][w] * evidence(t, w) * beta[w])
                    .sum();
            }
            core::mem::swap(&mut beta, &mut next);
            normalize(&mut beta).ok_or_else(inconsistent)?;
        }
        out.reverse();
        Ok(out)
    }

    /// Exact prediction grid: one entry per masked response slot, logits are
    /// floored log-probabilities.
    pub fn exact_conditional_marginals(&self, state: &SequenceState) -> Result<PredictionGrid> {
        let k = self.vocab_size.min(DEFAULT_TOPK);
        let entries = self
            .conditional_distributions(state)?
            .into_iter()
            .map(|(pos, probs)| PositionPrediction::from_distribution(pos, &probs, k))
            .collect();
        PredictionGrid::new(entries)
    }

    pub(crate) fn token_index(&self, token: TokenId) -> Result<usize> {
        let t = token as usize;
        if t >= self.vocab_size {
            return Err(Error::invalid_argument(format!(
                "token {token} outside vocabulary of size {}",
                self.vocab_size
            )));
        }
        Ok(t)
    }
}

/// Scales `xs` to sum to 1. `None` when the total mass is zero.
fn normalize(xs: &mut [f64]) -> Option<()> {
    let s: f64 = xs.iter().sum();
    if !(s > 0.0) {
        return None;
    }
    xs.iter_mut().for_each(|x| *x /= s);
    Some(())
}

impl MaskPredictor for MarkovOracle {
    fn predict(&self, state: &SequenceState) -> Result<PredictionGrid> {
        if state.is_complete() {
            return Err(Error::invalid_state("no masked positions to predict"));
        }
        self.exact_conditional_marginals(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v3() -> MarkovOracle {
        MarkovOracle::new(
            3,
            4,
            vec![0.2, 0.5, 0.3],
            vec![
                vec![0.1, 0.6, 0.3],
                vec![0.5, 0.25, 0.25],
                vec![0.7, 0.2, 0.1],
            ],
        )
        .unwrap()
    }

    #[test]
    fn fully_masked_first_position_is_initial() {
        let o = v3();
        let s = SequenceState::new(vec![], 4).unwrap();
        let d = o.conditional_distributions(&s).unwrap();
        for (a, b) in d[0].1.iter().zip(o.initial()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sandwiched_position_is_elementwise_product() {
        let o = v3();
        // prompt x0 = 1, response [M, 2, 0]: position 0 lies between 1 and 2
        let mut s = SequenceState::new(vec![1], 3).unwrap();
        s.assign(1, 2).unwrap();
        s.assign(2, 0).unwrap();
        let d = o.conditional_distributions(&s).unwrap();
        assert_eq!(d.len(), 1);
        // enumerate the three assignments of the middle state
        let w: Vec<f64> = (0..3).map(|v| o.transition[1][v] * o.transition[v][2]).collect();
        let z: f64 = w.iter().sum();
        for v in 0..3 {
            assert!((d[0].1[v] - w[v] / z).abs() < 1e-12);
        }
    }

    #[test]
    fn last_slot_follows_transition_row() {
        let o = v3();
        let mut s = SequenceState::new(vec![], 4).unwrap();
        for (p, t) in [(0, 0), (1, 2), (2, 1)] {
            s.assign(p, t).unwrap();
        }
        let d = o.conditional_distributions(&s).unwrap();
        assert_eq!(d[0].0, 3);
        for v in 0..3 {
            assert!((d[0].1[v] - o.transition[1][v]).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_and_uniform_confidences() {
        let det = MarkovOracle::deterministic(6, 2, &[1, 2, 0]).unwrap();
        let mut s = SequenceState::new(vec![], 6).unwrap();
        s.assign(3, 2).unwrap();
        for e in det.predict(&s).unwrap().entries() {
            assert_eq!(e.top1_prob, 1.0);
        }
        let uni = MarkovOracle::uniform(2, 5).unwrap();
        let s = SequenceState::new(vec![0], 4).unwrap();
        for e in uni.predict(&s).unwrap().entries() {
            assert!((e.top1_prob - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_and_vocab_errors() {
        let o = v3();
        let s = SequenceState::new(vec![], 3).unwrap();
        assert!(matches!(o.predict(&s), Err(Error::InvalidArgument(_))));
        let s = SequenceState::new(vec![7], 3).unwrap();
        assert!(matches!(o.predict(&s), Err(Error::InvalidArgument(_))));
        let mut s = SequenceState::new(vec![], 4).unwrap();
        for p in 0..4 {
            s.assign(p, 0).unwrap();
        }
        assert!(matches!(o.predict(&s), Err(Error::InvalidState(_))));
    }

    #[test]
    fn impossible_evidence_is_reported() {
        let det = MarkovOracle::deterministic(3, 0, &[1, 0]).unwrap();
        let mut s = SequenceState::new(vec![], 3).unwrap();
        s.assign(0, 1).unwrap();
        assert!(matches!(det.predict(&s), Err(Error::InvalidState(_))));
    }

    #[test]
    fn random_oracle_contract() {
        let a = MarkovOracle::random(7, 4, 8, 2.0).unwrap();
        let b = MarkovOracle::random(7, 4, 8, 2.0).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        assert_ne!(a, MarkovOracle::random(8, 4, 8, 2.0).unwrap());

        let sharp = MarkovOracle::random(3, 5, 4, 1e6).unwrap();
        for row in sharp.transition() {
            assert!(row.iter().copied().fold(0.0, f64::max) > 0.999);
        }
        for kappa in [0.1, 1.0, 50.0] {
            let o = MarkovOracle::random(11, 2, 2, kappa).unwrap();
            for row in o.transition() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        assert!(MarkovOracle::random(1, 4, 8, 0.0).is_err());
        assert!(MarkovOracle::random(1, 4, 8, -1.0).is_err());
        assert!(MarkovOracle::random(1, 1, 8, 1.0).is_err());
    }

    #[test]
    fn json_document_is_validated() {
        let good = r#"{"vocab_size":2,"length":3,"initial":[0.5,0.5],"transition":[[0.7,0.3],[0.4,0.6]]}"#;
        let o: MarkovOracle = serde_json::from_str(good).unwrap();
        assert_eq!(serde_json::to_string(&o).unwrap(), good);
        let bad = r#"{"vocab_size":2,"length":3,"initial":[0.5,0.6],"transition":[[0.7,0.3],[0.4,0.6]]}"#;
        assert!(serde_json::from_str::<MarkovOracle>(bad).is_err());
    }
}
