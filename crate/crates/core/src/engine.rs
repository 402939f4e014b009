//! Decoders and session metrics.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::config::{DecodeConfig, DecodeMode};
use crate::conquer::{conquer_phase, NextPhase};
use crate::divide::divide_phase;
use crate::error::{DecodeAbort, Error, Result};
use crate::finalize::{finalize_phase, top1};
use crate::oracle::MarkovOracle;
use crate::predictor::MaskPredictor;
use crate::sequence::{SequenceState, TokenId};
use crate::session::{Session, Window};
use crate::theory::joint_pmf;
use crate::trace::{replay, EventKind, Phase, TraceEvent};

#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    /// Divide, Conquer and Finalize.
    Dico,
    /// One token per pass: the global top-1 confidence.
    Vanilla,
    /// The `k` most confident positions per pass.
    TopK(usize),
    /// Every position above the threshold, else the top-1.
    FixedThreshold(f64),
    /// Consecutive blocks decoded left to right by `inner`.
    SemiAr { inner: Box<Strategy>, block_size: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PhaseCalls {
    pub divide: usize,
    pub conquer: usize,
    pub finalize: usize,
    pub baseline: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeMetrics {
    pub predictor_calls: usize,
    /// Response length divided by predictor calls.
    pub tokens_per_call: f64,
    pub phase_breakdown: PhaseCalls,
    /// Exact `ln P(response | prompt)` when an oracle is available.
    pub oracle_log_likelihood: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub final_sequence: Vec<TokenId>,
    pub trace: Vec<TraceEvent>,
    pub metrics: DecodeMetrics,
}

impl DecodeResult {
    /// Fills in the exact log-likelihood of the decoded response.
    pub fn score_with(&mut self, oracle: &MarkovOracle, prompt: &[TokenId]) -> Result<()> {
        let p = joint_pmf(oracle, prompt, &self.final_sequence)?;
        self.metrics.oracle_log_likelihood = Some(libm::log(p));
        Ok(())
    }
}

pub fn decode<P: MaskPredictor + ?Sized>(
    strategy: &Strategy,
    prompt: &[TokenId],
    response_length: usize,
    predictor: &P,
    cfg: &DecodeConfig,
) -> Result<DecodeResult, DecodeAbort> {
    validate_strategy(strategy)?;
    if matches!(strategy, Strategy::Dico) || matches!(strategy, Strategy::SemiAr { inner, .. } if **inner == Strategy::Dico) {
        cfg.validate()?;
    }
    let state = SequenceState::new(prompt.to_vec(), response_length)?;
    let mut session = Session::new(predictor, state);
    let outcome = match strategy {
        Strategy::SemiAr { inner, block_size } => run_blocks(&mut session, inner, *block_size, cfg),
        other => run_window(&mut session, other, cfg),
    };
    if let Err(error) = outcome {
        return Err(DecodeAbort {
            error,
            partial_trace: session.take_trace(),
        });
    }
    let (state, trace) = session.into_parts();
    let final_sequence = state
        .decoded()
        .ok_or_else(|| Error::integrity("decoder finished with masked slots"))?;
    let metrics = compute_metrics(prompt, response_length, &trace, None)?;
    Ok(DecodeResult {
        final_sequence,
        trace,
        metrics,
    })
}

/// DiCo over the whole response, or block-wise when `cfg.mode` is
/// semi-autoregressive.
pub fn decode_dico<P: MaskPredictor + ?Sized>(
    prompt: &[TokenId],
    response_length: usize,
    predictor: &P,
    cfg: &DecodeConfig,
) -> Result<DecodeResult, DecodeAbort> {
    let strategy = match cfg.mode {
        DecodeMode::NonAutoregressive => Strategy::Dico,
        DecodeMode::SemiAutoregressive => Strategy::SemiAr {
            inner: Box::new(Strategy::Dico),
            block_size: cfg.block_size,
        },
    };
    decode(&strategy, prompt, response_length, predictor, cfg)
}

pub fn decode_vanilla<P: MaskPredictor + ?Sized>(
    prompt: &[TokenId],
    response_length: usize,
    predictor: &P,
) -> Result<DecodeResult, DecodeAbort> {
    decode(&Strategy::Vanilla, prompt, response_length, predictor, &DecodeConfig::default())
}

pub fn decode_topk<P: MaskPredictor + ?Sized>(
    prompt: &[TokenId],
    response_length: usize,
    predictor: &P,
    k: usize,
) -> Result<DecodeResult, DecodeAbort> {
    decode(&Strategy::TopK(k), prompt, response_length, predictor, &DecodeConfig::default())
}

pub fn decode_fixed_threshold<P: MaskPredictor + ?Sized>(
    prompt: &[TokenId],
    response_length: usize,
    predictor: &P,
    threshold: f64,
) -> Result<DecodeResult, DecodeAbort> {
    decode(
        &Strategy::FixedThreshold(threshold),
        prompt,
        response_length,
        predictor,
        &DecodeConfig::default(),
    )
}

pub fn decode_semi_ar<P: MaskPredictor + ?Sized>(
    inner: Strategy,
    prompt: &[TokenId],
    response_length: usize,
    block_size: usize,
    predictor: &P,
    cfg: &DecodeConfig,
) -> Result<DecodeResult, DecodeAbort> {
    let strategy = Strategy::SemiAr {
        inner: Box::new(inner),
        block_size,
    };
    decode(&strategy, prompt, response_length, predictor, cfg)
}

fn validate_strategy(strategy: &Strategy) -> Result<()> {
    match strategy {
        Strategy::TopK(0) => Err(Error::invalid_argument("top-k needs k >= 1")),
        Strategy::FixedThreshold(t) if !(*t > 0.0 && *t <= 1.0) => Err(Error::invalid_argument(
            format!("threshold {t} outside (0, 1]"),
        )),
        Strategy::SemiAr { block_size: 0, .. } => {
            Err(Error::invalid_argument("block size must be positive"))
        }
        Strategy::SemiAr { inner, .. } if matches!(**inner, Strategy::SemiAr { .. }) => {
            Err(Error::invalid_argument("semi-AR blocks cannot nest"))
        }
        Strategy::SemiAr { inner, .. } => validate_strategy(inner),
        _ => Ok(()),
    }
}

fn run_blocks<P: MaskPredictor + ?Sized>(
    session: &mut Session<'_, P>,
    inner: &Strategy,
    block_size: usize,
    cfg: &DecodeConfig,
) -> Result<()> {
    let n = session.state().response_len();
    let mut offset = 0;
    while offset < n {
        let len = block_size.min(n - offset);
        session.set_window(Window { offset, len })?;
        run_window(session, inner, cfg)?;
        offset += len;
    }
    Ok(())
}

fn run_window<P: MaskPredictor + ?Sized>(
    session: &mut Session<'_, P>,
    strategy: &Strategy,
    cfg: &DecodeConfig,
) -> Result<()> {
    match strategy {
        Strategy::Dico => run_dico(session, cfg),
        Strategy::Vanilla => run_baseline(session, |grid| top1(grid).map(|e| e.position).into_iter().collect()),
        Strategy::TopK(k) => run_baseline(session, |grid| {
            let mut ranked: Vec<(usize, f64)> = grid.iter().map(|e| (e.position, e.top1_prob)).collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let mut chosen: Vec<usize> = ranked.into_iter().take(*k).map(|(p, _)| p).collect();
            chosen.sort_unstable();
            chosen
        }),
        Strategy::FixedThreshold(t) => run_baseline(session, |grid| {
            let above: Vec<usize> = grid.iter().filter(|e| e.top1_prob > *t).map(|e| e.position).collect();
            if above.is_empty() {
                top1(grid).map(|e| e.position).into_iter().collect()
            } else {
                above
            }
        }),
        Strategy::SemiAr { .. } => Err(Error::invalid_argument("semi-AR blocks cannot nest")),
    }
}

fn run_baseline<P: MaskPredictor + ?Sized>(
    session: &mut Session<'_, P>,
    mut choose: impl FnMut(&crate::prediction::PredictionGrid) -> Vec<usize>,
) -> Result<()> {
    session.enter_phase(Phase::Baseline);
    while session.window_has_masks() {
        let grid = session.forward()?;
        let selected = choose(&grid);
        if selected.is_empty() {
            return Err(Error::invalid_state("baseline selected no position"));
        }
        session.unmask(&selected)?;
    }
    Ok(())
}

fn run_dico<P: MaskPredictor + ?Sized>(session: &mut Session<'_, P>, cfg: &DecodeConfig) -> Result<()> {
    loop {
        session.enter_phase(Phase::Divide);
        let masked_before = session.window_masked_count();
        let divided = divide_phase(session, cfg)?;
        if !session.window_has_masks() || divided.clusters.is_empty() {
            break;
        }
        session.enter_phase(Phase::Conquer);
        let outcome = conquer_phase(session, &divided.clusters, cfg)?;
        if outcome.next_phase == NextPhase::Finalize {
            break;
        }
        // a cycle that decoded nothing would repeat forever
        if session.window_masked_count() == masked_before {
            break;
        }
    }
    session.enter_phase(Phase::Finalize);
    finalize_phase(session, cfg)
}

/// Replays `trace` and derives call counts; with an oracle, also the exact
/// log-likelihood of the replayed response.
pub fn compute_metrics(
    prompt: &[TokenId],
    response_length: usize,
    trace: &[TraceEvent],
    oracle: Option<&MarkovOracle>,
) -> Result<DecodeMetrics> {
    let state = replay(prompt, response_length, trace)?;
    let sequence = state
        .decoded()
        .ok_or_else(|| Error::integrity("trace leaves masked slots"))?;
    let mut breakdown = PhaseCalls::default();
    for ev in trace.iter().filter(|e| e.kind == EventKind::Forward) {
        match ev.phase {
            Phase::Divide => breakdown.divide += 1,
            Phase::Conquer => breakdown.conquer += 1,
            Phase::Finalize => breakdown.finalize += 1,
            Phase::Baseline => breakdown.baseline += 1,
        }
    }
    let calls = breakdown.divide + breakdown.conquer + breakdown.finalize + breakdown.baseline;
    if calls == 0 {
        return Err(Error::integrity("trace has no forward passes"));
    }
    let oracle_log_likelihood = match oracle {
        Some(o) => Some(libm::log(joint_pmf(o, prompt, &sequence)?)),
        None => None,
    };
    Ok(DecodeMetrics {
        predictor_calls: calls,
        tokens_per_call: response_length as f64 / calls as f64,
        phase_breakdown: breakdown,
        oracle_log_likelihood,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{is_dico_phase_order, phase_sequence};
    use alloc::vec;

    fn det(n: usize) -> MarkovOracle {
        MarkovOracle::deterministic(n, 1, &[2, 3, 0, 1]).unwrap()
    }

    fn mode_path(n: usize) -> Vec<TokenId> {
        let succ = [2u32, 3, 0, 1];
        let mut out = vec![1u32];
        while out.len() < n {
            let last = *out.last().unwrap() as usize;
            out.push(succ[last]);
        }
        out
    }

    #[test]
    fn vanilla_uses_one_call_per_token() {
        let o = MarkovOracle::random(3, 3, 4, 2.0).unwrap();
        let r = decode_vanilla(&[], 4, &o).unwrap();
        assert_eq!(r.metrics.predictor_calls, 4);
        let d = det(6);
        assert_eq!(decode_vanilla(&[], 6, &d).unwrap().final_sequence, mode_path(6));
    }

    #[test]
    fn vanilla_takes_most_confident_first() {
        // position 1 is nearly fixed, position 0 is not
        let o = MarkovOracle::new(
            2,
            2,
            vec![0.6, 0.4],
            vec![vec![0.1, 0.9], vec![0.1, 0.9]],
        )
        .unwrap();
        let r = decode_vanilla(&[], 2, &o).unwrap();
        let first = r.trace.iter().find(|e| e.kind == EventKind::Unmask).unwrap();
        assert_eq!(first.positions, vec![1]);
    }

    #[test]
    fn topk_call_counts() {
        let o = MarkovOracle::random(5, 3, 10, 2.0).unwrap();
        assert_eq!(decode_topk(&[], 10, &o, 4).unwrap().metrics.predictor_calls, 3);
        assert_eq!(decode_topk(&[], 10, &o, 10).unwrap().metrics.predictor_calls, 1);
        let a = decode_topk(&[], 10, &o, 1).unwrap();
        let b = decode_vanilla(&[], 10, &o).unwrap();
        assert_eq!(a.final_sequence, b.final_sequence);
        assert_eq!(a.trace, b.trace);
        assert!(matches!(decode_topk(&[], 10, &o, 0), Err(DecodeAbort { error: Error::InvalidArgument(_), .. })));
    }

    #[test]
    fn fixed_threshold_extremes() {
        let d = det(8);
        assert_eq!(decode_fixed_threshold(&[], 8, &d, 0.95).unwrap().metrics.predictor_calls, 1);
        let u = MarkovOracle::uniform(2, 8).unwrap();
        assert_eq!(decode_fixed_threshold(&[], 8, &u, 0.95).unwrap().metrics.predictor_calls, 8);
    }

    #[test]
    fn dico_on_deterministic_chain() {
        let d = det(16);
        let r = decode_dico(&[], 16, &d, &DecodeConfig::default()).unwrap();
        assert_eq!(r.final_sequence, mode_path(16));
        assert!(r.metrics.predictor_calls <= 4, "{:?}", r.metrics);
        assert!(is_dico_phase_order(&phase_sequence(&r.trace)));
    }

    #[test]
    fn dico_single_slot() {
        let o = MarkovOracle::random(9, 3, 3, 1.0).unwrap();
        let r = decode_dico(&[2, 0], 1, &o, &DecodeConfig::default()).unwrap();
        assert_eq!(r.final_sequence.len(), 1);
        assert!(is_dico_phase_order(&phase_sequence(&r.trace)));
    }

    #[test]
    fn semi_ar_block_of_one_is_left_to_right() {
        let o = MarkovOracle::random(4, 3, 8, 1.0).unwrap();
        for inner in [Strategy::Dico, Strategy::TopK(4), Strategy::Vanilla] {
            let r = decode_semi_ar(inner, &[], 8, 1, &o, &DecodeConfig::default()).unwrap();
            let order: Vec<usize> = r
                .trace
                .iter()
                .filter(|e| e.kind == EventKind::Unmask)
                .flat_map(|e| e.positions.clone())
                .collect();
            assert_eq!(order, (0..8).collect::<Vec<_>>());
        }
    }

    #[test]
    fn semi_ar_single_block_matches_plain() {
        let o = MarkovOracle::random(4, 3, 12, 4.0).unwrap();
        let cfg = DecodeConfig::default();
        let plain = decode(&Strategy::Dico, &[], 12, &o, &cfg).unwrap();
        let block = decode_semi_ar(Strategy::Dico, &[], 12, 64, &o, &cfg).unwrap();
        assert_eq!(plain.trace, block.trace);
    }

    #[test]
    fn metrics_from_trace() {
        let d = det(8);
        let r = decode_vanilla(&[], 8, &d).unwrap();
        let m = compute_metrics(&[], 8, &r.trace, Some(&d)).unwrap();
        assert_eq!(m.predictor_calls, 8);
        assert_eq!(m.tokens_per_call, 1.0);
        assert_eq!(m.oracle_log_likelihood, Some(0.0));
        let full = decode_topk(&[], 8, &d, 8).unwrap();
        assert_eq!(full.metrics.tokens_per_call, 8.0);
        assert!(compute_metrics(&[], 8, &r.trace[..3], None).is_err());
    }

    struct Failing;
    impl MaskPredictor for Failing {
        fn predict(&self, _: &SequenceState) -> Result<crate::prediction::PredictionGrid> {
            Err(Error::Predictor("boom".into()))
        }
    }

    #[test]
    fn predictor_failure_carries_partial_trace() {
        let err = decode_dico(&[], 4, &Failing, &DecodeConfig::default()).unwrap_err();
        assert!(matches!(err.error, Error::Predictor(_)));
        assert_eq!(err.partial_trace[0].kind, EventKind::PhaseTransition);
    }
}
