//! Strategy comparisons over a batch of seeded random chains.

use anyhow::{anyhow, bail, Result};
use dico_core::engine::decode;
use dico_core::theory::joint_pmf;
use dico_core::{DecodeConfig, MarkovOracle, Strategy, TokenId};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::source::greedy_prefix;
use crate::strategy::StrategySpec;

/// Trial `k` uses chain seed `seed + k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchParams {
    pub trials: usize,
    pub seed: u64,
    #[serde(rename = "V")]
    pub vocab: usize,
    pub n: usize,
    pub kappa: f64,
    pub prompt_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub predictor_calls: usize,
    pub log_likelihood: f64,
    pub sequence: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: String,
    pub mean_calls: f64,
    /// Mean over trials of `n / calls`.
    pub tokens_per_call: f64,
    /// Mean over trials of `ln P(response | prompt) / n`.
    pub log_likelihood_per_token: f64,
    /// Fraction of trials whose response equals the vanilla response.
    pub vanilla_agreement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub params: BatchParams,
    pub strategies: Vec<StrategySummary>,
}

/// One instance of the batch: the chain and its prompt.
pub fn instance(params: &BatchParams, trial: usize) -> Result<(MarkovOracle, Vec<TokenId>)> {
    let seed = params.seed.wrapping_add(trial as u64);
    let oracle = MarkovOracle::random(seed, params.vocab, params.prompt_len + params.n, params.kappa)?;
    let prompt = greedy_prefix(&oracle, params.prompt_len);
    Ok((oracle, prompt))
}

pub fn run_one(
    oracle: &MarkovOracle,
    prompt: &[TokenId],
    n: usize,
    strategy: &Strategy,
    cfg: &DecodeConfig,
) -> Result<TrialOutcome> {
    let r = decode(strategy, prompt, n, oracle, cfg).map_err(|abort| anyhow!(abort.error))?;
    let p = joint_pmf(oracle, prompt, &r.final_sequence)?;
    Ok(TrialOutcome {
        predictor_calls: r.metrics.predictor_calls,
        log_likelihood: p.ln(),
        sequence: r.final_sequence,
    })
}

/// Per-trial outcomes, `[trial][strategy]`, plus the vanilla outcome per
/// trial. Trials run in parallel; the result is ordered by trial.
pub fn run_trials(
    params: &BatchParams,
    specs: &[StrategySpec],
    base: &DecodeConfig,
) -> Result<Vec<(TrialOutcome, Vec<TrialOutcome>)>> {
    if params.trials == 0 {
        bail!("batch needs at least one trial");
    }
    (0..params.trials)
        .into_par_iter()
        .map(|k| {
            let (oracle, prompt) = instance(params, k)?;
            let vanilla = run_one(&oracle, &prompt, params.n, &Strategy::Vanilla, base)?;
            let outcomes = specs
                .iter()
                .map(|s| run_one(&oracle, &prompt, params.n, &s.strategy, &s.config(base)))
                .collect::<Result<Vec<_>>>()?;
            Ok((vanilla, outcomes))
        })
        .collect()
}

pub fn summarize(
    params: &BatchParams,
    specs: &[StrategySpec],
    trials: &[(TrialOutcome, Vec<TrialOutcome>)],
) -> BatchReport {
    let t = trials.len() as f64;
    let n = params.n as f64;
    let strategies = specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let mut s = StrategySummary {
                strategy: spec.label.clone(),
                mean_calls: 0.0,
                tokens_per_call: 0.0,
                log_likelihood_per_token: 0.0,
                vanilla_agreement: 0.0,
            };
            for (vanilla, outcomes) in trials {
                let o = &outcomes[i];
                s.mean_calls += o.predictor_calls as f64;
                s.tokens_per_call += n / o.predictor_calls as f64;
                s.log_likelihood_per_token += o.log_likelihood / n;
                s.vanilla_agreement += (o.sequence == vanilla.sequence) as u8 as f64;
            }
            s.mean_calls /= t;
            s.tokens_per_call /= t;
            s.log_likelihood_per_token /= t;
            s.vanilla_agreement /= t;
            s
        })
        .collect();
    BatchReport {
        params: params.clone(),
        strategies,
    }
}

pub fn run_batch(params: &BatchParams, specs: &[StrategySpec], base: &DecodeConfig) -> Result<BatchReport> {
    let trials = run_trials(params, specs, base)?;
    Ok(summarize(params, specs, &trials))
}

pub fn render_table(report: &BatchReport) -> String {
    let width = report
        .strategies
        .iter()
        .map(|s| s.strategy.len())
        .max()
        .unwrap_or(0)
        .max("strategy".len());
    let mut out = format!(
        "{:<width$}  {:>8}  {:>9}  {:>9}  {:>6}\n",
        "strategy", "calls", "tok/call", "ll/token", "agree"
    );
    for s in &report.strategies {
        out.push_str(&format!(
            "{:<width$}  {:>8.2}  {:>9.3}  {:>9.4}  {:>6.3}\n",
            s.strategy, s.mean_calls, s.tokens_per_call, s.log_likelihood_per_token, s.vanilla_agreement
        ));
    }
    out
}
