//! Exact joint and product-of-marginals distributions over whole responses,
//! and a randomized check of the total-variation bound `TVD <= n * eps` for
//! confidence-based parallel decoding.
//!
//! `P(x_i)` is always the prompt-conditioned marginal of position `i` with
//! every response slot masked. `eps_i = 1 - max_v P(x_i = v)` and the greedy
//! trajectory `x*` takes each position's marginal argmax.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::MarkovOracle;
use crate::sequence::{SequenceState, TokenId};

/// Largest support `V^n` that will be enumerated.
pub const MAX_ENUMERATION: usize = 1_000_000;

/// Slack on every bound check.
pub const BOUND_SLACK: f64 = 1e-9;

const DISTRIBUTION_TOLERANCE: f64 = 1e-9;

fn check_lengths(oracle: &MarkovOracle, prompt: &[TokenId], sequence: &[TokenId]) -> Result<()> {
    if prompt.len() + sequence.len() != oracle.length() {
        return Err(Error::invalid_argument(format!(
            "prompt {} + response {} does not match chain length {}",
            prompt.len(),
            sequence.len(),
            oracle.length()
        )));
    }
    Ok(())
}

/// Exact probability of the response given the prompt.
pub fn joint_pmf(oracle: &MarkovOracle, prompt: &[TokenId], sequence: &[TokenId]) -> Result<f64> {
    check_lengths(oracle, prompt, sequence)?;
    for &t in prompt {
        oracle.token_index(t)?;
    }
    let mut prev = prompt.last().map(|&t| t as usize);
    let mut p = 1.0;
    for &t in sequence {
        let v = oracle.token_index(t)?;
        p *= match prev {
            Some(u) => oracle.transition()[u][v],
            None => oracle.initial()[v],
        };
        prev = Some(v);
    }
    Ok(p)
}

/// Per-position marginals of the fully masked response.
pub fn prompt_marginals(oracle: &MarkovOracle, prompt: &[TokenId]) -> Result<Vec<Vec<f64>>> {
    let n = oracle
        .length()
        .checked_sub(prompt.len())
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::invalid_argument("prompt leaves no response slots"))?;
    let state = SequenceState::new(prompt.to_vec(), n)?;
    Ok(oracle
        .conditional_distributions(&state)?
        .into_iter()
        .map(|(_, d)| d)
        .collect())
}

/// `prod_i P(x_i = sequence_i)`.
pub fn marginal_product_pmf(
    oracle: &MarkovOracle,
    prompt: &[TokenId],
    sequence: &[TokenId],
) -> Result<f64> {
    check_lengths(oracle, prompt, sequence)?;
    let marginals = prompt_marginals(oracle, prompt)?;
    let mut p = 1.0;
    for (dist, &t) in marginals.iter().zip(sequence) {
        p *= dist[oracle.token_index(t)?];
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonProfile {
    pub per_position: Vec<f64>,
    pub epsilon: f64,
    pub greedy: Vec<TokenId>,
}

pub fn epsilon_profile(oracle: &MarkovOracle, prompt: &[TokenId]) -> Result<EpsilonProfile> {
    let marginals = prompt_marginals(oracle, prompt)?;
    let mut per_position = Vec::with_capacity(marginals.len());
    let mut greedy = Vec::with_capacity(marginals.len());
    for dist in &marginals {
        let (arg, top) = dist
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bp), (i, &p)| if p > bp { (i, p) } else { (bi, bp) });
        per_position.push(1.0 - top);
        greedy.push(arg as TokenId);
    }
    let epsilon = per_position.iter().copied().fold(0.0, f64::max);
    Ok(EpsilonProfile {
        per_position,
        epsilon,
        greedy,
    })
}

/// `1/2 sum_x |p(x) - q(x)|` over a shared support.
pub fn tvd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::invalid_argument(format!(
            "supports differ: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    for (name, d) in [("p", p), ("q", q)] {
        let s: f64 = d.iter().sum();
        if (s - 1.0).abs() > DISTRIBUTION_TOLERANCE {
            return Err(Error::invalid_argument(format!("{name} sums to {s}")));
        }
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Index of `sequence` in the lexicographic enumeration order used below
/// (position 0 most significant).
pub fn sequence_index(sequence: &[TokenId], vocab_size: usize) -> usize {
    sequence
        .iter()
        .fold(0, |acc, &t| acc * vocab_size + t as usize)
}

/// Both distributions over all `V^n` responses, in lexicographic order.
pub fn enumerate_distributions(
    oracle: &MarkovOracle,
    prompt: &[TokenId],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let v = oracle.vocab_size();
    let n = oracle.length().saturating_sub(prompt.len());
    let size = support_size(v, n)
        .ok_or_else(|| Error::invalid_argument(format!("V^n = {v}^{n} exceeds {MAX_ENUMERATION}")))?;
    for &t in prompt {
        oracle.token_index(t)?;
    }
    let marginals = prompt_marginals(oracle, prompt)?;
    let mut joint = Vec::with_capacity(size);
    let mut product = Vec::with_capacity(size);

    struct Walk<'a> {
        oracle: &'a MarkovOracle,
        marginals: &'a [Vec<f64>],
        joint: &'a mut Vec<f64>,
        product: &'a mut Vec<f64>,
    }
    impl Walk<'_> {
        fn visit(&mut self, depth: usize, prev: Option<usize>, pj: f64, pm: f64) {
            if depth == self.marginals.len() {
                self.joint.push(pj);
                self.product.push(pm);
                return;
            }
            for t in 0..self.oracle.vocab_size() {
                let step = match prev {
                    Some(u) => self.oracle.transition()[u][t],
                    None => self.oracle.initial()[t],
                };
                self.visit(depth + 1, Some(t), pj * step, pm * self.marginals[depth][t]);
            }
        }
    }
    Walk {
        oracle,
        marginals: &marginals,
        joint: &mut joint,
        product: &mut product,
    }
    .visit(0, prompt.last().map(|&t| t as usize), 1.0, 1.0);
    Ok((joint, product))
}

fn support_size(v: usize, n: usize) -> Option<usize> {
    let mut size: usize = 1;
    for _ in 0..n {
        size = size.checked_mul(v)?;
        if size > MAX_ENUMERATION {
            return None;
        }
    }
    Some(size)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmfReport {
    pub epsilon: f64,
    pub tvd: f64,
    /// `n * eps`.
    pub bound: f64,
    /// Product-of-marginals probability of the greedy trajectory.
    pub p_star: f64,
    /// Joint probability of the greedy trajectory.
    pub q_star: f64,
    pub epsilon_sum: f64,
}

impl PmfReport {
    /// The bound and both intermediate inequalities, each with
    /// [`BOUND_SLACK`].
    pub fn holds(&self) -> bool {
        (0.0..=1.0 + BOUND_SLACK).contains(&self.tvd)
            && self.tvd <= self.bound + BOUND_SLACK
            && 1.0 - self.p_star <= self.epsilon_sum + BOUND_SLACK
            && 1.0 - self.q_star <= self.epsilon_sum + BOUND_SLACK
    }
}

pub fn pmf_report(oracle: &MarkovOracle, prompt: &[TokenId]) -> Result<PmfReport> {
    let (joint, product) = enumerate_distributions(oracle, prompt)?;
    let profile = epsilon_profile(oracle, prompt)?;
    let star = sequence_index(&profile.greedy, oracle.vocab_size());
    let n = profile.per_position.len();
    Ok(PmfReport {
        epsilon: profile.epsilon,
        tvd: tvd(&product, &joint)?,
        bound: n as f64 * profile.epsilon,
        p_star: product[star],
        q_star: joint[star],
        epsilon_sum: profile.per_position.iter().sum(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub seed: u64,
    #[serde(rename = "V")]
    pub vocab_size: usize,
    pub n: usize,
    pub epsilon: f64,
    pub tvd: f64,
    pub bound: f64,
    pub p_star: f64,
    pub q_star: f64,
    pub epsilon_sum: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub kappa: f64,
    pub epsilon: f64,
    pub tvd: f64,
    pub bound: f64,
    /// `|p(x*) - q(x*)|`.
    pub star_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyParams {
    pub trials: usize,
    pub vocab: (usize, usize),
    pub length: (usize, usize),
    pub seed: u64,
}

impl Default for VerifyParams {
    fn default() -> Self {
        VerifyParams {
            trials: 500,
            vocab: (2, 5),
            length: (2, 8),
            seed: 0,
        }
    }
}

impl VerifyParams {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::invalid_argument("at least one trial is required"));
        }
        let (v0, v1) = self.vocab;
        let (n0, n1) = self.length;
        if v0 < 2 || v0 > v1 {
            return Err(Error::invalid_argument(format!("bad vocabulary range {v0}..={v1}")));
        }
        if n0 < 2 || n0 > n1 {
            return Err(Error::invalid_argument(format!("bad length range {n0}..={n1}")));
        }
        if support_size(v1, n1).is_none() {
            return Err(Error::invalid_argument(format!(
                "{v1}^{n1} sequences exceed the enumeration limit of {MAX_ENUMERATION}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoremReport {
    pub trials: Vec<TrialRecord>,
    pub sweep: Vec<SweepRecord>,
    pub sweep_pass: bool,
}

impl TheoremReport {
    pub fn violations(&self) -> usize {
        self.trials.iter().filter(|t| !t.pass).count()
    }

    pub fn all_pass(&self) -> bool {
        self.violations() == 0 && self.sweep_pass
    }
}

/// Concentrations of the fixed-chain sweep.
pub const SWEEP_KAPPAS: [f64; 5] = [1.0, 2.0, 4.0, 8.0, 16.0];

/// Base logits of the fixed three-token chain used by the concentration
/// sweep; its rows sharpen as `kappa` grows.
pub fn sweep_chain(kappa: f64) -> Result<MarkovOracle> {
    let initial = [1.0, 0.3, 0.0];
    let transition = [
        vec![0.2, 1.0, 0.0],
        vec![0.0, 0.4, 1.0],
        vec![1.0, 0.0, 0.3],
    ];
    MarkovOracle::from_logits(5, &initial, &transition, kappa)
}

pub fn concentration_sweep() -> Result<Vec<SweepRecord>> {
    SWEEP_KAPPAS
        .iter()
        .map(|&kappa| {
            let r = pmf_report(&sweep_chain(kappa)?, &[])?;
            Ok(SweepRecord {
                kappa,
                epsilon: r.epsilon,
                tvd: r.tvd,
                bound: r.bound,
                star_gap: (r.p_star - r.q_star).abs(),
            })
        })
        .collect()
}

/// One seeded random chain per trial (trial `k` uses `seed + k`), compared by
/// exhaustive enumeration, followed by the fixed-chain concentration sweep.
///
/// Each trial draws `V` and `n` uniformly from their ranges and a
/// concentration `kappa = 2^u` with `u` uniform in `[-2, 5)`.
pub fn verify_theorem(params: &VerifyParams) -> Result<TheoremReport> {
    params.validate()?;
    let mut trials = Vec::with_capacity(params.trials);
    for k in 0..params.trials {
        let seed = params.seed.wrapping_add(k as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = rng.random_range(params.vocab.0..=params.vocab.1);
        let n = rng.random_range(params.length.0..=params.length.1);
        let kappa = libm::exp2(rng.random_range(-2.0..5.0));
        let oracle = MarkovOracle::random(seed, v, n, kappa)?;
        let r = pmf_report(&oracle, &[])?;
        trials.push(TrialRecord {
            seed,
            vocab_size: v,
            n,
            epsilon: r.epsilon,
            tvd: r.tvd,
            bound: r.bound,
            p_star: r.p_star,
            q_star: r.q_star,
            epsilon_sum: r.epsilon_sum,
            pass: r.holds(),
        });
    }
    let sweep = concentration_sweep()?;
    let sweep_pass = sweep_converges(&sweep);
    Ok(TheoremReport {
        trials,
        sweep,
        sweep_pass,
    })
}

/// TVD at the sharpest concentration is below both the most diffuse one and
/// 0.01, and the greedy-trajectory gap there is below 0.01.
pub fn sweep_converges(sweep: &[SweepRecord]) -> bool {
    match (sweep.first(), sweep.last()) {
        (Some(lo), Some(hi)) => hi.tvd < lo.tvd && hi.tvd < 0.01 && hi.star_gap < 0.01,
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_state() -> MarkovOracle {
        MarkovOracle::new(2, 3, vec![0.5, 0.5], vec![vec![0.7, 0.3], vec![0.4, 0.6]]).unwrap()
    }

    #[test]
    fn joint_of_hand_example() {
        assert_abs_diff_eq!(joint_pmf(&two_state(), &[], &[0, 1, 1]).unwrap(), 0.09, epsilon = 1e-15);
        assert!(joint_pmf(&two_state(), &[], &[0, 1]).is_err());
    }

    #[test]
    fn deterministic_chain_pmfs() {
        let d = MarkovOracle::deterministic(4, 0, &[1, 2, 0]).unwrap();
        assert_eq!(joint_pmf(&d, &[], &[0, 1, 2, 0]).unwrap(), 1.0);
        assert_eq!(joint_pmf(&d, &[], &[0, 1, 1, 0]).unwrap(), 0.0);
        assert_eq!(marginal_product_pmf(&d, &[], &[0, 1, 2, 0]).unwrap(), 1.0);
        let prof = epsilon_profile(&d, &[]).unwrap();
        assert_eq!(prof.epsilon, 0.0);
        let r = pmf_report(&d, &[]).unwrap();
        assert_eq!(r.tvd, 0.0);
        assert!(r.holds());
    }

    #[test]
    fn marginal_product_by_enumeration() {
        let o = two_state();
        // brute-force marginals: sum joint over all 8 sequences
        let mut marg = [[0.0f64; 2]; 3];
        for idx in 0..8u32 {
            let seq = [(idx >> 2) & 1, (idx >> 1) & 1, idx & 1];
            let p = joint_pmf(&o, &[], &seq).unwrap();
            for i in 0..3 {
                marg[i][seq[i] as usize] += p;
            }
        }
        let expected = marg[0][0] * marg[1][1] * marg[2][1];
        assert_abs_diff_eq!(marginal_product_pmf(&o, &[], &[0, 1, 1]).unwrap(), expected, epsilon = 1e-14);
        let prof = epsilon_profile(&o, &[]).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(prof.per_position[i], 1.0 - marg[i][0].max(marg[i][1]), epsilon = 1e-14);
        }
    }

    #[test]
    fn single_position_has_no_gap() {
        let o = MarkovOracle::random(4, 3, 3, 1.0).unwrap();
        for t in 0..3 {
            let seq = [t];
            assert_abs_diff_eq!(
                joint_pmf(&o, &[1, 2], &seq).unwrap(),
                marginal_product_pmf(&o, &[1, 2], &seq).unwrap(),
                epsilon = 1e-15
            );
        }
        assert_eq!(pmf_report(&o, &[1, 2]).unwrap().tvd, 0.0);
    }

    #[test]
    fn uniform_chain_is_independent() {
        let u = MarkovOracle::uniform(2, 2).unwrap();
        let r = pmf_report(&u, &[]).unwrap();
        assert_abs_diff_eq!(r.tvd, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.epsilon, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn tvd_examples() {
        assert_eq!(tvd(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        assert_eq!(tvd(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(tvd(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), 0.5);
        assert!(tvd(&[1.0], &[0.5, 0.5]).is_err());
        assert!(tvd(&[0.5, 0.4], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn enumeration_sums_to_one() {
        let o = MarkovOracle::random(12, 4, 6, 2.0).unwrap();
        let (j, p) = enumerate_distributions(&o, &[]).unwrap();
        assert_eq!(j.len(), 4096);
        assert_abs_diff_eq!(j.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        let seq = [3, 0, 2, 2, 1, 0];
        let idx = sequence_index(&seq, 4);
        assert_abs_diff_eq!(j[idx], joint_pmf(&o, &[], &seq).unwrap(), epsilon = 1e-15);
    }

    #[test]
    fn infeasible_sizes_rejected() {
        let p = VerifyParams {
            vocab: (10, 10),
            length: (10, 10),
            ..VerifyParams::default()
        };
        assert!(p.validate().is_err());
        let p = VerifyParams {
            trials: 0,
            ..VerifyParams::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn small_verification_run_passes() {
        let report = verify_theorem(&VerifyParams {
            trials: 20,
            vocab: (2, 4),
            length: (2, 5),
            seed: 99,
        })
        .unwrap();
        assert_eq!(report.violations(), 0);
        assert!(report.sweep_pass, "{:?}", report.sweep);
    }
}
