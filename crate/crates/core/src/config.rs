//! Decoding hyperparameters.

use alloc::format;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecodeMode {
    #[serde(rename = "non-ar")]
    NonAutoregressive,
    #[serde(rename = "semi-ar")]
    SemiAutoregressive,
}

/// How the Conquer phase sizes each step's parallel set inside a cluster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParallelRule {
    /// Largest set with `(|S| + 1)(1 - c) < 1` for every member.
    Adaptive,
    /// Every member with confidence above the threshold.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    /// Slope of the trajectory-guidance base in the unmask ratio.
    pub alpha: f64,
    /// Offset of the trajectory-guidance base.
    pub beta: f64,
    /// Seed acceptance and cluster expansion threshold.
    pub tau1: f64,
    /// Parallel decoding threshold: cluster density and boundary confidence.
    pub tau2: f64,
    /// Logit-margin threshold for Finalize, in logit units.
    pub tau3: f64,
    /// Maximum seeds accepted per exploratory iteration.
    pub n_seeds: usize,
    /// Maximum exploratory iterations per Divide entry.
    pub t_max: usize,
    /// Unmask ratio at or above which Conquer hands off to Finalize.
    pub r_gate: f64,
    pub mode: DecodeMode,
    /// Block length for semi-autoregressive decoding.
    pub block_size: usize,
    pub rng_seed: u64,
    /// When false the trajectory weight is identically 1.
    pub trajectory_guidance: bool,
    pub parallel_rule: ParallelRule,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            alpha: 0.5,
            beta: 0.05,
            tau1: 0.3,
            tau2: 0.6,
            tau3: 3.0,
            n_seeds: 8,
            t_max: 3,
            r_gate: 0.8,
            mode: DecodeMode::NonAutoregressive,
            block_size: 128,
            rng_seed: 0,
            trajectory_guidance: true,
            parallel_rule: ParallelRule::Adaptive,
        }
    }
}

impl DecodeConfig {
    /// Defaults for block-wise decoding: four seeds per iteration.
    pub fn semi_autoregressive() -> Self {
        DecodeConfig {
            mode: DecodeMode::SemiAutoregressive,
            n_seeds: 4,
            ..DecodeConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::invalid_argument(format!("{name} = {v} outside [0, 1]")))
            }
        };
        prob("tau1", self.tau1)?;
        prob("tau2", self.tau2)?;
        if self.tau1 > self.tau2 {
            return Err(Error::invalid_argument(format!(
                "tau1 = {} exceeds tau2 = {}",
                self.tau1, self.tau2
            )));
        }
        if !(self.r_gate > 0.0 && self.r_gate <= 1.0) {
            return Err(Error::invalid_argument(format!(
                "r_gate = {} outside (0, 1]",
                self.r_gate
            )));
        }
        if self.tau3.is_nan() {
            return Err(Error::invalid_argument("tau3 is NaN"));
        }
        if !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::invalid_argument("alpha and beta must be finite"));
        }
        if self.n_seeds == 0 {
            return Err(Error::invalid_argument("n_seeds must be positive"));
        }
        if self.t_max == 0 {
            return Err(Error::invalid_argument("t_max must be positive"));
        }
        if self.block_size == 0 {
            return Err(Error::invalid_argument("block_size must be positive"));
        }
        if let ParallelRule::Fixed(t) = self.parallel_rule {
            prob("fixed parallel threshold", t)?;
        }
        Ok(())
    }
}
