//! Strategy specifications as typed on the command line.
//!
//! ```text
//! vanilla | topk:<k> | fixed[:<t>] | dico[:<ablation>+...] | semi-ar:<inner>
//! ablation = no-tg | no-lm | fixed-parallel[=<t>] | n=<N>
//! ```

use anyhow::{anyhow, bail, Result};
use dico_core::{DecodeConfig, ParallelRule, Strategy};

pub const DEFAULT_FIXED_THRESHOLD: f64 = 0.95;
pub const DEFAULT_FIXED_PARALLEL: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ablation {
    /// Trajectory weight fixed at 1.
    NoTrajectoryGuidance,
    /// `tau3 = +inf`: Finalize decodes one token per pass.
    NoLogitMargin,
    /// Threshold rule instead of the adaptive set inside Conquer.
    FixedParallel(f64),
    Seeds(usize),
}

impl Ablation {
    pub fn apply(self, cfg: &mut DecodeConfig) {
        match self {
            Ablation::NoTrajectoryGuidance => cfg.trajectory_guidance = false,
            Ablation::NoLogitMargin => cfg.tau3 = f64::INFINITY,
            Ablation::FixedParallel(t) => cfg.parallel_rule = ParallelRule::Fixed(t),
            Ablation::Seeds(n) => cfg.n_seeds = n,
        }
    }

    fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        Ok(match s.split_once('=') {
            None if s == "no-tg" => Ablation::NoTrajectoryGuidance,
            None if s == "no-lm" => Ablation::NoLogitMargin,
            None if s == "fixed-parallel" => Ablation::FixedParallel(DEFAULT_FIXED_PARALLEL),
            Some(("fixed-parallel", t)) => Ablation::FixedParallel(
                t.parse().map_err(|_| anyhow!("fixed-parallel: bad threshold {t:?}"))?,
            ),
            Some(("n", n)) => Ablation::Seeds(n.parse().map_err(|_| anyhow!("n: bad seed count {n:?}"))?),
            _ => bail!("unknown ablation {s:?}"),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategySpec {
    /// The text it was parsed from.
    pub label: String,
    pub strategy: Strategy,
    pub ablations: Vec<Ablation>,
}

impl StrategySpec {
    /// `base` with this spec's ablations applied.
    pub fn config(&self, base: &DecodeConfig) -> DecodeConfig {
        let mut cfg = base.clone();
        for a in &self.ablations {
            a.apply(&mut cfg);
        }
        cfg
    }

    pub fn is_dico(&self) -> bool {
        match &self.strategy {
            Strategy::Dico => true,
            Strategy::SemiAr { inner, .. } => **inner == Strategy::Dico,
            _ => false,
        }
    }
}

/// Parses one spec; `block_size` sizes semi-AR blocks.
pub fn parse(spec: &str, block_size: usize) -> Result<StrategySpec> {
    let spec = spec.trim();
    let (head, arg) = match spec.split_once(':') {
        Some((h, a)) => (h, Some(a)),
        None => (spec, None),
    };
    let mut ablations = Vec::new();
    let strategy = match (head, arg) {
        ("vanilla", None) => Strategy::Vanilla,
        ("topk", Some(k)) => {
            let k: usize = k.parse().map_err(|_| anyhow!("topk: bad k {k:?}"))?;
            if k == 0 {
                bail!("topk needs k >= 1");
            }
            Strategy::TopK(k)
        }
        ("fixed", t) => {
            let t = match t {
                Some(t) => t.parse().map_err(|_| anyhow!("fixed: bad threshold {t:?}"))?,
                None => DEFAULT_FIXED_THRESHOLD,
            };
            if !(t > 0.0 && t <= 1.0) {
                bail!("fixed threshold must lie in (0, 1], got {t}");
            }
            Strategy::FixedThreshold(t)
        }
        ("dico", None) => Strategy::Dico,
        ("dico", Some(list)) => {
            for a in list.split('+') {
                ablations.push(Ablation::parse(a)?);
            }
            Strategy::Dico
        }
        ("semi-ar", Some(inner)) => {
            if block_size == 0 {
                bail!("semi-ar needs a positive block size");
            }
            let inner = parse(inner, block_size)?;
            if matches!(inner.strategy, Strategy::SemiAr { .. }) {
                bail!("semi-ar cannot nest");
            }
            ablations = inner.ablations;
            Strategy::SemiAr { inner: Box::new(inner.strategy), block_size }
        }
        _ => bail!("unknown strategy {spec:?}"),
    };
    Ok(StrategySpec { label: spec.to_string(), strategy, ablations })
}

/// Comma-separated list of specs.
pub fn parse_list(list: &str, block_size: usize) -> Result<Vec<StrategySpec>> {
    let specs: Vec<StrategySpec> = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(s, block_size))
        .collect::<Result<_>>()?;
    if specs.is_empty() {
        bail!("no strategies given");
    }
    Ok(specs)
}
