//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Recognized keys are
//! `alpha`, `beta`, `tau1`, `tau2`, `tau3`, `n_seeds`, `t_max`, `r_gate`,
//! `mode`, `block_size` and `seed`.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use dico_core::{DecodeConfig, DecodeMode};

pub const KEYS: [&str; 11] = [
    "alpha", "beta", "tau1", "tau2", "tau3", "n_seeds", "t_max", "r_gate", "mode", "block_size", "seed",
];

/// `(line number, key, value)` for every assignment, in file order.
pub fn parse(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected key = value", idx + 1))?;
        out.push((idx + 1, key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

fn number<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| anyhow!("{key}: cannot parse {value:?}"))
}

pub fn parse_mode(value: &str) -> Result<DecodeMode> {
    match value {
        "non-ar" | "non_ar" | "nar" => Ok(DecodeMode::NonAutoregressive),
        "semi-ar" | "semi_ar" | "sar" => Ok(DecodeMode::SemiAutoregressive),
        other => bail!("mode: expected non-ar or semi-ar, got {other:?}"),
    }
}

pub fn apply(cfg: &mut DecodeConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "alpha" => cfg.alpha = number(key, value)?,
        "beta" => cfg.beta = number(key, value)?,
        "tau1" => cfg.tau1 = number(key, value)?,
        "tau2" => cfg.tau2 = number(key, value)?,
        "tau3" => cfg.tau3 = number(key, value)?,
        "n_seeds" => cfg.n_seeds = number(key, value)?,
        "t_max" => cfg.t_max = number(key, value)?,
        "r_gate" => cfg.r_gate = number(key, value)?,
        "mode" => cfg.mode = parse_mode(value)?,
        "block_size" => cfg.block_size = number(key, value)?,
        "seed" => cfg.rng_seed = number(key, value)?,
        other => bail!("unknown key {other:?} (known: {})", KEYS.join(", ")),
    }
    Ok(())
}

pub fn apply_text(cfg: &mut DecodeConfig, text: &str) -> Result<()> {
    for (line, key, value) in parse(text)? {
        apply(cfg, &key, &value).with_context(|| format!("line {line}"))?;
    }
    Ok(())
}

pub fn apply_file(cfg: &mut DecodeConfig, path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    apply_text(cfg, &text).with_context(|| format!("in {}", path.display()))
}
