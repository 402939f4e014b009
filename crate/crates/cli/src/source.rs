//! Where predictions come from: a generated chain, an oracle file, or a
//! model server speaking the bridge protocol.

use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{anyhow, bail, Result};
use dico_core::{MarkovOracle, TokenId};

/// Parameters of a seeded random chain; `length` is the response length and
/// `prompt_len` prompt tokens precede it.
#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub seed: Option<u64>,
    pub vocab: usize,
    pub length: usize,
    pub kappa: f64,
    pub prompt_len: usize,
}

impl GenSpec {
    pub fn build(&self, default_seed: u64) -> Result<MarkovOracle> {
        let seed = self.seed.unwrap_or(default_seed);
        Ok(MarkovOracle::random(seed, self.vocab, self.prompt_len + self.length, self.kappa)?)
    }
}

impl FromStr for GenSpec {
    type Err = anyhow::Error;

    /// `seed=7,V=4,n=32,kappa=8[,m=2]`; `V`, `n` and `kappa` are required.
    fn from_str(s: &str) -> Result<Self> {
        let (mut seed, mut vocab, mut length, mut kappa, mut prompt_len) = (None, None, None, None, 0);
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| anyhow!("generator field {part:?} is not key=value"))?;
            let bad = || anyhow!("generator field {k}: cannot parse {v:?}");
            match k {
                "seed" => seed = Some(v.parse().map_err(|_| bad())?),
                "V" | "v" => vocab = Some(v.parse().map_err(|_| bad())?),
                "n" => length = Some(v.parse().map_err(|_| bad())?),
                "kappa" => kappa = Some(v.parse().map_err(|_| bad())?),
                "m" => prompt_len = v.parse().map_err(|_| bad())?,
                other => bail!("unknown generator field {other:?}"),
            }
        }
        let spec = GenSpec {
            seed,
            vocab: vocab.ok_or_else(|| anyhow!("generator needs V"))?,
            length: length.ok_or_else(|| anyhow!("generator needs n"))?,
            kappa: kappa.ok_or_else(|| anyhow!("generator needs kappa"))?,
            prompt_len,
        };
        if spec.vocab < 2 || spec.length == 0 || !(spec.kappa > 0.0) || !spec.kappa.is_finite() {
            bail!("generator needs V >= 2, n >= 1 and a positive finite kappa");
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OracleSource {
    Generated(GenSpec),
    File(PathBuf),
    /// Shell command of a model server on stdin/stdout.
    Bridge(String),
}

impl FromStr for OracleSource {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some(("gen", rest)) => Ok(OracleSource::Generated(rest.parse()?)),
            Some(("file", rest)) if !rest.is_empty() => Ok(OracleSource::File(rest.into())),
            Some(("bridge", rest)) if !rest.trim().is_empty() => Ok(OracleSource::Bridge(rest.to_string())),
            _ => bail!("oracle source must be gen:..., file:<path> or bridge:<command>, got {s:?}"),
        }
    }
}

/// The chain's most likely path of length `m`, step by step; used as the
/// prompt of generated instances.
pub fn greedy_prefix(oracle: &MarkovOracle, m: usize) -> Vec<TokenId> {
    let argmax = |row: &[f64]| {
        row.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bp), (i, &p)| if p > bp { (i, p) } else { (bi, bp) })
            .0
    };
    let mut out = Vec::with_capacity(m);
    let mut prev: Option<usize> = None;
    for _ in 0..m {
        let next = match prev {
            None => argmax(oracle.initial()),
            Some(u) => argmax(&oracle.transition()[u]),
        };
        out.push(next as TokenId);
        prev = Some(next);
    }
    out
}

/// Comma-separated token ids; an empty string is an empty prompt.
pub fn parse_tokens(s: &str) -> Result<Vec<TokenId>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| anyhow!("bad token id {t:?}")))
        .collect()
}
