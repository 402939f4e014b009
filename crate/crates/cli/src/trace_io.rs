//! JSONL traces and JSON oracle documents.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use dico_core::{MarkovOracle, TraceEvent};

pub fn write_trace<W: Write>(mut out: W, events: &[TraceEvent]) -> Result<()> {
    for ev in events {
        serde_json::to_writer(&mut out, ev)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Parses one event per non-blank line. An input without events is an error.
pub fn read_trace<R: BufRead>(input: R) -> Result<Vec<TraceEvent>> {
    let mut events = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ev: TraceEvent =
            serde_json::from_str(&line).with_context(|| format!("trace line {}", idx + 1))?;
        events.push(ev);
    }
    if events.is_empty() {
        bail!("trace is empty");
    }
    Ok(events)
}

pub fn save_trace(path: &Path, events: &[TraceEvent]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_trace(BufWriter::new(file), events)
}

pub fn load_trace(path: &Path) -> Result<Vec<TraceEvent>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_trace(BufReader::new(file)).with_context(|| format!("in {}", path.display()))
}

pub fn load_oracle(path: &Path) -> Result<MarkovOracle> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(file))
        .with_context(|| format!("parsing oracle {}", path.display()))
}

pub fn save_oracle(path: &Path, oracle: &MarkovOracle) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, oracle)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}
