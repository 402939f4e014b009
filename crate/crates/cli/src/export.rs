//! Plot data derived from a trace.
//!
//! `scatter` has one row per position per forward pass while the position is
//! masked, plus one row at the step it is unmasked. `heatmap` has one row per
//! step and one column per position holding the step at which that position
//! was unmasked, or `-1` while it is still masked.

use std::io::Write;

use anyhow::{bail, Context, Result};
use dico_core::trace::replay;
use dico_core::{EventKind, TraceEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Scatter,
    Heatmap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterRow {
    pub step: u64,
    pub position: usize,
    pub confidence: f64,
    pub unmasked: bool,
}

/// Response length implied by the trace; the unmask events must cover
/// `0..n` exactly once each with non-decreasing steps.
pub fn response_length(trace: &[TraceEvent]) -> Result<usize> {
    let n = trace
        .iter()
        .filter(|e| e.kind == EventKind::Unmask)
        .flat_map(|e| e.positions.iter().copied())
        .max()
        .map(|p| p + 1)
        .context("trace has no unmask events")?;
    let state = replay(&[], n, trace).context("trace does not replay")?;
    if !state.is_complete() {
        bail!("trace leaves {} of {n} positions masked", state.masked_count());
    }
    Ok(n)
}

pub fn scatter_rows(trace: &[TraceEvent]) -> Vec<ScatterRow> {
    let mut rows = Vec::new();
    for ev in trace {
        let unmasked = match ev.kind {
            EventKind::Forward => false,
            EventKind::Unmask => true,
            _ => continue,
        };
        for (k, &position) in ev.positions.iter().enumerate() {
            rows.push(ScatterRow {
                step: ev.step,
                position,
                confidence: ev.confidences.get(k).copied().unwrap_or(f64::NAN),
                unmasked,
            });
        }
    }
    rows
}

/// `unmask_step[p]` for every response position.
pub fn unmask_steps(trace: &[TraceEvent]) -> Result<Vec<u64>> {
    let n = response_length(trace)?;
    let mut steps = vec![0; n];
    for ev in trace.iter().filter(|e| e.kind == EventKind::Unmask) {
        for &p in &ev.positions {
            steps[p] = ev.step;
        }
    }
    Ok(steps)
}

pub fn write_scatter<W: Write>(out: W, trace: &[TraceEvent]) -> Result<()> {
    response_length(trace)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "position", "confidence", "state"])?;
    for r in scatter_rows(trace) {
        let state = if r.unmasked { "unmasked" } else { "masked" };
        w.write_record([r.step.to_string(), r.position.to_string(), r.confidence.to_string(), state.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_heatmap<W: Write>(out: W, trace: &[TraceEvent]) -> Result<()> {
    let steps = unmask_steps(trace)?;
    let last = steps.iter().copied().max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["step".to_string()];
    header.extend((0..steps.len()).map(|p| p.to_string()));
    w.write_record(&header)?;
    for s in 1..=last {
        let mut row = vec![s.to_string()];
        row.extend(steps.iter().map(|&u| if u <= s { u.to_string() } else { "-1".to_string() }));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write<W: Write>(out: W, trace: &[TraceEvent], format: Format) -> Result<()> {
    match format {
        Format::Scatter => write_scatter(out, trace),
        Format::Heatmap => write_heatmap(out, trace),
    }
}
