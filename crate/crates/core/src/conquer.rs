//! Conquer phase: parallel unmasking inside local clusters.

use alloc::vec;
use alloc::vec::Vec;

use crate::config::{DecodeConfig, ParallelRule};
use crate::divide::{Cluster, ClusterSet};
use crate::error::Result;
use crate::predictor::MaskPredictor;
use crate::session::Session;
use crate::trace::EventKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NextPhase {
    Divide,
    Finalize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConquerOutcome {
    pub next_phase: NextPhase,
    /// Loop iterations, one forward pass each.
    pub steps_used: usize,
    pub tokens_unmasked: usize,
}

/// The largest set `S` with `(|S| + 1)(1 - c(i)) < 1` for every member.
///
/// Any feasible set of size `k` needs its minimum confidence above
/// `1 - 1/(k + 1)`, and the `k` most confident positions maximize that
/// minimum, so the answer is the longest feasible prefix of the confidences
/// sorted in descending order (smaller position first on ties). Returned
/// positions are ascending.
pub fn adaptive_parallel_set(confidences: &[(usize, f64)]) -> Vec<usize> {
    let mut sorted: Vec<(usize, f64)> = confidences.to_vec();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut take = 0;
    for (k, &(_, c)) in sorted.iter().enumerate() {
        let size = (k + 1) as f64;
        if (size + 1.0) * (1.0 - c) < 1.0 {
            take = k + 1;
        } else {
            break;
        }
    }
    let mut out: Vec<usize> = sorted[..take].iter().map(|&(p, _)| p).collect();
    out.sort_unstable();
    out
}

/// Trims then extends `cluster` against raw confidences.
///
/// While the outermost masked member on a side has `c < tau2` that side moves
/// inward past it. Then while the position just outside a side is masked with
/// `c >= tau2` that side moves outward. Unmasked positions inside stay in the
/// interval. Density is recomputed as the mean raw confidence over masked
/// members; a cluster with none left comes back inactive.
///
/// `confidence[p]` is `Some(c)` for masked `p`.
pub fn adapt_boundaries(
    cluster: &Cluster,
    masked: &[bool],
    confidence: &[Option<f64>],
    tau2: f64,
) -> Cluster {
    let n = masked.len();
    let strong = |p: usize| masked[p] && confidence[p].is_some_and(|c| c >= tau2);
    let mut lo = cluster.lo;
    let mut hi = cluster.hi.min(n - 1);
    let had_members = (lo..=hi).any(|p| masked[p]);

    let mut emptied = false;
    if had_members {
        loop {
            let Some(first) = (lo..=hi).find(|&p| masked[p]) else {
                emptied = true;
                break;
            };
            if strong(first) {
                break;
            }
            if first == hi {
                emptied = true;
                break;
            }
            lo = first + 1;
        }
        if !emptied {
            loop {
                let last = (lo..=hi).rev().find(|&p| masked[p]).unwrap_or(lo);
                if strong(last) || last <= lo {
                    break;
                }
                hi = last - 1;
            }
        }
    }
    if emptied {
        return Cluster {
            lo: cluster.lo,
            hi: cluster.hi,
            density: 0.0,
            active: false,
        };
    }

    while lo > 0 && strong(lo - 1) {
        lo -= 1;
    }
    while hi + 1 < n && strong(hi + 1) {
        hi += 1;
    }

    let mut adapted = Cluster::new(lo, hi);
    let (sum, count) = adapted
        .masked_members(masked)
        .fold((0.0, 0usize), |(s, k), p| (s + confidence[p].unwrap_or(0.0), k + 1));
    if count == 0 {
        adapted.active = false;
    } else {
        adapted.density = sum / count as f64;
    }
    adapted
}

fn members_with_confidence(
    cluster: &Cluster,
    masked: &[bool],
    confidence: &[Option<f64>],
) -> Vec<(usize, f64)> {
    cluster
        .masked_members(masked)
        .map(|p| (p, confidence[p].unwrap_or(0.0)))
        .collect()
}

/// Decodes inside the given clusters until all of them are deactivated.
///
/// Each iteration takes a forward pass, adapts every active cluster and
/// merges those that come into contact, deactivates clusters whose density
/// fell below `tau2` or that have no masked members, then unmasks the union
/// of each surviving cluster's parallel set in one transition. If that union
/// is empty the single most confident masked member of any active cluster is
/// unmasked instead (a `fallback` event). Afterwards the window's unmask
/// ratio picks the next phase.
pub fn conquer_phase<P: MaskPredictor + ?Sized>(
    session: &mut Session<'_, P>,
    clusters: &ClusterSet,
    cfg: &DecodeConfig,
) -> Result<ConquerOutcome> {
    let n = session.window_len();
    let mut active: Vec<Cluster> = clusters.iter().copied().filter(|c| c.active).collect();
    let mut steps_used = 0;
    let mut tokens_unmasked = 0;

    while !active.is_empty() && session.window_has_masks() {
        let grid = session.forward()?;
        steps_used += 1;
        let masked = session.window_masks();
        let mut confidence = vec![None; n];
        for e in &grid {
            confidence[e.position] = Some(e.top1_prob);
        }

        let adapted: Vec<Cluster> = active
            .iter()
            .map(|c| adapt_boundaries(c, &masked, &confidence, cfg.tau2))
            .collect();
        let (alive, dead): (Vec<Cluster>, Vec<Cluster>) =
            adapted.into_iter().partition(|c| c.active);
        let merged = ClusterSet::from_clusters(alive);
        let mut deactivated: Vec<(usize, usize)> = dead.iter().map(Cluster::interval).collect();
        let mut selected: Vec<usize> = Vec::new();
        let mut survivors = Vec::new();
        for c in merged.into_vec() {
            let members = members_with_confidence(&c, &masked, &confidence);
            if members.is_empty() {
                deactivated.push(c.interval());
                continue;
            }
            let density = members.iter().map(|m| m.1).sum::<f64>() / members.len() as f64;
            match cfg.parallel_rule {
                ParallelRule::Adaptive => selected.extend(adaptive_parallel_set(&members)),
                ParallelRule::Fixed(t) => {
                    selected.extend(members.iter().filter(|m| m.1 > t).map(|m| m.0))
                }
            }
            if density < cfg.tau2 {
                deactivated.push(c.interval());
            } else {
                survivors.push(Cluster { density, ..c });
            }
        }
        session.emit(EventKind::ClusterAdapt, |ev| {
            ev.clusters = survivors.iter().map(Cluster::interval).collect();
            ev.confidences = survivors.iter().map(|c| c.density).collect();
        });
        if !deactivated.is_empty() {
            session.emit(EventKind::ClusterDeactivate, |ev| ev.clusters = deactivated);
        }
        if selected.is_empty() {
            let best = survivors
                .iter()
                .flat_map(|c| members_with_confidence(c, &masked, &confidence))
                .fold(None::<(usize, f64)>, |best, m| match best {
                    Some(b) if b.1 >= m.1 => Some(b),
                    _ => Some(m),
                });
            if let Some((p, c)) = best {
                session.emit(EventKind::Fallback, |ev| {
                    ev.positions.push(p);
                    ev.confidences.push(c);
                });
                selected.push(p);
            }
        }
        active = survivors;
        if selected.is_empty() {
            break;
        }
        selected.sort_unstable();
        session.unmask(&selected)?;
        tokens_unmasked += selected.len();
    }

    let next_phase = if session.window_has_masks() && session.window_ratio() < cfg.r_gate {
        NextPhase::Divide
    } else {
        NextPhase::Finalize
    };
    Ok(ConquerOutcome {
        next_phase,
        steps_used,
        tokens_unmasked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conf(n: usize, vals: &[(usize, f64)]) -> Vec<Option<f64>> {
        let mut c = vec![None; n];
        for &(p, v) in vals {
            c[p] = Some(v);
        }
        c
    }

    #[test]
    fn parallel_set_examples() {
        assert!(adaptive_parallel_set(&[]).is_empty());
        assert!(adaptive_parallel_set(&[(0, 0.4)]).is_empty());
        assert_eq!(adaptive_parallel_set(&[(2, 0.6), (0, 0.9), (1, 0.8)]), vec![0, 1]);
        assert_eq!(adaptive_parallel_set(&[(3, 1.0), (1, 1.0), (2, 1.0)]), vec![1, 2, 3]);
    }

    #[test]
    fn parallel_set_tie_prefers_smaller_position() {
        // three at 0.7: a pair needs min c > 2/3, a triple needs > 3/4
        assert_eq!(adaptive_parallel_set(&[(5, 0.7), (2, 0.7), (9, 0.7)]), vec![2, 5]);
    }

    #[test]
    fn boundary_single_extension() {
        let masked = vec![true; 12];
        let c = conf(12, &(0..12).map(|p| (p, if p == 4 { 0.7 } else if (5..=9).contains(&p) { 0.9 } else { 0.1 })).collect::<Vec<_>>());
        let out = adapt_boundaries(&Cluster::new(5, 9), &masked, &c, 0.6);
        assert_eq!(out.interval(), (4, 9));
        assert!(out.active);
    }

    #[test]
    fn boundary_trim_both_sides() {
        let masked = vec![true; 12];
        let c = conf(12, &(0..12).map(|p| (p, match p { 6..=8 => 0.9, _ => 0.3 })).collect::<Vec<_>>());
        let out = adapt_boundaries(&Cluster::new(5, 9), &masked, &c, 0.6);
        assert_eq!(out.interval(), (6, 8));
        assert!((out.density - 0.9).abs() < 1e-12);
    }

    #[test]
    fn boundary_total_trim_deactivates() {
        let masked = vec![true; 12];
        let c = conf(12, &(0..12).map(|p| (p, 0.2)).collect::<Vec<_>>());
        let out = adapt_boundaries(&Cluster::new(3, 7), &masked, &c, 0.6);
        assert!(!out.active);
    }

    #[test]
    fn boundary_keeps_unmasked_interior() {
        let mut masked = vec![true; 8];
        masked[3] = false;
        masked[4] = false;
        let c = conf(8, &[(0, 0.1), (1, 0.1), (2, 0.8), (5, 0.3), (6, 0.1), (7, 0.1)]);
        let out = adapt_boundaries(&Cluster::new(2, 5), &masked, &c, 0.6);
        assert_eq!(out.interval(), (2, 4));
        assert!((out.density - 0.8).abs() < 1e-12);
    }

    #[test]
    fn fully_decoded_cluster_can_still_extend() {
        let mut masked = vec![true; 6];
        masked[2] = false;
        masked[3] = false;
        let c = conf(6, &[(0, 0.1), (1, 0.9), (4, 0.2), (5, 0.9)]);
        let out = adapt_boundaries(&Cluster::new(2, 3), &masked, &c, 0.6);
        assert_eq!(out.interval(), (1, 3));
        assert!(out.active);
        let c = conf(6, &[(0, 0.1), (1, 0.1), (4, 0.2), (5, 0.9)]);
        assert!(!adapt_boundaries(&Cluster::new(2, 3), &masked, &c, 0.6).active);
    }
}
