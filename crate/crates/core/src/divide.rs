//! Divide phase: seed selection with calibrated confidence, then growth of
//! seeds into contiguous local clusters.
//!
//! A masked position `j` carries a trajectory-guided confidence
//! `c_w(j) = c(j) * W(j)`, where `W` decays geometrically with `j` at a rate
//! set by the unmask ratio, biasing early decoding toward the left. Already
//! accepted seeds `i` suppress neighbours through the Gaussian complement
//! `D(i, j)`, in the manner of Soft-NMS; suppression from several seeds
//! composes multiplicatively.

use alloc::vec;
use alloc::vec::Vec;

use crate::config::DecodeConfig;
use crate::error::Result;
use crate::prediction::PredictionGrid;
use crate::predictor::MaskPredictor;
use crate::session::Session;
use crate::trace::EventKind;

/// Inclusive interval of window-relative positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cluster {
    pub lo: usize,
    pub hi: usize,
    pub density: f64,
    pub active: bool,
}

impl Cluster {
    pub fn new(lo: usize, hi: usize) -> Self {
        Cluster {
            lo,
            hi,
            density: 0.0,
            active: true,
        }
    }

    pub fn contains(&self, pos: usize) -> bool {
        self.lo <= pos && pos <= self.hi
    }

    pub fn interval(&self) -> (usize, usize) {
        (self.lo, self.hi)
    }

    /// Masked positions inside the interval.
    pub fn masked_members<'a>(&self, masked: &'a [bool]) -> impl Iterator<Item = usize> + 'a {
        let hi = self.hi.min(masked.len().saturating_sub(1));
        (self.lo..=hi).filter(move |&p| masked[p])
    }
}

/// Disjoint clusters sorted by `lo`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClusterSet {
    clusters: Vec<Cluster>,
}

impl ClusterSet {
    /// Sorts `clusters` and merges any that overlap or touch.
    pub fn from_clusters(mut clusters: Vec<Cluster>) -> Self {
        clusters.sort_by_key(|c| (c.lo, c.hi));
        let mut out: Vec<Cluster> = Vec::with_capacity(clusters.len());
        for c in clusters {
            match out.last_mut() {
                Some(last) if c.lo <= last.hi + 1 => last.hi = last.hi.max(c.hi),
                _ => out.push(c),
            }
        }
        ClusterSet { clusters: out }
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn iter(&self) -> core::slice::Iter<'_, Cluster> {
        self.clusters.iter()
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn intervals(&self) -> Vec<(usize, usize)> {
        self.clusters.iter().map(Cluster::interval).collect()
    }

    pub fn into_vec(self) -> Vec<Cluster> {
        self.clusters
    }
}

/// Gaussian complement `1 - exp(-|i - j|^2 / (2 sigma^2))` with
/// `sigma = n / (3 sqrt 2)`, i.e. `2 sigma^2 = n^2 / 9`.
pub fn suppression(i: usize, j: usize, n: usize) -> f64 {
    let d = i.abs_diff(j) as f64;
    let n = n as f64;
    1.0 - libm::exp(-9.0 * d * d / (n * n))
}

/// `exp(j * ln(clip(alpha * R + beta, 0, 1)) / n)`. Identically 1 when
/// trajectory guidance is disabled.
pub fn trajectory_weight(j: usize, ratio: f64, cfg: &DecodeConfig, n: usize) -> f64 {
    if !cfg.trajectory_guidance || j == 0 {
        return 1.0;
    }
    let base = (cfg.alpha * ratio + cfg.beta).clamp(0.0, 1.0);
    if base == 0.0 {
        return 0.0;
    }
    libm::exp(j as f64 * libm::log(base) / n as f64)
}

/// `c_w(j)` for every grid entry, as `(position, c_w)`.
pub fn guided_confidences(
    grid: &PredictionGrid,
    ratio: f64,
    cfg: &DecodeConfig,
    n: usize,
) -> Vec<(usize, f64)> {
    grid.iter()
        .map(|e| (e.position, e.top1_prob * trajectory_weight(e.position, ratio, cfg, n)))
        .collect()
}

/// `c_w(j) * prod_i D(i, j)` over the accepted seeds `i`, for every grid entry.
pub fn calibrated_scores(
    grid: &PredictionGrid,
    accepted_seeds: &[usize],
    ratio: f64,
    cfg: &DecodeConfig,
    n: usize,
) -> Vec<(usize, f64)> {
    guided_confidences(grid, ratio, cfg, n)
        .into_iter()
        .map(|(j, cw)| {
            let damp: f64 = accepted_seeds.iter().map(|&i| suppression(i, j, n)).product();
            (j, cw * damp)
        })
        .collect()
}

/// Greedy seed selection. Each round takes the highest calibrated score
/// (smallest position on ties) and accepts it only if its unsuppressed `c_w`
/// exceeds `tau1`; the first rejection ends selection. Returns seeds in
/// acceptance order, at most `n_seeds`.
pub fn select_seeds(grid: &PredictionGrid, ratio: f64, n: usize, cfg: &DecodeConfig) -> Vec<usize> {
    let guided = guided_confidences(grid, ratio, cfg, n);
    let mut scores: Vec<f64> = guided.iter().map(|&(_, cw)| cw).collect();
    let mut taken = vec![false; guided.len()];
    let mut seeds = Vec::new();
    while seeds.len() < cfg.n_seeds {
        let mut best: Option<usize> = None;
        for (k, &s) in scores.iter().enumerate() {
            if taken[k] {
                continue;
            }
            if best.is_none_or(|b| s > scores[b]) {
                best = Some(k);
            }
        }
        let Some(k) = best else { break };
        let (pos, cw) = guided[k];
        if !(cw > cfg.tau1) {
            break;
        }
        taken[k] = true;
        seeds.push(pos);
        for (idx, s) in scores.iter_mut().enumerate() {
            *s *= suppression(pos, guided[idx].0, n);
        }
    }
    seeds
}

/// Grows each seed into a cluster and merges the result with `existing`.
///
/// `guided[j]` is `c_w(j)` for masked `j` and `None` otherwise; `masked` is
/// the current mask flags. A seed inside an existing cluster grows from that
/// cluster's boundaries, any other seed from itself. Growth absorbs masked
/// neighbours with `c_w > tau1` one at a time per side and passes over the
/// seeds just unmasked; it stops at the first failure. Clusters left without
/// masked members are dropped, and each survivor's density is the mean `c_w`
/// over its masked members.
pub fn expand_and_merge(
    seeds: &[usize],
    guided: &[Option<f64>],
    masked: &[bool],
    existing: &ClusterSet,
    tau1: f64,
) -> ClusterSet {
    expand_and_merge_counted(seeds, guided, masked, existing, tau1).0
}

fn expand_and_merge_counted(
    seeds: &[usize],
    guided: &[Option<f64>],
    masked: &[bool],
    existing: &ClusterSet,
    tau1: f64,
) -> (ClusterSet, usize) {
    let n = masked.len();
    let passable = |p: usize| {
        if masked[p] {
            guided[p].is_some_and(|cw| cw > tau1)
        } else {
            seeds.contains(&p)
        }
    };
    let mut pending: Vec<Cluster> = existing.clusters.clone();
    let mut grown: Vec<Cluster> = Vec::new();
    for &seed in seeds {
        let start = match pending.iter().position(|c| c.contains(seed)) {
            Some(k) => pending.swap_remove(k),
            None => match grown.iter().position(|c| c.contains(seed)) {
                Some(k) => grown.swap_remove(k),
                None => Cluster::new(seed, seed),
            },
        };
        let (mut lo, mut hi) = (start.lo, start.hi);
        while lo > 0 && passable(lo - 1) {
            lo -= 1;
        }
        while hi + 1 < n && passable(hi + 1) {
            hi += 1;
        }
        grown.push(Cluster::new(lo, hi));
    }
    pending.extend(grown);
    let before = pending.len();
    let merged = ClusterSet::from_clusters(pending);
    let merges = before - merged.len();
    let clusters = merged
        .clusters
        .into_iter()
        .filter_map(|mut c| {
            let (sum, count) = c
                .masked_members(masked)
                .fold((0.0, 0usize), |(s, k), p| (s + guided[p].unwrap_or(0.0), k + 1));
            (count > 0).then(|| {
                c.density = sum / count as f64;
                c.active = true;
                c
            })
        })
        .collect();
    (ClusterSet { clusters }, merges)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivideOutcome {
    /// Clusters handed to Conquer.
    pub clusters: ClusterSet,
    /// Window unmask ratio at the start of the last seeding pass.
    pub ratio: f64,
    pub iterations: usize,
    /// Whether the clusters come from the iteration-limit fallback.
    pub fallback: bool,
}

/// Runs up to `t_max` exploratory iterations over the session's window.
///
/// Each iteration takes a forward pass, selects and unmasks seeds, takes a
/// fresh pass, then expands and merges clusters from the updated `c_w`. The
/// phase ends as soon as some cluster's density reaches `tau2`, returning
/// those clusters. If the limit is hit first, the single densest cluster is
/// returned instead (flagged with a `fallback` event), or nothing when no
/// cluster formed.
pub fn divide_phase<P: MaskPredictor + ?Sized>(
    session: &mut Session<'_, P>,
    cfg: &DecodeConfig,
) -> Result<DivideOutcome> {
    let n = session.window_len();
    let mut clusters = ClusterSet::default();
    let mut ratio = session.window_ratio();
    let mut iterations = 0;
    while iterations < cfg.t_max && session.window_has_masks() {
        iterations += 1;
        let grid = session.forward()?;
        ratio = session.window_ratio();
        let seeds = select_seeds(&grid, ratio, n, cfg);
        if !seeds.is_empty() {
            session.emit(EventKind::SeedAccept, |ev| {
                for &s in &seeds {
                    let e = grid.get(s);
                    ev.positions.push(s);
                    ev.tokens.push(e.map_or(0, |e| e.argmax_token));
                    ev.confidences.push(
                        e.map_or(0.0, |e| e.top1_prob * trajectory_weight(s, ratio, cfg, n)),
                    );
                }
            });
            session.unmask(&seeds)?;
        }
        if !session.window_has_masks() {
            return Ok(DivideOutcome {
                clusters: ClusterSet::default(),
                ratio,
                iterations,
                fallback: false,
            });
        }

        let grid = session.forward()?;
        let mut guided = vec![None; n];
        for (p, cw) in guided_confidences(&grid, ratio, cfg, n) {
            guided[p] = Some(cw);
        }
        let masked = session.window_masks();
        let (next, merges) = expand_and_merge_counted(&seeds, &guided, &masked, &clusters, cfg.tau1);
        clusters = next;
        session.emit(EventKind::ClusterForm, |ev| {
            ev.positions = seeds.clone();
            ev.clusters = clusters.intervals();
            ev.confidences = clusters.iter().map(|c| c.density).collect();
        });
        if merges > 0 {
            session.emit(EventKind::ClusterMerge, |ev| {
                ev.clusters = clusters.intervals();
            });
        }

        let ready: Vec<Cluster> = clusters
            .iter()
            .copied()
            .filter(|c| c.density >= cfg.tau2)
            .collect();
        if !ready.is_empty() {
            return Ok(DivideOutcome {
                clusters: ClusterSet { clusters: ready },
                ratio,
                iterations,
                fallback: false,
            });
        }
    }

    let best = clusters
        .iter()
        .copied()
        .fold(None::<Cluster>, |best, c| match best {
            Some(b) if b.density >= c.density => Some(b),
            _ => Some(c),
        });
    let Some(best) = best else {
        return Ok(DivideOutcome {
            clusters: ClusterSet::default(),
            ratio,
            iterations,
            fallback: false,
        });
    };
    session.emit(EventKind::Fallback, |ev| {
        ev.clusters.push(best.interval());
        ev.confidences.push(best.density);
    });
    Ok(DivideOutcome {
        clusters: ClusterSet {
            clusters: vec![best],
        },
        ratio,
        iterations,
        fallback: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prediction::PositionPrediction;
    use approx::assert_abs_diff_eq;

    fn grid_of(conf: &[(usize, f64)]) -> PredictionGrid {
        PredictionGrid::new(
            conf.iter()
                .map(|&(p, c)| PositionPrediction::point(p, 0, c, 0.0, -1.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn suppression_values() {
        assert_eq!(suppression(5, 5, 12), 0.0);
        assert_abs_diff_eq!(suppression(0, 4, 12), 0.632120558828557678, epsilon = 1e-14);
        assert_abs_diff_eq!(suppression(12, 0, 12), 0.999876590195913320, epsilon = 1e-14);
    }

    #[test]
    fn trajectory_weight_values() {
        let cfg = DecodeConfig::default();
        assert_eq!(trajectory_weight(0, 0.3, &cfg, 12), 1.0);
        assert_abs_diff_eq!(trajectory_weight(6, 0.5, &cfg, 12), 0.547722557505166113, epsilon = 1e-14);
        assert_abs_diff_eq!(trajectory_weight(11, 1.0, &cfg, 12), 0.578094892047196105, epsilon = 1e-14);
        let no_tg = DecodeConfig {
            trajectory_guidance: false,
            ..cfg.clone()
        };
        assert_eq!(trajectory_weight(11, 0.0, &no_tg, 12), 1.0);
        let zero_base = DecodeConfig { beta: 0.0, ..cfg };
        assert_eq!(trajectory_weight(0, 0.0, &zero_base, 12), 1.0);
        assert_eq!(trajectory_weight(3, 0.0, &zero_base, 12), 0.0);
    }

    #[test]
    fn calibrated_scores_compose_factors() {
        let cfg = DecodeConfig::default();
        let g = grid_of(&[(3, 0.7), (5, 0.8)]);
        let plain = calibrated_scores(&g, &[], 0.0, &cfg, 12);
        assert_abs_diff_eq!(plain[0].1, 0.7 * trajectory_weight(3, 0.0, &cfg, 12), epsilon = 1e-15);
        let s = calibrated_scores(&g, &[0, 11], 0.0, &cfg, 12);
        assert_abs_diff_eq!(s[1].1, 0.162354414001533547, epsilon = 1e-14);
        let at_seed = calibrated_scores(&g, &[5], 0.0, &cfg, 12);
        assert_eq!(at_seed[1].1, 0.0);
    }

    #[test]
    fn seeds_rejected_below_tau1() {
        let cfg = DecodeConfig::default();
        let g = grid_of(&[(0, 0.3), (1, 0.2), (4, 0.1)]);
        assert!(select_seeds(&g, 0.0, 12, &cfg).is_empty());
    }

    #[test]
    fn far_seed_needs_high_ratio() {
        let cfg = DecodeConfig::default();
        let mut conf: Vec<(usize, f64)> = (1..11).map(|p| (p, 0.01)).collect();
        conf.insert(0, (0, 0.9));
        conf.push((11, 0.9));
        let g = grid_of(&conf);
        // c_w(11) at R = 0 is 0.0578 < tau1, so selection stops after seed 0
        assert_eq!(select_seeds(&g, 0.0, 12, &cfg), vec![0]);
        // at R = 0.9 the base is 0.5 and c_w(11) = 0.4768
        assert_eq!(select_seeds(&g, 0.9, 12, &cfg), vec![0, 11]);
    }

    #[test]
    fn seed_count_is_capped() {
        let cfg = DecodeConfig {
            n_seeds: 2,
            trajectory_guidance: false,
            ..DecodeConfig::default()
        };
        let g = grid_of(&(0..12).map(|p| (p, 0.95)).collect::<Vec<_>>());
        let seeds = select_seeds(&g, 0.0, 12, &cfg);
        assert_eq!(seeds.len(), 2);
        assert_eq!(seeds[0], 0);
        assert_eq!(seeds[1], 11);
    }

    fn guided_vec(n: usize, vals: &[(usize, f64)]) -> Vec<Option<f64>> {
        let mut g = vec![None; n];
        for &(p, v) in vals {
            g[p] = Some(v);
        }
        g
    }

    #[test]
    fn lone_seed_without_support_is_dropped() {
        let mut masked = vec![true; 12];
        masked[5] = false;
        let guided = guided_vec(12, &(0..12).filter(|&p| p != 5).map(|p| (p, 0.2)).collect::<Vec<_>>());
        let out = expand_and_merge(&[5], &guided, &masked, &ClusterSet::default(), 0.3);
        assert!(out.is_empty());
    }

    #[test]
    fn seed_grows_until_first_failure() {
        let mut masked = vec![true; 12];
        masked[5] = false;
        let mut vals: Vec<(usize, f64)> = (0..12).filter(|&p| p != 5).map(|p| (p, 0.9)).collect();
        for v in vals.iter_mut() {
            if v.0 == 2 || v.0 == 8 {
                v.1 = 0.3;
            }
        }
        let guided = guided_vec(12, &vals);
        let out = expand_and_merge(&[5], &guided, &masked, &ClusterSet::default(), 0.3);
        assert_eq!(out.intervals(), vec![(3, 7)]);
        assert_abs_diff_eq!(out.clusters()[0].density, 0.9, epsilon = 1e-12);
    }

    #[test]
    fn overlapping_growth_merges() {
        let merged = ClusterSet::from_clusters(vec![Cluster::new(5, 9), Cluster::new(2, 5)]);
        assert_eq!(merged.intervals(), vec![(2, 9)]);
        let touching = ClusterSet::from_clusters(vec![Cluster::new(0, 1), Cluster::new(2, 3), Cluster::new(6, 6)]);
        assert_eq!(touching.intervals(), vec![(0, 3), (6, 6)]);
    }

    #[test]
    fn seed_inside_existing_cluster_grows_from_its_bounds() {
        let n = 12;
        let mut masked = vec![true; n];
        masked[6] = false;
        masked[1] = false;
        let guided = guided_vec(
            n,
            &(0..n).filter(|&p| masked[p]).map(|p| (p, if p == 2 || p == 10 { 0.1 } else { 0.8 })).collect::<Vec<_>>(),
        );
        let existing = ClusterSet::from_clusters(vec![Cluster::new(4, 7)]);
        let out = expand_and_merge(&[6], &guided, &masked, &existing, 0.3);
        assert_eq!(out.intervals(), vec![(3, 9)]);
    }
}
