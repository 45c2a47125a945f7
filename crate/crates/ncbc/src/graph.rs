//! Stochastic fully-connected clique sampling on the pixel lattice.
//!
//! Full pairwise connectivity is approximated by sampling: every pair
//! (s, s′) is an edge independently with probability
//! `p = base_prob · exp(−d² / (2·spatial_sigma²))`, so long-range
//! interactions exist but thin out with distance. The local 4-neighborhood
//! can be forced on top so the graph always stays connected, and a per-node
//! degree cap (nearest partners retained first) bounds memory on large
//! lattices.
//!
//! Sampling is counter-based: the coin for pair (s, t) is a hash of
//! `(seed, s, t)`, never a sequential draw, so the edge set is a pure
//! function of `(dims, cfg, seed)` regardless of scan order or threading.

use serde::{Deserialize, Serialize};

use crate::error::{NcbcError, Result};
use crate::field::LatticeDims;
use crate::rng::{mix3, unit_uniform, EDGE_TAG};

/// Uniform draws are ≥ 2⁻⁵³, so pairs with p ≤ 2⁻⁵³ can never be sampled.
/// This bounds the scan window exactly — it is not an approximation.
const MIN_UNIFORM: f64 = 1.0 / 9007199254740992.0;

/// Parameters of the stochastic clique distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliqueConfig {
    /// Inclusion probability at distance 0 (before the Gaussian decay).
    pub base_prob: f64,
    /// Length scale of the distance decay, in pixels.
    pub spatial_sigma: f64,
    /// Cap on *sampled* edges per node; forced local edges sit on top,
    /// so total degree ≤ max_degree + 4.
    pub max_degree: usize,
    /// Always include the 4-neighborhood regardless of sampling.
    pub include_local_4: bool,
    /// Redraw the clique set every optimizer iteration instead of once per run.
    pub resample_each_iteration: bool,
}

impl Default for CliqueConfig {
    fn default() -> Self {
        CliqueConfig {
            base_prob: 0.35,
            spatial_sigma: 2.5,
            max_degree: 48,
            include_local_4: true,
            resample_each_iteration: false,
        }
    }
}

impl CliqueConfig {
    /// `base_prob = 0` is allowed and means "forced edges only".
    pub fn validate(&self) -> Result<()> {
        if !self.base_prob.is_finite() || !(0.0..=1.0).contains(&self.base_prob) {
            return Err(NcbcError::Config(format!(
                "clique.base_prob must be in [0, 1], got {}",
                self.base_prob
            )));
        }
        if !self.spatial_sigma.is_finite() || self.spatial_sigma <= 0.0 {
            return Err(NcbcError::Config(format!(
                "clique.spatial_sigma must be positive, got {}",
                self.spatial_sigma
            )));
        }
        if self.max_degree < 4 {
            return Err(NcbcError::Config(format!(
                "clique.max_degree must be at least 4, got {}",
                self.max_degree
            )));
        }
        Ok(())
    }
}

/// One sampled pair. Endpoints satisfy `s < t`; `spatial_w` is the
/// distance factor exp(−d²/(2·spatial_sigma²)) the pairwise potential uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub s: u32,
    pub t: u32,
    pub dist2: u32,
    pub spatial_w: f64,
}

impl Edge {
    #[inline]
    pub fn dist(&self) -> f64 {
        (self.dist2 as f64).sqrt()
    }
}

/// The sampled clique set, with a CSR adjacency view for per-node loops.
#[derive(Debug, Clone)]
pub struct StochasticGraph {
    dims: LatticeDims,
    cfg: CliqueConfig,
    seed: u64,
    edges: Vec<Edge>,
    adj_offsets: Vec<usize>,
    /// (partner node, edge index), sorted by partner within each node.
    adj: Vec<(u32, u32)>,
}

/// Sample the clique set for `dims` under `cfg`, deterministically in `seed`.
pub fn build_stochastic_graph(
    dims: LatticeDims,
    cfg: &CliqueConfig,
    seed: u64,
) -> Result<StochasticGraph> {
    LatticeDims::new(dims.width, dims.height)?;
    cfg.validate()?;

    let (w, h) = (dims.width, dims.height);
    let sigma2x2 = 2.0 * cfg.spatial_sigma * cfg.spatial_sigma;

    // Largest d² any sampled pair can have: beyond it p ≤ 2⁻⁵³ and the
    // uniform can never land below p. Forced local edges (d² = 1) are
    // covered separately, so the table always spans at least d² = 1.
    let max_d2_lattice = (w - 1) * (w - 1) + (h - 1) * (h - 1);
    let sample_cutoff = if cfg.base_prob > 0.0 {
        let bound = sigma2x2 * (cfg.base_prob.ln() + 53.0 * std::f64::consts::LN_2);
        if bound <= 0.0 { 0 } else { (bound.ceil() as usize).min(max_d2_lattice) }
    } else {
        0
    };
    let table_len = sample_cutoff.max(1) + 1;
    let mut spatial_w_by_d2 = vec![0.0f64; table_len];
    let mut p_by_d2 = vec![0.0f64; table_len];
    for d2 in 1..table_len {
        let sw = (-(d2 as f64) / sigma2x2).exp();
        spatial_w_by_d2[d2] = sw;
        let p = cfg.base_prob * sw;
        p_by_d2[d2] = if p > MIN_UNIFORM { p } else { 0.0 };
    }

    let radius = (sample_cutoff as f64).sqrt().floor() as usize;
    let edge_seed = seed ^ EDGE_TAG;

    // Candidate sampled pairs. The (dy, dx) scan only visits pairs with
    // t > s, so each unordered pair gets exactly one coin.
    let mut cand: Vec<(u32, u32, u32)> = Vec::new(); // (s, t, d2)
    if sample_cutoff >= 1 {
        for y in 0..h {
            for x in 0..w {
                let s = dims.index(x, y);
                for dy in 0..=radius.min(h - 1 - y) {
                    let dx_lo = if dy == 0 { 1i64 } else { -(radius.min(x) as i64) };
                    let dx_hi = radius.min(w - 1 - x) as i64;
                    for dx in dx_lo..=dx_hi {
                        let d2 = (dx * dx) as usize + dy * dy;
                        if d2 > sample_cutoff {
                            continue;
                        }
                        // Forced pairs are not part of the sampling domain.
                        if cfg.include_local_4 && d2 == 1 {
                            continue;
                        }
                        let p = p_by_d2[d2];
                        if p == 0.0 {
                            continue;
                        }
                        let t = dims.index((x as i64 + dx) as usize, y + dy);
                        let u = unit_uniform(mix3(edge_seed, s as u64, t as u64));
                        if u < p {
                            cand.push((s as u32, t as u32, d2 as u32));
                        }
                    }
                }
            }
        }
    }

    // Degree cap over sampled edges: each node votes for its max_degree
    // nearest candidates (ties broken by partner index); an edge survives
    // only with both votes, which keeps the cap sharp and the set symmetric.
    let n = dims.nodes();
    let mut degree = vec![0u32; n];
    for &(s, t, _) in &cand {
        degree[s as usize] += 1;
        degree[t as usize] += 1;
    }
    let kept: Vec<(u32, u32, u32)> = if degree.iter().any(|&d| d as usize > cfg.max_degree) {
        let mut votes = vec![0u8; cand.len()];
        let mut incident: Vec<Vec<u32>> = vec![Vec::new(); n];
        for (i, &(s, t, _)) in cand.iter().enumerate() {
            incident[s as usize].push(i as u32);
            incident[t as usize].push(i as u32);
        }
        for (node, ids) in incident.iter_mut().enumerate() {
            if ids.len() > cfg.max_degree {
                ids.sort_unstable_by_key(|&i| {
                    let (s, t, d2) = cand[i as usize];
                    let partner = if s as usize == node { t } else { s };
                    (d2, partner)
                });
            }
            for &i in ids.iter().take(cfg.max_degree) {
                votes[i as usize] += 1;
            }
        }
        cand.iter()
            .zip(&votes)
            .filter(|&(_, &v)| v == 2)
            .map(|(&e, _)| e)
            .collect()
    } else {
        cand
    };

    let mut edges: Vec<Edge> = kept
        .into_iter()
        .map(|(s, t, d2)| Edge { s, t, dist2: d2, spatial_w: spatial_w_by_d2[d2 as usize] })
        .collect();

    if cfg.include_local_4 {
        let local_w = spatial_w_by_d2[1];
        for y in 0..h {
            for x in 0..w {
                let s = dims.index(x, y) as u32;
                if x + 1 < w {
                    edges.push(Edge { s, t: s + 1, dist2: 1, spatial_w: local_w });
                }
                if y + 1 < h {
                    edges.push(Edge { s, t: s + w as u32, dist2: 1, spatial_w: local_w });
                }
            }
        }
    }

    edges.sort_unstable_by_key(|e| (e.s, e.t));

    // CSR adjacency. Filling smaller partners first (scan 1) and larger
    // partners second (scan 2) leaves each node's list sorted by partner
    // without a per-node sort, because the edge list is (s, t)-ordered.
    let mut counts = vec![0usize; n + 1];
    for e in &edges {
        counts[e.s as usize + 1] += 1;
        counts[e.t as usize + 1] += 1;
    }
    for i in 0..n {
        counts[i + 1] += counts[i];
    }
    let adj_offsets = counts.clone();
    let mut cursor = counts;
    let mut adj = vec![(0u32, 0u32); 2 * edges.len()];
    for (i, e) in edges.iter().enumerate() {
        adj[cursor[e.t as usize]] = (e.s, i as u32);
        cursor[e.t as usize] += 1;
    }
    for (i, e) in edges.iter().enumerate() {
        adj[cursor[e.s as usize]] = (e.t, i as u32);
        cursor[e.s as usize] += 1;
    }

    Ok(StochasticGraph { dims, cfg: cfg.clone(), seed, edges, adj_offsets, adj })
}

impl StochasticGraph {
    #[inline]
    pub fn dims(&self) -> LatticeDims {
        self.dims
    }

    #[inline]
    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn cfg(&self) -> &CliqueConfig {
        &self.cfg
    }

    #[inline]
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    #[inline]
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// (partner, edge index) pairs of node `s`, sorted by partner.
    #[inline]
    pub fn adjacency(&self, s: usize) -> &[(u32, u32)] {
        &self.adj[self.adj_offsets[s]..self.adj_offsets[s + 1]]
    }

    /// Partners of `s` with their Euclidean distances, sorted by node index.
    pub fn neighbors(&self, s: usize) -> Result<Vec<(usize, f64)>> {
        if s >= self.dims.nodes() {
            return Err(NcbcError::Index(format!(
                "node {s} out of range for {}x{} lattice",
                self.dims.width, self.dims.height
            )));
        }
        Ok(self
            .adjacency(s)
            .iter()
            .map(|&(p, e)| (p as usize, self.edges[e as usize].dist()))
            .collect())
    }
}
