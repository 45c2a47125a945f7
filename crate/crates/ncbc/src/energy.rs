//! The joint CRF energy and its analytic gradients.
//!
//! For observed image V, latent image M, and bias field B over a sampled
//! clique set C:
//!
//! ```text
//! E(M, B) = Σ_s  α_u · (v_s − m_s·b_s)²
//!         + Σ_{(s,s′)∈C}  α_p1 · ω(s,s′) · (m_s − m_s′)²
//!         + Σ_{(s,s′)∈C}  w_b · (b_s − b_s′)²
//!
//! ω(s,s′) = exp(−(v_s − v_s′)² / (2·intensity_sigma²))
//!         · exp(−d(s,s′)²     / (2·spatial_sigma²))
//! ```
//!
//! The unary term is the data fidelity of the multiplicative forward model;
//! the ω-weighted term smooths M bilaterally (similar observed intensities
//! at small distances smooth hardest, so edges survive); the unweighted term
//! pushes B toward the low-frequency fields bias physically is.
//!
//! Every sum runs in a fixed order — raster order over nodes, index order
//! over edges — so energies and gradients are bit-stable across runs and
//! thread counts.

use serde::{Deserialize, Serialize};

use crate::error::{NcbcError, Result};
use crate::field::{check_same_dims, BiasField, LatentImage, ObservedImage};
use crate::graph::StochasticGraph;

/// Weights of the energy terms.
///
/// `alpha_p` is a list to leave room for additional pairwise feature
/// families; the shipped energy uses `alpha_p[0]` for the M-smoothness
/// term, and `bias_smooth_weight` for the B-smoothness term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyWeights {
    pub alpha_u: f64,
    pub alpha_p: Vec<f64>,
    /// Bandwidth of the intensity-similarity factor of ω, in units of the
    /// (internally max-normalized) observed intensity scale.
    pub intensity_sigma: f64,
    pub bias_smooth_weight: f64,
}

impl Default for EnergyWeights {
    fn default() -> Self {
        EnergyWeights {
            alpha_u: 1.0,
            alpha_p: vec![0.35],
            intensity_sigma: 0.12,
            bias_smooth_weight: 6.0,
        }
    }
}

impl EnergyWeights {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha_u.is_finite() || self.alpha_u < 0.0 {
            return Err(NcbcError::Config(format!(
                "weights.alpha_u must be finite and >= 0, got {}",
                self.alpha_u
            )));
        }
        if self.alpha_p.is_empty() {
            return Err(NcbcError::Config("weights.alpha_p must contain at least one weight".into()));
        }
        for (k, &a) in self.alpha_p.iter().enumerate() {
            if !a.is_finite() || a < 0.0 {
                return Err(NcbcError::Config(format!(
                    "weights.alpha_p[{k}] must be finite and >= 0, got {a}"
                )));
            }
        }
        if !self.intensity_sigma.is_finite() || self.intensity_sigma <= 0.0 {
            return Err(NcbcError::Config(format!(
                "weights.intensity_sigma must be positive, got {}",
                self.intensity_sigma
            )));
        }
        if !self.bias_smooth_weight.is_finite() || self.bias_smooth_weight < 0.0 {
            return Err(NcbcError::Config(format!(
                "weights.bias_smooth_weight must be finite and >= 0, got {}",
                self.bias_smooth_weight
            )));
        }
        if self.alpha_u == 0.0 && self.alpha_p[0] == 0.0 && self.bias_smooth_weight == 0.0 {
            return Err(NcbcError::Config("at least one energy weight must be positive".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Slice-level kernels. Inference reuses these directly with a precomputed ω
// cache (v is fixed while optimizing, so ω never changes); the public
// operations below wrap them with validation. Both paths therefore compute
// identical bits.
// ---------------------------------------------------------------------------

/// ω per edge, in edge-index order.
pub(crate) fn omega_per_edge(v: &[f64], graph: &StochasticGraph, intensity_sigma: f64) -> Vec<f64> {
    let inv = 1.0 / (2.0 * intensity_sigma * intensity_sigma);
    graph
        .edges()
        .iter()
        .map(|e| {
            let dv = v[e.s as usize] - v[e.t as usize];
            e.spatial_w * (-(dv * dv) * inv).exp()
        })
        .collect()
}

pub(crate) fn unary_kernel(m: &[f64], b: &[f64], v: &[f64], alpha_u: f64) -> f64 {
    let mut acc = 0.0;
    for s in 0..v.len() {
        let r = v[s] - m[s] * b[s];
        acc += alpha_u * (r * r);
    }
    acc
}

pub(crate) fn pairwise_kernel(
    m: &[f64],
    b: &[f64],
    graph: &StochasticGraph,
    omegas: &[f64],
    alpha_p1: f64,
    bias_w: f64,
) -> f64 {
    let mut acc = 0.0;
    for (e, &w) in graph.edges().iter().zip(omegas) {
        let dm = m[e.s as usize] - m[e.t as usize];
        let db = b[e.s as usize] - b[e.t as usize];
        acc += alpha_p1 * w * (dm * dm) + bias_w * (db * db);
    }
    acc
}

/// Unary and pairwise parts of ∂E/∂m, written separately so the optimizer
/// can rate them independently.
#[allow(clippy::too_many_arguments)] // hot-path kernel over flat slices
pub(crate) fn grad_m_parts(
    m: &[f64],
    b: &[f64],
    v: &[f64],
    graph: &StochasticGraph,
    omegas: &[f64],
    alpha_u: f64,
    alpha_p1: f64,
    out_unary: &mut [f64],
    out_pair: &mut [f64],
) {
    for s in 0..v.len() {
        out_unary[s] = -2.0 * alpha_u * b[s] * (v[s] - m[s] * b[s]);
        let mut acc = 0.0;
        for &(t, e) in graph.adjacency(s) {
            acc += omegas[e as usize] * (m[s] - m[t as usize]);
        }
        out_pair[s] = 2.0 * alpha_p1 * acc;
    }
}

pub(crate) fn grad_b_kernel(
    m: &[f64],
    b: &[f64],
    v: &[f64],
    graph: &StochasticGraph,
    alpha_u: f64,
    bias_w: f64,
    out: &mut [f64],
) {
    for s in 0..v.len() {
        let mut acc = 0.0;
        for &(t, _) in graph.adjacency(s) {
            acc += b[s] - b[t as usize];
        }
        out[s] = -2.0 * alpha_u * m[s] * (v[s] - m[s] * b[s]) + 2.0 * bias_w * acc;
    }
}

// ---------------------------------------------------------------------------
// Public operations
// ---------------------------------------------------------------------------

fn validate_inputs(
    m: &LatentImage,
    b: &BiasField,
    v: &ObservedImage,
    w: &EnergyWeights,
) -> Result<()> {
    w.validate()?;
    check_same_dims(v.dims(), m.dims(), "latent image")?;
    check_same_dims(v.dims(), b.dims(), "bias field")?;
    Ok(())
}

fn validate_graph(v: &ObservedImage, graph: &StochasticGraph) -> Result<()> {
    check_same_dims(v.dims(), graph.dims(), "clique graph")
}

/// Data-fidelity term: Σ_s α_u · (v_s − m_s·b_s)².
pub fn unary_energy(
    m: &LatentImage,
    b: &BiasField,
    v: &ObservedImage,
    w: &EnergyWeights,
) -> Result<f64> {
    validate_inputs(m, b, v, w)?;
    Ok(unary_kernel(m.values(), b.values(), v.values(), w.alpha_u))
}

/// Smoothness term over the sampled cliques (see the module formula).
pub fn pairwise_energy(
    m: &LatentImage,
    b: &BiasField,
    v: &ObservedImage,
    graph: &StochasticGraph,
    w: &EnergyWeights,
) -> Result<f64> {
    validate_inputs(m, b, v, w)?;
    validate_graph(v, graph)?;
    let omegas = omega_per_edge(v.values(), graph, w.intensity_sigma);
    Ok(pairwise_kernel(m.values(), b.values(), graph, &omegas, w.alpha_p[0], w.bias_smooth_weight))
}

/// Full energy: unary + pairwise, summed in that fixed order.
pub fn total_energy(
    m: &LatentImage,
    b: &BiasField,
    v: &ObservedImage,
    graph: &StochasticGraph,
    w: &EnergyWeights,
) -> Result<f64> {
    validate_inputs(m, b, v, w)?;
    validate_graph(v, graph)?;
    let omegas = omega_per_edge(v.values(), graph, w.intensity_sigma);
    let u = unary_kernel(m.values(), b.values(), v.values(), w.alpha_u);
    let p = pairwise_kernel(m.values(), b.values(), graph, &omegas, w.alpha_p[0], w.bias_smooth_weight);
    Ok(u + p)
}

/// ∂E/∂m_s = −2·α_u·b_s·(v_s − m_s·b_s) + 2·α_p1·Σ_{s′} ω(s,s′)·(m_s − m_s′).
pub fn grad_m(
    m: &LatentImage,
    b: &BiasField,
    v: &ObservedImage,
    graph: &StochasticGraph,
    w: &EnergyWeights,
) -> Result<Vec<f64>> {
    validate_inputs(m, b, v, w)?;
    validate_graph(v, graph)?;
    let n = v.values().len();
    let omegas = omega_per_edge(v.values(), graph, w.intensity_sigma);
    let mut gu = vec![0.0; n];
    let mut gp = vec![0.0; n];
    grad_m_parts(
        m.values(),
        b.values(),
        v.values(),
        graph,
        &omegas,
        w.alpha_u,
        w.alpha_p[0],
        &mut gu,
        &mut gp,
    );
    Ok(gu.iter().zip(&gp).map(|(a, b)| a + b).collect())
}

/// ∂E/∂b_s = −2·α_u·m_s·(v_s − m_s·b_s) + 2·w_b·Σ_{s′} (b_s − b_s′).
pub fn grad_b(
    m: &LatentImage,
    b: &BiasField,
    v: &ObservedImage,
    graph: &StochasticGraph,
    w: &EnergyWeights,
) -> Result<Vec<f64>> {
    validate_inputs(m, b, v, w)?;
    validate_graph(v, graph)?;
    let mut out = vec![0.0; v.values().len()];
    grad_b_kernel(m.values(), b.values(), v.values(), graph, w.alpha_u, w.bias_smooth_weight, &mut out);
    Ok(out)
}
