//! Alternating gradient-descent MAP estimation of the latent image and
//! bias field, with scale-ambiguity resolution, positivity projection,
//! and convergence diagnostics.
//!
//! Each iteration performs a Jacobi-style simultaneous update: all M
//! gradients are computed from the previous iterate and applied at once
//! (rates ρ on the unary term, η on the pairwise term, scaled by μ₁),
//! then all B gradients likewise with rate μ₂. Both fields are projected
//! onto their positive domains, the pair is renormalized to mean(B) = 1,
//! and a monotonicity guard halves the offending rate and retries once
//! whenever a half-step would increase the energy; a step that still
//! increases it is rejected outright (halved rates persist).
//!
//! Intensities are normalized internally by max(v) so the energy weights
//! are scale-free; results are reported back on the input scale. The
//! multiplicative ambiguity of v = m·b is resolved by the mean-1 bias
//! convention. Every reduction runs in a fixed order, so results are
//! bit-identical for a fixed input and configuration.

use serde::{Deserialize, Serialize};

use crate::energy::{self, EnergyWeights};
use crate::error::{NcbcError, Result};
use crate::field::{check_same_dims, BiasField, Field, LatentImage, LatticeDims, ObservedImage};
use crate::graph::{build_stochastic_graph, CliqueConfig, StochasticGraph};
use crate::rng;

/// Salt mixed into the graph seed when cliques are resampled per iteration.
const RESAMPLE_SALT: u64 = 0x6e63_6263_5f69_7472;

/// Projection floor for the bias field.
const BIAS_FLOOR: f64 = 1e-6;

/// Floor for the denominator of the relative energy change.
const REL_FLOOR: f64 = 1e-12;

/// Bias-field initialization strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasInit {
    /// Start from B = 1 everywhere.
    UniformOne,
    /// Start from the low-pass ratio: smoothed v divided by its mean.
    LowpassRatio,
}

/// Acquisition metadata carried through config files and reports. Purely
/// descriptive: reconstruction never reads it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionAnnotations {
    /// Diffusion b-values of the protocol, in s/mm².
    pub b_values_s_per_mm2: Vec<f64>,
}

impl Default for AcquisitionAnnotations {
    fn default() -> Self {
        AcquisitionAnnotations { b_values_s_per_mm2: vec![100.0, 400.0, 1000.0] }
    }
}

/// Full configuration for [`ncbc_reconstruct`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NcbcConfig {
    /// Energy weights shared by the objective and its gradients.
    pub weights: EnergyWeights,
    /// Stochastic-clique sampling parameters.
    pub clique: CliqueConfig,
    /// Overall multiplier on the M half-step.
    pub mu1: f64,
    /// Rate for the B half-step (combined gradient).
    pub mu2: f64,
    /// Rate on the unary term of the M gradient.
    pub rho: f64,
    /// Rate on the pairwise term of the M gradient.
    pub eta: f64,
    /// Iteration cap.
    pub max_iters: usize,
    /// Relative energy-change threshold for convergence.
    pub rel_tol: f64,
    /// Bias-field initialization strategy.
    pub bias_init: BiasInit,
    /// Gaussian sigma (pixels) for the `lowpass_ratio` initializer.
    pub init_smooth_sigma: f64,
    /// Seed for clique sampling.
    pub seed: u64,
    /// Descriptive acquisition metadata (echoed, never computed on).
    pub acquisition: AcquisitionAnnotations,
}

impl Default for NcbcConfig {
    fn default() -> Self {
        NcbcConfig {
            weights: EnergyWeights::default(),
            clique: CliqueConfig::default(),
            mu1: 1.0,
            mu2: 0.3,
            rho: 0.2,
            eta: 0.2,
            max_iters: 500,
            rel_tol: 1e-5,
            bias_init: BiasInit::LowpassRatio,
            init_smooth_sigma: 12.0,
            seed: 0,
            acquisition: AcquisitionAnnotations::default(),
        }
    }
}

impl NcbcConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.clique.validate()?;
        for (name, v) in
            [("mu1", self.mu1), ("mu2", self.mu2), ("rho", self.rho), ("eta", self.eta)]
        {
            if !v.is_finite() || v <= 0.0 {
                return Err(NcbcError::Config(format!("{name} must be a positive rate, got {v}")));
            }
        }
        if self.max_iters == 0 {
            return Err(NcbcError::Config("max_iters must be at least 1".into()));
        }
        if !self.rel_tol.is_finite() || self.rel_tol <= 0.0 || self.rel_tol >= 1.0 {
            return Err(NcbcError::Config(format!(
                "rel_tol must lie in (0, 1), got {}",
                self.rel_tol
            )));
        }
        if !self.init_smooth_sigma.is_finite() || self.init_smooth_sigma <= 0.0 {
            return Err(NcbcError::Config(format!(
                "init_smooth_sigma must be positive, got {}",
                self.init_smooth_sigma
            )));
        }
        if self.acquisition.b_values_s_per_mm2.iter().any(|b| !b.is_finite()) {
            return Err(NcbcError::Config(
                "acquisition.b_values_s_per_mm2 must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// Per-run convergence record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Total energy before iterating, then after every iteration.
    /// Non-increasing whenever the clique graph is held fixed.
    pub energy_trace: Vec<f64>,
    pub iters_run: usize,
    pub converged: bool,
    pub final_rel_change: f64,
    pub seed: u64,
    pub graph_edge_count: usize,
}

/// Reconstruction output: latent image, mean-1 bias field, diagnostics.
#[derive(Debug, Clone)]
pub struct NcbcResult {
    pub latent: LatentImage,
    pub bias: BiasField,
    pub diagnostics: Diagnostics,
}

/// Estimate the latent image and bias field for an observed image.
///
/// The observed image must be at least 2×2. An all-zero image returns
/// the exact degenerate answer (M = 0, B = 1) immediately.
pub fn ncbc_reconstruct(v: &ObservedImage, cfg: &NcbcConfig) -> Result<NcbcResult> {
    cfg.validate()?;
    let dims = require_min_dims(v.dims())?;
    let vmax = v.field().max();
    if vmax <= 0.0 {
        return degenerate_zero(dims, cfg);
    }
    let vn: Vec<f64> = v.values().iter().map(|x| x / vmax).collect();
    let mut b = initial_bias(&vn, dims, cfg)?;
    let m: Vec<f64> = vn.iter().zip(&b).map(|(x, bi)| x / bi).collect();
    normalize_mean_one(&mut b);
    descend(&vn, m, b, dims, cfg, vmax)
}

/// [`ncbc_reconstruct`] from caller-supplied starting fields (warm start).
///
/// The starting bias is renormalized to mean 1 (with the latent image
/// compensated) before descent, so the product m·b is preserved.
pub fn ncbc_reconstruct_with_init(
    v: &ObservedImage,
    cfg: &NcbcConfig,
    m0: &LatentImage,
    b0: &BiasField,
) -> Result<NcbcResult> {
    cfg.validate()?;
    let dims = require_min_dims(v.dims())?;
    check_same_dims(dims, m0.dims(), "initial latent image")?;
    check_same_dims(dims, b0.dims(), "initial bias field")?;
    let vmax = v.field().max();
    if vmax <= 0.0 {
        return degenerate_zero(dims, cfg);
    }
    let vn: Vec<f64> = v.values().iter().map(|x| x / vmax).collect();
    let mut m: Vec<f64> = m0.values().iter().map(|x| x / vmax).collect();
    let mut b = b0.values().to_vec();
    normalize_pair(&mut b, &mut m)?;
    descend(&vn, m, b, dims, cfg, vmax)
}

/// Rescale a bias field to mean 1, scaling the latent image inversely so
/// the pointwise product is preserved to machine precision.
pub fn normalize_bias(b: BiasField, m: LatentImage) -> Result<(BiasField, LatentImage)> {
    let dims = b.dims();
    check_same_dims(dims, m.dims(), "latent image")?;
    let mut bv = b.field().values().to_vec();
    let mut mv = m.field().values().to_vec();
    normalize_pair(&mut bv, &mut mv)?;
    Ok((
        BiasField::new(Field::from_vec(dims, bv)?)?,
        LatentImage::new(Field::from_vec(dims, mv)?)?,
    ))
}

/// Single-pass homomorphic baseline: B is the Gaussian-smoothed image
/// normalized to mean 1 (floored at 1e-6), M = v / B. No iterations.
pub fn lowpass_baseline(v: &ObservedImage, kernel_sigma: f64) -> Result<NcbcResult> {
    if !kernel_sigma.is_finite() || kernel_sigma <= 0.0 {
        return Err(NcbcError::Config(format!(
            "kernel_sigma must be positive, got {kernel_sigma}"
        )));
    }
    let dims = v.dims();
    let vmax = v.field().max();
    if vmax <= 0.0 {
        return Ok(NcbcResult {
            latent: LatentImage::new(Field::new(dims, 0.0))?,
            bias: BiasField::new(Field::new(dims, 1.0))?,
            diagnostics: Diagnostics {
                energy_trace: Vec::new(),
                iters_run: 0,
                converged: true,
                final_rel_change: 0.0,
                seed: 0,
                graph_edge_count: 0,
            },
        });
    }
    let sm = gaussian_blur(v.values(), dims, kernel_sigma);
    let mean_sm = mean_slice(&sm);
    if mean_sm <= 0.0 {
        return Err(NcbcError::Degeneracy(format!(
            "smoothed image mean {mean_sm} is not positive"
        )));
    }
    let mut b: Vec<f64> = sm.iter().map(|s| (s / mean_sm).max(BIAS_FLOOR)).collect();
    normalize_mean_one(&mut b);
    let m: Vec<f64> = v.values().iter().zip(&b).map(|(x, bi)| x / bi).collect();
    Ok(NcbcResult {
        latent: LatentImage::new(Field::from_vec(dims, m)?)?,
        bias: BiasField::new(Field::from_vec(dims, b)?)?,
        diagnostics: Diagnostics {
            energy_trace: Vec::new(),
            iters_run: 0,
            converged: true,
            final_rel_change: 0.0,
            seed: 0,
            graph_edge_count: 0,
        },
    })
}

// ---------------------------------------------------------------------------
// Internals
// ---------------------------------------------------------------------------

fn require_min_dims(dims: LatticeDims) -> Result<LatticeDims> {
    if dims.width < 2 || dims.height < 2 {
        return Err(NcbcError::Validation(format!(
            "reconstruction needs at least a 2x2 image, got {}x{}",
            dims.width, dims.height
        )));
    }
    Ok(dims)
}

fn degenerate_zero(dims: LatticeDims, cfg: &NcbcConfig) -> Result<NcbcResult> {
    let graph = build_stochastic_graph(dims, &cfg.clique, cfg.seed)?;
    Ok(NcbcResult {
        latent: LatentImage::new(Field::new(dims, 0.0))?,
        bias: BiasField::new(Field::new(dims, 1.0))?,
        diagnostics: Diagnostics {
            energy_trace: vec![0.0],
            iters_run: 0,
            converged: true,
            final_rel_change: 0.0,
            seed: cfg.seed,
            graph_edge_count: graph.edge_count(),
        },
    })
}

fn mean_slice(xs: &[f64]) -> f64 {
    let mut sum = 0.0;
    for &x in xs {
        sum += x;
    }
    sum / xs.len() as f64
}

/// Divide a positive field by its mean (no compensation).
fn normalize_mean_one(b: &mut [f64]) {
    let c = mean_slice(b);
    for x in b.iter_mut() {
        *x /= c;
    }
}

/// Renormalize (b, m) so mean(b) = 1 with the product preserved.
fn normalize_pair(b: &mut [f64], m: &mut [f64]) -> Result<f64> {
    let c = mean_slice(b);
    if !c.is_finite() || c <= 0.0 {
        return Err(NcbcError::Degeneracy(format!("bias mean {c} is not positive")));
    }
    for x in b.iter_mut() {
        *x /= c;
    }
    for x in m.iter_mut() {
        *x *= c;
    }
    Ok(c)
}

fn initial_bias(vn: &[f64], dims: LatticeDims, cfg: &NcbcConfig) -> Result<Vec<f64>> {
    match cfg.bias_init {
        BiasInit::UniformOne => Ok(vec![1.0; vn.len()]),
        BiasInit::LowpassRatio => {
            let sm = gaussian_blur(vn, dims, cfg.init_smooth_sigma);
            let mean_sm = mean_slice(&sm);
            if mean_sm <= 0.0 {
                return Err(NcbcError::Degeneracy(format!(
                    "smoothed image mean {mean_sm} is not positive"
                )));
            }
            Ok(sm.iter().map(|s| (s / mean_sm).max(BIAS_FLOOR)).collect())
        }
    }
}

#[allow(clippy::too_many_arguments)] // hot-path kernel over flat slices
fn total_energy_cached(
    m: &[f64],
    b: &[f64],
    v: &[f64],
    graph: &StochasticGraph,
    omegas: &[f64],
    alpha_u: f64,
    alpha_p1: f64,
    bias_w: f64,
) -> f64 {
    energy::unary_kernel(m, b, v, alpha_u)
        + energy::pairwise_kernel(m, b, graph, omegas, alpha_p1, bias_w)
}

fn descend(
    vn: &[f64],
    mut m: Vec<f64>,
    mut b: Vec<f64>,
    dims: LatticeDims,
    cfg: &NcbcConfig,
    vmax: f64,
) -> Result<NcbcResult> {
    let n = vn.len();
    let alpha_u = cfg.weights.alpha_u;
    let alpha_p1 = cfg.weights.alpha_p[0];
    let bias_w = cfg.weights.bias_smooth_weight;

    let mut graph = build_stochastic_graph(dims, &cfg.clique, cfg.seed)?;
    let initial_edges = graph.edge_count();
    let mut omegas = energy::omega_per_edge(vn, &graph, cfg.weights.intensity_sigma);

    let mut e_prev = total_energy_cached(&m, &b, vn, &graph, &omegas, alpha_u, alpha_p1, bias_w);
    let mut trace = vec![e_prev];

    let (mut mu1, mut mu2) = (cfg.mu1, cfg.mu2);
    let mut grad_unary = vec![0.0; n];
    let mut grad_pair = vec![0.0; n];
    let mut grad_bias = vec![0.0; n];
    let mut m_cand = vec![0.0; n];
    let mut b_cand = vec![0.0; n];

    let mut iters_run = 0;
    let mut converged = false;
    let mut final_rel_change = 0.0;

    for t in 1..=cfg.max_iters {
        if cfg.clique.resample_each_iteration {
            // Fresh cliques change the landscape; re-anchor the guard so
            // monotonicity holds within the iteration (the recorded trace
            // may still rise across resamples).
            graph =
                build_stochastic_graph(dims, &cfg.clique, rng::mix3(cfg.seed, RESAMPLE_SALT, t as u64))?;
            omegas = energy::omega_per_edge(vn, &graph, cfg.weights.intensity_sigma);
            e_prev = total_energy_cached(&m, &b, vn, &graph, &omegas, alpha_u, alpha_p1, bias_w);
        }

        // M half-step: rho on the unary gradient, eta on the pairwise one.
        energy::grad_m_parts(
            &m, &b, vn, &graph, &omegas, alpha_u, alpha_p1, &mut grad_unary, &mut grad_pair,
        );
        let mut e_mid = e_prev;
        for attempt in 0..2 {
            for i in 0..n {
                let step = mu1 * (cfg.rho * grad_unary[i] + cfg.eta * grad_pair[i]);
                m_cand[i] = (m[i] - step).max(0.0);
            }
            let e = total_energy_cached(&m_cand, &b, vn, &graph, &omegas, alpha_u, alpha_p1, bias_w);
            if e <= e_prev {
                std::mem::swap(&mut m, &mut m_cand);
                e_mid = e;
                break;
            }
            if attempt == 0 {
                mu1 *= 0.5;
            }
        }

        // B half-step, judged after renormalization so the guard sees the
        // state the iteration actually ends in.
        energy::grad_b_kernel(&m, &b, vn, &graph, alpha_u, bias_w, &mut grad_bias);
        let mut e_t = e_mid;
        for attempt in 0..2 {
            for i in 0..n {
                b_cand[i] = (b[i] - mu2 * grad_bias[i]).max(BIAS_FLOOR);
            }
            m_cand.copy_from_slice(&m);
            normalize_pair(&mut b_cand, &mut m_cand)?;
            let e = total_energy_cached(&m_cand, &b_cand, vn, &graph, &omegas, alpha_u, alpha_p1, bias_w);
            if e <= e_mid {
                std::mem::swap(&mut m, &mut m_cand);
                std::mem::swap(&mut b, &mut b_cand);
                e_t = e;
                break;
            }
            if attempt == 0 {
                mu2 *= 0.5;
            }
        }

        iters_run = t;
        trace.push(e_t);
        let rel = (e_t - e_prev).abs() / e_prev.max(REL_FLOOR);
        final_rel_change = rel;
        e_prev = e_t;
        if rel < cfg.rel_tol {
            converged = true;
            break;
        }
    }

    normalize_pair(&mut b, &mut m)?;
    let latent: Vec<f64> = m.iter().map(|x| x * vmax).collect();
    Ok(NcbcResult {
        latent: LatentImage::new(Field::from_vec(dims, latent)?)?,
        bias: BiasField::new(Field::from_vec(dims, b)?)?,
        diagnostics: Diagnostics {
            energy_trace: trace,
            iters_run,
            converged,
            final_rel_change,
            seed: cfg.seed,
            graph_edge_count: initial_edges,
        },
    })
}

/// Separable Gaussian blur with symmetric (mirror) boundary handling.
/// Kernel radius is ceil(3.5·sigma); weights are normalized to sum 1.
pub(crate) fn gaussian_blur(vals: &[f64], dims: LatticeDims, sigma: f64) -> Vec<f64> {
    let w = dims.width as i64;
    let h = dims.height as i64;
    let radius = (3.5 * sigma).ceil() as i64;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    let mut ksum = 0.0;
    for d in -radius..=radius {
        let e = (-(d * d) as f64 * inv).exp();
        kernel.push(e);
        ksum += e;
    }
    for k in kernel.iter_mut() {
        *k /= ksum;
    }

    // Reflect an index into [0, n) with period 2n (edge sample repeated).
    fn mirror(i: i64, n: i64) -> usize {
        let mut j = i.rem_euclid(2 * n);
        if j >= n {
            j = 2 * n - 1 - j;
        }
        j as usize
    }

    let mut horiz = vec![0.0; vals.len()];
    for y in 0..h {
        let row = (y * w) as usize;
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let sx = mirror(x + ki as i64 - radius, w);
                acc += k * vals[row + sx];
            }
            horiz[row + x as usize] = acc;
        }
    }
    let mut out = vec![0.0; vals.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let sy = mirror(y + ki as i64 - radius, h);
                acc += k * horiz[sy * w as usize + x as usize];
            }
            out[(y * w + x) as usize] = acc;
        }
    }
    out
}
