//! Synthetic ground-truth/corrupted phantom generation.
//!
//! A clean image is multiplied by a Gaussian-decay bias field (peak gain at
//! a configurable center, emulating the brightness falloff away from a
//! receive coil) and corrupted with Rician noise — the standard magnitude
//! model `out = sqrt((x + g1)² + g2²)` with iid Gaussian g1, g2. Noise draws
//! are counter-based per pixel, so outputs are bit-identical for a fixed
//! seed no matter how the pixels are evaluated.
//!
//! The returned ground truth follows the same scale convention inference
//! uses: the bias is rescaled to mean 1 and the truth image absorbs the
//! scale, so `truth ⊙ true_bias` reproduces `clean ⊙ raw_bias` exactly and
//! corrected images are directly comparable to `truth`.

use serde::{Deserialize, Serialize};

use crate::error::{NcbcError, Result};
use crate::field::{BiasField, Field, LatentImage, LatticeDims, ObservedImage};
use crate::metrics::Roi;
use crate::rng::{gaussian_pair, mix3, unit_uniform, NOISE_TAG};

/// Gaussian-decay bias field parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasParams {
    /// Decay center in pixel coordinates (may sit between pixels or outside
    /// the image; the gain peaks at the pixel nearest to it).
    pub center: (f64, f64),
    /// Decay length scale in pixels.
    pub sigma: f64,
    /// Gain at the center.
    pub gain_max: f64,
    /// Asymptotic gain far from the center.
    pub gain_min: f64,
}

impl BiasParams {
    pub fn validate(&self) -> Result<()> {
        if !self.center.0.is_finite() || !self.center.1.is_finite() {
            return Err(NcbcError::Config("bias center must be finite".into()));
        }
        if !self.sigma.is_finite() || self.sigma <= 0.0 {
            return Err(NcbcError::Config(format!("bias sigma must be positive, got {}", self.sigma)));
        }
        if !self.gain_max.is_finite() || self.gain_max <= 0.0 {
            return Err(NcbcError::Config(format!("gain_max must be positive, got {}", self.gain_max)));
        }
        if !self.gain_min.is_finite() || self.gain_min <= 0.0 || self.gain_min > self.gain_max {
            return Err(NcbcError::Config(format!(
                "gain_min must be in (0, gain_max], got {} with gain_max {}",
                self.gain_min, self.gain_max
            )));
        }
        Ok(())
    }
}

/// Rician noise parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// Standard deviation of the underlying complex Gaussian components,
    /// in intensity units. Zero disables noise exactly.
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseParams {
    pub fn validate(&self) -> Result<()> {
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(NcbcError::Config(format!("noise sigma must be >= 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// b_s = gain_min + (gain_max − gain_min) · exp(−d(s, center)² / (2σ²)).
pub fn gaussian_bias_field(dims: LatticeDims, p: &BiasParams) -> Result<BiasField> {
    LatticeDims::new(dims.width, dims.height)?;
    p.validate()?;
    let inv = 1.0 / (2.0 * p.sigma * p.sigma);
    let span = p.gain_max - p.gain_min;
    let mut data = Vec::with_capacity(dims.nodes());
    for y in 0..dims.height {
        for x in 0..dims.width {
            let dx = x as f64 - p.center.0;
            let dy = y as f64 - p.center.1;
            data.push(p.gain_min + span * (-(dx * dx + dy * dy) * inv).exp());
        }
    }
    BiasField::new(Field::from_vec(dims, data)?)
}

/// Rician corruption: out_s = sqrt((img_s + g1)² + g2²), g1, g2 ~ N(0, σ²).
pub fn apply_rician_noise(img: &Field, n: &NoiseParams) -> Result<Field> {
    n.validate()?;
    if !img.all_finite() {
        return Err(NcbcError::Data("noise input contains non-finite values".into()));
    }
    if img.values().iter().any(|&v| v < 0.0) {
        return Err(NcbcError::Data("noise input contains negative intensities".into()));
    }
    if n.sigma == 0.0 {
        return Ok(img.clone());
    }
    let stream = n.seed ^ NOISE_TAG;
    let out = img
        .values()
        .iter()
        .enumerate()
        .map(|(s, &x)| {
            let u1 = unit_uniform(mix3(stream, s as u64, 0));
            let u2 = unit_uniform(mix3(stream, s as u64, 1));
            let (z0, z1) = gaussian_pair(u1, u2);
            let re = x + n.sigma * z0;
            let im = n.sigma * z1;
            (re * re + im * im).sqrt()
        })
        .collect();
    Field::from_vec(img.dims(), out)
}

/// Build one corrupted/ground-truth pair.
///
/// `observed = rician(clean ⊙ raw_bias)`; the returned `true_bias` is
/// `raw_bias` rescaled to mean 1 and `truth` is `clean` scaled up by the
/// same factor, matching the mean-1 convention of the reconstruction.
pub fn make_synthetic_phantom(
    clean: &ObservedImage,
    bp: &BiasParams,
    np: &NoiseParams,
) -> Result<(ObservedImage, LatentImage, BiasField)> {
    let dims = clean.dims();
    let raw = gaussian_bias_field(dims, bp)?;

    let biased: Vec<f64> = clean.values().iter().zip(raw.values()).map(|(c, b)| c * b).collect();
    let noisy = apply_rician_noise(&Field::from_vec(dims, biased)?, np)?;
    let observed = ObservedImage::new(noisy)?;

    let bias_mean = raw.field().mean();
    let true_bias =
        BiasField::new(Field::from_vec(dims, raw.values().iter().map(|b| b / bias_mean).collect())?)?;
    let truth = LatentImage::new(Field::from_vec(
        dims,
        clean.values().iter().map(|c| c * bias_mean).collect(),
    )?)?;

    Ok((observed, truth, true_bias))
}

// ---------------------------------------------------------------------------
// Procedural test card
// ---------------------------------------------------------------------------

const CARD_BACKGROUND: f64 = 0.15;
const CARD_GLAND: f64 = 0.75;
const CARD_RING: f64 = 0.45;
const CARD_CORE: f64 = 1.0;

// Ellipse semi-axes as fractions of width/height.
const GLAND_AX: (f64, f64) = (0.36, 0.30);
const RING_AX: (f64, f64) = (0.20, 0.15);
const CORE_AX: (f64, f64) = (0.09, 0.06);

/// Procedural clean image: concentric ellipses over a dark background,
/// mimicking a prostate cross-section (gland tissue with a darker
/// transition ring and a bright core). Maximum intensity is exactly 1, so
/// relative noise levels are easy to state.
pub fn test_card(dims: LatticeDims) -> Result<ObservedImage> {
    LatticeDims::new(dims.width, dims.height)?;
    if dims.width < 8 || dims.height < 8 {
        return Err(NcbcError::Config(format!(
            "test card needs at least 8x8 pixels, got {}x{}",
            dims.width, dims.height
        )));
    }
    let (w, h) = (dims.width as f64, dims.height as f64);
    let (cx, cy) = ((w - 1.0) / 2.0, (h - 1.0) / 2.0);
    let inside = |x: f64, y: f64, ax: (f64, f64)| -> bool {
        let nx = (x - cx) / (ax.0 * w);
        let ny = (y - cy) / (ax.1 * h);
        nx * nx + ny * ny <= 1.0
    };
    let mut data = Vec::with_capacity(dims.nodes());
    for y in 0..dims.height {
        for x in 0..dims.width {
            let (xf, yf) = (x as f64, y as f64);
            let v = if inside(xf, yf, CORE_AX) {
                CARD_CORE
            } else if inside(xf, yf, RING_AX) {
                CARD_RING
            } else if inside(xf, yf, GLAND_AX) {
                CARD_GLAND
            } else {
                CARD_BACKGROUND
            };
            data.push(v);
        }
    }
    ObservedImage::new(Field::from_vec(dims, data)?)
}

/// Standard ROIs for test-card experiments, derived from the card geometry:
/// "prostate" (homogeneous gland tissue, left lobe), "background"
/// (top-left corner outside the gland) and "homogeneous" (mirrored right
/// lobe). Each covers a single clean intensity level.
pub fn test_card_rois(dims: LatticeDims) -> Result<Vec<Roi>> {
    if dims.width < 32 || dims.height < 32 {
        return Err(NcbcError::Config(format!(
            "test card ROIs need at least 32x32 pixels, got {}x{}",
            dims.width, dims.height
        )));
    }
    let (w, h) = (dims.width as f64, dims.height as f64);
    let frac = |f: f64, scale: f64| (f * scale).round() as usize;

    let px = frac(0.17, w);
    let py = frac(0.42, h);
    let pw = frac(0.11, w);
    let ph = frac(0.17, h);
    let bw = frac(0.11, w);
    let bh = frac(0.11, h);
    // Mirror of the prostate box about the vertical center line.
    let hx = dims.width - 1 - (px + pw - 1);

    Ok(vec![
        Roi { name: "prostate".into(), x: px, y: py, w: pw, h: ph },
        Roi { name: "background".into(), x: 1, y: 1, w: bw, h: bh },
        Roi { name: "homogeneous".into(), x: hx, y: py, w: pw, h: ph },
    ])
}
