//! Lattice geometry and scalar fields over it.
//!
//! All images in this crate are row-major `f64` fields on a 2D pixel
//! lattice. Node index `s = y * width + x`, so iterating `0..nodes()` walks
//! the image in raster order — the fixed order every reduction in the crate
//! uses.

use crate::error::{NcbcError, Result};

/// Width/height of the pixel lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatticeDims {
    pub width: usize,
    pub height: usize,
}

impl LatticeDims {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(NcbcError::Config(format!(
                "lattice dims must be at least 1x1, got {width}x{height}"
            )));
        }
        // Node indices are stored as u32 in graph edges.
        let nodes = width.checked_mul(height).filter(|&n| n <= u32::MAX as usize);
        if nodes.is_none() {
            return Err(NcbcError::Config(format!(
                "lattice {width}x{height} exceeds the supported node count"
            )));
        }
        Ok(LatticeDims { width, height })
    }

    #[inline]
    pub fn nodes(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    /// Inverse of `index`.
    #[inline]
    pub fn coords(&self, s: usize) -> (usize, usize) {
        (s % self.width, s / self.width)
    }
}

/// A scalar value per lattice node, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    dims: LatticeDims,
    data: Vec<f64>,
}

impl Field {
    pub fn new(dims: LatticeDims, fill: f64) -> Self {
        Field { dims, data: vec![fill; dims.nodes()] }
    }

    pub fn from_vec(dims: LatticeDims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.nodes() {
            return Err(NcbcError::Data(format!(
                "field payload has {} values but {}x{} needs {}",
                data.len(),
                dims.width,
                dims.height,
                dims.nodes()
            )));
        }
        Ok(Field { dims, data })
    }

    #[inline]
    pub fn dims(&self) -> LatticeDims {
        self.dims
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[self.dims.index(x, y)]
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Mean over all nodes (fixed raster summation order).
    pub fn mean(&self) -> f64 {
        let mut acc = 0.0;
        for &v in &self.data {
            acc += v;
        }
        acc / self.data.len() as f64
    }

    /// Maximum over all nodes.
    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// The corrupted acquisition `V`: finite and nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedImage(Field);

impl ObservedImage {
    pub fn new(field: Field) -> Result<Self> {
        if !field.all_finite() {
            return Err(NcbcError::Data("observed image contains non-finite values".into()));
        }
        if field.values().iter().any(|&v| v < 0.0) {
            return Err(NcbcError::Data("observed image contains negative intensities".into()));
        }
        Ok(ObservedImage(field))
    }

    #[inline]
    pub fn field(&self) -> &Field {
        &self.0
    }

    #[inline]
    pub fn dims(&self) -> LatticeDims {
        self.0.dims()
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        self.0.values()
    }
}

/// The noise-free, bias-free estimate `M`: finite.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentImage(Field);

impl LatentImage {
    pub fn new(field: Field) -> Result<Self> {
        if !field.all_finite() {
            return Err(NcbcError::Data("latent image contains non-finite values".into()));
        }
        Ok(LatentImage(field))
    }

    #[inline]
    pub fn field(&self) -> &Field {
        &self.0
    }

    #[inline]
    pub fn dims(&self) -> LatticeDims {
        self.0.dims()
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        self.0.values()
    }
}

/// The multiplicative gain field `B`: finite and strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasField(Field);

impl BiasField {
    pub fn new(field: Field) -> Result<Self> {
        if !field.all_finite() {
            return Err(NcbcError::Data("bias field contains non-finite values".into()));
        }
        if field.values().iter().any(|&v| v <= 0.0) {
            return Err(NcbcError::Data("bias field contains nonpositive gains".into()));
        }
        Ok(BiasField(field))
    }

    #[inline]
    pub fn field(&self) -> &Field {
        &self.0
    }

    #[inline]
    pub fn dims(&self) -> LatticeDims {
        self.0.dims()
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        self.0.values()
    }
}

/// Check two dim sets agree; `what` names the offending argument in errors.
pub(crate) fn check_same_dims(expected: LatticeDims, got: LatticeDims, what: &str) -> Result<()> {
    if expected != got {
        return Err(NcbcError::Shape {
            expected: (expected.width, expected.height),
            got: (got.width, got.height),
            what: what.to_string(),
        });
    }
    Ok(())
}
