use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::{ImagingConfig, VoxelGrid};

/// Complex reflectivity per voxel in canonical voxel order.
#[derive(Clone, Debug, PartialEq)]
pub struct ReflectivityVolume {
    dims: [usize; 3],
    values: Vec<Complex64>,
}

impl ReflectivityVolume {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Self {
            dims,
            values: vec![Complex64::new(0.0, 0.0); dims.iter().product()],
        }
    }

    pub fn new(dims: [usize; 3], values: Vec<Complex64>) -> Result<Self> {
        check_len(dims, values.len())?;
        Ok(Self { dims, values })
    }

    pub fn for_grid(grid: &VoxelGrid) -> Self {
        Self::zeros(grid.dims())
    }

    pub fn from_real(dims: [usize; 3], values: &[f64]) -> Result<Self> {
        check_len(dims, values.len())?;
        Ok(Self {
            dims,
            values: values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn magnitude(&self) -> MagnitudeVolume {
        MagnitudeVolume {
            dims: self.dims,
            values: self.values.iter().map(|v| v.norm()).collect(),
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn scale(&mut self, a: Complex64) {
        self.values.iter_mut().for_each(|v| *v *= a);
    }

    pub(crate) fn check_config(&self, config: &ImagingConfig) -> Result<()> {
        check_dims(config.grid.dims(), self.dims)
    }
}

/// Real non-negative volume, e.g. a reflectivity magnitude.
#[derive(Clone, Debug, PartialEq)]
pub struct MagnitudeVolume {
    dims: [usize; 3],
    values: Vec<f64>,
}

impl MagnitudeVolume {
    pub fn new(dims: [usize; 3], values: Vec<f64>) -> Result<Self> {
        check_len(dims, values.len())?;
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(format!(
                "magnitude at voxel {i} is {} (must be finite and >= 0)",
                values[i]
            )));
        }
        Ok(Self { dims, values })
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        Self {
            dims,
            values: vec![0.0; dims.iter().product()],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Divide by the maximum so the peak is exactly 1. Returns the divisor.
    pub fn normalize(&mut self) -> Result<f64> {
        let peak = self.max();
        if !(peak > 0.0) {
            return Err(Error::UndefinedNormalization);
        }
        for v in &mut self.values {
            *v /= peak;
        }
        Ok(peak)
    }

    pub fn to_complex(&self) -> ReflectivityVolume {
        ReflectivityVolume {
            dims: self.dims,
            values: self
                .values
                .iter()
                .map(|&v| Complex64::new(v, 0.0))
                .collect(),
        }
    }
}

/// Measurements in canonical `(tx, rx, freq)` order.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementVector {
    values: Vec<Complex64>,
}

impl MeasurementVector {
    pub fn new(values: Vec<Complex64>) -> Self {
        Self { values }
    }

    pub fn zeros(m: usize) -> Self {
        Self {
            values: vec![Complex64::new(0.0, 0.0); m],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    pub(crate) fn check_config(&self, config: &ImagingConfig) -> Result<()> {
        if self.values.len() != config.n_measurements() {
            return Err(Error::shape(
                format!("{} measurements", config.n_measurements()),
                self.values.len(),
            ));
        }
        Ok(())
    }
}

impl From<Vec<Complex64>> for MeasurementVector {
    fn from(values: Vec<Complex64>) -> Self {
        Self::new(values)
    }
}

fn check_len(dims: [usize; 3], len: usize) -> Result<()> {
    let expected: usize = dims.iter().product();
    if expected != len {
        return Err(Error::shape(format!("{expected} voxels for {dims:?}"), len));
    }
    Ok(())
}

pub(crate) fn check_dims(expected: [usize; 3], actual: [usize; 3]) -> Result<()> {
    if expected != actual {
        return Err(Error::shape(format!("{expected:?}"), format!("{actual:?}")));
    }
    Ok(())
}

/// Hermitian inner product `<a, b> = sum conj(a_i) b_i`.
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}
