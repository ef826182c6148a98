//! Reconstruction quality metrics on magnitude volumes.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::geometry::ImagingConfig;
use crate::volume::{check_dims, MagnitudeVolume, ReflectivityVolume};

/// Reported when the two volumes agree exactly.
pub const PSNR_CAP_DB: f64 = 300.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Volumes the metrics can score. Complex volumes contribute their modulus.
pub trait Magnitudes {
    fn dims(&self) -> [usize; 3];
    fn magnitudes(&self) -> Cow<'_, [f64]>;
}

impl Magnitudes for MagnitudeVolume {
    fn dims(&self) -> [usize; 3] {
        MagnitudeVolume::dims(self)
    }

    fn magnitudes(&self) -> Cow<'_, [f64]> {
        Cow::Borrowed(self.values())
    }
}

impl Magnitudes for ReflectivityVolume {
    fn dims(&self) -> [usize; 3] {
        ReflectivityVolume::dims(self)
    }

    fn magnitudes(&self) -> Cow<'_, [f64]> {
        Cow::Owned(self.values().iter().map(|v| v.norm()).collect())
    }
}

/// `10 log10(s_max^2 / MSE)` with `s_max = max |truth|`.
pub fn psnr3d(truth: &impl Magnitudes, recon: &impl Magnitudes) -> Result<f64> {
    check_dims(truth.dims(), recon.dims())?;
    let t = truth.magnitudes();
    let peak = t.iter().copied().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(Error::invalid(
            "PSNR needs a truth volume with a positive peak",
        ));
    }
    Ok(psnr_from(&t, &recon.magnitudes(), peak))
}

/// PSNR against a fixed peak value instead of the truth maximum.
pub fn psnr_with_peak(a: &impl Magnitudes, b: &impl Magnitudes, peak: f64) -> Result<f64> {
    check_dims(a.dims(), b.dims())?;
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::invalid(format!(
            "peak must be positive and finite, got {peak}"
        )));
    }
    Ok(psnr_from(&a.magnitudes(), &b.magnitudes(), peak))
}

fn psnr_from(a: &[f64], b: &[f64], peak: f64) -> f64 {
    let mse = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB)
}

/// Mean SSIM over the x-y slices at each z, dynamic range 1.
///
/// Each slice uses an 11x11 Gaussian window (sigma 1.5) and averages the
/// SSIM map over positions where the window fits entirely inside the slice.
pub fn ssim_slice_avg(truth: &impl Magnitudes, recon: &impl Magnitudes) -> Result<f64> {
    check_dims(truth.dims(), recon.dims())?;
    let [nx, ny, nz] = truth.dims();
    if nx < SSIM_WINDOW || ny < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs slices of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {nx}x{ny}"
        )));
    }
    if nz == 0 {
        return Err(Error::invalid("SSIM of an empty volume"));
    }
    let (a, b) = (truth.magnitudes(), recon.magnitudes());
    let window = gaussian_window();
    let mut total = 0.0;
    let mut sa = vec![0.0; nx * ny];
    let mut sb = vec![0.0; nx * ny];
    for iz in 0..nz {
        for ix in 0..nx {
            for iy in 0..ny {
                let n = (ix * ny + iy) * nz + iz;
                sa[ix * ny + iy] = a[n];
                sb[ix * ny + iy] = b[n];
            }
        }
        total += ssim_slice(&sa, &sb, nx, ny, &window);
    }
    Ok(total / nz as f64)
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let sum: f64 = w.iter().sum();
    w.into_iter().map(|v| v / sum).collect()
}

/// Valid-region mean SSIM of one `nx x ny` slice (row-major, y fastest).
fn ssim_slice(a: &[f64], b: &[f64], nx: usize, ny: usize, w: &[f64]) -> f64 {
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let (ox, oy) = (nx - SSIM_WINDOW + 1, ny - SSIM_WINDOW + 1);
    // separable filtering: first along y, then along x
    let filter = |f: &dyn Fn(usize) -> f64| -> Vec<f64> {
        let mut rows = vec![0.0; nx * oy];
        for ix in 0..nx {
            for j in 0..oy {
                rows[ix * oy + j] = (0..SSIM_WINDOW).map(|k| w[k] * f(ix * ny + j + k)).sum();
            }
        }
        let mut out = vec![0.0; ox * oy];
        for i in 0..ox {
            for j in 0..oy {
                out[i * oy + j] = (0..SSIM_WINDOW)
                    .map(|k| w[k] * rows[(i + k) * oy + j])
                    .sum();
            }
        }
        out
    };
    let mu_a = filter(&|i| a[i]);
    let mu_b = filter(&|i| b[i]);
    let aa = filter(&|i| a[i] * a[i]);
    let bb = filter(&|i| b[i] * b[i]);
    let ab = filter(&|i| a[i] * b[i]);
    let mut sum = 0.0;
    for i in 0..ox * oy {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        sum +=
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    sum / (ox * oy) as f64
}

/// Measurements per voxel, `M / N`.
pub fn compression_ratio(config: &ImagingConfig) -> f64 {
    config.n_measurements() as f64 / config.n_voxels() as f64
}
