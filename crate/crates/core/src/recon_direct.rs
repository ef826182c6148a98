//! Non-iterative reconstructions: frequency-domain backprojection and the
//! normalized adjoint image.

use crate::error::{Error, Result};
use crate::forward::{LinearOperator, Operator, Weighting};
use crate::geometry::ImagingConfig;
use crate::volume::{MagnitudeVolume, MeasurementVector, ReflectivityVolume};

/// `s_n = (1/M) sum_m y_m exp(+j k_m (d_t + d_r))`, with no amplitude
/// weighting.
pub fn backprojection(config: &ImagingConfig, y: &MeasurementVector) -> Result<ReflectivityVolume> {
    y.check_config(config)?;
    let op = Operator::with_weighting(config, Weighting::PhaseOnly)?;
    backprojection_with(&op, y)
}

/// Backprojection with a prebuilt pure-phase operator.
pub fn backprojection_with(op: &Operator, y: &MeasurementVector) -> Result<ReflectivityVolume> {
    if op.weighting() != Weighting::PhaseOnly {
        return Err(Error::invalid("backprojection needs a phase-only operator"));
    }
    let mut s = op.apply_adjoint(y)?;
    let inv_m = 1.0 / op.n_rows() as f64;
    s.values_mut().iter_mut().for_each(|v| *v *= inv_m);
    Ok(s)
}

/// `|A^H y|` scaled to a peak of exactly 1.
#[derive(Clone, Debug)]
pub struct AdjointImage {
    pub image: MagnitudeVolume,
    /// `max_n |(A^H y)_n|`; multiply back to recover absolute magnitudes.
    pub scale: f64,
}

pub fn adjoint_image(config: &ImagingConfig, y: &MeasurementVector) -> Result<AdjointImage> {
    y.check_config(config)?;
    adjoint_image_with(&Operator::new(config)?, y)
}

pub fn adjoint_image_with(op: &Operator, y: &MeasurementVector) -> Result<AdjointImage> {
    let s = op.apply_adjoint(y)?;
    let (image, scale) = normalized_magnitude(&s)?;
    Ok(AdjointImage { image, scale })
}

/// Magnitude of `s` divided by its maximum.
pub fn normalized_magnitude(s: &ReflectivityVolume) -> Result<(MagnitudeVolume, f64)> {
    let mut image = s.magnitude();
    let scale = image.normalize()?;
    Ok((image, scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::forward::{apply_adjoint, apply_forward};
    use crate::geometry::{mills_cross, FrequencyGrid, VoxelGrid};
    use crate::rng;
    use approx::assert_relative_eq;
    use num_complex::Complex64;
    use rand::Rng;

    fn config() -> ImagingConfig {
        ImagingConfig::new(
            mills_cross(0.3, 4, 5).unwrap(),
            FrequencyGrid::new(4e9, 16e9, 6).unwrap(),
            VoxelGrid::new([5, 5, 7], [0.0125, 0.0125, 0.00625], [0.0, 0.0, 0.5]).unwrap(),
        )
    }

    fn random_y(c: &ImagingConfig, seed: u64) -> MeasurementVector {
        let mut rng = rng::seeded(seed);
        MeasurementVector::new(
            (0..c.n_measurements())
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect(),
        )
    }

    #[test]
    fn bp_of_zero_is_zero() {
        let c = config();
        let s = backprojection(&c, &MeasurementVector::zeros(c.n_measurements())).unwrap();
        assert!(s.values().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn bp_of_single_measurement_has_flat_magnitude() {
        let c = config();
        let mut y = MeasurementVector::zeros(c.n_measurements());
        y.values_mut()[17] = Complex64::new(1.0, 0.0);
        let s = backprojection(&c, &y).unwrap();
        let m = c.n_measurements() as f64;
        for v in s.values() {
            assert_relative_eq!(v.norm(), 1.0 / m, max_relative = 1e-12);
        }
    }

    #[test]
    fn bp_matches_pure_phase_oracle() {
        // dense B with B[m, n] = exp(-j k_m (d_t + d_r)), built independently
        let c = config();
        let y = random_y(&c, 4);
        let ks = c.freqs.wavenumbers();
        let mut expected = vec![Complex64::new(0.0, 0.0); c.n_voxels()];
        for (n, e) in expected.iter_mut().enumerate() {
            let p = c.grid.voxel_center(n).unwrap();
            for (m, ym) in y.values().iter().enumerate() {
                let (t, r, f) = c.unravel_measurement(m);
                let dist = |a: &[f64; 3]| {
                    ((a[0] - p[0]).powi(2) + (a[1] - p[1]).powi(2) + (a[2] - p[2]).powi(2)).sqrt()
                };
                let d = dist(&c.array.tx()[t]) + dist(&c.array.rx()[r]);
                *e += ym * Complex64::from_polar(1.0, ks[f] * d);
            }
            *e /= c.n_measurements() as f64;
        }
        let s = backprojection(&c, &y).unwrap();
        let err: f64 = s
            .values()
            .iter()
            .zip(&expected)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        let scale: f64 = expected.iter().map(|v| v.norm_sqr()).sum();
        assert!((err / scale).sqrt() <= 1e-12);
    }

    #[test]
    fn bp_is_scaled_phase_only_adjoint() {
        let c = config();
        let y = random_y(&c, 8);
        let op = Operator::with_weighting(&c, Weighting::PhaseOnly).unwrap();
        let adj = op.apply_adjoint(&y).unwrap();
        let bp = backprojection(&c, &y).unwrap();
        let m = c.n_measurements() as f64;
        for (a, b) in adj.values().iter().zip(bp.values()) {
            assert!((a - b * m).norm() <= 1e-12 * a.norm().max(1e-300));
        }
    }

    #[test]
    fn bp_is_linear() {
        let c = config();
        let (y1, y2) = (random_y(&c, 1), random_y(&c, 2));
        let (a, b) = (Complex64::new(0.3, -1.2), Complex64::new(-2.0, 0.5));
        let combo = MeasurementVector::new(
            y1.values()
                .iter()
                .zip(y2.values())
                .map(|(u, v)| a * u + b * v)
                .collect(),
        );
        let lhs = backprojection(&c, &combo).unwrap();
        let s1 = backprojection(&c, &y1).unwrap();
        let s2 = backprojection(&c, &y2).unwrap();
        for ((l, u), v) in lhs.values().iter().zip(s1.values()).zip(s2.values()) {
            assert!((l - (a * u + b * v)).norm() <= 1e-12 * (1.0 + l.norm()));
        }
    }

    #[test]
    fn adjoint_image_peaks_at_point_target() {
        // symmetric config, target at the grid centre
        let c = config();
        let mut s = ReflectivityVolume::for_grid(&c.grid);
        let n = c.grid.index(2, 2, 3);
        s.values_mut()[n] = Complex64::new(1.0, 0.0);
        let y = apply_forward(&c, &s).unwrap();
        let img = adjoint_image(&c, &y).unwrap();
        let values = img.image.values();
        assert_eq!(img.image.max(), 1.0);
        let argmax = (0..values.len())
            .max_by(|&a, &b| values[a].total_cmp(&values[b]))
            .unwrap();
        assert_eq!(argmax, n);
        assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn adjoint_image_scale_invariance() {
        let c = config();
        let y = random_y(&c, 3);
        let a = adjoint_image(&c, &y).unwrap();
        let scaled = MeasurementVector::new(
            y.values()
                .iter()
                .map(|v| v * Complex64::new(-3.5, 2.0))
                .collect(),
        );
        let b = adjoint_image(&c, &scaled).unwrap();
        for (u, v) in a.image.values().iter().zip(b.image.values()) {
            assert!((u - v).abs() <= 1e-12);
        }
        let raw = apply_adjoint(&c, &y).unwrap();
        let peak = raw.values().iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert_relative_eq!(a.scale, peak, max_relative = 1e-15);
    }

    #[test]
    fn adjoint_image_rejects_zero_measurements() {
        let c = config();
        assert!(matches!(
            adjoint_image(&c, &MeasurementVector::zeros(c.n_measurements())),
            Err(Error::UndefinedNormalization)
        ));
    }
}
