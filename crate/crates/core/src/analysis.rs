//! Resolution analysis through the conditioning of column submatrices of `A`.
//!
//! Separations are snapped to whole voxels: a separation of `d` meters
//! becomes `n = round(d / pitch)` voxels along the relevant axis, and a pair
//! sits at indices `c - floor(n/2)` and `c + ceil(n/2)` around the grid
//! center index `c`. Odd `n` is therefore symmetric only to within one voxel.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::column;
use crate::geometry::{ImagingConfig, VoxelGrid};
use crate::synth::{point_target_scene, SceneRecord};

/// Returned for rank-deficient or degenerate constellations.
pub const KAPPA_CAP: f64 = 1e18;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// In the x-y plane through the grid center.
    CrossRange,
    /// Along the z axis through the grid center.
    Range,
}

impl std::str::FromStr for Orientation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xy" | "cross-range" | "cross_range" => Ok(Orientation::CrossRange),
            "z" | "range" => Ok(Orientation::Range),
            _ => Err(Error::invalid(format!(
                "unknown orientation {s:?} (use xy or z)"
            ))),
        }
    }
}

/// Two or four point targets placed around the grid center.
///
/// Cross-range: two targets along x, or four on the corners of a square in
/// the x-y plane. Range: two or four targets evenly spaced along z.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstellationSpec {
    pub n_targets: usize,
    pub separation_m: f64,
    pub orientation: Orientation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constellation {
    pub voxels: Vec<[usize; 3]>,
    /// Separation after snapping to the grid.
    pub snapped_m: f64,
    /// Set when two targets share a voxel.
    pub degenerate: bool,
}

impl ConstellationSpec {
    pub fn new(n_targets: usize, separation_m: f64, orientation: Orientation) -> Result<Self> {
        if n_targets != 2 && n_targets != 4 {
            return Err(Error::invalid(format!(
                "constellations have 2 or 4 targets, got {n_targets}"
            )));
        }
        if !(separation_m >= 0.0 && separation_m.is_finite()) {
            return Err(Error::invalid(format!(
                "separation must be finite and >= 0, got {separation_m}"
            )));
        }
        Ok(Self {
            n_targets,
            separation_m,
            orientation,
        })
    }

    pub fn place(&self, grid: &VoxelGrid) -> Result<Constellation> {
        let dims = grid.dims();
        let pitch = grid.pitch();
        let c = dims.map(|n| (n - 1) / 2);
        let axis = match self.orientation {
            Orientation::CrossRange => 0,
            Orientation::Range => 2,
        };
        let steps = (self.separation_m / pitch[axis]).round() as i64;
        let (lo, hi) = (-(steps / 2), steps - steps / 2);
        let offsets: Vec<[i64; 3]> = match (self.orientation, self.n_targets) {
            (Orientation::CrossRange, 2) => vec![[lo, 0, 0], [hi, 0, 0]],
            (Orientation::CrossRange, _) => {
                vec![[lo, lo, 0], [lo, hi, 0], [hi, lo, 0], [hi, hi, 0]]
            }
            (Orientation::Range, 2) => vec![[0, 0, lo], [0, 0, hi]],
            (Orientation::Range, _) => {
                vec![
                    [0, 0, lo - steps],
                    [0, 0, lo],
                    [0, 0, hi],
                    [0, 0, hi + steps],
                ]
            }
        };
        let mut voxels = Vec::with_capacity(offsets.len());
        for off in offsets {
            let mut idx = [0usize; 3];
            for a in 0..3 {
                let i = c[a] as i64 + off[a];
                if i < 0 || i >= dims[a] as i64 {
                    return Err(Error::invalid(format!(
                        "separation {} m puts a target outside the grid",
                        self.separation_m
                    )));
                }
                idx[a] = i as usize;
            }
            voxels.push(idx);
        }
        Ok(Constellation {
            voxels,
            snapped_m: steps as f64 * pitch[axis],
            degenerate: steps == 0,
        })
    }
}

/// `sigma_max / sigma_min` of the matrix whose columns are `columns`.
///
/// Returns [`KAPPA_CAP`] when the smallest singular value is below 1e-300 or
/// below the numerical rank tolerance `max(M, k) * eps * sigma_max`.
pub fn condition_number(columns: &[Vec<Complex64>]) -> Result<f64> {
    let k = columns.len();
    if k == 0 {
        return Err(Error::invalid("condition number of an empty column set"));
    }
    let m = columns[0].len();
    if let Some(c) = columns.iter().find(|c| c.len() != m) {
        return Err(Error::shape(format!("{m} rows"), c.len()));
    }
    let a = DMatrix::from_fn(m, k, |i, j| columns[j][i]);
    let sv = a.singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = m.max(k) as f64 * f64::EPSILON * max;
    if !(min >= 1e-300) || min <= tol {
        return Ok(KAPPA_CAP);
    }
    Ok((max / min).min(KAPPA_CAP))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub separation_m: f64,
    pub snapped_m: f64,
    pub kappa: f64,
    pub degenerate: bool,
}

/// Condition number of the columns of `A` at the constellation's voxels.
pub fn submatrix_condition(
    config: &ImagingConfig,
    spec: &ConstellationSpec,
) -> Result<ConditionRow> {
    let c = spec.place(&config.grid)?;
    let kappa = if c.degenerate {
        KAPPA_CAP
    } else {
        let cols = c
            .voxels
            .iter()
            .map(|&[ix, iy, iz]| column(config, config.grid.index(ix, iy, iz)))
            .collect::<Result<Vec<_>>>()?;
        condition_number(&cols)?
    };
    Ok(ConditionRow {
        separation_m: spec.separation_m,
        snapped_m: c.snapped_m,
        kappa,
        degenerate: c.degenerate,
    })
}

/// One row per requested separation. Rows whose constellation cannot be
/// built (for instance targets outside the grid) carry their error.
#[derive(Debug)]
pub struct ConditionSweep {
    pub config_hash: String,
    pub n_targets: usize,
    pub orientation: Orientation,
    pub separations_m: Vec<f64>,
    pub rows: Vec<Result<ConditionRow>>,
}

impl ConditionSweep {
    /// Successful rows only.
    pub fn ok_rows(&self) -> Vec<&ConditionRow> {
        self.rows.iter().filter_map(|r| r.as_ref().ok()).collect()
    }

    /// Failed rows are written with empty `snapped_cm` and `kappa` fields.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("separation_cm,snapped_cm,kappa\n");
        for (d, r) in self.separations_m.iter().zip(&self.rows) {
            match r {
                Ok(r) => out.push_str(&format!(
                    "{},{},{:e}\n",
                    fmt_cm(*d),
                    fmt_cm(r.snapped_m),
                    r.kappa
                )),
                Err(_) => out.push_str(&format!("{},,\n", fmt_cm(*d))),
            }
        }
        out
    }
}

fn fmt_cm(m: f64) -> String {
    // strip float noise such as 0.07 * 100 = 7.000000000000001
    let cm = (m * 100.0 * 1e9).round() / 1e9;
    format!("{cm}")
}

/// Rows are computed in parallel and returned in input order.
pub fn condition_sweep(
    config: &ImagingConfig,
    n_targets: usize,
    separations_m: &[f64],
    orientation: Orientation,
) -> Result<ConditionSweep> {
    if separations_m.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::invalid("separations must be ascending"));
    }
    if n_targets != 2 && n_targets != 4 {
        return Err(Error::invalid(format!(
            "constellations have 2 or 4 targets, got {n_targets}"
        )));
    }
    let rows = separations_m
        .par_iter()
        .map(|&d| submatrix_condition(config, &ConstellationSpec::new(n_targets, d, orientation)?))
        .collect();
    Ok(ConditionSweep {
        config_hash: config.hash(),
        n_targets,
        orientation,
        separations_m: separations_m.to_vec(),
        rows,
    })
}

pub const CROSS_RANGE_DEMO_M: [f64; 4] = [0.025, 0.0375, 0.05, 0.0625];
pub const RANGE_DEMO_M: [f64; 4] = [0.0125, 0.01875, 0.025, 0.03125];

/// Four-target cross-range scenes followed by two-target range scenes.
pub fn resolution_scenes(grid: &VoxelGrid) -> Result<Vec<SceneRecord>> {
    let specs = CROSS_RANGE_DEMO_M
        .iter()
        .map(|&d| ConstellationSpec::new(4, d, Orientation::CrossRange))
        .chain(
            RANGE_DEMO_M
                .iter()
                .map(|&d| ConstellationSpec::new(2, d, Orientation::Range)),
        );
    specs
        .map(|spec| {
            let c = spec?.place(grid)?;
            let positions: Vec<_> = c.voxels.iter().map(|&v| grid.center_of(v)).collect();
            point_target_scene(grid, &positions, &vec![1.0; positions.len()])
        })
        .collect()
}
