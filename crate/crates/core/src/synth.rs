//! Randomized extended-target scenes and simple test scenes.
//!
//! A random scene is built on the voxel grid: a center drawn uniformly in a
//! metric box and snapped to a voxel, a handful of virtual centers scattered
//! around it, a few unit impulses around each virtual center, a Gaussian blur
//! and finally a saturating amplitude map that sends the background to 0 and
//! the peak to 1. All scatter widths are in voxels.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::geometry::{GridFile, Point3, VoxelGrid};
use crate::rng::{self, Gaussian};
use crate::tensorio::{write_atomic, write_tensor, Tensor};
use crate::volume::{MagnitudeVolume, ReflectivityVolume};

/// Stream index for the phase draws, kept apart from the layout stream so
/// the magnitude does not depend on whether phase is added.
const PHASE_STREAM: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub seed: u64,
    pub x_range_m: [f64; 2],
    pub y_range_m: [f64; 2],
    pub z_range_m: [f64; 2],
    pub n_virtual_centers: usize,
    pub points_per_center: usize,
    /// Scatter of the virtual centers around the target center, in voxels.
    pub virtual_center_std: f64,
    /// Scatter of the points around their virtual center, in voxels.
    pub point_std: f64,
    /// Blur kernel width, in voxels.
    pub filter_std: f64,
    /// Slope of the amplitude map.
    pub gain: f64,
    pub random_phase: bool,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            x_range_m: [-0.05, 0.05],
            y_range_m: [-0.05, 0.05],
            z_range_m: [0.41, 0.59],
            n_virtual_centers: 5,
            points_per_center: 3,
            virtual_center_std: 2.0,
            point_std: 1.5,
            filter_std: 1.3,
            gain: 10.0,
            random_phase: false,
        }
    }
}

impl SceneSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self, grid: &VoxelGrid) -> Result<()> {
        for (name, v) in [
            ("virtual_center_std", self.virtual_center_std),
            ("point_std", self.point_std),
            ("filter_std", self.filter_std),
            ("gain", self.gain),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_virtual_centers == 0 || self.points_per_center == 0 {
            return Err(Error::invalid(
                "scene needs at least one virtual center and one point",
            ));
        }
        let ranges = [self.x_range_m, self.y_range_m, self.z_range_m];
        for (axis, [lo, hi]) in ranges.into_iter().enumerate() {
            let first = grid.axis_coord(axis, 0);
            let last = grid.axis_coord(axis, grid.dims()[axis] - 1);
            if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
                return Err(Error::invalid(format!(
                    "center range {:?} on axis {axis}",
                    [lo, hi]
                )));
            }
            if lo < first - 1e-12 || hi > last + 1e-12 {
                return Err(Error::invalid(format!(
                    "center range [{lo}, {hi}] on axis {axis} leaves the grid [{first}, {last}]"
                )));
            }
        }
        Ok(())
    }

    pub fn impulse_count(&self) -> usize {
        self.n_virtual_centers * self.points_per_center
    }
}

/// Random draws behind a scene, before blurring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneLayout {
    /// Center as drawn, in meters.
    pub center_m: Point3,
    /// Center snapped to the grid.
    pub center: [usize; 3],
    pub virtual_centers: Vec<[usize; 3]>,
    /// Impulse sites; repeats are allowed and add up.
    pub sites: Vec<[usize; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneSource {
    Random {
        spec: SceneSpec,
        layout: SceneLayout,
    },
    Ellipsoid {
        semi_axes_m: Point3,
        center_m: Point3,
    },
    Points {
        positions_m: Vec<Point3>,
        amplitudes: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneRecord {
    pub volume: ReflectivityVolume,
    pub seed: Option<u64>,
    /// Per-voxel phases when random phase was applied.
    pub phases: Option<Vec<f64>>,
    pub source: SceneSource,
}

impl SceneRecord {
    pub fn magnitude(&self) -> MagnitudeVolume {
        self.volume.magnitude()
    }

    pub fn sites(&self) -> &[[usize; 3]] {
        match &self.source {
            SceneSource::Random { layout, .. } => &layout.sites,
            _ => &[],
        }
    }

    /// Provenance for tensor headers.
    pub fn meta(&self) -> Map<String, Value> {
        let mut meta = Map::new();
        if let Some(seed) = self.seed {
            meta.insert("seed".into(), json!(seed));
        }
        meta.insert("random_phase".into(), json!(self.phases.is_some()));
        meta.insert(
            "source".into(),
            serde_json::to_value(&self.source).expect("serializable"),
        );
        if matches!(self.source, SceneSource::Random { .. }) {
            meta.insert("amplitude_map".into(), json!(AMPLITUDE_MAP_DOC));
        }
        meta
    }
}

pub const AMPLITUDE_MAP_DOC: &str =
    "v/max(v) then (sig(v)-sig(0))/(sig(1)-sig(0)), sig(t)=1/(1+exp(-gain*(t-0.5)))";

/// Draw the center, virtual centers and impulse sites for `spec`.
pub fn sample_layout(grid: &VoxelGrid, spec: &SceneSpec) -> Result<SceneLayout> {
    spec.validate(grid)?;
    let mut rng = rng::seeded(spec.seed);
    let ranges = [spec.x_range_m, spec.y_range_m, spec.z_range_m];
    let center_m = ranges.map(|[lo, hi]| lo + (hi - lo) * rng.gen::<f64>());
    let center = grid.clamped_voxel(center_m);
    let dims = grid.dims();
    let scatter = |g: &mut Gaussian<_>, around: [usize; 3], std: f64| {
        [0, 1, 2].map(|a| {
            let i = around[a] as f64 + (std * g.sample()).round();
            i.clamp(0.0, (dims[a] - 1) as f64) as usize
        })
    };
    let mut g = Gaussian::new(rng);
    let mut virtual_centers = Vec::with_capacity(spec.n_virtual_centers);
    let mut sites = Vec::with_capacity(spec.impulse_count());
    for _ in 0..spec.n_virtual_centers {
        let vc = scatter(&mut g, center, spec.virtual_center_std);
        virtual_centers.push(vc);
        for _ in 0..spec.points_per_center {
            sites.push(scatter(&mut g, vc, spec.point_std));
        }
    }
    Ok(SceneLayout {
        center_m,
        center,
        virtual_centers,
        sites,
    })
}

pub fn generate_scene(grid: &VoxelGrid, spec: &SceneSpec) -> Result<SceneRecord> {
    let layout = sample_layout(grid, spec)?;
    let dims = grid.dims();
    let mut v = vec![0.0; grid.len()];
    for &[ix, iy, iz] in &layout.sites {
        v[grid.index(ix, iy, iz)] += 1.0;
    }
    gaussian_blur(&mut v, dims, spec.filter_std);
    amplitude_map(&mut v, spec.gain);

    let (values, phases) = if spec.random_phase {
        let mut prng = rng::stream(spec.seed, PHASE_STREAM);
        let phases: Vec<f64> = (0..v.len()).map(|_| prng.gen_range(-PI..=PI)).collect();
        let values = v
            .iter()
            .zip(&phases)
            .map(|(&m, &p)| Complex64::from_polar(m, p))
            .collect();
        (values, Some(phases))
    } else {
        (v.iter().map(|&m| Complex64::new(m, 0.0)).collect(), None)
    };
    Ok(SceneRecord {
        volume: ReflectivityVolume::new(dims, values)?,
        seed: Some(spec.seed),
        phases,
        source: SceneSource::Random {
            spec: spec.clone(),
            layout,
        },
    })
}

/// Separable Gaussian blur, radius `ceil(4 sigma)`, replicate boundary.
pub fn gaussian_blur(v: &mut [f64], dims: [usize; 3], sigma: f64) {
    let r = (4.0 * sigma).ceil() as i64;
    let mut w: Vec<f64> = (-r..=r)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    let strides = [dims[1] * dims[2], dims[2], 1];
    let mut tmp = vec![0.0; v.len()];
    for axis in 0..3 {
        let (n, stride) = (dims[axis] as i64, strides[axis]);
        for (idx, out) in tmp.iter_mut().enumerate() {
            let i = ((idx / stride) % dims[axis]) as i64;
            let base = idx - i as usize * stride;
            *out = w
                .iter()
                .enumerate()
                .map(|(k, wk)| {
                    let j = (i + k as i64 - r).clamp(0, n - 1) as usize;
                    wk * v[base + j * stride]
                })
                .sum();
        }
        v.copy_from_slice(&tmp);
    }
}

/// Normalize to a peak of 1, then apply the shifted and rescaled sigmoid.
pub fn amplitude_map(v: &mut [f64], gain: f64) {
    let peak = v.iter().copied().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return;
    }
    let sig = |t: f64| 1.0 / (1.0 + (-gain * (t - 0.5)).exp());
    let (lo, hi) = (sig(0.0), sig(1.0));
    for x in v.iter_mut() {
        *x = ((sig(*x / peak) - lo) / (hi - lo)).clamp(0.0, 1.0);
    }
}

/// Scene `i` of a dataset uses seed `mix(base_seed, i)`.
pub fn scene_seed(base_seed: u64, i: usize) -> u64 {
    rng::mix(base_seed, i as u64)
}

/// `n` scenes in parallel; the result does not depend on the thread count.
pub fn generate_scenes(
    grid: &VoxelGrid,
    n: usize,
    base_seed: u64,
    random_phase: bool,
) -> Result<Vec<SceneRecord>> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let spec = SceneSpec {
                seed: scene_seed(base_seed, i),
                random_phase,
                ..SceneSpec::default()
            };
            generate_scene(grid, &spec)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub seed: u64,
    pub random_phase: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub scenes: Vec<ManifestEntry>,
    pub grid: GridFile,
    pub base_seed: u64,
}

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn scene_file_name(i: usize) -> String {
    format!("scene_{i:05}.nft")
}

/// Write `n_scenes` volumes (complex, single precision) and
/// `manifest.json` into `dir`. `extra_meta` is merged into every volume
/// header.
pub fn generate_dataset(
    dir: &Path,
    grid: &VoxelGrid,
    n_scenes: usize,
    base_seed: u64,
    random_phase: bool,
    extra_meta: &Map<String, Value>,
) -> Result<DatasetManifest> {
    if n_scenes == 0 {
        return Err(Error::invalid("a dataset needs at least one scene"));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let scenes = (0..n_scenes)
        .into_par_iter()
        .map(|i| {
            let seed = scene_seed(base_seed, i);
            let spec = SceneSpec {
                seed,
                random_phase,
                ..SceneSpec::default()
            };
            let record = generate_scene(grid, &spec)?;
            let mut meta = record.meta();
            meta.extend(extra_meta.clone());
            let name = scene_file_name(i);
            write_tensor(
                dir.join(&name),
                &Tensor::from_volume_c64(&record.volume).with_meta(meta),
            )?;
            Ok(ManifestEntry {
                path: name.into(),
                seed,
                random_phase,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        scenes,
        grid: GridFile::from(grid),
        base_seed,
    };
    write_json(&dir.join(MANIFEST_NAME), &manifest)?;
    Ok(manifest)
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Solid ellipsoid: 1 inside (boundary included), 0 outside.
pub fn ellipsoid_scene(
    grid: &VoxelGrid,
    semi_axes_m: Point3,
    center_m: Point3,
) -> Result<SceneRecord> {
    if semi_axes_m.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
        return Err(Error::invalid(format!(
            "semi-axes must be positive, got {semi_axes_m:?}"
        )));
    }
    for a in 0..3 {
        let half = grid.pitch()[a] / 2.0;
        let lo = grid.axis_coord(a, 0) - half;
        let hi = grid.axis_coord(a, grid.dims()[a] - 1) + half;
        if center_m[a] - semi_axes_m[a] < lo - 1e-12 || center_m[a] + semi_axes_m[a] > hi + 1e-12 {
            return Err(Error::invalid(format!(
                "ellipsoid leaves the grid along axis {a}"
            )));
        }
    }
    let values = (0..grid.len())
        .map(|n| {
            let p = grid.center_of(grid.unravel(n));
            let r: f64 = (0..3)
                .map(|a| ((p[a] - center_m[a]) / semi_axes_m[a]).powi(2))
                .sum();
            Complex64::new(if r <= 1.0 { 1.0 } else { 0.0 }, 0.0)
        })
        .collect();
    Ok(SceneRecord {
        volume: ReflectivityVolume::new(grid.dims(), values)?,
        seed: None,
        phases: None,
        source: SceneSource::Ellipsoid {
            semi_axes_m,
            center_m,
        },
    })
}

/// Impulses at the voxels nearest to `positions`. Targets that snap to the
/// same voxel add their amplitudes.
pub fn point_target_scene(
    grid: &VoxelGrid,
    positions_m: &[Point3],
    amplitudes: &[f64],
) -> Result<SceneRecord> {
    if positions_m.len() != amplitudes.len() {
        return Err(Error::shape(
            format!("{} amplitudes", positions_m.len()),
            amplitudes.len(),
        ));
    }
    let mut values = vec![Complex64::new(0.0, 0.0); grid.len()];
    for (p, &amp) in positions_m.iter().zip(amplitudes) {
        let [ix, iy, iz] = grid
            .nearest_voxel(*p)
            .ok_or_else(|| Error::invalid(format!("target {p:?} lies outside the grid")))?;
        values[grid.index(ix, iy, iz)] += amp;
    }
    Ok(SceneRecord {
        volume: ReflectivityVolume::new(grid.dims(), values)?,
        seed: None,
        phases: None,
        source: SceneSource::Points {
            positions_m: positions_m.to_vec(),
            amplitudes: amplitudes.to_vec(),
        },
    })
}
