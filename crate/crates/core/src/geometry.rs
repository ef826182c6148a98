//! Antenna arrays, frequency sweeps, voxel grids and the canonical index
//! orders shared by every other module.
//!
//! Measurement index: `m = (i_tx * n_rx + i_rx) * n_f + i_f`.
//! Voxel index: `n = (i_x * n_y + i_y) * n_z + i_z`.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Tolerance under which an antenna `z` coordinate read from a file is
/// silently treated as zero.
pub const Z_TOLERANCE_M: f64 = 1e-9;

pub type Point3 = [f64; 3];

/// Transmit and receive antenna positions on the `z = 0` plane.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AntennaArray {
    tx: Vec<Point3>,
    rx: Vec<Point3>,
}

impl AntennaArray {
    pub fn new(tx: Vec<Point3>, rx: Vec<Point3>) -> Result<Self> {
        check_antennas("tx", &tx)?;
        check_antennas("rx", &rx)?;
        Ok(Self { tx, rx })
    }

    pub fn tx(&self) -> &[Point3] {
        &self.tx
    }

    pub fn rx(&self) -> &[Point3] {
        &self.rx
    }

    pub fn n_tx(&self) -> usize {
        self.tx.len()
    }

    pub fn n_rx(&self) -> usize {
        self.rx.len()
    }
}

fn check_antennas(label: &str, list: &[Point3]) -> Result<()> {
    if list.is_empty() {
        return Err(Error::invalid(format!("{label} list is empty")));
    }
    let mut seen = HashSet::with_capacity(list.len());
    for (i, p) in list.iter().enumerate() {
        if p.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid(format!("{label}[{i}] is not finite")));
        }
        if p[2] != 0.0 {
            return Err(Error::invalid(format!(
                "{label}[{i}] has z = {} (array must lie on z = 0)",
                p[2]
            )));
        }
        // +0.0 and -0.0 compare equal but hash differently
        let key = [p[0] + 0.0, p[1] + 0.0].map(f64::to_bits);
        if !seen.insert(key) {
            return Err(Error::invalid(format!(
                "duplicate {label} position ({}, {})",
                p[0], p[1]
            )));
        }
    }
    Ok(())
}

/// Mills Cross: transmitters on the horizontal arm (`y = 0`), receivers on
/// the vertical arm (`x = 0`), both spanning `±width/2` with endpoints.
pub fn mills_cross(width_m: f64, n_tx: usize, n_rx: usize) -> Result<AntennaArray> {
    if !(width_m > 0.0) || !width_m.is_finite() {
        return Err(Error::invalid(format!(
            "array width must be positive, got {width_m}"
        )));
    }
    if n_tx < 2 || n_rx < 2 {
        return Err(Error::invalid(format!(
            "mills cross needs at least 2 antennas per arm, got {n_tx} tx / {n_rx} rx"
        )));
    }
    let tx = uniform_arm(width_m, n_tx).map(|x| [x, 0.0, 0.0]).collect();
    let rx = uniform_arm(width_m, n_rx).map(|y| [0.0, y, 0.0]).collect();
    AntennaArray::new(tx, rx)
}

fn uniform_arm(width: f64, n: usize) -> impl Iterator<Item = f64> {
    let half = width / 2.0;
    let step = width / (n - 1) as f64;
    // symmetric construction keeps x <-> -x exact
    (0..n).map(move |i| {
        let j = (n - 1 - i) as f64;
        let i = i as f64;
        if i == j {
            0.0
        } else if i < j {
            -half + i * step
        } else {
            half - j * step
        }
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ArrayFile {
    tx: Vec<Point3>,
    rx: Vec<Point3>,
}

impl ArrayFile {
    fn into_array(self, origin: &str) -> Result<AntennaArray> {
        let mut flattened = 0usize;
        let flatten = |mut p: Point3, count: &mut usize| {
            if p[2].abs() > Z_TOLERANCE_M {
                *count += 1;
            }
            p[2] = 0.0;
            p
        };
        let tx = self
            .tx
            .into_iter()
            .map(|p| flatten(p, &mut flattened))
            .collect::<Vec<_>>();
        let rx = self
            .rx
            .into_iter()
            .map(|p| flatten(p, &mut flattened))
            .collect::<Vec<_>>();
        if flattened > 0 {
            log::warn!("{origin}: forced z = 0 on {flattened} antenna position(s)");
        }
        AntennaArray::new(tx, rx).map_err(|e| match e {
            Error::InvalidArgument(msg) => Error::format(0, format!("{origin}: {msg}")),
            other => other,
        })
    }
}

/// Parse an array description `{ "tx": [[x,y,z],...], "rx": [...] }`.
pub fn parse_array(json: &str) -> Result<AntennaArray> {
    let file: ArrayFile =
        serde_json::from_str(json).map_err(|e| Error::format(0, format!("array file: {e}")))?;
    file.into_array("array file")
}

pub fn load_array(path: impl AsRef<Path>) -> Result<AntennaArray> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ArrayFile = serde_json::from_str(&text)
        .map_err(|e| Error::format(0, format!("{}: {e}", path.display())))?;
    file.into_array(&path.display().to_string())
}

/// Uniform frequency sweep, endpoints included.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrequencyGrid {
    f_min: f64,
    f_max: f64,
    n_steps: usize,
}

impl FrequencyGrid {
    pub fn new(f_min: f64, f_max: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::invalid("frequency grid needs at least one step"));
        }
        if !(f_min > 0.0) || !f_max.is_finite() {
            return Err(Error::invalid(format!(
                "frequencies must be positive, got {f_min}..{f_max}"
            )));
        }
        if n_steps > 1 && !(f_min < f_max) {
            return Err(Error::invalid(format!(
                "f_min ({f_min}) must be below f_max ({f_max})"
            )));
        }
        Ok(Self {
            f_min,
            f_max,
            n_steps,
        })
    }

    pub fn f_min(&self) -> f64 {
        self.f_min
    }

    pub fn f_max(&self) -> f64 {
        self.f_max
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Spacing between adjacent frequencies (0 for a single step).
    pub fn step_hz(&self) -> f64 {
        if self.n_steps == 1 {
            0.0
        } else {
            (self.f_max - self.f_min) / (self.n_steps - 1) as f64
        }
    }

    pub fn frequency(&self, i: usize) -> f64 {
        if i + 1 == self.n_steps && self.n_steps > 1 {
            self.f_max
        } else {
            self.f_min + i as f64 * self.step_hz()
        }
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.n_steps).map(|i| self.frequency(i)).collect()
    }

    pub fn wavenumber(&self, i: usize) -> f64 {
        wavenumber(self.frequency(i))
    }

    pub fn wavenumbers(&self) -> Vec<f64> {
        (0..self.n_steps).map(|i| self.wavenumber(i)).collect()
    }
}

pub fn wavenumber(f_hz: f64) -> f64 {
    2.0 * PI * f_hz / SPEED_OF_LIGHT
}

/// Regular voxel grid centred on `center`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VoxelGrid {
    dims: [usize; 3],
    pitch: [f64; 3],
    center: Point3,
}

impl VoxelGrid {
    pub fn new(dims: [usize; 3], pitch: [f64; 3], center: Point3) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!(
                "voxel counts must be positive, got {dims:?}"
            )));
        }
        if pitch.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::invalid(format!(
                "voxel pitch must be positive, got {pitch:?}"
            )));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("grid center is not finite"));
        }
        Ok(Self {
            dims,
            pitch,
            center,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn pitch(&self) -> [f64; 3] {
        self.pitch
    }

    pub fn center(&self) -> Point3 {
        self.center
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        debug_assert!(ix < self.dims[0] && iy < self.dims[1] && iz < self.dims[2]);
        (ix * self.dims[1] + iy) * self.dims[2] + iz
    }

    pub fn unravel(&self, n: usize) -> [usize; 3] {
        let iz = n % self.dims[2];
        let rest = n / self.dims[2];
        [rest / self.dims[1], rest % self.dims[1], iz]
    }

    /// Coordinate of the voxel centre along `axis` for per-axis index `i`.
    pub fn axis_coord(&self, axis: usize, i: usize) -> f64 {
        let offset = i as f64 - (self.dims[axis] - 1) as f64 / 2.0;
        self.center[axis] + offset * self.pitch[axis]
    }

    pub fn center_of(&self, idx: [usize; 3]) -> Point3 {
        [0, 1, 2].map(|a| self.axis_coord(a, idx[a]))
    }

    pub fn voxel_center(&self, n: usize) -> Result<Point3> {
        if n >= self.len() {
            return Err(Error::invalid(format!(
                "voxel index {n} out of range (N = {})",
                self.len()
            )));
        }
        Ok(self.center_of(self.unravel(n)))
    }

    /// All voxel centres in canonical order.
    pub fn centers(&self) -> Vec<Point3> {
        (0..self.len())
            .map(|n| self.center_of(self.unravel(n)))
            .collect()
    }

    /// Nearest per-axis index for coordinate `x`, unclamped.
    pub fn nearest_axis_index(&self, axis: usize, x: f64) -> i64 {
        let half = (self.dims[axis] - 1) as f64 / 2.0;
        ((x - self.center[axis]) / self.pitch[axis] + half).round() as i64
    }

    /// Nearest voxel to `p`, or `None` if `p` lies outside the grid's cells.
    pub fn nearest_voxel(&self, p: Point3) -> Option<[usize; 3]> {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let i = self.nearest_axis_index(a, p[a]);
            if i < 0 || i >= self.dims[a] as i64 {
                return None;
            }
            idx[a] = i as usize;
        }
        Some(idx)
    }

    /// Nearest voxel to `p`, clamped onto the grid.
    pub fn clamped_voxel(&self, p: Point3) -> [usize; 3] {
        [0, 1, 2].map(|a| {
            self.nearest_axis_index(a, p[a])
                .clamp(0, self.dims[a] as i64 - 1) as usize
        })
    }
}

/// Array, frequency sweep and voxel grid: everything that defines the
/// observation operator.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagingConfig {
    pub array: AntennaArray,
    pub freqs: FrequencyGrid,
    pub grid: VoxelGrid,
    pulse: Vec<Complex64>,
}

impl ImagingConfig {
    /// Config with a flat pulse spectrum, `p(k) = 1`.
    pub fn new(array: AntennaArray, freqs: FrequencyGrid, grid: VoxelGrid) -> Self {
        let pulse = vec![Complex64::new(1.0, 0.0); freqs.n_steps()];
        Self {
            array,
            freqs,
            grid,
            pulse,
        }
    }

    pub fn with_pulse(mut self, pulse: Vec<Complex64>) -> Result<Self> {
        if pulse.len() != self.freqs.n_steps() {
            return Err(Error::shape(
                format!("{} pulse weights", self.freqs.n_steps()),
                pulse.len(),
            ));
        }
        if pulse.iter().any(|p| !p.re.is_finite() || !p.im.is_finite()) {
            return Err(Error::invalid("pulse spectrum is not finite"));
        }
        self.pulse = pulse;
        Ok(self)
    }

    pub fn pulse(&self) -> &[Complex64] {
        &self.pulse
    }

    pub fn has_flat_pulse(&self) -> bool {
        self.pulse.iter().all(|p| *p == Complex64::new(1.0, 0.0))
    }

    pub fn n_tx(&self) -> usize {
        self.array.n_tx()
    }

    pub fn n_rx(&self) -> usize {
        self.array.n_rx()
    }

    pub fn n_freqs(&self) -> usize {
        self.freqs.n_steps()
    }

    /// Number of measurements `M`.
    pub fn n_measurements(&self) -> usize {
        self.n_tx() * self.n_rx() * self.n_freqs()
    }

    /// Number of voxels `N`.
    pub fn n_voxels(&self) -> usize {
        self.grid.len()
    }

    pub fn measurement_index(&self, i_tx: usize, i_rx: usize, i_f: usize) -> usize {
        (i_tx * self.n_rx() + i_rx) * self.n_freqs() + i_f
    }

    pub fn unravel_measurement(&self, m: usize) -> (usize, usize, usize) {
        let i_f = m % self.n_freqs();
        let pair = m / self.n_freqs();
        (pair / self.n_rx(), pair % self.n_rx(), i_f)
    }

    pub fn with_steps(&self, n_steps: usize) -> Result<Self> {
        let freqs = FrequencyGrid::new(self.freqs.f_min(), self.freqs.f_max(), n_steps)?;
        Ok(Self::new(self.array.clone(), freqs, self.grid.clone()))
    }

    pub fn to_file(&self) -> ConfigFile {
        ConfigFile {
            array: ArraySource::Inline {
                tx: self.array.tx.clone(),
                rx: self.array.rx.clone(),
            },
            f_min_hz: self.freqs.f_min(),
            f_max_hz: self.freqs.f_max(),
            n_steps: self.freqs.n_steps(),
            grid: GridFile::from(&self.grid),
        }
    }

    /// Short stable digest of the config, embedded in output metadata.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        let canonical = serde_json::to_string(&self.to_file()).expect("config serializes");
        hasher.update(canonical.as_bytes());
        for p in &self.pulse {
            hasher.update(p.re.to_le_bytes());
            hasher.update(p.im.to_le_bytes());
        }
        hex::encode(&hasher.finalize()[..8])
    }
}

/// Reference setting: 0.3 m Mills Cross with 12 Tx / 13 Rx, 4-16 GHz in 15
/// steps, 25x25x49 voxels of 1.25 x 1.25 x 0.625 cm centred 0.5 m out.
pub fn reference_config() -> ImagingConfig {
    reference_config_with_steps(15).expect("reference values are valid")
}

pub fn reference_config_with_steps(n_steps: usize) -> Result<ImagingConfig> {
    let array = mills_cross(0.3, 12, 13)?;
    let freqs = FrequencyGrid::new(4e9, 16e9, n_steps)?;
    let grid = VoxelGrid::new([25, 25, 49], [0.0125, 0.0125, 0.00625], [0.0, 0.0, 0.5])?;
    Ok(ImagingConfig::new(array, freqs, grid))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArraySource {
    Inline { tx: Vec<Point3>, rx: Vec<Point3> },
    Path(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridFile {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub dx_m: f64,
    pub dy_m: f64,
    pub dz_m: f64,
    pub center_m: Point3,
}

impl From<&VoxelGrid> for GridFile {
    fn from(g: &VoxelGrid) -> Self {
        Self {
            nx: g.dims[0],
            ny: g.dims[1],
            nz: g.dims[2],
            dx_m: g.pitch[0],
            dy_m: g.pitch[1],
            dz_m: g.pitch[2],
            center_m: g.center,
        }
    }
}

impl GridFile {
    pub fn to_grid(&self) -> Result<VoxelGrid> {
        VoxelGrid::new(
            [self.nx, self.ny, self.nz],
            [self.dx_m, self.dy_m, self.dz_m],
            self.center_m,
        )
    }
}

/// On-disk config schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigFile {
    pub array: ArraySource,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub n_steps: usize,
    pub grid: GridFile,
}

impl ConfigFile {
    /// Resolve into a config. Relative array paths are taken from `base_dir`.
    pub fn resolve(&self, base_dir: Option<&Path>) -> Result<ImagingConfig> {
        let array = match &self.array {
            ArraySource::Inline { tx, rx } => ArrayFile {
                tx: tx.clone(),
                rx: rx.clone(),
            }
            .into_array("config array")?,
            ArraySource::Path(p) => {
                let path = match base_dir {
                    Some(dir) if p.is_relative() => dir.join(p),
                    _ => p.clone(),
                };
                load_array(path)?
            }
        };
        let freqs = FrequencyGrid::new(self.f_min_hz, self.f_max_hz, self.n_steps)?;
        Ok(ImagingConfig::new(array, freqs, self.grid.to_grid()?))
    }
}

pub fn parse_config(json: &str, base_dir: Option<&Path>) -> Result<ImagingConfig> {
    let file: ConfigFile =
        serde_json::from_str(json).map_err(|e| Error::format(0, format!("config file: {e}")))?;
    file.resolve(base_dir)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ImagingConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ConfigFile = serde_json::from_str(&text)
        .map_err(|e| Error::format(0, format!("{}: {e}", path.display())))?;
    file.resolve(path.parent())
}
