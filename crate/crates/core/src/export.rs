//! Paired training data: adjoint image and ground-truth magnitude per scene,
//! split into train/val/test partitions.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::forward::{add_noise_with_sigma, sigma_for_energy, LinearOperator, NoiseSpec, Operator};
use crate::geometry::{ConfigFile, ImagingConfig};
use crate::recon_direct::normalized_magnitude;
use crate::rng;
use crate::synth::{generate_scene, scene_seed, write_json, SceneSpec, MANIFEST_NAME};
use crate::tensorio::{write_tensor, Tensor};
use crate::volume::MeasurementVector;

pub const PARTITIONS: [&str; 3] = ["train", "val", "test"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Split {
    pub fn counts(&self) -> [usize; 3] {
        [self.train, self.val, self.test]
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

impl Default for Split {
    fn default() -> Self {
        Self {
            train: 800,
            val: 100,
            test: 100,
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    /// `"800,100,100"`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::invalid(format!("split {s:?}: {e}")))?;
        match parts[..] {
            [train, val, test] => Ok(Self { train, val, test }),
            _ => Err(Error::invalid(format!("split {s:?} needs three counts"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    /// Normalized adjoint image, f32, shape `[nx, ny, nz]`.
    pub adjoint: PathBuf,
    /// Ground-truth magnitude, f32, shape `[nx, ny, nz]`.
    pub truth: PathBuf,
    /// Noisy measurements, c64, shape `[M]`.
    pub measurements: PathBuf,
    pub seed: u64,
    pub noise_seed: u64,
    pub random_phase: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Partitions {
    pub train: Vec<PairEntry>,
    pub val: Vec<PairEntry>,
    pub test: Vec<PairEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub partitions: Partitions,
    pub config: ConfigFile,
    pub config_hash: String,
    pub base_seed: u64,
    /// `None` for noiseless data.
    pub snr_db: Option<f64>,
    pub random_phase: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExportOptions {
    pub split: Split,
    pub base_seed: u64,
    /// `f64::INFINITY` disables noise.
    pub snr_db: f64,
    pub random_phase: bool,
}

/// Scene `i` (counted across partitions) uses seed `mix(base_seed, i)`;
/// its noise uses `mix(scene_seed, 1)`.
pub fn export_dataset(
    dir: &Path,
    config: &ImagingConfig,
    opts: &ExportOptions,
) -> Result<ExportManifest> {
    if opts.split.total() == 0 {
        return Err(Error::invalid("export needs at least one scene"));
    }
    // validates the SNR up front
    NoiseSpec::new(opts.snr_db, 0)?;
    let op = Operator::new(config)?;
    let hash = config.hash();
    let mut offset = 0;
    let mut parts: Vec<Vec<PairEntry>> = Vec::new();
    for (name, count) in PARTITIONS.iter().zip(opts.split.counts()) {
        let sub = dir.join(name);
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        let entries = (offset..offset + count)
            .into_par_iter()
            .map(|i| export_one(dir, name, i, config, &op, &hash, opts))
            .collect::<Result<Vec<_>>>()?;
        parts.push(entries);
        offset += count;
    }
    let test = parts.pop().unwrap();
    let val = parts.pop().unwrap();
    let train = parts.pop().unwrap();
    let manifest = ExportManifest {
        partitions: Partitions { train, val, test },
        config: config.to_file(),
        config_hash: hash,
        base_seed: opts.base_seed,
        snr_db: opts.snr_db.is_finite().then_some(opts.snr_db),
        random_phase: opts.random_phase,
    };
    write_json(&dir.join(MANIFEST_NAME), &manifest)?;
    Ok(manifest)
}

fn export_one(
    dir: &Path,
    partition: &str,
    i: usize,
    config: &ImagingConfig,
    op: &Operator,
    hash: &str,
    opts: &ExportOptions,
) -> Result<PairEntry> {
    let seed = scene_seed(opts.base_seed, i);
    let noise_seed = rng::mix(seed, 1);
    let scene = generate_scene(
        &config.grid,
        &SceneSpec {
            seed,
            random_phase: opts.random_phase,
            ..SceneSpec::default()
        },
    )?;
    let clean = MeasurementVector::new(op.forward(scene.volume.values()));
    let y = if opts.snr_db.is_finite() {
        let sigma = sigma_for_energy(clean.norm_sqr(), config.n_measurements(), opts.snr_db)?;
        add_noise_with_sigma(&clean, sigma, noise_seed)
    } else {
        clean
    };
    let adj = op.apply_adjoint(&y)?;
    let (image, scale) = normalized_magnitude(&adj)?;

    let mut meta = Map::new();
    meta.insert("config_hash".into(), json!(hash));
    meta.insert("seed".into(), json!(seed));
    meta.insert("noise_seed".into(), json!(noise_seed));
    meta.insert("partition".into(), json!(partition));
    meta.insert("index".into(), json!(i));
    meta.insert(
        "snr_db".into(),
        if opts.snr_db.is_finite() {
            json!(opts.snr_db)
        } else {
            Value::Null
        },
    );
    let with = |extra: Value| {
        let mut m = meta.clone();
        if let Value::Object(e) = extra {
            m.extend(e);
        }
        m
    };

    let stem = format!("{i:05}");
    let entry = PairEntry {
        adjoint: Path::new(partition).join(format!("{stem}_adjoint.nft")),
        truth: Path::new(partition).join(format!("{stem}_truth.nft")),
        measurements: Path::new(partition).join(format!("{stem}_meas.nft")),
        seed,
        noise_seed,
        random_phase: opts.random_phase,
    };
    write_tensor(
        dir.join(&entry.adjoint),
        &Tensor::from_magnitude_f32(&image)
            .with_meta(with(json!({"kind": "adjoint_image", "scale": scale}))),
    )?;
    write_tensor(
        dir.join(&entry.truth),
        &Tensor::from_magnitude_f32(&scene.magnitude())
            .with_meta(with(json!({"kind": "truth_magnitude"}))),
    )?;
    let meas = Tensor::from_measurements_c64(&y).with_meta(with(json!({"kind": "measurements"})));
    write_tensor(dir.join(&entry.measurements), &meas)?;
    Ok(entry)
}
