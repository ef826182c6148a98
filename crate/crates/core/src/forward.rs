//! Discrete observation model `y = A s + w`.
//!
//! `A[m, n] = p(k_m) exp(-j k_m (d_t + d_r)) / (4 pi d_t d_r)` where `d_t`,
//! `d_r` are the distances from the centre of voxel `n` to the transmitter
//! and receiver of measurement `m`.
//!
//! [`Operator`] applies `A` and `A^H` without materializing it. It caches, per
//! antenna and voxel, the amplitude factor and the phasors for the first
//! wavenumber and for the wavenumber step, so the inner loops are complex
//! multiply-adds only. [`SystemMatrix`] is the dense realization for small
//! configs and for cross-checking.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ImagingConfig, Point3};
use crate::rng::{self, Gaussian};
use crate::volume::{MeasurementVector, ReflectivityVolume};

/// Default ceiling on the dense system matrix size (4 GiB).
pub const DEFAULT_DENSE_BUDGET_BYTES: u128 = 4 << 30;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// A linear map `C^cols -> C^rows` with its adjoint.
pub trait LinearOperator: Sync {
    fn n_rows(&self) -> usize;
    fn n_cols(&self) -> usize;
    fn forward_into(&self, x: &[Complex64], y: &mut [Complex64]);
    fn adjoint_into(&self, y: &[Complex64], x: &mut [Complex64]);

    fn forward(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut y = vec![ZERO; self.n_rows()];
        self.forward_into(x, &mut y);
        y
    }

    fn adjoint(&self, y: &[Complex64]) -> Vec<Complex64> {
        let mut x = vec![ZERO; self.n_cols()];
        self.adjoint_into(y, &mut x);
        x
    }
}

fn distance(antenna: &Point3, p: &Point3) -> f64 {
    let dx = antenna[0] - p[0];
    let dy = antenna[1] - p[1];
    let dz = antenna[2] - p[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// One system-matrix element for explicit antenna positions, wavenumber and
/// pulse weight.
pub fn element(
    tx: &Point3,
    rx: &Point3,
    k: f64,
    p: Complex64,
    voxel: &Point3,
) -> Result<Complex64> {
    let d_t = distance(tx, voxel);
    let d_r = distance(rx, voxel);
    if d_t == 0.0 || d_r == 0.0 {
        return Err(Error::DegenerateGeometry(format!(
            "voxel at {voxel:?} coincides with an antenna"
        )));
    }
    Ok(p * Complex64::from_polar(1.0 / (4.0 * PI * d_t * d_r), -k * (d_t + d_r)))
}

pub fn matrix_entry(config: &ImagingConfig, m: usize, n: usize) -> Result<Complex64> {
    if m >= config.n_measurements() {
        return Err(Error::invalid(format!(
            "measurement index {m} out of range (M = {})",
            config.n_measurements()
        )));
    }
    let voxel = config.grid.voxel_center(n)?;
    let (t, r, f) = config.unravel_measurement(m);
    element(
        &config.array.tx()[t],
        &config.array.rx()[r],
        config.freqs.wavenumber(f),
        config.pulse()[f],
        &voxel,
    )
}

/// Column `n` of `A`, computed entry by entry.
pub fn column(config: &ImagingConfig, n: usize) -> Result<Vec<Complex64>> {
    let voxel = config.grid.voxel_center(n)?;
    let ks = config.freqs.wavenumbers();
    let mut col = Vec::with_capacity(config.n_measurements());
    for tx in config.array.tx() {
        for rx in config.array.rx() {
            for (k, p) in ks.iter().zip(config.pulse()) {
                col.push(element(tx, rx, *k, *p, &voxel)?);
            }
        }
    }
    Ok(col)
}

/// Dense `M x N` system matrix, row-major in canonical orders.
#[derive(Clone, Debug)]
pub struct SystemMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<Complex64>,
}

impl SystemMatrix {
    pub fn from_entries(rows: usize, cols: usize, entries: Vec<Complex64>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::shape(
                format!("{rows}x{cols} entries"),
                entries.len(),
            ));
        }
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, m: usize, n: usize) -> Complex64 {
        self.entries[m * self.cols + n]
    }

    pub fn row(&self, m: usize) -> &[Complex64] {
        &self.entries[m * self.cols..(m + 1) * self.cols]
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }
}

impl LinearOperator for SystemMatrix {
    fn n_rows(&self) -> usize {
        self.rows
    }

    fn n_cols(&self) -> usize {
        self.cols
    }

    fn forward_into(&self, x: &[Complex64], y: &mut [Complex64]) {
        assert_eq!(x.len(), self.cols);
        assert_eq!(y.len(), self.rows);
        y.par_iter_mut().enumerate().for_each(|(m, out)| {
            *out = self.row(m).iter().zip(x).map(|(a, v)| a * v).sum();
        });
    }

    fn adjoint_into(&self, y: &[Complex64], x: &mut [Complex64]) {
        assert_eq!(y.len(), self.rows);
        assert_eq!(x.len(), self.cols);
        const CHUNK: usize = 512;
        x.par_chunks_mut(CHUNK).enumerate().for_each(|(c, out)| {
            let start = c * CHUNK;
            out.iter_mut().for_each(|v| *v = ZERO);
            for (m, ym) in y.iter().enumerate() {
                let row = &self.row(m)[start..start + out.len()];
                for (o, a) in out.iter_mut().zip(row) {
                    *o += a.conj() * ym;
                }
            }
        });
    }
}

pub fn dense_bytes(config: &ImagingConfig) -> u128 {
    config.n_measurements() as u128
        * config.n_voxels() as u128
        * std::mem::size_of::<Complex64>() as u128
}

pub fn build_matrix(config: &ImagingConfig) -> Result<SystemMatrix> {
    build_matrix_with_budget(config, DEFAULT_DENSE_BUDGET_BYTES)
}

pub fn build_matrix_with_budget(
    config: &ImagingConfig,
    budget_bytes: u128,
) -> Result<SystemMatrix> {
    let required = dense_bytes(config);
    if required > budget_bytes {
        return Err(Error::Capacity {
            required,
            budget: budget_bytes,
        });
    }
    let (rows, cols) = (config.n_measurements(), config.n_voxels());
    let centers = config.grid.centers();
    let ks = config.freqs.wavenumbers();
    let mut entries = vec![ZERO; rows * cols];
    entries
        .par_chunks_mut(cols)
        .enumerate()
        .try_for_each(|(m, row)| -> Result<()> {
            let (t, r, f) = config.unravel_measurement(m);
            let (tx, rx) = (&config.array.tx()[t], &config.array.rx()[r]);
            for (out, voxel) in row.iter_mut().zip(&centers) {
                *out = element(tx, rx, ks[f], config.pulse()[f], voxel)?;
            }
            Ok(())
        })?;
    Ok(SystemMatrix {
        rows,
        cols,
        entries,
    })
}

/// Which factors of the matrix element the operator includes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Weighting {
    /// Full element: pulse weight, `1 / (4 pi d_t d_r)` and phase.
    Full,
    /// Pure phase `exp(-j k (d_t + d_r))`; the kernel of backprojection.
    PhaseOnly,
}

/// Per-antenna, per-voxel factors: amplitude, `exp(-j k_0 d)`, `exp(-j dk d)`.
struct AntennaTable {
    amp: Vec<f64>,
    base: Vec<Complex64>,
    step: Vec<Complex64>,
}

impl AntennaTable {
    fn build(
        antennas: &[Point3],
        centers: &[Point3],
        k0: f64,
        dk: f64,
        amp_scale: Option<f64>,
    ) -> Result<Self> {
        let n = centers.len();
        let mut amp = Vec::with_capacity(antennas.len() * n);
        let mut base = Vec::with_capacity(antennas.len() * n);
        let mut step = Vec::with_capacity(antennas.len() * n);
        for a in antennas {
            for c in centers {
                let d = distance(a, c);
                if d == 0.0 {
                    return Err(Error::DegenerateGeometry(format!(
                        "voxel at {c:?} coincides with antenna at {a:?}"
                    )));
                }
                amp.push(amp_scale.map_or(1.0, |s| s / d));
                base.push(Complex64::from_polar(1.0, -k0 * d));
                step.push(Complex64::from_polar(1.0, -dk * d));
            }
        }
        Ok(Self { amp, base, step })
    }
}

/// Matrix-free `A` (or its pure-phase variant) for one config.
pub struct Operator {
    n_tx: usize,
    n_rx: usize,
    n_f: usize,
    n_vox: usize,
    dims: [usize; 3],
    weighting: Weighting,
    pulse: Vec<Complex64>,
    tx: AntennaTable,
    rx: AntennaTable,
}

impl Operator {
    pub fn new(config: &ImagingConfig) -> Result<Self> {
        Self::with_weighting(config, Weighting::Full)
    }

    pub fn with_weighting(config: &ImagingConfig, weighting: Weighting) -> Result<Self> {
        let centers = config.grid.centers();
        let n_f = config.n_freqs();
        let k0 = config.freqs.wavenumber(0);
        let dk = if n_f > 1 {
            (config.freqs.wavenumber(n_f - 1) - k0) / (n_f - 1) as f64
        } else {
            0.0
        };
        let (tx_scale, rx_scale, pulse) = match weighting {
            Weighting::Full => (Some(1.0), Some(1.0 / (4.0 * PI)), config.pulse().to_vec()),
            Weighting::PhaseOnly => (None, None, vec![Complex64::new(1.0, 0.0); n_f]),
        };
        Ok(Self {
            n_tx: config.n_tx(),
            n_rx: config.n_rx(),
            n_f,
            n_vox: centers.len(),
            dims: config.grid.dims(),
            weighting,
            pulse,
            tx: AntennaTable::build(config.array.tx(), &centers, k0, dk, tx_scale)?,
            rx: AntennaTable::build(config.array.rx(), &centers, k0, dk, rx_scale)?,
        })
    }

    pub fn weighting(&self) -> Weighting {
        self.weighting
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn apply(&self, s: &ReflectivityVolume) -> Result<MeasurementVector> {
        if s.dims() != self.dims {
            return Err(Error::shape(
                format!("{:?}", self.dims),
                format!("{:?}", s.dims()),
            ));
        }
        Ok(MeasurementVector::new(self.forward(s.values())))
    }

    pub fn apply_adjoint(&self, y: &MeasurementVector) -> Result<ReflectivityVolume> {
        if y.len() != self.n_rows() {
            return Err(Error::shape(
                format!("{} measurements", self.n_rows()),
                y.len(),
            ));
        }
        ReflectivityVolume::new(self.dims, self.adjoint(y.values()))
    }
}

/// Voxels processed together in the blocked kernels; the per-block scratch
/// (six f64 arrays) stays in L1.
const BLOCK: usize = 256;
const LANES: usize = 8;

/// Pair-combined factors for one block of voxels, split into real and
/// imaginary arrays so the frequency recurrences vectorize across voxels.
struct PairBlock {
    cur_re: [f64; BLOCK],
    cur_im: [f64; BLOCK],
    step_re: [f64; BLOCK],
    step_im: [f64; BLOCK],
}

impl PairBlock {
    fn new() -> Box<Self> {
        Box::new(Self {
            cur_re: [0.0; BLOCK],
            cur_im: [0.0; BLOCK],
            step_re: [0.0; BLOCK],
            step_im: [0.0; BLOCK],
        })
    }
}

impl Operator {
    /// `acc[f] += sum_v A[(t, r, f), v] s[v]`, before the pulse weight.
    fn forward_pair(
        &self,
        t: usize,
        r: usize,
        s: &[Complex64],
        acc: &mut [Complex64],
        blk: &mut PairBlock,
    ) {
        let n = self.n_vox;
        let (to, ro) = (t * n, r * n);
        for start in (0..n).step_by(BLOCK) {
            let len = BLOCK.min(n - start);
            for i in 0..len {
                let v = start + i;
                let (a, b) = (to + v, ro + v);
                let c =
                    s[v] * (self.tx.amp[a] * self.rx.amp[b]) * (self.tx.base[a] * self.rx.base[b]);
                let st = self.tx.step[a] * self.rx.step[b];
                blk.cur_re[i] = c.re;
                blk.cur_im[i] = c.im;
                blk.step_re[i] = st.re;
                blk.step_im[i] = st.im;
            }
            // zero padding keeps the lanes full
            for i in len..len.next_multiple_of(LANES).min(BLOCK) {
                blk.cur_re[i] = 0.0;
                blk.cur_im[i] = 0.0;
            }
            let padded = len.next_multiple_of(LANES);
            for out in acc.iter_mut() {
                let mut lane_re = [0.0f64; LANES];
                let mut lane_im = [0.0f64; LANES];
                let chunks = blk.cur_re[..padded]
                    .chunks_exact_mut(LANES)
                    .zip(blk.cur_im[..padded].chunks_exact_mut(LANES))
                    .zip(
                        blk.step_re[..padded]
                            .chunks_exact(LANES)
                            .zip(blk.step_im[..padded].chunks_exact(LANES)),
                    );
                for ((cr, ci), (sr, si)) in chunks {
                    for l in 0..LANES {
                        lane_re[l] += cr[l];
                        lane_im[l] += ci[l];
                        let (a, b) = (cr[l], ci[l]);
                        cr[l] = a * sr[l] - b * si[l];
                        ci[l] = a * si[l] + b * sr[l];
                    }
                }
                *out += Complex64::new(lane_re.iter().sum(), lane_im.iter().sum());
            }
        }
    }
}

impl LinearOperator for Operator {
    fn n_rows(&self) -> usize {
        self.n_tx * self.n_rx * self.n_f
    }

    fn n_cols(&self) -> usize {
        self.n_vox
    }

    fn forward_into(&self, s: &[Complex64], y: &mut [Complex64]) {
        assert_eq!(s.len(), self.n_vox);
        assert_eq!(y.len(), self.n_rows());
        let n_rx = self.n_rx;
        y.par_chunks_mut(self.n_f)
            .enumerate()
            .for_each_init(PairBlock::new, |blk, (pair, acc)| {
                acc.iter_mut().for_each(|v| *v = ZERO);
                self.forward_pair(pair / n_rx, pair % n_rx, s, acc, blk);
                for (out, p) in acc.iter_mut().zip(&self.pulse) {
                    *out *= p;
                }
            });
    }

    fn adjoint_into(&self, y: &[Complex64], s: &mut [Complex64]) {
        assert_eq!(y.len(), self.n_rows());
        assert_eq!(s.len(), self.n_vox);
        let (n_f, n) = (self.n_f, self.n_vox);
        // conj(p) folded into the measurements once
        let weighted: Vec<Complex64> = y
            .iter()
            .enumerate()
            .map(|(m, v)| self.pulse[m % n_f].conj() * v)
            .collect();
        s.par_chunks_mut(BLOCK)
            .enumerate()
            .for_each_init(PairBlock::new, |blk, (c, out)| {
                let start = c * BLOCK;
                let len = out.len();
                let mut out_re = [0.0f64; BLOCK];
                let mut out_im = [0.0f64; BLOCK];
                for t in 0..self.n_tx {
                    for r in 0..self.n_rx {
                        let ys = &weighted[(t * self.n_rx + r) * n_f..][..n_f];
                        if ys.iter().all(|v| *v == ZERO) {
                            continue;
                        }
                        let (to, ro) = (t * n + start, r * n + start);
                        // Horner in conj(step): acc = sum_f conj(step)^f ys[f]
                        for i in 0..len {
                            let st = (self.tx.step[to + i] * self.rx.step[ro + i]).conj();
                            blk.step_re[i] = st.re;
                            blk.step_im[i] = st.im;
                            blk.cur_re[i] = ys[n_f - 1].re;
                            blk.cur_im[i] = ys[n_f - 1].im;
                        }
                        let padded = len.next_multiple_of(LANES);
                        for yf in ys[..n_f - 1].iter().rev() {
                            let chunks = blk.cur_re[..padded]
                                .chunks_exact_mut(LANES)
                                .zip(blk.cur_im[..padded].chunks_exact_mut(LANES))
                                .zip(
                                    blk.step_re[..padded]
                                        .chunks_exact(LANES)
                                        .zip(blk.step_im[..padded].chunks_exact(LANES)),
                                );
                            for ((cr, ci), (sr, si)) in chunks {
                                for l in 0..LANES {
                                    let (a, b) = (cr[l], ci[l]);
                                    cr[l] = a * sr[l] - b * si[l] + yf.re;
                                    ci[l] = a * si[l] + b * sr[l] + yf.im;
                                }
                            }
                        }
                        for i in 0..len {
                            let (a, b) = (to + i, ro + i);
                            let w = (self.tx.base[a] * self.rx.base[b]).conj()
                                * (self.tx.amp[a] * self.rx.amp[b]);
                            let acc = Complex64::new(blk.cur_re[i], blk.cur_im[i]) * w;
                            out_re[i] += acc.re;
                            out_im[i] += acc.im;
                        }
                    }
                }
                for (i, o) in out.iter_mut().enumerate() {
                    *o = Complex64::new(out_re[i], out_im[i]);
                }
            });
    }
}

/// `A s` without materializing `A`.
pub fn apply_forward(config: &ImagingConfig, s: &ReflectivityVolume) -> Result<MeasurementVector> {
    s.check_config(config)?;
    Operator::new(config)?.apply(s)
}

/// `A^H y` without materializing `A`.
pub fn apply_adjoint(config: &ImagingConfig, y: &MeasurementVector) -> Result<ReflectivityVolume> {
    y.check_config(config)?;
    Operator::new(config)?.apply_adjoint(y)
}

/// Noise level and PRNG seed for one simulated acquisition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Measurement SNR in dB; `+inf` disables noise.
    pub snr_db: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(snr_db: f64, seed: u64) -> Result<Self> {
        if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
            return Err(Error::invalid(format!(
                "SNR must be finite or +inf, got {snr_db}"
            )));
        }
        Ok(Self { snr_db, seed })
    }

    pub fn noiseless() -> Self {
        Self {
            snr_db: f64::INFINITY,
            seed: 0,
        }
    }

    pub fn is_noiseless(&self) -> bool {
        self.snr_db == f64::INFINITY
    }
}

/// `sigma_w = sqrt(energy / (M 10^(snr/10)))` for a signal of energy `||As||^2`.
pub fn sigma_for_energy(energy: f64, n_measurements: usize, snr_db: f64) -> Result<f64> {
    if !(energy > 0.0) {
        return Err(Error::UndefinedSnr);
    }
    if snr_db.is_nan() {
        return Err(Error::invalid("SNR is NaN"));
    }
    Ok((energy / (n_measurements as f64 * 10f64.powf(snr_db / 10.0))).sqrt())
}

pub fn noise_sigma_from_snr(
    config: &ImagingConfig,
    s: &ReflectivityVolume,
    snr_db: f64,
) -> Result<f64> {
    let y = apply_forward(config, s)?;
    sigma_for_energy(y.norm_sqr(), config.n_measurements(), snr_db)
}

/// `y + w` with `w_m = sigma (g1 + j g2) / sqrt 2`, so `E|w_m|^2 = sigma^2`.
pub fn add_noise_with_sigma(y: &MeasurementVector, sigma: f64, seed: u64) -> MeasurementVector {
    let mut gauss = Gaussian::new(rng::seeded(seed));
    let scale = sigma / std::f64::consts::SQRT_2;
    let values = y
        .values()
        .iter()
        .map(|v| {
            let (g1, g2) = gauss.pair();
            v + Complex64::new(g1, g2) * scale
        })
        .collect();
    MeasurementVector::new(values)
}

/// Add white complex Gaussian noise at `spec.snr_db` relative to `||A s||^2`.
pub fn add_noise(
    y: &MeasurementVector,
    spec: &NoiseSpec,
    s: &ReflectivityVolume,
    config: &ImagingConfig,
) -> Result<MeasurementVector> {
    y.check_config(config)?;
    if spec.is_noiseless() {
        return Ok(y.clone());
    }
    let sigma = noise_sigma_from_snr(config, s, spec.snr_db)?;
    Ok(add_noise_with_sigma(y, sigma, spec.seed))
}

/// Result of [`simulate`]: noisy measurements plus the calibration used.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub measurements: MeasurementVector,
    pub signal_energy: f64,
    /// `None` when noise is disabled.
    pub sigma: Option<f64>,
}

/// `y = A s + w` with `A s` computed once.
pub fn simulate(
    config: &ImagingConfig,
    s: &ReflectivityVolume,
    spec: &NoiseSpec,
) -> Result<Simulation> {
    let clean = apply_forward(config, s)?;
    let energy = clean.norm_sqr();
    if spec.is_noiseless() {
        return Ok(Simulation {
            measurements: clean,
            signal_energy: energy,
            sigma: None,
        });
    }
    let sigma = sigma_for_energy(energy, config.n_measurements(), spec.snr_db)?;
    Ok(Simulation {
        measurements: add_noise_with_sigma(&clean, sigma, spec.seed),
        signal_energy: energy,
        sigma: Some(sigma),
    })
}

/// `10 log10(||clean||^2 / ||noisy - clean||^2)`.
pub fn empirical_snr_db(clean: &[Complex64], noisy: &[Complex64]) -> f64 {
    let signal: f64 = clean.iter().map(|v| v.norm_sqr()).sum();
    let noise: f64 = clean
        .iter()
        .zip(noisy)
        .map(|(a, b)| (b - a).norm_sqr())
        .sum();
    10.0 * (signal / noise).log10()
}
