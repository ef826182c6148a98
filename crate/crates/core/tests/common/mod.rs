//! Independent reference implementations shared by the test targets.

#![allow(dead_code)]

use std::f64::consts::PI;

use nfmimo_core::geometry::{mills_cross, FrequencyGrid, ImagingConfig, VoxelGrid};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_complex(r: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|_| Complex64::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)))
        .collect()
}

pub fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

pub fn small_config(n_tx: usize, n_rx: usize, n_f: usize, dims: [usize; 3]) -> ImagingConfig {
    ImagingConfig::new(
        mills_cross(0.3, n_tx, n_rx).unwrap(),
        FrequencyGrid::new(4e9, 16e9, n_f).unwrap(),
        VoxelGrid::new(dims, [0.0125, 0.0125, 0.00625], [0.0, 0.0, 0.5]).unwrap(),
    )
}

/// Dense `A` from the element formula, written out independently.
pub fn oracle_matrix(c: &ImagingConfig) -> Vec<Vec<Complex64>> {
    let c0 = 299_792_458.0;
    let mut rows = Vec::new();
    for tx in c.array.tx() {
        for rx in c.array.rx() {
            for i in 0..c.n_freqs() {
                let k = 2.0 * PI * c.freqs.frequency(i) / c0;
                let row = (0..c.n_voxels())
                    .map(|n| {
                        let p = c.grid.voxel_center(n).unwrap();
                        let dt = ((p[0] - tx[0]).powi(2)
                            + (p[1] - tx[1]).powi(2)
                            + (p[2] - tx[2]).powi(2))
                        .sqrt();
                        let dr = ((p[0] - rx[0]).powi(2)
                            + (p[1] - rx[1]).powi(2)
                            + (p[2] - rx[2]).powi(2))
                        .sqrt();
                        Complex64::new(0.0, -k * (dt + dr)).exp() / (4.0 * PI * dt * dr)
                    })
                    .collect();
                rows.push(row);
            }
        }
    }
    rows
}

pub fn dense_apply(a: &[Vec<Complex64>], x: &[Complex64]) -> Vec<Complex64> {
    a.iter()
        .map(|row| row.iter().zip(x).map(|(u, v)| u * v).sum())
        .collect()
}

pub fn dense_adjoint(a: &[Vec<Complex64>], y: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); a[0].len()];
    for (row, ym) in a.iter().zip(y) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v.conj() * ym;
        }
    }
    out
}

/// Independent oracle for the smoothed TV objective: FISTA with restarts,
/// written against the dense matrix with its own difference operator.
pub struct Oracle<'a> {
    pub a: &'a [Vec<Complex64>],
    pub dims: [usize; 3],
    pub y: &'a [Complex64],
    pub lambda: f64,
    pub eps: f64,
}

impl Oracle<'_> {
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let [nx, ny, nz] = self.dims;
        let idx = |i: usize, j: usize, k: usize| (i * ny + j) * nz + k;
        let mut e = Vec::new();
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    if i + 1 < nx {
                        e.push((idx(i, j, k), idx(i + 1, j, k)));
                    }
                    if j + 1 < ny {
                        e.push((idx(i, j, k), idx(i, j + 1, k)));
                    }
                    if k + 1 < nz {
                        e.push((idx(i, j, k), idx(i, j, k + 1)));
                    }
                }
            }
        }
        e
    }

    pub fn objective(&self, s: &[Complex64], edges: &[(usize, usize)]) -> f64 {
        let r: f64 = dense_apply(self.a, s)
            .iter()
            .zip(self.y)
            .map(|(u, v)| (u - v).norm_sqr())
            .sum();
        let tv: f64 = edges
            .iter()
            .map(|&(p, q)| ((s[q] - s[p]).norm_sqr() + self.eps).sqrt())
            .sum();
        r + self.lambda * tv
    }

    fn gradient(&self, s: &[Complex64], edges: &[(usize, usize)]) -> Vec<Complex64> {
        let resid: Vec<_> = dense_apply(self.a, s)
            .iter()
            .zip(self.y)
            .map(|(u, v)| u - v)
            .collect();
        let mut g: Vec<_> = dense_adjoint(self.a, &resid)
            .into_iter()
            .map(|v| 2.0 * v)
            .collect();
        for &(p, q) in edges {
            let d = s[q] - s[p];
            let w = self.lambda * d / (d.norm_sqr() + self.eps).sqrt();
            g[q] += w;
            g[p] -= w;
        }
        g
    }

    pub fn solve(&self, iters: usize) -> f64 {
        let n = self.a[0].len();
        let edges = self.edges();
        // ||A||^2 by power iteration, padded by 1%
        let mut v = vec![Complex64::new(1.0, 0.0); n];
        let mut a_sq = 0.0;
        for _ in 0..200 {
            let w = dense_adjoint(self.a, &dense_apply(self.a, &v));
            a_sq = norm(&w) / norm(&v);
            v = w.iter().map(|x| x / norm(&w)).collect();
        }
        // Lipschitz bound: 2 ||A||^2 + lambda ||D||^2 / sqrt(eps), ||D||^2 <= 12
        let lip = 2.0 * a_sq * 1.01 + self.lambda * 12.0 / self.eps.sqrt();
        let step = 1.0 / lip;
        let mut x = vec![Complex64::new(0.0, 0.0); n];
        let mut z = x.clone();
        let mut t = 1.0f64;
        let mut f_prev = self.objective(&x, &edges);
        for _ in 0..iters {
            let g = self.gradient(&z, &edges);
            let x_new: Vec<_> = z.iter().zip(&g).map(|(zi, gi)| zi - step * gi).collect();
            let f_new = self.objective(&x_new, &edges);
            if f_new > f_prev {
                // adaptive restart
                t = 1.0;
                z = x.clone();
                continue;
            }
            let t_new = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            let beta = (t - 1.0) / t_new;
            z = x_new
                .iter()
                .zip(&x)
                .map(|(a, b)| a + beta * (a - b))
                .collect();
            x = x_new;
            t = t_new;
            f_prev = f_new;
        }
        f_prev
    }
}
