//! Worked examples on the reference setting and small phantoms.

mod common;

use std::collections::HashSet;

use common::{dense_apply, oracle_matrix, small_config, Oracle};
use nfmimo_core::analysis::{condition_sweep, Orientation};
use nfmimo_core::forward::{add_noise_with_sigma, sigma_for_energy, simulate, NoiseSpec};
use nfmimo_core::recon_tv::tv_solve_with;
use nfmimo_core::synth::{generate_dataset, generate_scene, generate_scenes, MANIFEST_NAME};
use nfmimo_core::{build_matrix, reference_config, MeasurementVector, SceneSpec, TvParams};
use num_complex::Complex64;

#[test]
fn noisy_undersampled_phantom_matches_oracle_objective() {
    let c = small_config(2, 3, 5, [7, 7, 7]);
    let mut s = vec![Complex64::new(0.0, 0.0); c.n_voxels()];
    for i in 2..5 {
        for j in 1..6 {
            for k in 3..6 {
                s[c.grid.index(i, j, k)] = Complex64::new(1.0, 0.0);
            }
        }
    }
    let a = oracle_matrix(&c);
    let clean = MeasurementVector::new(dense_apply(&a, &s));
    let sigma = sigma_for_energy(clean.norm_sqr(), c.n_measurements(), 30.0).unwrap();
    let y = add_noise_with_sigma(&clean, sigma, 5);
    let (lambda, eps) = (1e-3, 1e-4);
    let params = TvParams {
        lambda,
        eps: Some(eps),
        outer_iters: 300,
        cg_iters: 400,
        cg_tol: 1e-12,
        objective_tol: 0.0,
    };
    let dense = build_matrix(&c).unwrap();
    let ours = tv_solve_with(&dense, c.grid.dims(), &y, &params)
        .unwrap()
        .final_objective();
    let oracle = Oracle {
        a: &a,
        dims: c.grid.dims(),
        y: y.values(),
        lambda,
        eps,
    }
    .solve(100_000);
    let rel = (ours - oracle).abs() / oracle;
    assert!(rel <= 1e-4, "ours {ours:e}, oracle {oracle:e}, rel {rel:e}");
}

#[test]
fn noise_level_recomputes_from_signal_energy() {
    let c = reference_config();
    let scene = generate_scene(&c.grid, &SceneSpec::with_seed(0)).unwrap();
    let sim = simulate(&c, &scene.volume, &NoiseSpec::new(30.0, 1).unwrap()).unwrap();
    let sigma = sim.sigma.unwrap();
    let again = (sim.signal_energy / (c.n_measurements() as f64 * 1e3)).sqrt();
    assert!((sigma - again).abs() <= 1e-15 * sigma);
}

#[test]
fn eight_hundred_distinct_scenes() {
    let grid = reference_config().grid;
    let scenes = generate_scenes(&grid, 800, 1, false).unwrap();
    let distinct: HashSet<Vec<u64>> = scenes
        .iter()
        .map(|s| s.volume.values().iter().map(|v| v.re.to_bits()).collect())
        .collect();
    assert_eq!(distinct.len(), 800);
}

#[test]
fn dataset_is_independent_of_thread_count() {
    let grid = small_config(2, 2, 2, [15, 15, 31]).grid;
    let write = |threads: usize| {
        let dir = tempfile::tempdir().unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| generate_dataset(dir.path(), &grid, 6, 42, true, &Default::default()))
            .unwrap();
        dir
    };
    let (one, four) = (write(1), write(4));
    let read = |d: &tempfile::TempDir, name: &str| std::fs::read(d.path().join(name)).unwrap();
    assert_eq!(read(&one, MANIFEST_NAME), read(&four, MANIFEST_NAME));
    for i in 0..6 {
        let name = format!("scene_{i:05}.nft");
        assert_eq!(read(&one, &name), read(&four, &name), "{name}");
    }
}

#[test]
fn cross_range_sweep_is_broadly_non_increasing() {
    let c = reference_config();
    let seps: Vec<f64> = (1..=20).map(|cm| cm as f64 / 100.0).collect();
    let sweep = condition_sweep(&c, 2, &seps, Orientation::CrossRange).unwrap();
    let kappa: Vec<f64> = sweep
        .rows
        .iter()
        .map(|r| r.as_ref().unwrap().kappa)
        .collect();
    assert_eq!(kappa.len(), 20);
    for (d, w) in kappa.windows(2).enumerate() {
        assert!(w[1] <= 1.05 * w[0], "uptick at {} cm: {w:?}", d + 2);
    }
    assert!(kappa[0] > kappa[19]);
}
