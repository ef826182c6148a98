use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use nfmimo_core::analysis::{condition_sweep, resolution_scenes, Orientation};
use nfmimo_core::export::{export_dataset as write_export, ExportOptions, Split};
use nfmimo_core::forward::{simulate as simulate_measurements, NoiseSpec, Operator, Weighting};
use nfmimo_core::geometry::{load_config, reference_config, GridFile, ImagingConfig};
use nfmimo_core::metrics::{psnr3d, ssim_slice_avg};
use nfmimo_core::recon_direct::{adjoint_image_with, backprojection_with, normalized_magnitude};
use nfmimo_core::recon_tv::{tv_solve_with, TvParams};
use nfmimo_core::synth::{
    ellipsoid_scene, generate_dataset, generate_scenes, scene_file_name, scene_seed,
    DatasetManifest, ManifestEntry, SceneRecord, MANIFEST_NAME,
};
use nfmimo_core::{read_tensor, rng, write_tensor, Tensor};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::error::{CliError, CliResult};
use crate::settings::Snr;
use crate::{
    BenchArgs, CondnumArgs, ConfigArgs, ExportArgs, MetricsArgs, ReconArgs, SceneKind,
    SimulateArgs, SynthArgs, TvArgs,
};

fn need<T>(v: Option<T>, flag: &str) -> CliResult<T> {
    v.ok_or_else(|| CliError::usage(format!("missing required flag {flag}")))
}

fn load(cfg: &ConfigArgs) -> CliResult<ImagingConfig> {
    let config = match &cfg.config {
        Some(p) => load_config(p)?,
        None => reference_config(),
    };
    Ok(match cfg.steps {
        Some(n) => config.with_steps(n)?,
        None => config,
    })
}

fn base_meta(config: &ImagingConfig, seed: Option<u64>) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("config_hash".into(), json!(config.hash()));
    m.insert("seed".into(), json!(seed));
    m
}

fn print_json(v: &Value) {
    println!(
        "{}",
        serde_json::to_string(v).expect("json values serialize")
    );
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn write_manifest(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("manifests serialize");
    text.push('\n');
    write_text(path, &text)
}

pub fn synth(a: SynthArgs) -> CliResult<()> {
    let config = load(&a.cfg)?;
    let out = need(a.out, "--out")?;
    let seed = a.seed.unwrap_or(0);
    let random_phase = a.random_phase.unwrap_or(true);
    let grid = &config.grid;
    let manifest = match a.kind.unwrap_or_default() {
        SceneKind::Random => generate_dataset(
            &out,
            grid,
            a.count.unwrap_or(1),
            seed,
            random_phase,
            &base_meta(&config, None)
                .into_iter()
                .filter(|(k, _)| k != "seed")
                .collect(),
        )?,
        kind => {
            let scenes = if kind == SceneKind::Ellipsoid {
                let axes = need(a.semi_axes, "--semi-axes")?.0;
                let center = a.center.map(|c| c.0).unwrap_or(grid.center());
                vec![ellipsoid_scene(grid, axes, center)?]
            } else {
                resolution_scenes(grid)?
            };
            write_fixed_scenes(&out, &config, &scenes, seed)?
        }
    };
    print_json(&json!({"out": out, "scenes": manifest.scenes.len(), "config_hash": config.hash()}));
    Ok(())
}

/// Deterministic scenes carry the run's seed only as a label.
fn write_fixed_scenes(
    dir: &Path,
    config: &ImagingConfig,
    scenes: &[SceneRecord],
    seed: u64,
) -> CliResult<DatasetManifest> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?;
    let mut entries = Vec::new();
    for (i, scene) in scenes.iter().enumerate() {
        let mut meta = scene.meta();
        meta.extend(base_meta(config, Some(seed)));
        let name = scene_file_name(i);
        write_tensor(
            dir.join(&name),
            &Tensor::from_volume_c64(&scene.volume).with_meta(meta),
        )?;
        entries.push(ManifestEntry {
            path: name.into(),
            seed,
            random_phase: false,
        });
    }
    let manifest = DatasetManifest {
        scenes: entries,
        grid: GridFile::from(&config.grid),
        base_seed: seed,
    };
    write_manifest(&dir.join(MANIFEST_NAME), &manifest)?;
    Ok(manifest)
}

pub fn simulate(a: SimulateArgs) -> CliResult<()> {
    let config = load(&a.cfg)?;
    let scene_path = need(a.scene, "--scene")?;
    let Snr(snr_db) = need(a.snr, "--snr")?;
    let out = need(a.out, "--out")?;
    let seed = a.seed.unwrap_or(0);
    let scene = read_tensor(&scene_path)?.to_volume()?;
    let sim = simulate_measurements(&config, &scene, &NoiseSpec::new(snr_db, seed)?)?;
    let mut meta = base_meta(&config, Some(seed));
    meta.insert("kind".into(), json!("measurements"));
    meta.insert("snr_db".into(), json!(Snr(snr_db)));
    meta.insert("sigma".into(), json!(sim.sigma));
    meta.insert("signal_energy".into(), json!(sim.signal_energy));
    meta.insert("scene".into(), json!(scene_path));
    write_tensor(
        &out,
        &Tensor::from_measurements(&sim.measurements).with_meta(meta),
    )?;
    print_json(&json!({"out": out, "sigma": sim.sigma, "signal_energy": sim.signal_energy}));
    Ok(())
}

/// Measurements plus the seed recorded when they were simulated.
fn load_measurements(
    config: &ImagingConfig,
    path: &Path,
) -> CliResult<(nfmimo_core::MeasurementVector, Option<u64>)> {
    let t = read_tensor(path)?;
    if let Some(Value::String(h)) = t.meta.get("config_hash") {
        if *h != config.hash() {
            return Err(CliError::usage(format!(
                "{} was simulated with config {h}, not {}",
                path.display(),
                config.hash()
            )));
        }
    }
    let seed = t.meta.get("seed").and_then(Value::as_u64);
    Ok((t.to_measurements()?, seed))
}

fn recon_setup(
    a: &ReconArgs,
    weighting: Weighting,
) -> CliResult<(
    ImagingConfig,
    Operator,
    nfmimo_core::MeasurementVector,
    Option<u64>,
    PathBuf,
)> {
    let config = load(&a.cfg)?;
    let meas = need(a.meas.clone(), "--meas")?;
    let out = need(a.out.clone(), "--out")?;
    let (y, seed) = load_measurements(&config, &meas)?;
    if y.len() != config.n_measurements() {
        return Err(CliError::usage(format!(
            "{} holds {} measurements, the config expects {}",
            meas.display(),
            y.len(),
            config.n_measurements()
        )));
    }
    let op = Operator::with_weighting(&config, weighting)?;
    Ok((config, op, y, seed, out))
}

fn volume_tensor(
    s: &nfmimo_core::ReflectivityVolume,
    normalize: bool,
    meta: &mut Map<String, Value>,
) -> CliResult<Tensor> {
    Ok(if normalize {
        let (image, scale) = normalized_magnitude(s)?;
        meta.insert("scale".into(), json!(scale));
        Tensor::from_magnitude(&image)
    } else {
        Tensor::from_volume(s)
    })
}

pub fn adjoint(a: ReconArgs) -> CliResult<()> {
    let (config, op, y, seed, out) = recon_setup(&a, Weighting::Full)?;
    let img = adjoint_image_with(&op, &y)?;
    let mut meta = base_meta(&config, seed);
    meta.insert("kind".into(), json!("adjoint_image"));
    meta.insert("scale".into(), json!(img.scale));
    write_tensor(&out, &Tensor::from_magnitude(&img.image).with_meta(meta))?;
    print_json(&json!({"out": out, "scale": img.scale}));
    Ok(())
}

pub fn bp(a: ReconArgs) -> CliResult<()> {
    let (config, op, y, seed, out) = recon_setup(&a, Weighting::PhaseOnly)?;
    let s = backprojection_with(&op, &y)?;
    let mut meta = base_meta(&config, seed);
    meta.insert("kind".into(), json!("backprojection"));
    let t = volume_tensor(&s, a.normalize.unwrap_or(false), &mut meta)?;
    write_tensor(&out, &t.with_meta(meta))?;
    print_json(&json!({"out": out}));
    Ok(())
}

pub fn tv(a: TvArgs) -> CliResult<()> {
    let (config, op, y, seed, out) = recon_setup(&a.recon, Weighting::Full)?;
    let d = TvParams::default();
    let params = TvParams {
        lambda: a.lambda.unwrap_or(d.lambda),
        eps: a.eps.or(d.eps),
        outer_iters: a.outer.unwrap_or(d.outer_iters),
        cg_iters: a.cg_iters.unwrap_or(d.cg_iters),
        cg_tol: a.cg_tol.unwrap_or(d.cg_tol),
        objective_tol: a.objective_tol.unwrap_or(d.objective_tol),
    };
    let res = tv_solve_with(&op, config.grid.dims(), &y, &params)?;
    info!(
        "tv: {} outer steps, final objective {:e}",
        res.trace.len() - 1,
        res.final_objective()
    );
    let mut meta = base_meta(&config, seed);
    meta.insert("kind".into(), json!("tv"));
    meta.insert("params".into(), json!(params));
    meta.insert("eps_used".into(), json!(res.eps));
    meta.insert("trace".into(), json!(res.trace));
    let t = volume_tensor(&res.volume, a.recon.normalize.unwrap_or(false), &mut meta)?;
    write_tensor(&out, &t.with_meta(meta))?;
    let trace_path = trace_path(&out);
    let report = json!({
        "config_hash": config.hash(),
        "seed": seed,
        "params": params,
        "eps": res.eps,
        "trace": res.trace,
        "cg_iterations": res.cg_iterations,
    });
    write_manifest(&trace_path, &report)?;
    print_json(&json!({"out": out, "trace": trace_path, "final_objective": res.final_objective()}));
    Ok(())
}

fn trace_path(out: &Path) -> PathBuf {
    let mut name = out
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".trace.json");
    out.with_file_name(name)
}

pub fn metrics(a: MetricsArgs) -> CliResult<()> {
    let recon = read_tensor(need(a.recon, "--recon")?)?.to_magnitude()?;
    let truth = read_tensor(need(a.truth, "--truth")?)?.to_magnitude()?;
    let psnr = psnr3d(&truth, &recon)?;
    let ssim = ssim_slice_avg(&truth, &recon)?;
    print_json(&json!({"psnr_db": psnr, "ssim": ssim}));
    Ok(())
}

/// `start:stop:step` (inclusive) or `a,b,c`, in cm.
pub fn parse_separations(s: &str) -> CliResult<Vec<f64>> {
    let bad = |why: &str| CliError::usage(format!("--sep-cm {s:?}: {why}"));
    let num = |p: &str| p.trim().parse::<f64>().map_err(|e| bad(&e.to_string()));
    let cm: Vec<f64> = if s.contains(':') {
        let parts = s.split(':').map(num).collect::<CliResult<Vec<_>>>()?;
        let [start, stop, step] = parts[..] else {
            return Err(bad("expected start:stop:step"));
        };
        if !(step > 0.0) || !(stop >= start) {
            return Err(bad("need step > 0 and stop >= start"));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
        (0..n).map(|i| start + i as f64 * step).collect()
    } else {
        s.split(',').map(num).collect::<CliResult<_>>()?
    };
    Ok(cm.into_iter().map(|c| c / 100.0).collect())
}

pub fn condnum(a: CondnumArgs) -> CliResult<()> {
    let config = load(&a.cfg)?;
    let orientation: Orientation = a.orientation.as_deref().unwrap_or("xy").parse()?;
    let seps = parse_separations(a.sep_cm.as_deref().unwrap_or("1:20:1"))?;
    let sweep = condition_sweep(&config, a.targets.unwrap_or(2), &seps, orientation)?;
    for (d, r) in sweep.separations_m.iter().zip(&sweep.rows) {
        if let Err(e) = r {
            log::warn!("separation {} cm: {e}", d * 100.0);
        }
    }
    let csv = sweep.to_csv();
    match a.out {
        Some(p) => write_text(&p, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

pub fn export_dataset(a: ExportArgs) -> CliResult<()> {
    let config = load(&a.cfg)?;
    let out = need(a.out, "--out")?;
    let split: Split = a.split.as_deref().unwrap_or("800,100,100").parse()?;
    let opts = ExportOptions {
        split,
        base_seed: a.seed.unwrap_or(0),
        snr_db: a.snr.unwrap_or(Snr(30.0)).0,
        random_phase: a.random_phase.unwrap_or(true),
    };
    let m = write_export(&out, &config, &opts)?;
    print_json(&json!({
        "out": out,
        "manifest": out.join(MANIFEST_NAME),
        "train": m.partitions.train.len(),
        "val": m.partitions.val.len(),
        "test": m.partitions.test.len(),
        "config_hash": m.config_hash,
    }));
    Ok(())
}

#[derive(Serialize)]
struct Timing {
    n: usize,
    mean_s: f64,
    std_s: f64,
    min_s: f64,
    max_s: f64,
}

impl Timing {
    fn from_samples(t: &[f64]) -> Self {
        let n = t.len();
        let mean = t.iter().sum::<f64>() / n as f64;
        let var = t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        Self {
            n,
            mean_s: mean,
            std_s: var.sqrt(),
            min_s: t.iter().copied().fold(f64::INFINITY, f64::min),
            max_s: t.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Scenes and measurements are prepared first; only the reconstructions
/// are timed, one scene at a time.
pub fn bench(a: BenchArgs) -> CliResult<()> {
    let config = load(&a.cfg)?;
    let n = a.scenes.unwrap_or(100);
    let tv_n = a.tv_scenes.unwrap_or(3).min(n);
    let seed = a.seed.unwrap_or(0);
    let Snr(snr_db) = a.snr.unwrap_or(Snr(30.0));
    let methods: Vec<String> = a
        .methods
        .as_deref()
        .unwrap_or("adjoint,bp")
        .split(',')
        .map(|m| m.trim().to_string())
        .collect();
    if let Some(m) = methods
        .iter()
        .find(|m| !["adjoint", "bp", "tv"].contains(&m.as_str()))
    {
        return Err(CliError::usage(format!(
            "unknown method {m:?} (adjoint, bp, tv)"
        )));
    }
    if n == 0 {
        return Err(CliError::usage("--scenes must be at least 1"));
    }

    let scenes = generate_scenes(&config.grid, n, seed, true)?;
    let ys = scenes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let noise = NoiseSpec::new(snr_db, rng::mix(scene_seed(seed, i), 1))?;
            Ok(simulate_measurements(&config, &s.volume, &noise)?.measurements)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let op = Operator::new(&config)?;
    let phase_op = Operator::with_weighting(&config, Weighting::PhaseOnly)?;

    let mut results = Map::new();
    for m in &methods {
        let count = if m == "tv" { tv_n } else { n };
        let mut times = Vec::with_capacity(count);
        for y in &ys[..count] {
            let t0 = Instant::now();
            match m.as_str() {
                "adjoint" => drop(adjoint_image_with(&op, y)?),
                "bp" => drop(backprojection_with(&phase_op, y)?),
                _ => drop(tv_solve_with(
                    &op,
                    config.grid.dims(),
                    y,
                    &TvParams::default(),
                )?),
            }
            times.push(t0.elapsed().as_secs_f64());
        }
        info!("{m}: {count} scenes timed");
        if count > 0 {
            results.insert(m.clone(), json!(Timing::from_samples(&times)));
        }
    }
    let report = json!({
        "config_hash": config.hash(),
        "seed": seed,
        "snr_db": Snr(snr_db),
        "threads": std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        "methods": results,
    });
    match a.out {
        Some(p) => write_manifest(&p, &report)?,
        None => print_json(&report),
    }
    Ok(())
}
