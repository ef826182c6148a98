//! Shared fixtures for the benchmarks.

use nfmimo_core::synth::generate_scene;
use nfmimo_core::{
    apply_forward, reference_config, ImagingConfig, MeasurementVector, SceneRecord, SceneSpec,
};

/// Reference config, one synthetic scene and its noiseless measurements.
pub fn reference_fixture(seed: u64) -> (ImagingConfig, SceneRecord, MeasurementVector) {
    let config = reference_config();
    let scene = generate_scene(&config.grid, &SceneSpec::with_seed(seed))
        .expect("default spec fits the reference grid");
    let y = apply_forward(&config, &scene.volume).expect("scene matches the grid");
    (config, scene, y)
}
