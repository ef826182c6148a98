//! Near-field MIMO radar imaging.
//!
//! Simulates frequency-domain multistatic measurements from the Born
//! observation model, reconstructs complex reflectivity volumes (adjoint,
//! backprojection, TV-regularized least squares), synthesizes randomized
//! extended-target scenes, scores reconstructions and analyzes resolution
//! through submatrix conditioning.

pub mod analysis;
pub mod error;
pub mod export;
pub mod forward;
pub mod geometry;
pub mod metrics;
pub mod recon_direct;
pub mod recon_tv;
pub mod rng;
pub mod synth;
pub mod tensorio;
pub mod volume;

pub use analysis::{condition_sweep, submatrix_condition, ConstellationSpec, Orientation};
pub use error::{Error, Result};
pub use forward::{
    add_noise, apply_adjoint, apply_forward, build_matrix, matrix_entry, noise_sigma_from_snr,
    simulate, LinearOperator, NoiseSpec, Operator, Simulation, SystemMatrix, Weighting,
};
pub use geometry::{
    mills_cross, reference_config, AntennaArray, FrequencyGrid, ImagingConfig, Point3, VoxelGrid,
};
pub use metrics::{compression_ratio, psnr3d, ssim_slice_avg};
pub use recon_direct::{adjoint_image, backprojection};
pub use recon_tv::{tv_solve, TvParams, TvResult};
pub use synth::{generate_dataset, generate_scene, SceneRecord, SceneSpec};
pub use tensorio::{read_tensor, write_tensor, Dtype, Tensor, TensorData};
pub use volume::{MagnitudeVolume, MeasurementVector, ReflectivityVolume};
