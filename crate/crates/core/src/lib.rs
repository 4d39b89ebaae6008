//! Sensitivity of biplanar C-arm reconstruction to intrinsic calibration
//! error.
//!
//! The library simulates a two-view fluoroscopy rig, perturbs each view's
//! focal length and principal point, re-estimates the poses from known
//! landmarks, triangulates test points and measures the damage.

pub mod config;
pub mod experiment;
pub mod geometry;
pub mod perturbation;
pub mod report;
pub mod rng;
pub mod sampling;
pub mod solvers;

pub use config::{load_config, parse_config, resolve_config, ConfigError, ExperimentConfig};
pub use experiment::{
    recon_error_rmse, reprojection_error, run_experiment, run_trial, run_trial_with, CellReport,
    ExperimentError, ExperimentReport, Moments, Provenance, TrialError, TrialOptions, TrialResult,
};
pub use geometry::{
    build_default_rig, project, projection_matrix, BiplanarRig, CameraIntrinsics, CameraPose,
    GeometryError, ProjectiveCamera, RigConfig, Vec2, Vec3,
};
pub use perturbation::{grid, perturb_intrinsics, Cell, PerturbationMode, PerturbationSpec};
pub use sampling::{
    filter_points, phantom_points, sample_volume, FilterSpec, PhantomLayout, VolumeSpec,
};
pub use solvers::{
    procrustes_rigid, refine_pose, solve_pnp, triangulate_linear, Correspondences, SolverError,
};
