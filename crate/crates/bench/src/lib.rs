//! Shared fixtures for the benchmarks.

use carmsim::config::{resolve_config, ExperimentConfig};
use carmsim::experiment::{prepare, Setup};
use carmsim::geometry::{Vec2, Vec3};

/// The default simulation setup: rig, filtered evaluation points and grid.
pub fn default_setup() -> (ExperimentConfig, Setup) {
    let config = resolve_config("sim_default").expect("bundled config");
    let setup = prepare(&config).expect("default setup");
    (config, setup)
}

/// Exact AP and LAT observations of the evaluation points.
pub fn observations(setup: &Setup) -> (Vec<Vec3>, Vec<Vec2>, Vec<Vec2>) {
    let pts = setup.eval_points.clone();
    let ap = setup
        .rig
        .ap()
        .project_all(&pts)
        .expect("points in front of AP");
    let lat = setup
        .rig
        .lat()
        .project_all(&pts)
        .expect("points in front of LAT");
    (pts, ap, lat)
}
