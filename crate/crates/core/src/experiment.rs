//! Monte Carlo harness: one trial is perturb, re-estimate poses, triangulate,
//! align and score; an experiment runs every grid cell and aggregates.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ExperimentConfig, LandmarkSource, PointSource};
use crate::geometry::{BiplanarRig, CameraIntrinsics, GeometryError, ProjectiveCamera, Vec2, Vec3};
use crate::perturbation::{grid, perturb_intrinsics, Cell, PerturbationError, PerturbationMode};
use crate::rng::{substream, Purpose};
use crate::sampling::{filter_points, phantom_points, sample_volume_with, SamplingError};
use crate::solvers::{
    procrustes_rigid, solve_pnp_with, triangulate_many, Correspondences, RefineOptions, SolverError,
};

/// Fewest evaluation points an experiment will run with.
pub const MIN_EVAL_POINTS: usize = 6;
/// Cells with a larger failed fraction mark the report as partial.
pub const PARTIAL_FAILURE_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    Ap,
    Lat,
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            View::Ap => "AP",
            View::Lat => "LAT",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrialError {
    #[error(transparent)]
    Perturbation(#[from] PerturbationError),
    #[error("projection through the true {view} camera: {source}")]
    Observation { view: View, source: GeometryError },
    #[error("{view} pose estimation: {source}")]
    Pose { view: View, source: SolverError },
    #[error("triangulation: {0}")]
    Triangulation(SolverError),
    #[error("alignment: {0}")]
    Alignment(SolverError),
    #[error("{view} reprojection: {source}")]
    Reprojection { view: View, source: SolverError },
    #[error("resampled point set too small: {0} points")]
    TooFewPoints(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    /// RMS distance (mm) to the ground truth after rigid alignment.
    pub recon_rmse: f64,
    /// RMS distance (mm) to the ground truth without alignment.
    pub recon_rmse_unaligned: f64,
    /// Mean reprojection distance (px) per view.
    pub reproj_ap: f64,
    pub reproj_lat: f64,
    pub focal_delta_ap: f64,
    pub focal_delta_lat: f64,
    pub pp_delta_ap: Vec2,
    pub pp_delta_lat: Vec2,
    pub converged_ap: bool,
    pub converged_lat: bool,
    pub iterations_ap: usize,
    pub iterations_lat: usize,
}

impl TrialResult {
    pub fn converged(&self) -> bool {
        self.converged_ap && self.converged_lat
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrialOptions {
    /// Standard deviation (px) of Gaussian noise on each observed coordinate.
    pub pixel_noise_px: f64,
    pub refine: RefineOptions,
}

/// RMS residual (mm) after the best rigid alignment of `reconstructed` onto
/// `ground_truth`.
pub fn recon_error_rmse(reconstructed: &[Vec3], ground_truth: &[Vec3]) -> Result<f64, SolverError> {
    Ok(procrustes_rigid(reconstructed, ground_truth)?.rmse)
}

/// Mean pixel distance between `observed` and the projections of `points3`.
pub fn reprojection_error(
    camera: &ProjectiveCamera,
    points3: &[Vec3],
    observed: &[Vec2],
) -> Result<f64, SolverError> {
    if points3.len() != observed.len() {
        return Err(SolverError::LengthMismatch {
            points3: points3.len(),
            points2: observed.len(),
        });
    }
    if points3.is_empty() {
        return Err(SolverError::TooFewPoints { needed: 1, got: 0 });
    }
    let mut sum = 0.0;
    for (p, o) in points3.iter().zip(observed) {
        sum += (camera.project(p)? - o).norm();
    }
    Ok(sum / points3.len() as f64)
}

fn rms_distance(a: &[Vec3], b: &[Vec3]) -> f64 {
    let sse: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum();
    (sse / a.len() as f64).sqrt()
}

fn observe<R: Rng + ?Sized>(
    camera: &ProjectiveCamera,
    view: View,
    points: &[Vec3],
    noise: Option<&Normal<f64>>,
    rng: &mut R,
) -> Result<Vec<Vec2>, TrialError> {
    let mut px = camera
        .project_all(points)
        .map_err(|source| TrialError::Observation { view, source })?;
    if let Some(n) = noise {
        for p in &mut px {
            p.x += n.sample(rng);
            p.y += n.sample(rng);
        }
    }
    Ok(px)
}

/// One noiseless trial with default refinement settings.
pub fn run_trial(
    rig: &BiplanarRig,
    perturbed_ap: &CameraIntrinsics,
    perturbed_lat: &CameraIntrinsics,
    landmarks: &[Vec3],
    eval_points: &[Vec3],
) -> Result<TrialResult, TrialError> {
    let mut unused = substream(0, Purpose::Scratch, 0, 0);
    run_trial_with(
        rig,
        perturbed_ap,
        perturbed_lat,
        landmarks,
        eval_points,
        &TrialOptions::default(),
        &mut unused,
    )
}

/// Observes through the true rig, re-estimates both poses under the
/// perturbed intrinsics, triangulates `eval_points` and scores them.
///
/// When `landmarks` and `eval_points` are the same set, the same (possibly
/// noisy) observations feed both pose estimation and triangulation.
pub fn run_trial_with<R: Rng + ?Sized>(
    rig: &BiplanarRig,
    perturbed_ap: &CameraIntrinsics,
    perturbed_lat: &CameraIntrinsics,
    landmarks: &[Vec3],
    eval_points: &[Vec3],
    options: &TrialOptions,
    rng: &mut R,
) -> Result<TrialResult, TrialError> {
    let noise = (options.pixel_noise_px > 0.0)
        .then(|| Normal::new(0.0, options.pixel_noise_px).expect("positive finite sigma"));
    let obs_ap = observe(rig.ap(), View::Ap, eval_points, noise.as_ref(), rng)?;
    let obs_lat = observe(rig.lat(), View::Lat, eval_points, noise.as_ref(), rng)?;
    let shared = landmarks == eval_points;
    let (lm_ap, lm_lat) = if shared {
        (obs_ap.clone(), obs_lat.clone())
    } else {
        (
            observe(rig.ap(), View::Ap, landmarks, noise.as_ref(), rng)?,
            observe(rig.lat(), View::Lat, landmarks, noise.as_ref(), rng)?,
        )
    };

    let pose_for = |view: View, k: &CameraIntrinsics, px: Vec<Vec2>| {
        Correspondences::new(landmarks.to_vec(), px)
            .and_then(|corr| solve_pnp_with(&corr, k, &options.refine))
            .map_err(|source| TrialError::Pose { view, source })
    };
    let fit_ap = pose_for(View::Ap, perturbed_ap, lm_ap)?;
    let fit_lat = pose_for(View::Lat, perturbed_lat, lm_lat)?;
    let cam_ap = ProjectiveCamera::new(*perturbed_ap, fit_ap.pose);
    let cam_lat = ProjectiveCamera::new(*perturbed_lat, fit_lat.pose);

    let recon = triangulate_many(&cam_ap, &cam_lat, &obs_ap, &obs_lat)
        .map_err(TrialError::Triangulation)?;
    let recon_rmse = recon_error_rmse(&recon, eval_points).map_err(TrialError::Alignment)?;
    let reproj = |view: View, cam: &ProjectiveCamera, obs: &[Vec2]| {
        reprojection_error(cam, &recon, obs)
            .map_err(|source| TrialError::Reprojection { view, source })
    };
    let truth_ap = rig.ap().intrinsics;
    let truth_lat = rig.lat().intrinsics;
    Ok(TrialResult {
        recon_rmse,
        recon_rmse_unaligned: rms_distance(&recon, eval_points),
        reproj_ap: reproj(View::Ap, &cam_ap, &obs_ap)?,
        reproj_lat: reproj(View::Lat, &cam_lat, &obs_lat)?,
        focal_delta_ap: perturbed_ap.fx() - truth_ap.fx(),
        focal_delta_lat: perturbed_lat.fx() - truth_lat.fx(),
        pp_delta_ap: perturbed_ap.principal_point() - truth_ap.principal_point(),
        pp_delta_lat: perturbed_lat.principal_point() - truth_lat.principal_point(),
        converged_ap: fit_ap.is_converged(),
        converged_lat: fit_lat.is_converged(),
        iterations_ap: fit_ap.iterations,
        iterations_lat: fit_lat.iterations,
    })
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(#[from] crate::config::ConfigError),
    #[error("rig: {0}")]
    Rig(#[from] GeometryError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error("{what}: need at least {needed} points after filtering, got {got}")]
    TooFewPoints {
        what: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// Everything shared by all trials of an experiment.
#[derive(Debug, Clone)]
pub struct Setup {
    pub rig: BiplanarRig,
    pub eval_points: Vec<Vec3>,
    /// `None` when the evaluation points double as landmarks.
    pub landmarks: Option<Vec<Vec3>>,
    pub cells: Vec<Cell>,
}

impl Setup {
    pub fn landmarks(&self) -> &[Vec3] {
        self.landmarks.as_deref().unwrap_or(&self.eval_points)
    }
}

fn filtered_sample<R: Rng + ?Sized>(
    config: &ExperimentConfig,
    rig: &BiplanarRig,
    rng: &mut R,
) -> Vec<Vec3> {
    let raw = sample_volume_with(&config.volume.spec(), config.volume.samples, rng);
    filter_points(&raw, rig, &config.filters)
}

pub fn prepare(config: &ExperimentConfig) -> Result<Setup, ExperimentError> {
    let config = config.clone().validate()?;
    let rig = crate::geometry::build_default_rig(&config.rig)?;
    let eval_points = match config.points {
        PointSource::Volume => filtered_sample(
            &config,
            &rig,
            &mut substream(config.seed, Purpose::EvalPoints, 0, 0),
        ),
        PointSource::Phantom => phantom_points(&config.phantom_layout(), &rig, &config.filters)?,
    };
    if eval_points.len() < MIN_EVAL_POINTS {
        return Err(ExperimentError::TooFewPoints {
            what: "evaluation set",
            needed: MIN_EVAL_POINTS,
            got: eval_points.len(),
        });
    }
    let landmarks = match config.trial.landmarks {
        LandmarkSource::Eval => None,
        LandmarkSource::Disjoint => {
            let lm = filtered_sample(
                &config,
                &rig,
                &mut substream(config.seed, Purpose::Landmarks, 0, 0),
            );
            if lm.len() < MIN_EVAL_POINTS {
                return Err(ExperimentError::TooFewPoints {
                    what: "landmark set",
                    needed: MIN_EVAL_POINTS,
                    got: lm.len(),
                });
            }
            Some(lm)
        }
    };
    Ok(Setup {
        rig,
        eval_points,
        landmarks,
        cells: grid(&config.perturbation),
    })
}

pub type TrialOutcome = Result<TrialResult, TrialError>;

/// Runs trial `trial` of `cell` on its own random substream.
pub fn run_cell_trial(
    config: &ExperimentConfig,
    setup: &Setup,
    cell: &Cell,
    trial: u32,
) -> TrialOutcome {
    let cell_id = u32::try_from(cell.index).expect("grid index fits in u32");
    let mut rng = substream(config.seed, Purpose::Trial, cell_id, trial);
    let mode = config.perturbation.mode;
    let k_ap = perturb_intrinsics(
        &setup.rig.ap().intrinsics,
        cell.focal_level,
        cell.pp_level,
        mode,
        &mut rng,
    )?;
    let k_lat = perturb_intrinsics(
        &setup.rig.lat().intrinsics,
        cell.focal_level,
        cell.pp_level,
        mode,
        &mut rng,
    )?;
    let options = TrialOptions {
        pixel_noise_px: config.trial.pixel_noise_px,
        refine: config.trial.refine_options(),
    };
    if config.trial.resample_points {
        let eval = filtered_sample(config, &setup.rig, &mut rng);
        if eval.len() < MIN_EVAL_POINTS {
            return Err(TrialError::TooFewPoints(eval.len()));
        }
        let landmarks = setup.landmarks.as_deref().unwrap_or(&eval);
        run_trial_with(
            &setup.rig, &k_ap, &k_lat, landmarks, &eval, &options, &mut rng,
        )
    } else {
        run_trial_with(
            &setup.rig,
            &k_ap,
            &k_lat,
            setup.landmarks(),
            &setup.eval_points,
            &options,
            &mut rng,
        )
    }
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
}

impl Moments {
    /// Two-pass estimate; NaN for an empty slice.
    pub fn population(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellReport {
    pub focal_level: f64,
    pub pp_level: f64,
    pub n_trials: usize,
    /// Trials that errored or whose pose refinement did not converge. They
    /// are left out of the moments.
    pub n_failed: usize,
    pub recon_rmse: Moments,
    pub reproj_ap: Moments,
    pub reproj_lat: Moments,
}

impl CellReport {
    pub fn from_outcomes(cell: &Cell, outcomes: &[TrialOutcome]) -> Self {
        let ok: Vec<&TrialResult> = outcomes
            .iter()
            .filter_map(|o| o.as_ref().ok())
            .filter(|r| r.converged())
            .collect();
        let moments = |f: fn(&TrialResult) -> f64| {
            Moments::population(&ok.iter().map(|r| f(r)).collect::<Vec<_>>())
        };
        Self {
            focal_level: cell.focal_level,
            pp_level: cell.pp_level,
            n_trials: outcomes.len(),
            n_failed: outcomes.len() - ok.len(),
            recon_rmse: moments(|r| r.recon_rmse),
            reproj_ap: moments(|r| r.reproj_ap),
            reproj_lat: moments(|r| r.reproj_lat),
        }
    }

    pub fn is_partial(&self) -> bool {
        self.n_failed as f64 > PARTIAL_FAILURE_FRACTION * self.n_trials as f64
    }
}

/// What is needed to reproduce and interpret a report.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub seed: u64,
    pub config_digest: String,
    pub perturbation_mode: String,
    pub point_source: String,
    pub landmarks: String,
    pub std_estimator: String,
    pub spread_sources: Vec<String>,
    pub eval_points: usize,
    pub landmark_points: usize,
    pub partial: bool,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub cells: Vec<CellReport>,
    pub provenance: Provenance,
    /// Per-trial outcomes, grouped by cell. Empty for reports read back from
    /// disk.
    pub trials: Vec<Vec<TrialOutcome>>,
}

impl ExperimentReport {
    pub fn is_partial(&self) -> bool {
        self.cells.iter().any(CellReport::is_partial)
    }

    pub fn cell(&self, focal_level: f64, pp_level: f64) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.focal_level == focal_level && c.pp_level == pp_level)
    }
}

fn spread_sources(config: &ExperimentConfig) -> Vec<String> {
    let p = &config.perturbation;
    let mut out = Vec::new();
    if p.pp_levels.iter().any(|&v| v > 0.0) {
        out.push(match p.mode {
            PerturbationMode::SignedLevel => "principal-point direction",
            _ => "principal-point offset",
        });
    }
    if p.mode == PerturbationMode::UniformScaled && p.focal_levels.iter().any(|&v| v != 0.0) {
        out.push("focal draw");
    }
    if config.trial.resample_points {
        out.push("point resampling");
    }
    if config.trial.pixel_noise_px > 0.0 {
        out.push("pixel noise");
    }
    out.into_iter().map(str::to_string).collect()
}

fn provenance(config: &ExperimentConfig, setup: &Setup, partial: bool) -> Provenance {
    let mut notes =
        vec!["failed or non-converged trials are excluded from the moments".to_string()];
    if config.points == PointSource::Phantom {
        notes.push(
            "phantom mode is a simulation of the marker layout; results measured on physical C-arms \
             cannot be reproduced by this program"
                .to_string(),
        );
    }
    if partial {
        notes.push(format!(
            "at least one cell lost more than {:.0}% of its trials",
            100.0 * PARTIAL_FAILURE_FRACTION
        ));
    }
    Provenance {
        seed: config.seed,
        config_digest: config.digest(),
        perturbation_mode: config.perturbation.mode.as_str().to_string(),
        point_source: config.points.as_str().to_string(),
        landmarks: config.trial.landmarks.as_str().to_string(),
        std_estimator: "population".to_string(),
        spread_sources: spread_sources(config),
        eval_points: setup.eval_points.len(),
        landmark_points: setup.landmarks().len(),
        partial,
        notes,
    }
}

/// Runs every trial of every cell. `threads = None` uses rayon's default;
/// the result does not depend on the thread count.
pub fn run_experiment(
    config: &ExperimentConfig,
    threads: Option<usize>,
) -> Result<ExperimentReport, ExperimentError> {
    let setup = prepare(config)?;
    let per_cell = config.perturbation.trials_per_cell as usize;
    let total = setup.cells.len() * per_cell;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| ExperimentError::ThreadPool(e.to_string()))?;
    let flat: Vec<TrialOutcome> = pool.install(|| {
        (0..total)
            .into_par_iter()
            .map(|k| {
                let cell = &setup.cells[k / per_cell];
                run_cell_trial(config, &setup, cell, (k % per_cell) as u32)
            })
            .collect()
    });
    let trials: Vec<Vec<TrialOutcome>> = if per_cell == 0 {
        Vec::new()
    } else {
        flat.chunks(per_cell).map(<[_]>::to_vec).collect()
    };
    let cells: Vec<CellReport> = setup
        .cells
        .iter()
        .zip(&trials)
        .map(|(cell, outcomes)| CellReport::from_outcomes(cell, outcomes))
        .collect();
    let partial = cells.iter().any(CellReport::is_partial);
    Ok(ExperimentReport {
        provenance: provenance(config, &setup, partial),
        cells,
        trials,
    })
}
