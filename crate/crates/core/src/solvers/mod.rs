//! Pose estimation, two-view triangulation and rigid point-set alignment.

mod epnp;
mod procrustes;
mod refine;
mod triangulation;

pub use epnp::epnp;
pub use procrustes::{procrustes_rigid, AlignmentResult};
pub use refine::{refine_pose, reprojection_cost, Convergence, RefineOptions, RefinedPose};
pub use triangulation::{triangulate_dlt, triangulate_linear, triangulate_many};

use thiserror::Error;

use crate::geometry::{CameraIntrinsics, GeometryError, Vec2, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("need at least {needed} correspondences, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("point lists differ in length ({points3} 3D vs {points2} 2D)")]
    LengthMismatch { points3: usize, points2: usize },
    #[error("non-finite coordinate in input")]
    NonFinite,
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(&'static str),
    #[error("pose refinement did not converge after {iterations} iterations")]
    DidNotConverge { iterations: usize },
    #[error("triangulation is ill-conditioned (singular value ratio {ratio})")]
    IllConditioned { ratio: f64 },
    #[error("triangulated point is at infinity or behind the first camera")]
    AtInfinity,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Matched 3D landmarks (mm) and their observed pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondences {
    points3: Vec<Vec3>,
    points2: Vec<Vec2>,
}

impl Correspondences {
    pub fn new(points3: Vec<Vec3>, points2: Vec<Vec2>) -> Result<Self, SolverError> {
        if points3.len() != points2.len() {
            return Err(SolverError::LengthMismatch {
                points3: points3.len(),
                points2: points2.len(),
            });
        }
        let finite = points3.iter().all(|p| p.iter().all(|v| v.is_finite()))
            && points2.iter().all(|p| p.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(SolverError::NonFinite);
        }
        Ok(Self { points3, points2 })
    }

    pub fn len(&self) -> usize {
        self.points3.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points3.is_empty()
    }

    pub fn points3(&self) -> &[Vec3] {
        &self.points3
    }

    pub fn points2(&self) -> &[Vec2] {
        &self.points2
    }
}

/// Relative spread below which a principal axis of a point set counts as
/// collapsed (ratio of standard deviations).
pub(crate) const FLAT_AXIS_RATIO: f64 = 1e-6;

/// Full PnP: EPnP initialization followed by Gauss–Newton refinement with
/// default options.
pub fn solve_pnp(
    corr: &Correspondences,
    intrinsics: &CameraIntrinsics,
) -> Result<RefinedPose, SolverError> {
    solve_pnp_with(corr, intrinsics, &RefineOptions::default())
}

pub fn solve_pnp_with(
    corr: &Correspondences,
    intrinsics: &CameraIntrinsics,
    options: &RefineOptions,
) -> Result<RefinedPose, SolverError> {
    let initial = epnp(corr, intrinsics)?;
    refine_pose(&initial, corr, intrinsics, options)
}

/// Principal spread of a point set: centroid, axes sorted by decreasing
/// variance, and the per-axis standard deviations.
pub(crate) fn principal_axes(points: &[Vec3]) -> (Vec3, [Vec3; 3], [f64; 3]) {
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vec3::zeros(), |acc, p| acc + p) / n;
    let cov = points.iter().fold(nalgebra::Matrix3::zeros(), |acc, p| {
        let d = p - centroid;
        acc + d * d.transpose()
    }) / n;
    let eig = cov.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let axes = order.map(|i| eig.eigenvectors.column(i).into_owned());
    let sigmas = order.map(|i| eig.eigenvalues[i].max(0.0).sqrt());
    (centroid, axes, sigmas)
}
