use nalgebra::{Matrix2x3, Matrix6, Rotation3, Vector6};

use super::{Correspondences, SolverError};
use crate::geometry::{CameraIntrinsics, CameraPose, Vec3, MIN_DEPTH_MM};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineOptions {
    /// Stop once the combined update norm (rad and mm) drops below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convergence {
    Converged,
    /// Iteration cap or a cost plateau was hit before the update norm fell
    /// below `tol`. The pose is the best one seen.
    DidNotConverge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinedPose {
    pub pose: CameraPose,
    pub convergence: Convergence,
    /// Number of accepted updates.
    pub iterations: usize,
    /// Sum of squared reprojection errors (px²), starting with the initial
    /// pose and then one entry per accepted update.
    pub costs: Vec<f64>,
}

impl RefinedPose {
    pub fn is_converged(&self) -> bool {
        self.convergence == Convergence::Converged
    }

    pub fn final_cost(&self) -> f64 {
        *self
            .costs
            .last()
            .expect("cost history always holds the initial cost")
    }

    /// The pose, or `DidNotConverge` if refinement stopped early.
    pub fn into_converged(self) -> Result<CameraPose, SolverError> {
        match self.convergence {
            Convergence::Converged => Ok(self.pose),
            Convergence::DidNotConverge => Err(SolverError::DidNotConverge {
                iterations: self.iterations,
            }),
        }
    }
}

/// Sum of squared pixel residuals; infinite if any landmark is behind the
/// camera.
pub fn reprojection_cost(
    pose: &CameraPose,
    corr: &Correspondences,
    intrinsics: &CameraIntrinsics,
) -> f64 {
    let mut cost = 0.0;
    for (p3, p2) in corr.points3().iter().zip(corr.points2()) {
        let c = pose.transform(p3);
        if c.z <= MIN_DEPTH_MM {
            return f64::INFINITY;
        }
        cost += (intrinsics.apply(&c) - p2).norm_squared();
    }
    cost
}

const LAMBDA_INIT: f64 = 1e-3;
const LAMBDA_MIN: f64 = 1e-15;
const LAMBDA_MAX: f64 = 1e12;

/// Levenberg–Marquardt descent on reprojection error with intrinsics held
/// fixed. Updates compose on the left: `R ← exp(ω)·R`, `t ← exp(ω)·t + v`.
pub fn refine_pose(
    initial: &CameraPose,
    corr: &Correspondences,
    intrinsics: &CameraIntrinsics,
    options: &RefineOptions,
) -> Result<RefinedPose, SolverError> {
    if corr.len() < 3 {
        return Err(SolverError::TooFewPoints {
            needed: 3,
            got: corr.len(),
        });
    }
    let mut pose = *initial;
    let mut cost = reprojection_cost(&pose, corr, intrinsics);
    if !cost.is_finite() {
        return Err(SolverError::Geometry(
            crate::geometry::GeometryError::BehindCamera {
                depth: corr
                    .points3()
                    .iter()
                    .map(|p| pose.transform(p).z)
                    .fold(f64::INFINITY, f64::min),
            },
        ));
    }
    let mut costs = vec![cost];
    let mut iterations = 0;
    let mut lambda = LAMBDA_INIT;
    let mut convergence = Convergence::DidNotConverge;

    for _ in 0..options.max_iter {
        let (jtj, jtr) = normal_equations(&pose, corr, intrinsics);
        let mut damped = jtj;
        for i in 0..6 {
            damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
        }
        let Some(step) = solve6(damped, -jtr) else {
            break;
        };
        if step.norm() < options.tol {
            convergence = Convergence::Converged;
            break;
        }
        let candidate = apply_update(&pose, &step);
        let candidate_cost = reprojection_cost(&candidate, corr, intrinsics);
        if candidate_cost <= cost {
            pose = candidate;
            cost = candidate_cost;
            costs.push(cost);
            iterations += 1;
            lambda = (lambda * 0.1).max(LAMBDA_MIN);
        } else {
            lambda *= 10.0;
            if lambda > LAMBDA_MAX {
                break;
            }
        }
    }

    Ok(RefinedPose {
        pose,
        convergence,
        iterations,
        costs,
    })
}

fn apply_update(pose: &CameraPose, step: &Vector6<f64>) -> CameraPose {
    let omega = Vec3::new(step[0], step[1], step[2]);
    let v = Vec3::new(step[3], step[4], step[5]);
    let delta = Rotation3::new(omega);
    CameraPose::from_rotation(delta * pose.rotation(), delta * pose.translation() + v)
}

fn normal_equations(
    pose: &CameraPose,
    corr: &Correspondences,
    k: &CameraIntrinsics,
) -> (Matrix6<f64>, Vector6<f64>) {
    let mut jtj = Matrix6::zeros();
    let mut jtr = Vector6::zeros();
    for (p3, p2) in corr.points3().iter().zip(corr.points2()) {
        let c = pose.transform(p3);
        let (x, y, z) = (c.x, c.y, c.z);
        let iz = 1.0 / z;
        let iz2 = iz * iz;
        // d(u, v) / d(camera point)
        let dproj = Matrix2x3::new(
            k.fx() * iz,
            k.skew() * iz,
            -(k.fx() * x + k.skew() * y) * iz2,
            0.0,
            k.fy() * iz,
            -k.fy() * y * iz2,
        );
        // d(camera point) / d(ω, v) = [ -[c]× | I ]
        let neg_skew = nalgebra::Matrix3::new(0.0, z, -y, -z, 0.0, x, y, -x, 0.0);
        let mut j = nalgebra::Matrix2x6::zeros();
        j.fixed_view_mut::<2, 3>(0, 0)
            .copy_from(&(dproj * neg_skew));
        j.fixed_view_mut::<2, 3>(0, 3).copy_from(&dproj);
        let r = k.apply(&c) - p2;
        jtj += j.transpose() * j;
        jtr += j.transpose() * r;
    }
    (jtj, jtr)
}

fn solve6(a: Matrix6<f64>, b: Vector6<f64>) -> Option<Vector6<f64>> {
    if let Some(chol) = a.cholesky() {
        return Some(chol.solve(&b));
    }
    a.lu().solve(&b)
}
