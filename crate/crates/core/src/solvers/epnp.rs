//! EPnP closed-form pose initialization.
//!
//! The landmarks are expressed as barycentric combinations of control points
//! (centroid plus one point along each principal axis). The camera-frame
//! control points lie in the null space of a `2n × 3K` system and are
//! recovered as a combination of its `N` smallest eigenvectors, with the
//! mixing weights (betas) fixed by preserving inter-control distances. Flat
//! landmark sets use three control points instead of four.

use nalgebra::{DMatrix, DVector};

use super::{
    principal_axes, procrustes_rigid, reprojection_cost, Correspondences, SolverError,
    FLAT_AXIS_RATIO,
};
use crate::geometry::{CameraIntrinsics, CameraPose, Vec2, Vec3};

/// Thickness (σ₃/σ₁) below which landmarks are treated as planar.
const PLANAR_RATIO: f64 = 1e-3;
const BETA_GN_ITERS: usize = 10;

pub fn epnp(
    corr: &Correspondences,
    intrinsics: &CameraIntrinsics,
) -> Result<CameraPose, SolverError> {
    if corr.len() < 4 {
        return Err(SolverError::TooFewPoints {
            needed: 4,
            got: corr.len(),
        });
    }
    let world = corr.points3();
    let (centroid, axes, sigma) = principal_axes(world);
    if sigma[0] == 0.0 || sigma[1] <= FLAT_AXIS_RATIO * sigma[0] {
        return Err(SolverError::DegenerateConfiguration(
            "landmarks are collinear",
        ));
    }
    let n_ctrl = if sigma[2] <= PLANAR_RATIO * sigma[0] {
        3
    } else {
        4
    };

    let mut controls = vec![centroid];
    for j in 0..n_ctrl - 1 {
        controls.push(centroid + sigma[j] * axes[j]);
    }
    let alphas: Vec<[f64; 4]> = world
        .iter()
        .map(|p| {
            let d = p - centroid;
            let mut a = [0.0; 4];
            for j in 1..n_ctrl {
                a[j] = d.dot(&axes[j - 1]) / sigma[j - 1];
            }
            a[0] = 1.0 - a[1..n_ctrl].iter().sum::<f64>();
            a
        })
        .collect();
    let rays: Vec<Vec2> = corr
        .points2()
        .iter()
        .map(|px| intrinsics.normalize(px))
        .collect();

    let dim = 3 * n_ctrl;
    let mut mtm = DMatrix::<f64>::zeros(dim, dim);
    let mut row_u = DVector::<f64>::zeros(dim);
    let mut row_v = DVector::<f64>::zeros(dim);
    for (a, x) in alphas.iter().zip(&rays) {
        for j in 0..n_ctrl {
            row_u[3 * j] = a[j];
            row_u[3 * j + 1] = 0.0;
            row_u[3 * j + 2] = -a[j] * x.x;
            row_v[3 * j] = 0.0;
            row_v[3 * j + 1] = a[j];
            row_v[3 * j + 2] = -a[j] * x.y;
        }
        mtm.ger(1.0, &row_u, &row_u, 1.0);
        mtm.ger(1.0, &row_v, &row_v, 1.0);
    }
    let eig = mtm.symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let n_null = n_ctrl;
    let null: Vec<DVector<f64>> = order[..n_null]
        .iter()
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();

    let pairs: Vec<(usize, usize)> = (0..n_ctrl)
        .flat_map(|a| (a + 1..n_ctrl).map(move |b| (a, b)))
        .collect();
    let monomials: Vec<(usize, usize)> = (0..n_null)
        .flat_map(|j| (0..=j).map(move |i| (i, j)))
        .collect();
    let rho = DVector::from_iterator(
        pairs.len(),
        pairs
            .iter()
            .map(|&(a, b)| (controls[a] - controls[b]).norm_squared()),
    );
    let diff = |v: &DVector<f64>, a: usize, b: usize| {
        Vec3::new(
            v[3 * a] - v[3 * b],
            v[3 * a + 1] - v[3 * b + 1],
            v[3 * a + 2] - v[3 * b + 2],
        )
    };
    let mut l = DMatrix::<f64>::zeros(pairs.len(), monomials.len());
    for (r, &(a, b)) in pairs.iter().enumerate() {
        let dv: Vec<Vec3> = null.iter().map(|v| diff(v, a, b)).collect();
        for (c, &(i, j)) in monomials.iter().enumerate() {
            let w = if i == j { 1.0 } else { 2.0 };
            l[(r, c)] = w * dv[i].dot(&dv[j]);
        }
    }
    let column = |i: usize, j: usize| monomials.iter().position(|&m| m == (i, j)).unwrap();

    let mut candidates: Vec<Vec<f64>> = Vec::new();
    // One dominant null vector; read off the cross terms with the others.
    {
        let cols: Vec<usize> = (0..n_null).map(|k| column(0, k)).collect();
        if let Some(b) = least_squares(&l.select_columns(&cols), &rho) {
            let (s, b0) = signed_root(b[0]);
            let mut beta = vec![0.0; n_null];
            beta[0] = b0;
            if b0 > 0.0 {
                for k in 1..n_null {
                    beta[k] = s * b[k] / b0;
                }
            }
            candidates.push(beta);
        }
    }
    // Two null vectors.
    {
        let cols = [column(0, 0), column(0, 1), column(1, 1)];
        if let Some(b) = least_squares(&l.select_columns(&cols), &rho) {
            let mut beta = vec![0.0; n_null];
            let (b0, b1) = two_betas(b[0], b[2]);
            beta[0] = if b[1] < 0.0 { -b0 } else { b0 };
            beta[1] = b1;
            candidates.push(beta);
        }
    }
    // Three null vectors, only when the distance system is overdetermined.
    if n_ctrl == 4 {
        let cols = [
            column(0, 0),
            column(0, 1),
            column(1, 1),
            column(0, 2),
            column(1, 2),
        ];
        if let Some(b) = least_squares(&l.select_columns(&cols), &rho) {
            let mut beta = vec![0.0; n_null];
            let (b0, b1) = two_betas(b[0], b[2]);
            beta[0] = if b[1] < 0.0 { -b0 } else { b0 };
            beta[1] = b1;
            if beta[0] != 0.0 {
                beta[2] = b[3] / beta[0];
            }
            candidates.push(beta);
        }
    }

    let mut best: Option<(f64, CameraPose)> = None;
    for mut beta in candidates {
        refine_betas(&l, &rho, &monomials, &mut beta);
        let Some(pose) = pose_from_betas(&beta, &null, &alphas, n_ctrl, world) else {
            continue;
        };
        let cost = reprojection_cost(&pose, corr, intrinsics);
        if cost.is_finite() && best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, pose));
        }
    }
    best.map(|(_, p)| p)
        .ok_or(SolverError::DegenerateConfiguration(
            "no EPnP candidate places the landmarks in front of the camera",
        ))
}

fn signed_root(v: f64) -> (f64, f64) {
    if v < 0.0 {
        (-1.0, (-v).sqrt())
    } else {
        (1.0, v.sqrt())
    }
}

fn two_betas(b11: f64, b22: f64) -> (f64, f64) {
    if b11 < 0.0 {
        ((-b11).sqrt(), if b22 < 0.0 { (-b22).sqrt() } else { 0.0 })
    } else {
        (b11.sqrt(), if b22 > 0.0 { b22.sqrt() } else { 0.0 })
    }
}

fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.clone().svd(true, true).solve(b, 1e-14).ok()
}

/// Gauss–Newton on the betas so the recovered control points reproduce the
/// world inter-control distances.
fn refine_betas(
    l: &DMatrix<f64>,
    rho: &DVector<f64>,
    monomials: &[(usize, usize)],
    beta: &mut [f64],
) {
    let nb = beta.len();
    for _ in 0..BETA_GN_ITERS {
        let mono = DVector::from_iterator(
            monomials.len(),
            monomials.iter().map(|&(i, j)| beta[i] * beta[j]),
        );
        let residual = rho - l * &mono;
        let mut jac = DMatrix::<f64>::zeros(l.nrows(), nb);
        for (c, &(i, j)) in monomials.iter().enumerate() {
            for r in 0..l.nrows() {
                jac[(r, i)] += l[(r, c)] * beta[j];
                jac[(r, j)] += l[(r, c)] * beta[i];
            }
        }
        let Some(step) = least_squares(&jac, &residual) else {
            return;
        };
        if step.iter().any(|v| !v.is_finite()) {
            return;
        }
        for k in 0..nb {
            beta[k] += step[k];
        }
        if step.norm() < 1e-14 {
            return;
        }
    }
}

fn pose_from_betas(
    beta: &[f64],
    null: &[DVector<f64>],
    alphas: &[[f64; 4]],
    n_ctrl: usize,
    world: &[Vec3],
) -> Option<CameraPose> {
    let ctrl_cam: Vec<Vec3> = (0..n_ctrl)
        .map(|j| {
            null.iter().zip(beta).fold(Vec3::zeros(), |acc, (v, b)| {
                acc + *b * Vec3::new(v[3 * j], v[3 * j + 1], v[3 * j + 2])
            })
        })
        .collect();
    let mut cam: Vec<Vec3> = alphas
        .iter()
        .map(|a| (0..n_ctrl).fold(Vec3::zeros(), |acc, j| acc + a[j] * ctrl_cam[j]))
        .collect();
    let mean_depth = cam.iter().map(|p| p.z).sum::<f64>() / cam.len() as f64;
    if !mean_depth.is_finite() || mean_depth == 0.0 {
        return None;
    }
    if mean_depth < 0.0 {
        cam.iter_mut().for_each(|p| *p = -*p);
    }
    let fit = procrustes_rigid(world, &cam).ok()?;
    Some(CameraPose::from_rotation(fit.rotation, fit.translation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ProjectiveCamera;

    fn camera() -> ProjectiveCamera {
        ProjectiveCamera::new(
            CameraIntrinsics::simple(4500.0, 512.0, 512.0).unwrap(),
            CameraPose::look_at(
                &Vec3::new(-40.0, 25.0, 420.0),
                &Vec3::new(3.0, -2.0, 1.0),
                &Vec3::new(0.0, -1.0, 0.0),
            )
            .unwrap(),
        )
    }

    fn check(points: Vec<Vec3>, tol_rad: f64, tol_mm: f64) {
        let cam = camera();
        let px = cam.project_all(&points).unwrap();
        let corr = Correspondences::new(points, px).unwrap();
        let pose = epnp(&corr, &cam.intrinsics).unwrap();
        let angle = pose.rotation_angle_to(&cam.pose);
        let dt = (pose.translation() - cam.pose.translation()).norm();
        assert!(angle < tol_rad, "rotation error {angle}");
        assert!(dt < tol_mm, "translation error {dt}");
    }

    #[test]
    fn exact_general_position() {
        let pts = (0..12)
            .map(|i| {
                let f = i as f64;
                Vec3::new(
                    40.0 * (1.7 * f).sin(),
                    35.0 * (0.9 * f).cos(),
                    30.0 * (2.3 * f).sin(),
                )
            })
            .collect();
        check(pts, 1e-7, 1e-4);
    }

    #[test]
    fn exact_planar_grid() {
        let pts = (0..16)
            .map(|i| {
                Vec3::new(
                    20.0 * (i % 4) as f64 - 30.0,
                    20.0 * (i / 4) as f64 - 30.0,
                    0.0,
                )
            })
            .collect();
        check(pts, 1e-7, 1e-4);
    }

    #[test]
    fn tilted_plane() {
        let pts = (0..9)
            .map(|i| {
                let (a, b) = ((i % 3) as f64 * 25.0, (i / 3) as f64 * 25.0);
                Vec3::new(a, b, 0.3 * a - 0.2 * b)
            })
            .collect();
        check(pts, 1e-7, 1e-4);
    }

    #[test]
    fn minimal_four_points() {
        // With four points every null vector is exact, so the closed form is
        // only a starting guess; refinement has to finish the job.
        let pts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(30.0, 0.0, 5.0),
            Vec3::new(0.0, 40.0, -10.0),
            Vec3::new(10.0, 10.0, 35.0),
        ];
        let cam = camera();
        let px = cam.project_all(&pts).unwrap();
        let corr = Correspondences::new(pts, px).unwrap();
        let initial = epnp(&corr, &cam.intrinsics).unwrap();
        assert!(initial.rotation_angle_to(&cam.pose) < 0.05);
        let refined = super::super::solve_pnp(&corr, &cam.intrinsics).unwrap();
        assert!(refined.is_converged());
        assert!(refined.pose.rotation_angle_to(&cam.pose) < 1e-8);
        assert!((refined.pose.translation() - cam.pose.translation()).norm() < 1e-6);
    }

    #[test]
    fn collinear_landmarks_rejected() {
        let cam = ProjectiveCamera::new(
            CameraIntrinsics::simple(4500.0, 512.0, 512.0).unwrap(),
            CameraPose::identity(),
        );
        let pts: Vec<Vec3> = (1..8)
            .map(|i| Vec3::new(0.0, 0.0, 100.0 * i as f64))
            .collect();
        let px = cam.project_all(&pts).unwrap();
        let corr = Correspondences::new(pts, px).unwrap();
        assert!(matches!(
            epnp(&corr, &cam.intrinsics),
            Err(SolverError::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn too_few_points() {
        let corr = Correspondences::new(vec![Vec3::zeros(); 3], vec![Vec2::zeros(); 3]).unwrap();
        let k = CameraIntrinsics::simple(1.0, 0.0, 0.0).unwrap();
        assert!(matches!(
            epnp(&corr, &k),
            Err(SolverError::TooFewPoints { needed: 4, got: 3 })
        ));
    }
}
