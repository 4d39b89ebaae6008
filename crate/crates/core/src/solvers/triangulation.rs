use nalgebra::{Matrix4, RowVector4};

use super::SolverError;
use crate::geometry::{Mat34, ProjectiveCamera, Vec2, Vec3};

/// Largest admissible ratio σ₄/σ₃ of the stacked DLT system. Closer to one
/// means the two rays are (numerically) the same line.
const MAX_SINGULAR_RATIO: f64 = 1.0 - 1e-9;
/// Relative size under which σ₃ counts as zero.
const RANK_EPS: f64 = 1e-12;
/// Minimum |w| of the unit-norm homogeneous solution.
const MIN_HOMOGENEOUS_W: f64 = 1e-12;

/// Two-view linear triangulation. Pixels are mapped through the inverse
/// intrinsics first so the DLT runs on the normalized `[R | t]` matrices.
pub fn triangulate_linear(
    cam_a: &ProjectiveCamera,
    cam_b: &ProjectiveCamera,
    px_a: &Vec2,
    px_b: &Vec2,
) -> Result<Vec3, SolverError> {
    if px_a.iter().chain(px_b.iter()).any(|v| !v.is_finite()) {
        return Err(SolverError::NonFinite);
    }
    let xa = cam_a.intrinsics.normalize(px_a);
    let xb = cam_b.intrinsics.normalize(px_b);
    let point = triangulate_dlt(&cam_a.pose.matrix(), &cam_b.pose.matrix(), &xa, &xb)?;
    if cam_a.depth(&point) <= 0.0 {
        return Err(SolverError::AtInfinity);
    }
    Ok(point)
}

/// Triangulates every correspondence pair.
pub fn triangulate_many(
    cam_a: &ProjectiveCamera,
    cam_b: &ProjectiveCamera,
    px_a: &[Vec2],
    px_b: &[Vec2],
) -> Result<Vec<Vec3>, SolverError> {
    if px_a.len() != px_b.len() {
        return Err(SolverError::LengthMismatch {
            points3: px_a.len(),
            points2: px_b.len(),
        });
    }
    px_a.iter()
        .zip(px_b)
        .map(|(a, b)| triangulate_linear(cam_a, cam_b, a, b))
        .collect()
}

/// Homogeneous DLT on raw 3×4 projection matrices: the right singular vector
/// of the smallest singular value of the stacked cross-product rows. Each row
/// is divided by the norm of its first three entries, which makes the
/// residual a depth-weighted image distance and the answer independent of
/// the scale of either matrix.
pub fn triangulate_dlt(
    p_a: &Mat34,
    p_b: &Mat34,
    x_a: &Vec2,
    x_b: &Vec2,
) -> Result<Vec3, SolverError> {
    let rows: [RowVector4<f64>; 4] = [
        x_a.x * p_a.row(2) - p_a.row(0),
        x_a.y * p_a.row(2) - p_a.row(1),
        x_b.x * p_b.row(2) - p_b.row(0),
        x_b.y * p_b.row(2) - p_b.row(1),
    ];
    let mut a = Matrix4::zeros();
    for (i, row) in rows.iter().enumerate() {
        let norm = row.fixed_columns::<3>(0).norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(SolverError::NonFinite);
        }
        a.set_row(i, &(row / norm));
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("svd computed with v_t");
    // nalgebra does not sort singular values.
    let mut order = [0usize, 1, 2, 3];
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let s = order.map(|i| svd.singular_values[i]);
    if s[2] <= RANK_EPS * s[0] {
        return Err(SolverError::IllConditioned { ratio: 1.0 });
    }
    let ratio = s[3] / s[2];
    if ratio > MAX_SINGULAR_RATIO {
        return Err(SolverError::IllConditioned { ratio });
    }
    let h = v_t.row(order[3]).transpose();
    let h = h / h.norm();
    if h[3].abs() < MIN_HOMOGENEOUS_W {
        return Err(SolverError::AtInfinity);
    }
    Ok(Vec3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]))
}
