use nalgebra::Rotation3;

use super::{principal_axes, SolverError, FLAT_AXIS_RATIO};
use crate::geometry::{Mat3, Vec3};

/// Rigid transform taking a source set onto a target set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentResult {
    pub rotation: Rotation3<f64>,
    pub translation: Vec3,
    /// RMS distance (mm) between the transformed source and the target.
    pub rmse: f64,
}

impl AlignmentResult {
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }
}

/// Least-squares rotation + translation (no scale, no reflection) mapping
/// `source` onto `target`.
pub fn procrustes_rigid(source: &[Vec3], target: &[Vec3]) -> Result<AlignmentResult, SolverError> {
    if source.len() != target.len() {
        return Err(SolverError::LengthMismatch {
            points3: source.len(),
            points2: target.len(),
        });
    }
    if source.len() < 3 {
        return Err(SolverError::TooFewPoints {
            needed: 3,
            got: source.len(),
        });
    }
    if source
        .iter()
        .chain(target)
        .any(|p| p.iter().any(|v| !v.is_finite()))
    {
        return Err(SolverError::NonFinite);
    }
    for set in [source, target] {
        let (_, _, sigma) = principal_axes(set);
        if sigma[0] == 0.0 || sigma[1] <= FLAT_AXIS_RATIO * sigma[0] {
            return Err(SolverError::DegenerateConfiguration(
                "point set is collinear; rotation about the line is unobservable",
            ));
        }
    }

    let n = source.len() as f64;
    let cs = source.iter().sum::<Vec3>() / n;
    let ct = target.iter().sum::<Vec3>() / n;
    let h = source
        .iter()
        .zip(target)
        .fold(Mat3::zeros(), |acc, (s, t)| {
            acc + (s - cs) * (t - ct).transpose()
        });
    let svd = h.svd(true, true);
    let u = svd.u.expect("svd computed with u");
    let v_t = svd.v_t.expect("svd computed with v_t");
    let v = v_t.transpose();
    // Flip the axis of the smallest singular value when U·Vᵀ would reflect.
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose();
    let rotation = Rotation3::from_matrix_unchecked(r);
    let translation = ct - rotation * cs;

    let sse: f64 = source
        .iter()
        .zip(target)
        .map(|(s, t)| (rotation * s + translation - t).norm_squared())
        .sum();
    Ok(AlignmentResult {
        rotation,
        translation,
        rmse: (sse / n).sqrt(),
    })
}
