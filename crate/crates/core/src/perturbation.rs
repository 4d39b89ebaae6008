//! Intrinsic-parameter noise model and the sweep grid.

use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::CameraIntrinsics;

/// Approximate detector pixel pitch (mm), used only to express focal shifts
/// in millimetres for display.
pub const NOMINAL_PIXEL_SPACING_MM: f64 = 0.21;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerturbationError {
    #[error("invalid perturbation: {0}")]
    InvalidPerturbation(String),
}

/// How a (focal level, pp level) cell turns into a concrete intrinsic offset.
///
/// Focal levels are signed; `pp` levels are magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationMode {
    /// Δf equals the focal level exactly; the principal point moves by exactly
    /// the pp level in a uniformly random direction.
    SignedLevel,
    /// Δf = |focal level|·u and Δc = pp level·(u₁, u₂), all u ~ U[-1, 1].
    UniformScaled,
    /// Δf equals the focal level exactly; Δc = pp level·(u₁, u₂), u ~ U[-1, 1].
    SignedFocalUniformPp,
}

impl PerturbationMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::SignedLevel => "signed-level",
            Self::UniformScaled => "uniform-scaled",
            Self::SignedFocalUniformPp => "signed-focal-uniform-pp",
        }
    }
}

impl std::fmt::Display for PerturbationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub focal_levels: Vec<f64>,
    pub pp_levels: Vec<f64>,
    pub mode: PerturbationMode,
    pub trials_per_cell: u32,
}

fn signed_levels(max: i32) -> Vec<f64> {
    (1..=max / 100)
        .rev()
        .map(|k| -f64::from(k * 100))
        .chain((1..=max / 100).map(|k| f64::from(k * 100)))
        .collect()
}

impl PerturbationSpec {
    /// ±100…±700 px focal × {20, 50, 100, 200} px principal point.
    pub fn simulation() -> Self {
        Self {
            focal_levels: signed_levels(700),
            pp_levels: vec![20.0, 50.0, 100.0, 200.0],
            mode: PerturbationMode::SignedFocalUniformPp,
            trials_per_cell: 100,
        }
    }

    /// ±100…±500 px focal, same principal-point levels.
    pub fn phantom() -> Self {
        Self {
            focal_levels: signed_levels(500),
            ..Self::simulation()
        }
    }

    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if let Some(v) = self.focal_levels.iter().find(|v| !v.is_finite()) {
            out.push(("focal_levels", format!("must be finite, got {v}")));
        }
        if let Some(v) = self
            .pp_levels
            .iter()
            .find(|v| !(v.is_finite() && **v >= 0.0))
        {
            out.push(("pp_levels", format!("must be finite and >= 0, got {v}")));
        }
        if self.trials_per_cell == 0 {
            out.push(("trials_per_cell", "must be at least 1".to_string()));
        }
        out
    }
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        Self::simulation()
    }
}

/// One grid cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub focal_level: f64,
    pub pp_level: f64,
}

/// Cartesian product of the levels, pp outer and focal inner.
pub fn grid(spec: &PerturbationSpec) -> Vec<Cell> {
    spec.pp_levels
        .iter()
        .flat_map(|&pp| spec.focal_levels.iter().map(move |&f| (f, pp)))
        .enumerate()
        .map(|(index, (focal_level, pp_level))| Cell {
            index,
            focal_level,
            pp_level,
        })
        .collect()
}

/// Focal shift in mm at the nominal detector pitch.
pub fn focal_shift_mm(delta_px: f64) -> f64 {
    delta_px * NOMINAL_PIXEL_SPACING_MM
}

/// Perturbs one view's intrinsics. Always consumes exactly three uniform
/// draws so that streams stay aligned across modes and levels.
pub fn perturb_intrinsics<R: Rng + ?Sized>(
    truth: &CameraIntrinsics,
    focal_level: f64,
    pp_level: f64,
    mode: PerturbationMode,
    rng: &mut R,
) -> Result<CameraIntrinsics, PerturbationError> {
    if !focal_level.is_finite() || !(pp_level.is_finite() && pp_level >= 0.0) {
        return Err(PerturbationError::InvalidPerturbation(format!(
            "levels must be finite with pp >= 0 (focal {focal_level}, pp {pp_level})"
        )));
    }
    let u0: f64 = rng.random_range(-1.0..=1.0);
    let u1: f64 = rng.random_range(-1.0..=1.0);
    let u2: f64 = rng.random_range(-1.0..=1.0);

    let (df, dcx, dcy) = match mode {
        PerturbationMode::SignedLevel => {
            let theta = TAU * 0.5 * (u1 + 1.0);
            (focal_level, pp_level * theta.cos(), pp_level * theta.sin())
        }
        PerturbationMode::UniformScaled => (focal_level.abs() * u0, pp_level * u1, pp_level * u2),
        PerturbationMode::SignedFocalUniformPp => (focal_level, pp_level * u1, pp_level * u2),
    };
    if df == 0.0 && dcx == 0.0 && dcy == 0.0 {
        return Ok(*truth);
    }
    let (fx, fy) = (truth.fx() + df, truth.fy() + df);
    if fx <= 0.0 || fy <= 0.0 {
        return Err(PerturbationError::InvalidPerturbation(format!(
            "focal shift {df} px leaves a non-positive focal length"
        )));
    }
    CameraIntrinsics::new(fx, fy, truth.cx() + dcx, truth.cy() + dcy, truth.skew())
        .map_err(|e| PerturbationError::InvalidPerturbation(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Purpose};

    fn truth() -> CameraIntrinsics {
        CameraIntrinsics::simple(4500.0, 512.0, 512.0).unwrap()
    }

    #[test]
    fn zero_levels_are_identity() {
        let mut rng = substream(1, Purpose::Scratch, 0, 0);
        for mode in [
            PerturbationMode::SignedLevel,
            PerturbationMode::UniformScaled,
            PerturbationMode::SignedFocalUniformPp,
        ] {
            assert_eq!(
                perturb_intrinsics(&truth(), 0.0, 0.0, mode, &mut rng).unwrap(),
                truth()
            );
        }
    }

    #[test]
    fn signed_level_is_exact() {
        let mut rng = substream(2, Purpose::Scratch, 0, 0);
        for level in [700.0, -700.0] {
            let k = perturb_intrinsics(
                &truth(),
                level,
                200.0,
                PerturbationMode::SignedLevel,
                &mut rng,
            )
            .unwrap();
            assert_eq!(k.fx() - 4500.0, level);
            assert_eq!(k.fy() - 4500.0, level);
            let d = k.principal_point() - truth().principal_point();
            assert!((d.norm() - 200.0).abs() < 1e-9);
        }
    }

    #[test]
    fn hybrid_mode_bounds() {
        let mut rng = substream(3, Purpose::Scratch, 0, 0);
        for _ in 0..1000 {
            let k = perturb_intrinsics(
                &truth(),
                -300.0,
                50.0,
                PerturbationMode::SignedFocalUniformPp,
                &mut rng,
            )
            .unwrap();
            assert_eq!(k.fx(), 4200.0);
            assert!((k.cx() - 512.0).abs() <= 50.0 && (k.cy() - 512.0).abs() <= 50.0);
        }
    }

    #[test]
    fn non_positive_focal_rejected() {
        let mut rng = substream(4, Purpose::Scratch, 0, 0);
        assert!(perturb_intrinsics(
            &truth(),
            -4500.0,
            0.0,
            PerturbationMode::SignedLevel,
            &mut rng
        )
        .is_err());
        assert!(
            perturb_intrinsics(&truth(), 0.0, -1.0, PerturbationMode::SignedLevel, &mut rng)
                .is_err()
        );
    }

    #[test]
    fn default_grid_shape() {
        let cells = grid(&PerturbationSpec::simulation());
        assert_eq!(cells.len(), 56);
        assert_eq!((cells[0].pp_level, cells[0].focal_level), (20.0, -700.0));
        assert_eq!((cells[13].pp_level, cells[13].focal_level), (20.0, 700.0));
        assert_eq!((cells[14].pp_level, cells[14].focal_level), (50.0, -700.0));
        assert!(cells.iter().enumerate().all(|(i, c)| c.index == i));
        assert_eq!(grid(&PerturbationSpec::phantom()).len(), 40);
    }

    #[test]
    fn degenerate_grids() {
        let one = PerturbationSpec {
            focal_levels: vec![100.0],
            pp_levels: vec![20.0],
            ..Default::default()
        };
        assert_eq!(grid(&one).len(), 1);
        let empty = PerturbationSpec {
            focal_levels: vec![],
            ..Default::default()
        };
        assert!(grid(&empty).is_empty());
    }

    #[test]
    fn mm_conversion() {
        assert!((focal_shift_mm(700.0) - 147.0).abs() < 1e-9);
    }
}
