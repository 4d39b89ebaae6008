//! Test-point generation: uniform samples in the shared field of view, the
//! visibility filters, and the two-plane calibration phantom.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BiplanarRig, ProjectiveCamera, Vec2, Vec3};
use crate::rng::{substream, Purpose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("invalid filter: {0}")]
    InvalidFilter(String),
    #[error("invalid phantom layout: {0}")]
    InvalidLayout(String),
    #[error("only {visible} of {total} phantom markers pass the visibility filters")]
    LayoutNotVisible { visible: usize, total: usize },
}

/// Axis-aligned sampling box (mm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeSpec {
    pub center: [f64; 3],
    pub half_extent: [f64; 3],
}

impl Default for VolumeSpec {
    fn default() -> Self {
        Self {
            center: [0.0; 3],
            half_extent: [75.0; 3],
        }
    }
}

impl VolumeSpec {
    pub fn new(center: Vec3, half_extent: Vec3) -> Result<Self, SamplingError> {
        let spec = Self {
            center: center.into(),
            half_extent: half_extent.into(),
        };
        match spec.violations().into_iter().next() {
            Some((field, msg)) => Err(SamplingError::InvalidVolume(format!("{field}: {msg}"))),
            None => Ok(spec),
        }
    }

    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if self.center.iter().any(|v| !v.is_finite()) {
            out.push(("center", "must be finite".to_string()));
        }
        if self
            .half_extent
            .iter()
            .any(|v| !(v.is_finite() && *v > 0.0))
        {
            out.push((
                "half_extent",
                format!(
                    "every component must be positive, got {:?}",
                    self.half_extent
                ),
            ));
        }
        out
    }
}

/// Visibility thresholds in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub edge_margin: f64,
    pub min_disparity: f64,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            edge_margin: 40.0,
            min_disparity: 40.0,
        }
    }
}

impl FilterSpec {
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if !(self.edge_margin.is_finite() && self.edge_margin >= 0.0) {
            out.push((
                "edge_margin",
                format!("must be >= 0, got {}", self.edge_margin),
            ));
        }
        if !(self.min_disparity.is_finite() && self.min_disparity >= 0.0) {
            out.push((
                "min_disparity",
                format!("must be >= 0, got {}", self.min_disparity),
            ));
        }
        out
    }
}

/// Projection of one point into both views, with its filter scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointScore {
    pub ap: Vec2,
    pub lat: Vec2,
    /// Whether the projection lies on the detector in both views.
    pub inside: bool,
    /// Distance (px) to the nearest image border, taking the worse view.
    pub edge_score: f64,
    /// Distance (px) between the AP and LAT pixel coordinates.
    pub disparity: f64,
}

impl PointScore {
    pub fn passes(&self, filters: &FilterSpec) -> bool {
        self.inside
            && self.edge_score >= filters.edge_margin
            && self.disparity >= filters.min_disparity
    }
}

fn border_distance(px: &Vec2, width: f64, height: f64) -> f64 {
    px.x.min(width - px.x).min(px.y).min(height - px.y)
}

/// `None` when the point is behind either source.
pub fn score_point(point: &Vec3, rig: &BiplanarRig) -> Option<PointScore> {
    let (w, h) = (f64::from(rig.image_width()), f64::from(rig.image_height()));
    let ap = rig.ap().project(point).ok()?;
    let lat = rig.lat().project(point).ok()?;
    let on_detector = |p: &Vec2| p.x >= 0.0 && p.x <= w && p.y >= 0.0 && p.y <= h;
    Some(PointScore {
        ap,
        lat,
        inside: on_detector(&ap) && on_detector(&lat),
        edge_score: border_distance(&ap, w, h).min(border_distance(&lat, w, h)),
        disparity: (ap - lat).norm(),
    })
}

/// `n` points drawn i.i.d. uniformly from the box, using the `EvalPoints`
/// substream of `seed`.
pub fn sample_volume(spec: &VolumeSpec, n: usize, seed: u64) -> Vec<Vec3> {
    sample_volume_with(spec, n, &mut substream(seed, Purpose::EvalPoints, 0, 0))
}

pub fn sample_volume_with<R: Rng + ?Sized>(spec: &VolumeSpec, n: usize, rng: &mut R) -> Vec<Vec3> {
    let c = Vec3::from(spec.center);
    let e = Vec3::from(spec.half_extent);
    (0..n)
        .map(|_| {
            let u = Vec3::new(
                rng.random_range(-1.0..=1.0),
                rng.random_range(-1.0..=1.0),
                rng.random_range(-1.0..=1.0),
            );
            c + e.component_mul(&u)
        })
        .collect()
}

/// Keeps the points that land on both detectors at least `edge_margin` px
/// from every border and whose AP and LAT pixels are at least
/// `min_disparity` px apart. Order is preserved.
pub fn filter_points(points: &[Vec3], rig: &BiplanarRig, filters: &FilterSpec) -> Vec<Vec3> {
    points
        .iter()
        .filter(|p| score_point(p, rig).is_some_and(|s| s.passes(filters)))
        .copied()
        .collect()
}

/// Two parallel square-ish marker grids, symmetric about `center`.
///
/// The grid planes are vertical and turned by `yaw_deg` about the vertical
/// axis from facing the AP source; the default 45° lets both views see the
/// planes obliquely so no two markers share a projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomLayout {
    pub center: [f64; 3],
    pub rows: u32,
    pub cols: u32,
    /// Marker spacing within a plane (mm).
    pub pitch: f64,
    /// Distance between the two planes (mm).
    pub plane_separation: f64,
    pub yaw_deg: f64,
}

impl Default for PhantomLayout {
    fn default() -> Self {
        Self {
            center: [0.0; 3],
            rows: 4,
            cols: 4,
            pitch: 40.0,
            plane_separation: 60.0,
            yaw_deg: 45.0,
        }
    }
}

impl PhantomLayout {
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if self.center.iter().any(|v| !v.is_finite()) {
            out.push(("center", "must be finite".to_string()));
        }
        if self.rows < 2 || self.cols < 2 {
            out.push((
                "rows",
                format!("need at least a 2x2 grid, got {}x{}", self.rows, self.cols),
            ));
        }
        if !(self.pitch.is_finite() && self.pitch > 0.0) {
            out.push(("pitch", format!("must be positive, got {}", self.pitch)));
        }
        if !(self.plane_separation.is_finite() && self.plane_separation > 0.0) {
            out.push((
                "plane_separation",
                format!("must be positive, got {}", self.plane_separation),
            ));
        }
        if !self.yaw_deg.is_finite() {
            out.push(("yaw_deg", "must be finite".to_string()));
        }
        out
    }

    pub fn marker_count(&self) -> usize {
        2 * self.rows as usize * self.cols as usize
    }

    /// Marker positions, nearer-to-AP plane first, row-major within a plane.
    pub fn markers(&self) -> Result<Vec<Vec3>, SamplingError> {
        if let Some((field, msg)) = self.violations().into_iter().next() {
            return Err(SamplingError::InvalidLayout(format!("{field}: {msg}")));
        }
        let yaw = self.yaw_deg.to_radians();
        let across = Vec3::new(yaw.cos(), 0.0, -yaw.sin());
        let normal = Vec3::new(yaw.sin(), 0.0, yaw.cos());
        let up = Vec3::y();
        let center = Vec3::from(self.center);
        let half_rows = (f64::from(self.rows) - 1.0) / 2.0;
        let half_cols = (f64::from(self.cols) - 1.0) / 2.0;
        let mut out = Vec::with_capacity(self.marker_count());
        for offset in [0.5, -0.5] {
            for r in 0..self.rows {
                for c in 0..self.cols {
                    let v = (f64::from(r) - half_rows) * self.pitch;
                    let h = (f64::from(c) - half_cols) * self.pitch;
                    out.push(
                        center + h * across + v * up + offset * self.plane_separation * normal,
                    );
                }
            }
        }
        Ok(out)
    }
}

/// Phantom markers, checked to be visible under `rig`.
pub fn phantom_points(
    layout: &PhantomLayout,
    rig: &BiplanarRig,
    filters: &FilterSpec,
) -> Result<Vec<Vec3>, SamplingError> {
    let markers = layout.markers()?;
    let visible = filter_points(&markers, rig, filters).len();
    if visible != markers.len() {
        return Err(SamplingError::LayoutNotVisible {
            visible,
            total: markers.len(),
        });
    }
    Ok(markers)
}

/// Convenience for callers holding a single camera: all points in front of it
/// and on its detector.
pub fn on_detector(camera: &ProjectiveCamera, width: u32, height: u32, p: &Vec3) -> bool {
    camera.project(p).is_ok_and(|px| {
        px.x >= 0.0 && px.y >= 0.0 && px.x <= f64::from(width) && px.y <= f64::from(height)
    })
}
