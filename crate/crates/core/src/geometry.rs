//! Pinhole camera model and the biplanar (AP + LAT) rig.
//!
//! World frame: millimeters, origin at the center of the test volume, `y` is
//! the vertical axis. The AP source sits on `+z` looking toward the origin; the
//! LAT source is the AP placement rotated about `y` by the rig's view angle
//! (90° puts it on `+x`).
//!
//! Camera frame: `x` right, `y` down, `z` forward (depth). Pixel coordinates
//! have their origin at the top-left corner, `u` rightward and `v` downward,
//! and are continuous (never rounded).

use nalgebra::{Matrix3, Matrix3x4, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat34 = Matrix3x4<f64>;

/// Points closer to the camera plane than this (mm) cannot be projected.
pub const MIN_DEPTH_MM: f64 = 1e-9;

/// Tolerance on `RᵀR = I` and `det R = 1` for a valid pose rotation.
pub const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("point is behind the camera (depth {depth} mm)")]
    BehindCamera { depth: f64 },
    #[error("invalid rig configuration: {0}")]
    InvalidRigConfig(String),
}

/// Intrinsic parameters in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    skew: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, skew: f64) -> Result<Self, GeometryError> {
        if !(fx.is_finite() && fx > 0.0) || !(fy.is_finite() && fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive and finite (fx={fx}, fy={fy})"
            )));
        }
        if !(cx.is_finite() && cy.is_finite() && skew.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point and skew must be finite (cx={cx}, cy={cy}, skew={skew})"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            skew,
        })
    }

    /// Square pixels, zero skew.
    pub fn simple(focal: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        Self::new(focal, focal, cx, cy, 0.0)
    }

    pub fn fx(&self) -> f64 {
        self.fx
    }

    pub fn fy(&self) -> f64 {
        self.fy
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    pub fn skew(&self) -> f64 {
        self.skew
    }

    pub fn principal_point(&self) -> Vec2 {
        Vec2::new(self.cx, self.cy)
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3::new(
            self.fx, self.skew, self.cx, //
            0.0, self.fy, self.cy, //
            0.0, 0.0, 1.0,
        )
    }

    /// Maps a camera-frame point to pixels. Caller guarantees positive depth.
    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec2 {
        let x = p.x / p.z;
        let y = p.y / p.z;
        Vec2::new(self.fx * x + self.skew * y + self.cx, self.fy * y + self.cy)
    }

    /// Inverse of the intrinsic map: pixel to normalized image coordinates
    /// on the `z = 1` plane.
    #[inline]
    pub fn normalize(&self, px: &Vec2) -> Vec2 {
        let y = (px.y - self.cy) / self.fy;
        let x = (px.x - self.cx - self.skew * y) / self.fx;
        Vec2::new(x, y)
    }
}

/// World-to-camera rigid transform: `x_cam = R · x_world + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    rotation: Rotation3<f64>,
    translation: Vec3,
}

impl CameraPose {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        if rotation
            .iter()
            .chain(translation.iter())
            .any(|v| !v.is_finite())
        {
            return Err(GeometryError::InvalidPose("non-finite entries".into()));
        }
        let ortho = (rotation.transpose() * rotation - Mat3::identity()).amax();
        if ortho > ROTATION_TOL {
            return Err(GeometryError::InvalidPose(format!(
                "rotation is not orthonormal (max |RᵀR - I| = {ortho:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(GeometryError::InvalidPose(format!(
                "rotation determinant is {det}, expected +1"
            )));
        }
        Ok(Self {
            rotation: Rotation3::from_matrix_unchecked(rotation),
            translation,
        })
    }

    pub fn from_rotation(rotation: Rotation3<f64>, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::from_rotation(Rotation3::identity(), Vec3::zeros())
    }

    /// Pose of a camera centered at `center` whose optical axis points at
    /// `target`. `down` fixes the image `v` direction and must not be parallel
    /// to the viewing direction.
    pub fn look_at(center: &Vec3, target: &Vec3, down: &Vec3) -> Result<Self, GeometryError> {
        let z = target - center;
        if z.norm() < MIN_DEPTH_MM {
            return Err(GeometryError::InvalidPose(
                "camera center equals target".into(),
            ));
        }
        let z = z.normalize();
        let x = down.cross(&z);
        if x.norm() < 1e-12 {
            return Err(GeometryError::InvalidPose(
                "down vector parallel to view axis".into(),
            ));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let r = Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let rotation = Rotation3::from_matrix_unchecked(r);
        Ok(Self::from_rotation(rotation, -(rotation * center)))
    }

    pub fn rotation(&self) -> &Rotation3<f64> {
        &self.rotation
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        *self.rotation.matrix()
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    #[inline]
    pub fn transform(&self, world: &Vec3) -> Vec3 {
        self.rotation * world + self.translation
    }

    /// Camera center in world coordinates, `-Rᵀt`.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.inverse() * self.translation)
    }

    /// Unit optical axis in world coordinates.
    pub fn view_direction(&self) -> Vec3 {
        self.rotation.matrix().row(2).transpose()
    }

    pub fn inverse(&self) -> Self {
        let inv = self.rotation.inverse();
        Self::from_rotation(inv, -(inv * self.translation))
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &CameraPose) -> Self {
        Self::from_rotation(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    /// Geodesic angle (rad) between the two rotations.
    pub fn rotation_angle_to(&self, other: &CameraPose) -> f64 {
        let r = self.rotation.rotation_to(&other.rotation).into_inner();
        let sin = 0.5
            * Vec3::new(
                r[(2, 1)] - r[(1, 2)],
                r[(0, 2)] - r[(2, 0)],
                r[(1, 0)] - r[(0, 1)],
            )
            .norm();
        let cos = 0.5 * (r.trace() - 1.0);
        sin.atan2(cos)
    }

    pub fn matrix(&self) -> Mat34 {
        let mut m = Mat34::zeros();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(self.rotation.matrix());
        m.set_column(3, &self.translation);
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectiveCamera {
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
}

impl ProjectiveCamera {
    pub fn new(intrinsics: CameraIntrinsics, pose: CameraPose) -> Self {
        Self { intrinsics, pose }
    }

    /// `P = K [R | t]`.
    pub fn projection_matrix(&self) -> Mat34 {
        self.intrinsics.matrix() * self.pose.matrix()
    }

    pub fn project(&self, point: &Vec3) -> Result<Vec2, GeometryError> {
        let p = self.pose.transform(point);
        if p.z <= MIN_DEPTH_MM {
            return Err(GeometryError::BehindCamera { depth: p.z });
        }
        Ok(self.intrinsics.apply(&p))
    }

    pub fn project_all(&self, points: &[Vec3]) -> Result<Vec<Vec2>, GeometryError> {
        points.iter().map(|p| self.project(p)).collect()
    }

    /// Depth (mm) of a world point along the optical axis.
    pub fn depth(&self, point: &Vec3) -> f64 {
        self.pose.transform(point).z
    }

    /// World point on the ray through `pixel` at camera-frame depth `depth`.
    pub fn back_project(&self, pixel: &Vec2, depth: f64) -> Vec3 {
        let n = self.intrinsics.normalize(pixel);
        let cam = Vec3::new(n.x * depth, n.y * depth, depth);
        self.pose.rotation.inverse() * (cam - self.pose.translation)
    }

    pub fn with_intrinsics(&self, intrinsics: CameraIntrinsics) -> Self {
        Self::new(intrinsics, self.pose)
    }

    pub fn with_pose(&self, pose: CameraPose) -> Self {
        Self::new(self.intrinsics, pose)
    }
}

/// Construction parameters for the ground-truth rig.
///
/// Focal lengths are in pixels, distances in millimeters, `pixel_spacing` in
/// mm/pixel. Source distances are measured from the X-ray source to the world
/// origin; giving the two views different values models a non-isocentric
/// C-arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigConfig {
    pub ap_focal: f64,
    pub lat_focal: f64,
    pub image_width: u32,
    pub image_height: u32,
    pub pixel_spacing: f64,
    pub ap_source_distance: f64,
    pub lat_source_distance: f64,
    pub view_angle_deg: f64,
}

impl RigConfig {
    /// Simulation rig: 4500/4550 px focals on a 1024² detector at 0.21 mm/px.
    pub fn simulation() -> Self {
        Self {
            ap_focal: 4500.0,
            lat_focal: 4550.0,
            image_width: 1024,
            image_height: 1024,
            pixel_spacing: 0.21,
            ap_source_distance: 400.0,
            lat_source_distance: 370.0,
            view_angle_deg: 90.0,
        }
    }

    /// Phantom rig: 4800/4850 px focals, with the source pulled back so the
    /// whole default marker layout stays inside both detectors.
    pub fn phantom() -> Self {
        Self {
            ap_focal: 4800.0,
            lat_focal: 4850.0,
            ap_source_distance: 750.0,
            lat_source_distance: 700.0,
            ..Self::simulation()
        }
    }

    /// Every violated constraint as `(field, message)`.
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut positive = |name: &'static str, v: f64| {
            if !(v.is_finite() && v > 0.0) {
                out.push((name, format!("must be positive and finite, got {v}")));
            }
        };
        positive("ap_focal", self.ap_focal);
        positive("lat_focal", self.lat_focal);
        positive("pixel_spacing", self.pixel_spacing);
        positive("ap_source_distance", self.ap_source_distance);
        positive("lat_source_distance", self.lat_source_distance);
        if self.image_width == 0 {
            out.push(("image_width", "must be positive".into()));
        }
        if self.image_height == 0 {
            out.push(("image_height", "must be positive".into()));
        }
        if !(self.view_angle_deg > 10.0 && self.view_angle_deg < 170.0) {
            out.push((
                "view_angle_deg",
                format!("must lie in (10, 170) degrees, got {}", self.view_angle_deg),
            ));
        }
        out
    }
}

impl Default for RigConfig {
    fn default() -> Self {
        Self::simulation()
    }
}

/// Minimum angle between the two optical axes for a usable rig.
pub const MIN_VIEW_SEPARATION_DEG: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiplanarRig {
    ap: ProjectiveCamera,
    lat: ProjectiveCamera,
    image_width: u32,
    image_height: u32,
    pixel_spacing: f64,
}

impl BiplanarRig {
    pub fn new(
        ap: ProjectiveCamera,
        lat: ProjectiveCamera,
        image_width: u32,
        image_height: u32,
        pixel_spacing: f64,
    ) -> Result<Self, GeometryError> {
        if image_width == 0 || image_height == 0 {
            return Err(GeometryError::InvalidRigConfig(
                "image size must be positive".into(),
            ));
        }
        if !(pixel_spacing.is_finite() && pixel_spacing > 0.0) {
            return Err(GeometryError::InvalidRigConfig(format!(
                "pixel spacing must be positive, got {pixel_spacing}"
            )));
        }
        let cos = ap.pose.view_direction().dot(&lat.pose.view_direction());
        let angle = cos.clamp(-1.0, 1.0).acos().to_degrees();
        if !(MIN_VIEW_SEPARATION_DEG..=180.0 - MIN_VIEW_SEPARATION_DEG).contains(&angle) {
            return Err(GeometryError::InvalidRigConfig(format!(
                "optical axes are {angle:.3}° apart; need at least {MIN_VIEW_SEPARATION_DEG}°"
            )));
        }
        Ok(Self {
            ap,
            lat,
            image_width,
            image_height,
            pixel_spacing,
        })
    }

    pub fn ap(&self) -> &ProjectiveCamera {
        &self.ap
    }

    pub fn lat(&self) -> &ProjectiveCamera {
        &self.lat
    }

    pub fn cameras(&self) -> [&ProjectiveCamera; 2] {
        [&self.ap, &self.lat]
    }

    pub fn image_width(&self) -> u32 {
        self.image_width
    }

    pub fn image_height(&self) -> u32 {
        self.image_height
    }

    pub fn pixel_spacing(&self) -> f64 {
        self.pixel_spacing
    }

    /// Same poses and detector, different intrinsics.
    pub fn with_intrinsics(&self, ap: CameraIntrinsics, lat: CameraIntrinsics) -> Self {
        Self {
            ap: self.ap.with_intrinsics(ap),
            lat: self.lat.with_intrinsics(lat),
            ..*self
        }
    }
}

pub fn projection_matrix(camera: &ProjectiveCamera) -> Mat34 {
    camera.projection_matrix()
}

pub fn project(camera: &ProjectiveCamera, point: &Vec3) -> Result<Vec2, GeometryError> {
    camera.project(point)
}

/// Builds the ground-truth rig described by `config`.
pub fn build_default_rig(config: &RigConfig) -> Result<BiplanarRig, GeometryError> {
    let problems = config.violations();
    if !problems.is_empty() {
        let msg = problems
            .iter()
            .map(|(f, m)| format!("{f}: {m}"))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(GeometryError::InvalidRigConfig(msg));
    }
    let cx = f64::from(config.image_width) / 2.0;
    let cy = f64::from(config.image_height) / 2.0;
    let origin = Vec3::zeros();
    // World y is up, image v is down.
    let down = Vec3::new(0.0, -1.0, 0.0);

    let ap_center = Vec3::new(0.0, 0.0, config.ap_source_distance);
    let ap_pose = CameraPose::look_at(&ap_center, &origin, &down)?;
    let ap = ProjectiveCamera::new(CameraIntrinsics::simple(config.ap_focal, cx, cy)?, ap_pose);

    let spin = Rotation3::from_axis_angle(&Vec3::y_axis(), config.view_angle_deg.to_radians());
    let lat_center = spin * Vec3::new(0.0, 0.0, config.lat_source_distance);
    let lat_pose = CameraPose::look_at(&lat_center, &origin, &down)?;
    let lat = ProjectiveCamera::new(
        CameraIntrinsics::simple(config.lat_focal, cx, cy)?,
        lat_pose,
    );

    BiplanarRig::new(
        ap,
        lat,
        config.image_width,
        config.image_height,
        config.pixel_spacing,
    )
}
