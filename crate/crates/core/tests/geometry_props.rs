use carmsim::geometry::{
    build_default_rig, CameraIntrinsics, CameraPose, ProjectiveCamera, RigConfig, Vec2, Vec3,
};
use nalgebra::{Rotation3, Vector4};
use proptest::prelude::*;

fn camera(
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    skew: f64,
    axis: [f64; 3],
    t: [f64; 3],
) -> ProjectiveCamera {
    let k = CameraIntrinsics::new(fx, fy, cx, cy, skew).unwrap();
    let pose =
        CameraPose::from_rotation(Rotation3::from_scaled_axis(Vec3::from(axis)), Vec3::from(t));
    ProjectiveCamera::new(k, pose)
}

fn arb_camera() -> impl Strategy<Value = ProjectiveCamera> {
    (
        100.0..6000.0f64,
        100.0..6000.0f64,
        -500.0..1500.0f64,
        -500.0..1500.0f64,
        -5.0..5.0f64,
        prop::array::uniform3(-3.0..3.0f64),
        prop::array::uniform3(-200.0..200.0f64),
    )
        .prop_map(|(fx, fy, cx, cy, s, a, t)| camera(fx, fy, cx, cy, s, a, t))
}

proptest! {
    #[test]
    fn projection_is_scale_invariant(cam in arb_camera(), p in prop::array::uniform3(-300.0..300.0f64)) {
        let x = Vec3::from(p);
        prop_assume!(cam.depth(&x) > 1.0);
        let px = cam.project(&x).unwrap();
        let h = Vector4::new(x.x, x.y, x.z, 1.0);
        for lambda in [0.5, 2.0, 10.0] {
            let q = (lambda * cam.projection_matrix()) * h;
            let scaled = Vec2::new(q.x / q.z, q.y / q.z);
            prop_assert!((scaled - px).norm() <= 1e-9 * (1.0 + px.norm()));
        }
    }

    #[test]
    fn back_projection_round_trips(
        cam in arb_camera(),
        u in -200.0..1200.0f64,
        v in -200.0..1200.0f64,
        depth in 1e-3..5000.0f64,
    ) {
        let px = Vec2::new(u, v);
        let x = cam.back_project(&px, depth);
        prop_assert!((cam.depth(&x) - depth).abs() <= 1e-9 * depth.max(1.0));
        let back = cam.project(&x).unwrap();
        prop_assert!((back - px).norm() < 1e-9, "{} px", (back - px).norm());
    }

    #[test]
    fn rig_construction_is_deterministic(
        ap in 300.0..900.0f64,
        lat in 300.0..900.0f64,
        angle in 15.0..165.0f64,
    ) {
        let cfg = RigConfig { ap_source_distance: ap, lat_source_distance: lat, view_angle_deg: angle, ..RigConfig::simulation() };
        let a = build_default_rig(&cfg).unwrap();
        let b = build_default_rig(&cfg).unwrap();
        for (x, y) in a.cameras().iter().zip(b.cameras()) {
            prop_assert_eq!(x.projection_matrix(), y.projection_matrix());
        }
        let sep = a.ap().pose.view_direction().angle(&a.lat().pose.view_direction()).to_degrees();
        prop_assert!((sep - angle).abs() < 1e-9);
    }
}

#[test]
fn default_rig_looks_at_origin_from_plus_z_and_plus_x() {
    let rig = build_default_rig(&RigConfig::simulation()).unwrap();
    let ap = rig.ap().pose.center();
    let lat = rig.lat().pose.center();
    assert!((ap - Vec3::new(0.0, 0.0, 400.0)).norm() < 1e-9);
    assert!((lat - Vec3::new(370.0, 0.0, 0.0)).norm() < 1e-9);
    for cam in rig.cameras() {
        let c = cam.project(&Vec3::zeros()).unwrap();
        assert!((c - Vec2::new(512.0, 512.0)).norm() < 1e-9);
    }
}

#[test]
fn hand_evaluated_projection() {
    let cam = ProjectiveCamera::new(
        CameraIntrinsics::simple(4500.0, 512.0, 512.0).unwrap(),
        CameraPose::identity(),
    );
    let px = cam.project(&Vec3::new(10.0, 0.0, 945.0)).unwrap();
    assert!((px.x - (512.0 + 4500.0 * 10.0 / 945.0)).abs() < 1e-9);
    assert!((px.x - 559.62).abs() < 5e-3);
    assert_eq!(px.y, 512.0);
}
