use carmsim::config::{resolve_config, ExperimentConfig};
use carmsim::experiment::{prepare, recon_error_rmse, run_experiment, run_trial};
use carmsim::geometry::{CameraIntrinsics, Vec3};
use carmsim::rng::{substream, Purpose};
use carmsim::solvers::procrustes_rigid;
use nalgebra::{Rotation3, Unit};
use rand::Rng;
use rand_distr::{Distribution, UnitSphere};

fn small_config(focal: &[f64], pp: &[f64], trials: u32) -> ExperimentConfig {
    let mut c = resolve_config("sim_default").unwrap();
    c.perturbation.focal_levels = focal.to_vec();
    c.perturbation.pp_levels = pp.to_vec();
    c.perturbation.trials_per_cell = trials;
    c
}

/// Welford's one-pass mean and population variance.
fn one_pass(values: &[f64]) -> (f64, f64) {
    let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for &x in values {
        n += 1.0;
        let d = x - mean;
        mean += d / n;
        m2 += d * (x - mean);
    }
    (mean, (m2 / n).sqrt())
}

#[test]
fn single_zero_trial_is_exact() {
    let report = run_experiment(&small_config(&[0.0], &[0.0], 1), Some(1)).unwrap();
    assert_eq!(report.cells.len(), 1);
    let c = &report.cells[0];
    assert_eq!((c.n_trials, c.n_failed), (1, 0));
    assert!(c.recon_rmse.mean < 1e-6);
    assert!(c.reproj_ap.mean < 1e-6 && c.reproj_lat.mean < 1e-6);
}

#[test]
fn aggregation_matches_one_pass_reference() {
    let report = run_experiment(&small_config(&[-400.0, 250.0], &[20.0, 200.0], 40), None).unwrap();
    for (cell, trials) in report.cells.iter().zip(&report.trials) {
        let ok: Vec<_> = trials.iter().filter_map(|t| t.as_ref().ok()).collect();
        assert_eq!(ok.len(), cell.n_trials - cell.n_failed);
        for (got, pick) in [
            (
                cell.recon_rmse,
                ok.iter().map(|t| t.recon_rmse).collect::<Vec<_>>(),
            ),
            (cell.reproj_ap, ok.iter().map(|t| t.reproj_ap).collect()),
            (cell.reproj_lat, ok.iter().map(|t| t.reproj_lat).collect()),
        ] {
            let (mean, std) = one_pass(&pick);
            assert!((got.mean - mean).abs() < 1e-12);
            assert!((got.std - std).abs() < 1e-12);
            assert!(got.std >= 0.0);
        }
    }
}

#[test]
fn reports_are_reproducible_across_thread_counts() {
    let cfg = small_config(&[-300.0, 100.0, 600.0], &[50.0, 100.0], 12);
    let a = run_experiment(&cfg, Some(1)).unwrap();
    let b = run_experiment(&cfg, Some(3)).unwrap();
    let c = run_experiment(&cfg, None).unwrap();
    assert_eq!(a.cells, b.cells);
    assert_eq!(a.cells, c.cells);
    assert_eq!(a.trials, b.trials);
    assert_eq!(a.provenance, b.provenance);
}

#[test]
fn zero_cell_is_the_minimum() {
    let report =
        run_experiment(&small_config(&[-300.0, 0.0, 300.0], &[0.0, 50.0], 10), None).unwrap();
    let zero = report.cell(0.0, 0.0).unwrap().recon_rmse.mean;
    for c in &report.cells {
        assert!(
            zero <= c.recon_rmse.mean,
            "{} < zero cell {}",
            c.recon_rmse.mean,
            zero
        );
    }
}

#[test]
fn alignment_never_hurts() {
    let report = run_experiment(
        &small_config(&[-700.0, -100.0, 400.0], &[20.0, 200.0], 20),
        None,
    )
    .unwrap();
    for t in report.trials.iter().flatten() {
        let t = t.as_ref().unwrap();
        assert!(t.recon_rmse <= t.recon_rmse_unaligned + 1e-12);
    }
}

#[test]
fn lateral_view_reprojects_worse_at_plus_500() {
    let report = run_experiment(
        &small_config(&[500.0], &[20.0, 50.0, 100.0, 200.0], 50),
        None,
    )
    .unwrap();
    let trials: Vec<_> = report
        .trials
        .iter()
        .flatten()
        .map(|t| t.as_ref().unwrap())
        .collect();
    let lat_worse = trials
        .iter()
        .filter(|t| t.reproj_lat >= t.reproj_ap)
        .count();
    assert!(trials.len() >= 100);
    assert!(
        2 * lat_worse > trials.len(),
        "LAT >= AP in {lat_worse} of {}",
        trials.len()
    );
}

#[test]
fn trial_pipeline_with_true_intrinsics_is_exact_for_any_point_set() {
    let cfg = small_config(&[0.0], &[0.0], 1);
    let setup = prepare(&cfg).unwrap();
    let pts = &setup.eval_points;
    for k in [6, 10, pts.len()] {
        let r = run_trial(
            &setup.rig,
            &setup.rig.ap().intrinsics,
            &setup.rig.lat().intrinsics,
            &pts[..k],
            &pts[..k],
        )
        .unwrap();
        assert!(r.recon_rmse < 1e-6 && r.reproj_ap < 1e-6 && r.reproj_lat < 1e-6);
    }
    let off = CameraIntrinsics::simple(4500.0 + 700.0, 712.0, 512.0).unwrap();
    let r = run_trial(&setup.rig, &off, &setup.rig.lat().intrinsics, pts, pts).unwrap();
    assert!(r.recon_rmse > 1e-3);
}

fn cloud(n: usize, seed: u32) -> Vec<Vec3> {
    let mut r = substream(5, Purpose::Scratch, seed, 0);
    (0..n)
        .map(|_| {
            Vec3::new(
                r.random_range(-50.0..50.0),
                r.random_range(-50.0..50.0),
                r.random_range(-50.0..50.0),
            )
        })
        .collect()
}

#[test]
fn recon_error_examples() {
    let gt = cloud(10, 1);
    assert!(recon_error_rmse(&gt, &gt).unwrap() < 1e-12);

    let g = Rotation3::from_scaled_axis(Vec3::new(0.3, -0.8, 1.9));
    let moved: Vec<Vec3> = gt
        .iter()
        .map(|p| g * p + Vec3::new(40.0, -7.0, 3.0))
        .collect();
    assert!(recon_error_rmse(&moved, &gt).unwrap() < 1e-9);

    // A 1 mm offset on one of ten points. Unaligned RMSE is 1/sqrt(10); a
    // translation alone already cuts it to 0.3, and rotation can only help.
    let mut r = substream(5, Purpose::Scratch, 2, 0);
    let mut recon = gt.clone();
    recon[4] += Vec3::from(UnitSphere.sample(&mut r));
    let got = recon_error_rmse(&recon, &gt).unwrap();
    assert!(got <= 0.3 + 1e-12);
    assert!(got < 1.0 / 10f64.sqrt());
    assert!(got > 0.0);

    // Direct recomputation from the returned transform.
    let fit = procrustes_rigid(&recon, &gt).unwrap();
    let direct = (recon
        .iter()
        .zip(&gt)
        .map(|(a, b)| (fit.apply(a) - b).norm_squared())
        .sum::<f64>()
        / 10.0)
        .sqrt();
    assert!((direct - got).abs() < 1e-12);

    // No nearby rigid motion does better.
    for _ in 0..5000 {
        let axis = Unit::new_normalize(Vec3::from(UnitSphere.sample(&mut r)));
        let dr = Rotation3::from_axis_angle(&axis, r.random_range(-0.02..0.02));
        let dt = r.random_range(0.0..0.5) * Vec3::from(UnitSphere.sample(&mut r));
        let probe = (recon
            .iter()
            .zip(&gt)
            .map(|(a, b)| (dr * fit.rotation * a + fit.translation + dt - b).norm_squared())
            .sum::<f64>()
            / 10.0)
            .sqrt();
        assert!(probe >= got - 1e-12);
    }
}
