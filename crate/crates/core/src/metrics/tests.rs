use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::renderer::lumpy;
use crate::surface::{marching_cubes, mesh_from_fn, SdfGrid};
use crate::Vec3;

fn random_cloud<R: Rng>(rng: &mut R, n: usize) -> PointCloud {
    PointCloud::new(
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect(),
    )
}

#[test]
fn kdtree_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [1, 2, 9, 100, 2000] {
        let cloud = random_cloud(&mut rng, n);
        let tree = KdTree::build(&cloud.points);
        for _ in 0..300 {
            let q = Vec3::new(
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.5..1.5),
            );
            let (ia, da) = tree.nearest(&q).unwrap();
            let (ib, db) = brute_force_nearest(&cloud.points, &q).unwrap();
            assert!((da - db).abs() <= 1e-12);
            assert_eq!(ia, ib);
        }
    }
    assert!(KdTree::build(&[]).nearest(&Vec3::zeros()).is_none());
}

#[test]
fn duplicate_points_pick_lowest_index() {
    let pts = vec![Vec3::x(); 20];
    let tree = KdTree::build(&pts);
    assert_eq!(tree.nearest(&Vec3::zeros()), Some((0, 1.0)));
}

#[test]
fn chamfer_basics() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random_cloud(&mut rng, 300);
    assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
    let p = PointCloud::new(vec![Vec3::zeros()]);
    let q = PointCloud::new(vec![Vec3::new(0.3, 0.4, 0.0)]);
    assert!((chamfer(&p, &q).unwrap() - 0.5).abs() < 1e-15);
    assert!(chamfer(&p, &PointCloud::default()).is_err());
    let b = random_cloud(&mut rng, 200);
    assert_eq!(chamfer(&a, &b).unwrap(), chamfer(&b, &a).unwrap());
}

#[test]
fn fscore_cases() {
    let p = PointCloud::new(vec![Vec3::zeros()]);
    let q = PointCloud::new(vec![Vec3::new(0.3, 0.0, 0.0)]);
    assert_eq!(fscore(&p, &q, 0.2).unwrap().fscore, 0.0);
    assert_eq!(fscore(&p, &q, 0.3).unwrap().fscore, 1.0);
    assert_eq!(fscore(&p, &p, 1e-9).unwrap().fscore, 1.0);
    assert!(fscore(&p, &q, 0.0).is_err());

    // half of `a` sits next to `b`, the other half far away
    let b = PointCloud::new(vec![Vec3::zeros(), Vec3::new(0.01, 0.0, 0.0)]);
    let a = PointCloud::new(vec![Vec3::new(0.0, 0.02, 0.0), Vec3::new(5.0, 0.0, 0.0)]);
    let s = fscore(&a, &b, 0.1).unwrap();
    assert_eq!((s.precision, s.recall), (0.5, 1.0));
    assert!((s.fscore - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn kd_and_brute_scores_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let a = random_cloud(&mut rng, 500);
        let b = random_cloud(&mut rng, 500);
        let ck = chamfer_with(&a, &b, NnMode::KdTree).unwrap();
        let cb = chamfer_with(&a, &b, NnMode::BruteForce).unwrap();
        assert!((ck - cb).abs() <= 1e-9);
        for tau in [0.05, 0.1, 0.2] {
            assert_eq!(
                fscore_with(&a, &b, tau, NnMode::KdTree).unwrap(),
                fscore_with(&a, &b, tau, NnMode::BruteForce).unwrap()
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn scores_are_rigid_invariant(seed in 0u64..10_000, angle in -180.0f64..180.0, ax in -1.0f64..1.0, ay in -1.0f64..1.0, tx in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_cloud(&mut rng, 80);
        let b = random_cloud(&mut rng, 60);
        let t = RigidTransform::from_axis_angle(&Vec3::new(ax, ay, 1.0), angle, Vec3::new(tx, 0.3, -0.1));
        let (ta, tb) = (t.apply_cloud(&a), t.apply_cloud(&b));
        prop_assert!((chamfer(&a, &b).unwrap() - chamfer(&ta, &tb).unwrap()).abs() <= 1e-9);
        let f0 = fscore(&a, &b, 0.3).unwrap();
        let f1 = fscore(&ta, &tb, 0.3).unwrap();
        prop_assert!((f0.fscore - f1.fscore).abs() <= 1e-9);
    }

    #[test]
    fn fscore_monotone_in_tau(seed in 0u64..10_000, t1 in 0.01f64..1.0, dt in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_cloud(&mut rng, 50);
        let b = random_cloud(&mut rng, 70);
        prop_assert!(fscore(&a, &b, t1).unwrap().fscore <= fscore(&a, &b, t1 + dt).unwrap().fscore);
    }
}

#[test]
fn kabsch_recovers_exact_transform() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let src = random_cloud(&mut rng, 50);
    let t = RigidTransform::from_axis_angle(&Vec3::new(0.3, -1.0, 0.4), 73.0, Vec3::new(0.2, -0.5, 1.0));
    let dst: Vec<Vec3> = src.points.iter().map(|p| t.apply(p)).collect();
    let fit = kabsch(&src.points, &dst).unwrap();
    assert!((fit.rotation - t.rotation).abs().max() < 1e-12);
    assert!((fit.translation - t.translation).norm() < 1e-12);
    assert!((fit.rotation.determinant() - 1.0).abs() < 1e-9);
    assert!(RigidTransform::new(fit.rotation, fit.translation).is_ok());
    assert!(RigidTransform::new(-fit.rotation, fit.translation).is_err());
}

fn lumpy_samples(n: usize, seed: u64) -> PointCloud {
    let shape = lumpy();
    let mesh = mesh_from_fn(64, |p| shape.eval(p)).unwrap();
    sample_surface(&mesh, n, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn icp_identity_and_errors() {
    let src = lumpy_samples(2000, 1);
    let fit = icp_align(&src, &src, &IcpOptions::default()).unwrap();
    assert!((fit.transform.rotation - crate::Mat3::identity()).abs().max() < 1e-9);
    assert!(fit.transform.translation.norm() < 1e-9);

    let line = PointCloud::new((0..10).map(|i| Vec3::new(i as f64, 2.0 * i as f64, 0.0)).collect());
    assert!(matches!(
        icp_align(&line, &src, &IcpOptions::default()),
        Err(Error::Degenerate(_))
    ));
    let two = PointCloud::new(vec![Vec3::zeros(), Vec3::x()]);
    assert!(icp_align(&src, &two, &IcpOptions::default()).is_err());
}

#[test]
fn icp_recovers_rotation_on_asymmetric_shape() {
    let src = lumpy_samples(10_000, 2);
    let truth = RigidTransform::from_axis_angle(&Vec3::z(), 15.0, Vec3::new(0.1, 0.0, 0.0));
    let dst = truth.apply_cloud(&src);
    let fit = icp_align(&src, &dst, &IcpOptions::default()).unwrap();
    let err = fit.transform.inverse().compose(&truth);
    assert!(err.rotation_angle_deg() < 1.0, "{}", err.rotation_angle_deg());
    assert!((fit.transform.translation - truth.translation).norm() < 0.01);
    for w in fit.residuals.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-15);
    }
}

#[test]
fn self_evaluation_is_near_perfect() {
    let mesh = mesh_from_fn(48, |p| p.norm() - 0.4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let r = evaluate_pair(&mesh, &mesh, &EvalOptions::default(), &mut rng).unwrap();
    assert!(r.chamfer <= 1e-3);
    assert_eq!(r.fscore_at(0.1), Some(1.0));
    assert_eq!(r.thresholds, vec![0.1, 0.2, 0.5]);
    assert_eq!(r.fscore.keys().cloned().collect::<Vec<_>>(), vec!["0.1", "0.2", "0.5"]);
    assert!(!r.icp_applied && r.icp_rotation_deg.is_none());
    assert!(evaluate_pair(&Mesh::default(), &mesh, &EvalOptions::default(), &mut rng).is_err());
}

#[test]
fn sphere_mesh_against_analytic_cloud() {
    let cell = 2.0 / 63.0;
    let grid = SdfGrid::sample_nodes([64; 3], Vec3::repeat(-1.0), Vec3::repeat(1.0), |p| p.norm() - 0.4).unwrap();
    let (mesh, _, _) = normalize_to_unit_sphere(&marching_cubes(&grid, 0.0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = sample_surface(&mesh, 10_000, &mut rng).unwrap();
    let b = PointCloud::new(
        (0..10_000)
            .map(|_| {
                let v: Vec3 = Vec3::from_fn(|_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
                v.normalize()
            })
            .collect(),
    );
    assert!(chamfer(&a, &b).unwrap() <= 2.0 * cell);
}

#[test]
fn report_csv_row() {
    let mesh = mesh_from_fn(24, |p| p.norm() - 0.5).unwrap();
    let r = evaluate_pair(
        &mesh,
        &mesh,
        &EvalOptions {
            points: 500,
            ..Default::default()
        },
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    let row = r.csv_row();
    assert_eq!(row.split(',').count(), MetricsReport::CSV_HEADER.split(',').count());
    let json = serde_json::to_string(&r).unwrap();
    let back: MetricsReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, r);
}
