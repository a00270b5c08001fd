use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn sphere_grid(res: usize, r: f64) -> SdfGrid {
    SdfGrid::sample_nodes([res; 3], Vec3::repeat(-1.0), Vec3::repeat(1.0), |p| p.norm() - r).unwrap()
}

#[test]
fn sphere_vertices_near_radius() {
    let g = sphere_grid(64, 0.4);
    let mesh = marching_cubes(&g, 0.0);
    assert!(!mesh.is_empty());
    let tol = 2.0 * 2.0 / 63.0;
    for v in &mesh.vertices {
        assert!((v.norm() - 0.4).abs() <= tol);
    }
    let report = is_watertight(&mesh);
    assert!(report.watertight, "{report:?}");
    assert_eq!(report.components, 1);
    // outward winding
    let vol = mesh.signed_volume();
    let exact = 4.0 / 3.0 * std::f64::consts::PI * 0.4f64.powi(3);
    assert!(vol > 0.0 && (vol - exact).abs() / exact < 0.02, "{vol} vs {exact}");
}

#[test]
fn uniform_grids_give_empty_meshes() {
    let pos = SdfGrid::sample_nodes([8; 3], Vec3::repeat(-1.0), Vec3::repeat(1.0), |_| 1.0).unwrap();
    assert!(marching_cubes(&pos, 0.0).is_empty());
    assert!(marching_cubes(&pos.negated(), 0.0).is_empty());
}

#[test]
fn negation_flips_orientation() {
    let g = sphere_grid(24, 0.55);
    let a = marching_cubes(&g, 0.0);
    let b = marching_cubes(&g.negated(), 0.0);
    let sorted = |m: &Mesh| {
        let mut v: Vec<[f64; 3]> = m.vertices.iter().map(|p| [p.x, p.y, p.z]).collect();
        v.sort_by(|p, q| p.partial_cmp(q).unwrap());
        v
    };
    let (va, vb) = (sorted(&a), sorted(&b));
    assert_eq!(va.len(), vb.len());
    for (p, q) in va.iter().zip(&vb) {
        assert!((Vec3::from(*p) - Vec3::from(*q)).norm() < 1e-9);
    }
    assert!(a.signed_volume() > 0.0);
    assert!((a.signed_volume() + b.signed_volume()).abs() < 1e-9);
    assert!(is_watertight(&b).watertight);
    let mut fa: Vec<_> = a.flipped().triangles.iter().map(|t| canonical(*t)).collect();
    fa.sort_unstable();
    fa.dedup();
    assert_eq!(fa.len(), a.triangles.len());
}

/// Rotates a triangle so its smallest index comes first (winding kept).
fn canonical(t: [u32; 3]) -> [u32; 3] {
    let m = (0..3).min_by_key(|&i| t[i]).unwrap();
    [t[m], t[(m + 1) % 3], t[(m + 2) % 3]]
}

#[test]
fn vertices_interpolate_exactly() {
    let g = SdfGrid::sample_nodes(
        [20, 23, 17],
        Vec3::new(-1.0, -0.9, -1.1),
        Vec3::new(1.0, 1.2, 0.9),
        |p| (p.x * 3.0).sin() + p.y * p.y - 0.7 * p.z - 0.2,
    )
    .unwrap();
    let mesh = marching_cubes(&g, 0.0);
    let range = g.values.iter().cloned().fold(f64::MIN, f64::max) - g.values.iter().cloned().fold(f64::MAX, f64::min);
    for v in &mesh.vertices {
        assert!(g.trilinear(v).abs() <= 1e-6 * range);
    }
}

#[test]
fn refinement_reduces_error() {
    let err = |res| {
        marching_cubes(&sphere_grid(res, 0.4), 0.0)
            .vertices
            .iter()
            .map(|v| (v.norm() - 0.4).abs())
            .fold(0.0, f64::max)
    };
    assert!(err(64) < err(32));
}

#[test]
fn random_fields_stay_closed() {
    // interior noise, positive border: every extracted surface must be closed
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let n = 12;
        let vals: Vec<f64> = (0..n * n * n)
            .map(|idx| {
                let (i, j, k) = (idx % n, (idx / n) % n, idx / (n * n));
                let border = [i, j, k].iter().any(|&c| c == 0 || c == n - 1);
                if border {
                    1.0
                } else {
                    rng.random_range(-1.0..1.0)
                }
            })
            .collect();
        let g = SdfGrid::from_values([n; 3], Vec3::zeros(), Vec3::repeat(1.0), vals).unwrap();
        let mesh = marching_cubes(&g, 0.0);
        let r = is_watertight(&mesh);
        assert!(r.boundary_edges == 0, "{r:?}");
    }
}

#[test]
fn ties_count_as_inside() {
    // a single node exactly at the iso value surrounded by positive values
    let mut vals = vec![1.0; 27];
    vals[13] = 0.0;
    let g = SdfGrid::from_values([3; 3], Vec3::zeros(), Vec3::repeat(1.0), vals).unwrap();
    let mesh = marching_cubes(&g, 0.0);
    // all crossings collapse onto the node: nothing with positive area survives
    assert!(mesh.is_empty());
}

#[test]
fn watertight_diagnostics() {
    let tri = Mesh {
        vertices: vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
        triangles: vec![[0, 1, 2]],
    };
    let r = is_watertight(&tri);
    assert!(!r.watertight);
    assert_eq!(r.boundary_edges, 3);

    let two = mesh_from_fn(48, |p| {
        let a = (p - Vec3::new(-0.45, 0.0, 0.0)).norm() - 0.3;
        let b = (p - Vec3::new(0.45, 0.0, 0.0)).norm() - 0.3;
        a.min(b)
    })
    .unwrap();
    let r = is_watertight(&two);
    assert!(r.watertight);
    assert_eq!(r.components, 2);
}

#[test]
fn normalization() {
    let mesh = marching_cubes(&sphere_grid(32, 0.5), 0.0).transformed(|v| v + Vec3::new(0.1, -0.2, 0.05));
    let (n, scale, center) = normalize_to_unit_sphere(&mesh).unwrap();
    let max = n.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max);
    assert!((max - 1.0).abs() <= 1e-12);
    assert!((n.vertices.iter().sum::<Vec3>() / n.vertices.len() as f64).norm() < 1e-12);
    for (a, b) in mesh.vertices.iter().zip(&n.vertices) {
        assert!(((a - center) * scale - b).norm() < 1e-12);
    }

    let (again, s2, c2) = normalize_to_unit_sphere(&n).unwrap();
    assert!((s2 - 1.0).abs() < 1e-9 && c2.norm() < 1e-9);
    for (a, b) in again.vertices.iter().zip(&n.vertices) {
        assert!((a - b).norm() < 1e-9);
    }

    let (big, _, _) = normalize_to_unit_sphere(&mesh.transformed(|v| v * 3.0)).unwrap();
    for (a, b) in big.vertices.iter().zip(&n.vertices) {
        assert!((a - b).norm() < 1e-9);
    }
    assert!(normalize_to_unit_sphere(&Mesh::default()).is_err());
}

#[test]
fn sampling_on_surface() {
    let cell = 2.0 / 63.0;
    let mesh = marching_cubes(&sphere_grid(64, 0.4), 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pc = sample_surface(&mesh, 10_000, &mut rng).unwrap();
    assert_eq!(pc.len(), 10_000);
    for p in &pc.points {
        assert!((p.norm() - 0.4).abs() <= 2.0 * cell);
    }
    let mut a = ChaCha8Rng::seed_from_u64(9);
    let mut b = ChaCha8Rng::seed_from_u64(9);
    assert_eq!(
        sample_surface(&mesh, 50, &mut a).unwrap(),
        sample_surface(&mesh, 50, &mut b).unwrap()
    );
}

#[test]
fn samples_lie_on_triangle_planes() {
    let mesh = Mesh {
        vertices: vec![
            Vec3::new(0.1, 0.2, 0.3),
            Vec3::new(1.0, -0.4, 0.2),
            Vec3::new(0.3, 0.9, -0.7),
        ],
        triangles: vec![[0, 1, 2]],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pc = sample_surface(&mesh, 1000, &mut rng).unwrap();
    let [a, b, c] = mesh.corners(&mesh.triangles[0]);
    let n = (b - a).cross(&(c - a)).normalize();
    for p in &pc.points {
        assert!((p - a).dot(&n).abs() < 1e-9);
    }
}

#[test]
fn sampling_follows_area() {
    // two triangles with areas 1 and 3
    let mesh = Mesh {
        vertices: vec![
            Vec3::zeros(),
            Vec3::new(2.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 5.0),
            Vec3::new(3.0, 0.0, 5.0),
            Vec3::new(0.0, 2.0, 5.0),
        ],
        triangles: vec![[0, 1, 2], [3, 4, 5]],
    };
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pc = sample_surface(&mesh, n, &mut rng).unwrap();
    let small = pc.points.iter().filter(|p| p.z < 2.5).count() as f64;
    let p = 0.25;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    assert!((small - n as f64 * p).abs() <= 3.0 * sigma, "{small}");
}

#[test]
fn sampling_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(sample_surface(&Mesh::default(), 10, &mut rng).is_err());
    let flat = Mesh {
        vertices: vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0],
        triangles: vec![[0, 1, 2]],
    };
    assert!(sample_surface(&flat, 10, &mut rng).is_err());
}

#[test]
fn obj_round_trip() {
    let mesh = marching_cubes(&sphere_grid(16, 0.5), 0.0);
    let mut buf = Vec::new();
    write_obj(&mesh, &mut buf).unwrap();
    let back = read_obj(&buf[..]).unwrap();
    assert_eq!(back, mesh);
    let mut again = Vec::new();
    write_obj(&back, &mut again).unwrap();
    assert_eq!(buf, again);

    let quad = read_obj(&b"v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3 4/4\n"[..]).unwrap();
    assert_eq!(quad.triangles, vec![[0, 1, 2], [0, 2, 3]]);
    assert!(read_obj(&b"v 0 0\n"[..]).is_err());
    assert!(read_obj(&b"v 0 0 0\nf 1 2 3\n"[..]).is_err());
}
