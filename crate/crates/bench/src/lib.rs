//! Inputs shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mv3d_core::camera::{orbit_poses, CameraPose};
use mv3d_core::renderer::{fixture, render_fixture_set_with_pose};
use mv3d_core::surface::PointCloud;
use mv3d_core::{SdfGrid, Vec3};

pub fn random_cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
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

/// `n` packed tokens of `channels` uniform values.
pub fn random_tokens(n: usize, channels: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * channels).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn sphere_grid(resolution: usize) -> SdfGrid {
    SdfGrid::sample_nodes([resolution; 3], Vec3::repeat(-1.0), Vec3::repeat(1.0), |p| {
        p.norm() - 0.4
    })
    .expect("valid grid")
}

/// Orbit silhouettes of the sphere fixture at `resolution` pixels.
pub fn sphere_silhouettes(resolution: u32) -> (Vec<image::GrayImage>, [CameraPose; 6]) {
    let shape = fixture("sphere").expect("known fixture");
    let set = render_fixture_set_with_pose(&shape, resolution, None).expect("render");
    (set.silhouettes(), orbit_poses())
}
