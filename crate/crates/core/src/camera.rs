//! Orbit and condition cameras, pinhole matrices, rays and pose embeddings.
//!
//! World frame is right-handed with +z up. Azimuth is measured in the
//! xy-plane from +x towards +y, elevation from the xy-plane towards +z.
//! Camera frames follow the usual computer-vision layout: +x right,
//! +y down, +z forward. Pixel `(i, j)` covers `[i, i+1) × [j, j+1)` so its
//! center sits at `(i + 0.5, j + 0.5)`.

use nalgebra::Matrix4;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Mat3, Result, Vec3};

/// Elevation of every generation view.
pub const ORBIT_ELEVATION_DEG: f64 = 0.0;
/// Azimuths of the six generation views, in grid tile order.
pub const ORBIT_AZIMUTHS_DEG: [f64; 6] = [0.0, 60.0, 120.0, 180.0, 240.0, 300.0];
pub const ORBIT_DISTANCE: f64 = 1.5;
pub const ORBIT_FOV_DEG: f64 = 47.9;

pub const CONDITION_ELEVATION_RANGE_DEG: (f64, f64) = (-20.0, 60.0);
/// Center and half-width of the condition field-of-view distribution.
pub const CONDITION_FOV_DEG: (f64, f64) = (47.0, 0.01);
/// Center and half-width of the condition camera-distance distribution.
pub const CONDITION_DISTANCE: (f64, f64) = (1.5, 0.1);

pub const EMBEDDING_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub elevation_deg: f64,
    pub azimuth_deg: f64,
    pub distance: f64,
    pub fov_deg: f64,
}

impl CameraPose {
    /// Validated constructor; the azimuth is wrapped into `[0, 360)`.
    pub fn new(elevation_deg: f64, azimuth_deg: f64, distance: f64, fov_deg: f64) -> Result<Self> {
        let all = [elevation_deg, azimuth_deg, distance, fov_deg];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite camera pose {all:?}")));
        }
        if distance <= 0.0 {
            return Err(Error::Domain(format!("camera distance {distance} must be positive")));
        }
        if !(fov_deg > 0.0 && fov_deg < 180.0) {
            return Err(Error::Domain(format!("fov {fov_deg} outside (0, 180)")));
        }
        Ok(Self {
            elevation_deg,
            azimuth_deg: normalize_azimuth(azimuth_deg),
            distance,
            fov_deg,
        })
    }

    /// Camera center in world coordinates.
    pub fn position(&self) -> Vec3 {
        let e = self.elevation_deg.to_radians();
        let a = self.azimuth_deg.to_radians();
        self.distance * Vec3::new(e.cos() * a.cos(), e.cos() * a.sin(), e.sin())
    }
}

/// Wraps an azimuth into `[0, 360)`.
pub fn normalize_azimuth(deg: f64) -> f64 {
    let a = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if a >= 360.0 {
        0.0
    } else {
        a
    }
}

/// The six fixed generation cameras, ascending azimuth.
pub fn orbit_poses() -> [CameraPose; 6] {
    ORBIT_AZIMUTHS_DEG.map(|azimuth_deg| CameraPose {
        elevation_deg: ORBIT_ELEVATION_DEG,
        azimuth_deg,
        distance: ORBIT_DISTANCE,
        fov_deg: ORBIT_FOV_DEG,
    })
}

/// Draws a condition-image camera.
///
/// Both `U(center, halfwidth)` distributions are read as uniform over
/// `[center - halfwidth, center + halfwidth]`.
pub fn sample_condition_pose<R: Rng + ?Sized>(rng: &mut R) -> CameraPose {
    let (elo, ehi) = CONDITION_ELEVATION_RANGE_DEG;
    let (fc, fh) = CONDITION_FOV_DEG;
    let (dc, dh) = CONDITION_DISTANCE;
    let elevation_deg = rng.random_range(elo..=ehi);
    let azimuth_deg = rng.random_range(0.0..360.0);
    let fov_deg = rng.random_range(fc - fh..=fc + fh);
    let distance = rng.random_range(dc - dh..=dc + dh);
    CameraPose {
        elevation_deg,
        azimuth_deg,
        distance,
        fov_deg,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit length.
    pub dir: Vec3,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

/// Pinhole camera for one pose at one resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraMatrices {
    /// World-to-camera rigid transform.
    pub extrinsic: Matrix4<f64>,
    pub intrinsic: Mat3,
    pub width: u32,
    pub height: u32,
    /// Set when the look-at was degenerate and the +x fallback up axis was used.
    pub fallback_up: bool,
}

impl CameraMatrices {
    pub fn rotation(&self) -> Mat3 {
        self.extrinsic.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vec3 {
        self.extrinsic.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rotation().transpose() * self.translation())
    }

    /// Unit viewing direction in world coordinates.
    pub fn forward(&self) -> Vec3 {
        self.rotation().row(2).transpose()
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation() * p + self.translation()
    }

    /// Continuous pixel coordinates of a world point, `None` when it lies
    /// on or behind the image plane.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        let c = self.world_to_camera(p);
        if c.z <= 1e-12 {
            return None;
        }
        let k = &self.intrinsic;
        Some((k[(0, 0)] * c.x / c.z + k[(0, 2)], k[(1, 1)] * c.y / c.z + k[(1, 2)]))
    }

    /// Ray through continuous pixel coordinates `(u, v)`.
    pub fn ray_through(&self, u: f64, v: f64) -> Ray {
        let k = &self.intrinsic;
        let d_cam = Vec3::new((u - k[(0, 2)]) / k[(0, 0)], (v - k[(1, 2)]) / k[(1, 1)], 1.0);
        let dir = (self.rotation().transpose() * d_cam).normalize();
        Ray {
            origin: self.center(),
            dir,
        }
    }
}

/// Look-at camera on the pose sphere aimed at the world origin.
pub fn pose_to_matrices(pose: &CameraPose, width: u32, height: u32) -> Result<CameraMatrices> {
    if width == 0 || height == 0 {
        return Err(Error::Domain(format!("resolution {width}x{height} must be positive")));
    }
    let pose = CameraPose::new(pose.elevation_deg, pose.azimuth_deg, pose.distance, pose.fov_deg)?;
    let center = pose.position();
    let forward = (-center).normalize();
    let mut fallback_up = false;
    let mut right = forward.cross(&Vec3::z());
    if right.norm() < 1e-9 {
        fallback_up = true;
        right = forward.cross(&Vec3::x());
    }
    let right = right.normalize();
    let down = forward.cross(&right);
    let rot = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    let t = -(rot * center);

    let mut extrinsic = Matrix4::identity();
    extrinsic.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
    extrinsic.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);

    let focal = 0.5 * height as f64 / (0.5 * pose.fov_deg.to_radians()).tan();
    let intrinsic = Mat3::new(
        focal,
        0.0,
        0.5 * width as f64,
        0.0,
        focal,
        0.5 * height as f64,
        0.0,
        0.0,
        1.0,
    );
    Ok(CameraMatrices {
        extrinsic,
        intrinsic,
        width,
        height,
        fallback_up,
    })
}

/// One ray per pixel through its center, row-major (`y` outer).
pub fn generate_rays(cam: &CameraMatrices, width: u32, height: u32) -> Vec<Ray> {
    let mut rays = Vec::with_capacity(width as usize * height as usize);
    for j in 0..height {
        for i in 0..width {
            rays.push(cam.ray_through(i as f64 + 0.5, j as f64 + 0.5));
        }
    }
    rays
}

/// Camera embedding fed to the reconstruction tokens. The uncalibrated
/// condition branch uses the all-zero vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraEmbedding {
    pub values: Vec<f64>,
}

impl CameraEmbedding {
    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0.0; len] }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Default-length embedding; `None` yields the zero embedding.
pub fn camera_embedding(pose: Option<&CameraPose>) -> CameraEmbedding {
    camera_embedding_with_len(pose, EMBEDDING_LEN).expect("default embedding length is valid")
}

/// Sinusoidal pose features: for k = 1, 2, ... the values
/// `sin(k·az), cos(k·az), sin(k·el), cos(k·el)` fill the first `len - 2`
/// slots, followed by the raw distance and the fov in radians.
pub fn camera_embedding_with_len(pose: Option<&CameraPose>, len: usize) -> Result<CameraEmbedding> {
    if len < 6 {
        return Err(Error::Domain(format!("embedding length {len} < 6")));
    }
    let Some(pose) = pose else {
        return Ok(CameraEmbedding::zeros(len));
    };
    let az = pose.azimuth_deg.to_radians();
    let el = pose.elevation_deg.to_radians();
    let mut values = Vec::with_capacity(len);
    let mut k = 1.0;
    while values.len() < len - 2 {
        for v in [(k * az).sin(), (k * az).cos(), (k * el).sin(), (k * el).cos()] {
            if values.len() < len - 2 {
                values.push(v);
            }
        }
        k += 1.0;
    }
    values.push(pose.distance);
    values.push(pose.fov_deg.to_radians());
    Ok(CameraEmbedding { values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orbit_is_fixed() {
        let p = orbit_poses();
        assert_eq!(p[0].azimuth_deg, 0.0);
        assert_eq!(p[0].elevation_deg, 0.0);
        assert_eq!(p[2].azimuth_deg, 120.0);
        for q in &p {
            assert_eq!(q.distance, 1.5);
            assert_eq!(q.fov_deg, 47.9);
            assert_eq!(q.elevation_deg, 0.0);
        }
        assert!(p.windows(2).all(|w| w[0].azimuth_deg < w[1].azimuth_deg));
        assert_eq!(orbit_poses(), p);
    }

    #[test]
    fn condition_poses_follow_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 10_000;
        let poses: Vec<_> = (0..n).map(|_| sample_condition_pose(&mut rng)).collect();
        let (mut lo, mut hi) = (f64::MAX, f64::MIN);
        let mut dist_sum = 0.0;
        for p in &poses {
            lo = lo.min(p.elevation_deg);
            hi = hi.max(p.elevation_deg);
            dist_sum += p.distance;
            assert!((0.0..360.0).contains(&p.azimuth_deg));
            assert!((46.99..=47.01).contains(&p.fov_deg));
            assert!((1.4..=1.6).contains(&p.distance));
        }
        assert!(lo >= -20.0 && hi <= 60.0);
        // the range is actually explored
        assert!(lo < -19.0 && hi > 59.0);
        assert!((dist_sum / n as f64 - 1.5).abs() < 0.01);

        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            assert_eq!(sample_condition_pose(&mut a), sample_condition_pose(&mut b));
        }
    }

    #[test]
    fn invalid_poses_rejected() {
        assert!(CameraPose::new(0.0, 0.0, 0.0, 47.9).is_err());
        assert!(CameraPose::new(0.0, 0.0, 1.0, 180.0).is_err());
        assert!(CameraPose::new(0.0, f64::NAN, 1.0, 40.0).is_err());
        assert_eq!(CameraPose::new(0.0, -60.0, 1.0, 40.0).unwrap().azimuth_deg, 300.0);
        assert_eq!(CameraPose::new(0.0, 720.0, 1.0, 40.0).unwrap().azimuth_deg, 0.0);
        assert!(pose_to_matrices(&orbit_poses()[0], 0, 10).is_err());
    }

    #[test]
    fn look_at_origin() {
        let pose = orbit_poses()[0];
        let cam = pose_to_matrices(&pose, 64, 64).unwrap();
        let pos = pose.position();
        assert!((cam.forward() + pos.normalize()).norm() < 1e-12);
        assert!((cam.center() - pos).norm() < 1e-12);
        let (u, v) = cam.project(&Vec3::zeros()).unwrap();
        assert!((u - 32.0).abs() < 1e-9 && (v - 32.0).abs() < 1e-9);
        assert!(!cam.fallback_up);
        // world +z appears above the center (smaller v)
        let (_, v_up) = cam.project(&Vec3::new(0.0, 0.0, 0.2)).unwrap();
        assert!(v_up < 32.0);
    }

    #[test]
    fn opposite_azimuths_are_antipodal() {
        let a = CameraPose::new(10.0, 30.0, 1.5, 47.9).unwrap();
        let b = CameraPose::new(10.0, 210.0, 1.5, 47.9).unwrap();
        let (pa, pb) = (a.position(), b.position());
        assert!((pa.xy() + pb.xy()).norm() < 1e-12);
        let ca = pose_to_matrices(&orbit_poses()[0], 8, 8).unwrap().center();
        let cb = pose_to_matrices(&orbit_poses()[3], 8, 8).unwrap().center();
        assert!((ca + cb).norm() < 1e-12);
    }

    #[test]
    fn rotation_is_proper() {
        for el in [-20.0, 0.0, 35.0, 60.0, 90.0, -90.0] {
            for az in [0.0, 45.0, 200.0] {
                let pose = CameraPose::new(el, az, 1.5, 47.9).unwrap();
                let cam = pose_to_matrices(&pose, 32, 32).unwrap();
                let r = cam.rotation();
                let err = (r.transpose() * r - Mat3::identity()).abs().max();
                assert!(err <= 1e-12, "{err}");
                assert!((r.determinant() - 1.0).abs() < 1e-12);
                assert_eq!(cam.fallback_up, el.abs() == 90.0);
            }
        }
    }

    #[test]
    fn rays_unit_and_centered() {
        let cam = pose_to_matrices(&orbit_poses()[1], 65, 65).unwrap();
        let rays = generate_rays(&cam, 65, 65);
        assert_eq!(rays.len(), 65 * 65);
        for r in &rays {
            assert!((r.dir.norm() - 1.0).abs() <= 1e-12);
        }
        let center = rays[32 * 65 + 32];
        assert!((center.dir - cam.forward()).norm() < 1e-9);
    }

    #[test]
    fn project_then_raycast_round_trip() {
        let pose = CameraPose::new(25.0, 80.0, 1.5, 47.9).unwrap();
        let cam = pose_to_matrices(&pose, 320, 320).unwrap();
        let p = Vec3::new(0.2, -0.1, 0.3);
        let (u, v) = cam.project(&p).unwrap();
        let ray = cam.ray_through(u, v);
        let t = (p - ray.origin).dot(&ray.dir);
        assert!((ray.at(t) - p).norm() < 1e-9);
        // re-projecting a point on that ray lands on the same pixel
        let (u2, v2) = cam.project(&ray.at(t * 0.7)).unwrap();
        assert!((u - u2).abs() < 1e-6 && (v - v2).abs() < 1e-6);
    }

    #[test]
    fn embeddings() {
        let zero = camera_embedding(None);
        assert_eq!(zero.len(), EMBEDDING_LEN);
        assert!(zero.is_zero());
        let orbit = orbit_poses();
        let embs: Vec<_> = orbit.iter().map(|p| camera_embedding(Some(p))).collect();
        for (i, e) in embs.iter().enumerate() {
            assert!(e.norm() > 0.0);
            assert_eq!(e, &camera_embedding(Some(&orbit[i])));
            for f in &embs[i + 1..] {
                assert_ne!(e, f);
            }
        }
        assert!(camera_embedding_with_len(None, 3).is_err());
        assert_eq!(camera_embedding_with_len(Some(&orbit[0]), 9).unwrap().len(), 9);
    }
}
