use nalgebra::SVD;
use rayon::prelude::*;

use super::kdtree::KdTree;
use crate::surface::PointCloud;
use crate::{Error, Mat3, Result, Vec3};

/// `x ↦ R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Mat3::identity()).abs().max();
        if ortho > 1e-9 || (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::Domain("rotation is not a proper orthonormal matrix".into()));
        }
        Ok(Self { rotation, translation })
    }

    /// Rotation of `angle_deg` about `axis` followed by `translation`.
    pub fn from_axis_angle(axis: &Vec3, angle_deg: f64, translation: Vec3) -> Self {
        let r = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), angle_deg.to_radians());
        Self {
            rotation: *r.matrix(),
            translation,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn rotation_angle_deg(&self) -> f64 {
        ((self.rotation.trace() - 1.0) / 2.0)
            .clamp(-1.0, 1.0)
            .acos()
            .to_degrees()
    }

    pub fn apply_cloud(&self, cloud: &PointCloud) -> PointCloud {
        cloud.transformed(|p| self.apply(p))
    }
}

/// Least-squares rigid fit mapping `src[i]` onto `dst[i]` (Kabsch).
pub fn kabsch(src: &[Vec3], dst: &[Vec3]) -> Result<RigidTransform> {
    if src.len() != dst.len() || src.is_empty() {
        return Err(Error::Size(format!(
            "{} source vs {} target points",
            src.len(),
            dst.len()
        )));
    }
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vec3>() / n;
    let cd = dst.iter().sum::<Vec3>() / n;
    let mut h = Mat3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = SVD::new(h, true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let fix = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, if d == 0.0 { 1.0 } else { d }));
    let rotation = v * fix * u.transpose();
    Ok(RigidTransform {
        rotation,
        translation: cd - rotation * cs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpOptions {
    pub max_iters: usize,
    /// Stop once the mean squared residual changes by less than this.
    pub tol: f64,
}

impl Default for IcpOptions {
    fn default() -> Self {
        Self {
            max_iters: 50,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IcpResult {
    /// Best transform found, mapping `src` onto `dst`.
    pub transform: RigidTransform,
    pub aligned: PointCloud,
    /// Mean squared nearest-neighbour residual before each fit, starting with
    /// the centroid pre-alignment, then after the last fit.
    pub residuals: Vec<f64>,
}

fn check_spread(cloud: &PointCloud, name: &str) -> Result<()> {
    if cloud.len() < 3 {
        return Err(Error::Degenerate(format!(
            "{name} has {} points, ICP needs 3",
            cloud.len()
        )));
    }
    let c = cloud.centroid().expect("non-empty");
    let mut cov = Mat3::zeros();
    for p in &cloud.points {
        cov += (p - c) * (p - c).transpose();
    }
    let ev = cov.symmetric_eigenvalues();
    let mut ev: Vec<f64> = ev.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    if !(ev[1] > 1e-12 * ev[2].max(f64::MIN_POSITIVE)) {
        return Err(Error::Degenerate(format!("{name} is collinear")));
    }
    Ok(())
}

fn mean_sq_residual(tree: &KdTree, dst: &[Vec3], moved: &[Vec3]) -> (f64, Vec<Vec3>) {
    let matches: Vec<(Vec3, f64)> = moved
        .par_iter()
        .map(|p| {
            let (i, d) = tree.nearest(p).expect("non-empty tree");
            (dst[i], d)
        })
        .collect();
    let mse = matches.iter().map(|m| m.1).sum::<f64>() / moved.len() as f64;
    (mse, matches.into_iter().map(|m| m.0).collect())
}

/// Point-to-point ICP aligning `src` onto `dst`, starting from the transform
/// that matches their centroids.
pub fn icp_align(src: &PointCloud, dst: &PointCloud, opts: &IcpOptions) -> Result<IcpResult> {
    check_spread(src, "source cloud")?;
    check_spread(dst, "target cloud")?;
    let tree = KdTree::build(&dst.points);
    let mut current = RigidTransform {
        rotation: Mat3::identity(),
        translation: dst.centroid().expect("checked") - src.centroid().expect("checked"),
    };
    let mut best = (f64::INFINITY, current);
    let mut residuals = Vec::new();
    for _ in 0..=opts.max_iters {
        let moved: Vec<Vec3> = src.points.iter().map(|p| current.apply(p)).collect();
        let (mse, matched) = mean_sq_residual(&tree, &dst.points, &moved);
        if mse < best.0 {
            best = (mse, current);
        }
        let converged = residuals.last().is_some_and(|prev: &f64| (prev - mse).abs() < opts.tol);
        residuals.push(mse);
        if converged || residuals.len() > opts.max_iters {
            break;
        }
        current = kabsch(&src.points, &matched)?;
    }
    let transform = best.1;
    Ok(IcpResult {
        transform,
        aligned: transform.apply_cloud(src),
        residuals,
    })
}
