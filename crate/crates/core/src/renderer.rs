//! Analytic signed-distance shapes and a sphere-tracing renderer used to
//! produce ground-truth condition and orbit views.

use ::image::{GrayImage, Luma, Rgb, RgbImage};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{orbit_poses, pose_to_matrices, sample_condition_pose, CameraPose, Ray};
use crate::mvgrid::ViewSet;
use crate::{Error, Result, Vec3};

pub const MARCH_EPS: f64 = 1e-4;
pub const MARCH_MAX_STEPS: usize = 256;
pub const BOUNDING_RADIUS: f64 = 1.2;
pub const NORMAL_STEP: f64 = 1e-4;
pub const AMBIENT: f64 = 0.2;
pub const ALBEDO: [f64; 3] = [0.78, 0.62, 0.45];

/// Default light: from the upper front-left of the 0° view.
pub fn default_light_dir() -> Vec3 {
    Vec3::new(0.6, 0.3, 0.75).normalize()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticSdf {
    /// Nothing: distance is +1 everywhere.
    Empty,
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    Box {
        center: [f64; 3],
        half_extents: [f64; 3],
    },
    /// Torus around the z axis.
    Torus {
        center: [f64; 3],
        major: f64,
        minor: f64,
    },
    /// Origin-centered sphere with a spherical cavity cut where the
    /// direction `dent_direction` leaves the surface.
    DentedSphere {
        radius: f64,
        dent_direction: [f64; 3],
        dent_radius: f64,
        dent_depth: f64,
    },
    Union {
        a: Box<AnalyticSdf>,
        b: Box<AnalyticSdf>,
    },
    /// `a` minus `b`.
    Subtract {
        a: Box<AnalyticSdf>,
        b: Box<AnalyticSdf>,
    },
    Intersect {
        a: Box<AnalyticSdf>,
        b: Box<AnalyticSdf>,
    },
}

fn v3(a: &[f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

impl AnalyticSdf {
    pub fn sphere(radius: f64) -> Self {
        AnalyticSdf::Sphere {
            center: [0.0; 3],
            radius,
        }
    }

    pub fn union(a: AnalyticSdf, b: AnalyticSdf) -> Self {
        AnalyticSdf::Union {
            a: Box::new(a),
            b: Box::new(b),
        }
    }

    pub fn subtract(a: AnalyticSdf, b: AnalyticSdf) -> Self {
        AnalyticSdf::Subtract {
            a: Box::new(a),
            b: Box::new(b),
        }
    }

    pub fn intersect(a: AnalyticSdf, b: AnalyticSdf) -> Self {
        AnalyticSdf::Intersect {
            a: Box::new(a),
            b: Box::new(b),
        }
    }

    /// Center of the cavity of a dented sphere.
    pub fn dent_center(radius: f64, dent_direction: &[f64; 3], dent_radius: f64, dent_depth: f64) -> Vec3 {
        v3(dent_direction).normalize() * (radius + dent_radius - dent_depth)
    }

    /// Signed distance; exact for the primitives, a bound for CSG nodes.
    pub fn eval(&self, p: &Vec3) -> f64 {
        match self {
            AnalyticSdf::Empty => 1.0,
            AnalyticSdf::Sphere { center, radius } => (p - v3(center)).norm() - radius,
            AnalyticSdf::Box { center, half_extents } => {
                let q = (p - v3(center)).abs() - v3(half_extents);
                q.map(|v| v.max(0.0)).norm() + q.max().min(0.0)
            }
            AnalyticSdf::Torus { center, major, minor } => {
                let d = p - v3(center);
                let ring = (d.x * d.x + d.y * d.y).sqrt() - major;
                (ring * ring + d.z * d.z).sqrt() - minor
            }
            AnalyticSdf::DentedSphere {
                radius,
                dent_direction,
                dent_radius,
                dent_depth,
            } => {
                let c = Self::dent_center(*radius, dent_direction, *dent_radius, *dent_depth);
                let body = p.norm() - radius;
                let cavity = (p - c).norm() - dent_radius;
                body.max(-cavity)
            }
            AnalyticSdf::Union { a, b } => a.eval(p).min(b.eval(p)),
            AnalyticSdf::Subtract { a, b } => a.eval(p).max(-b.eval(p)),
            AnalyticSdf::Intersect { a, b } => a.eval(p).max(b.eval(p)),
        }
    }

    /// Central-difference gradient.
    pub fn gradient(&self, p: &Vec3) -> Vec3 {
        let h = NORMAL_STEP;
        let d = |axis: usize| {
            let mut e = Vec3::zeros();
            e[axis] = h;
            (self.eval(&(p + e)) - self.eval(&(p - e))) / (2.0 * h)
        };
        Vec3::new(d(0), d(1), d(2))
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        self.eval(p) <= 0.0
    }
}

/// Radius of the `sphere` fixture. Smaller than the dented sphere so the
/// six-view visual hull stays tight at the poles.
pub const SPHERE_FIXTURE_RADIUS: f64 = 0.4;

/// Named fixture shapes. All fit inside the unit sphere.
pub fn fixture(name: &str) -> Result<AnalyticSdf> {
    Ok(match name {
        "sphere" => AnalyticSdf::sphere(SPHERE_FIXTURE_RADIUS),
        "dented_sphere" => dented_sphere(),
        "torus" => AnalyticSdf::Torus {
            center: [0.0; 3],
            major: 0.45,
            minor: 0.18,
        },
        "box" => AnalyticSdf::Box {
            center: [0.0; 3],
            half_extents: [0.4, 0.3, 0.25],
        },
        "two_spheres" => AnalyticSdf::union(
            AnalyticSdf::Sphere {
                center: [-0.4, 0.0, 0.0],
                radius: 0.3,
            },
            AnalyticSdf::Sphere {
                center: [0.45, 0.1, 0.0],
                radius: 0.25,
            },
        ),
        "lumpy" => lumpy(),
        "empty" => AnalyticSdf::Empty,
        other => return Err(Error::Config(format!("unknown fixture `{other}`"))),
    })
}

pub const FIXTURE_NAMES: [&str; 7] = [
    "sphere",
    "dented_sphere",
    "torus",
    "box",
    "two_spheres",
    "lumpy",
    "empty",
];

/// Sphere of radius 0.5 with a cavity at the top pole that no 0°-elevation
/// orbit silhouette can see.
pub fn dented_sphere() -> AnalyticSdf {
    AnalyticSdf::DentedSphere {
        radius: 0.5,
        dent_direction: [0.0, 0.0, 1.0],
        dent_radius: 0.15,
        dent_depth: 0.1,
    }
}

/// Plain sphere matching [`dented_sphere`] without its cavity.
pub fn undented_sphere() -> AnalyticSdf {
    AnalyticSdf::sphere(0.5)
}

/// Asymmetric blob (box, offset sphere, off-axis bump) with no rotational
/// symmetry, for registration fixtures.
pub fn lumpy() -> AnalyticSdf {
    AnalyticSdf::union(
        AnalyticSdf::union(
            AnalyticSdf::Box {
                center: [0.0, 0.0, 0.0],
                half_extents: [0.45, 0.25, 0.15],
            },
            AnalyticSdf::Sphere {
                center: [0.3, 0.15, 0.15],
                radius: 0.22,
            },
        ),
        AnalyticSdf::Sphere {
            center: [-0.35, -0.1, 0.1],
            radius: 0.12,
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub point: Vec3,
    pub distance: f64,
}

/// Entry/exit distances of a ray through the origin-centered bounding sphere.
fn bounding_interval(ray: &Ray, radius: f64) -> Option<(f64, f64)> {
    let b = ray.origin.dot(&ray.dir);
    let c = ray.origin.norm_squared() - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    let (t0, t1) = (-b - s, -b + s);
    (t1 >= 0.0).then_some((t0.max(0.0), t1))
}

/// Sphere tracing inside the bounding sphere.
pub fn ray_march(ray: &Ray, shape: &AnalyticSdf, max_steps: usize, eps: f64) -> Option<Hit> {
    let (mut t, t_exit) = bounding_interval(ray, BOUNDING_RADIUS)?;
    for _ in 0..max_steps {
        let p = ray.at(t);
        let d = shape.eval(&p);
        if d < eps {
            return Some(Hit { point: p, distance: t });
        }
        t += d;
        if t > t_exit {
            return None;
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub image: RgbImage,
    /// 255 where a ray hit the shape, 0 elsewhere.
    pub silhouette: GrayImage,
    pub pose: CameraPose,
    /// Row-major hit distances, `None` for background pixels.
    pub depth: Option<Vec<Option<f64>>>,
}

impl RenderedView {
    pub fn silhouette_area(&self) -> usize {
        self.silhouette.pixels().filter(|p| p[0] > 0).count()
    }
}

/// Hit distance and shaded color of one pixel.
type Shaded = Option<(f64, [u8; 3])>;

/// Lambertian render on a white background: `albedo · (ambient + (1 − ambient) · max(0, n·l))`.
pub fn render(shape: &AnalyticSdf, pose: &CameraPose, resolution: u32, light_dir: &Vec3) -> Result<RenderedView> {
    let cam = pose_to_matrices(pose, resolution, resolution)?;
    let light = light_dir.normalize();
    let n = resolution as usize;
    let rows: Vec<Vec<Shaded>> = (0..n)
        .into_par_iter()
        .map(|j| {
            (0..n)
                .map(|i| {
                    let ray = cam.ray_through(i as f64 + 0.5, j as f64 + 0.5);
                    ray_march(&ray, shape, MARCH_MAX_STEPS, MARCH_EPS).map(|hit| {
                        let g = shape.gradient(&hit.point);
                        let normal = if g.norm() > 0.0 { g.normalize() } else { -ray.dir };
                        let lambert = normal.dot(&light).max(0.0);
                        let shade = AMBIENT + (1.0 - AMBIENT) * lambert;
                        let rgb = ALBEDO.map(|a| (a * shade * 255.0).round().clamp(0.0, 255.0) as u8);
                        (hit.distance, rgb)
                    })
                })
                .collect()
        })
        .collect();

    let mut image = RgbImage::from_pixel(resolution, resolution, crate::image::WHITE);
    let mut silhouette = GrayImage::new(resolution, resolution);
    let mut depth = Vec::with_capacity(n * n);
    for (j, row) in rows.iter().enumerate() {
        for (i, px) in row.iter().enumerate() {
            if let Some((d, rgb)) = px {
                image.put_pixel(i as u32, j as u32, Rgb(*rgb));
                silhouette.put_pixel(i as u32, j as u32, Luma([255]));
                depth.push(Some(*d));
            } else {
                depth.push(None);
            }
        }
    }
    Ok(RenderedView {
        image,
        silhouette,
        pose: *pose,
        depth: Some(depth),
    })
}

/// The six orbit renders plus an optional condition view.
#[derive(Debug, Clone)]
pub struct FixtureSet {
    pub views: Vec<RenderedView>,
    pub condition: Option<RenderedView>,
}

impl FixtureSet {
    pub fn view_set(&self) -> ViewSet {
        ViewSet {
            images: self.views.iter().map(|v| v.image.clone()).collect(),
            poses: orbit_poses(),
        }
    }

    pub fn silhouettes(&self) -> Vec<GrayImage> {
        self.views.iter().map(|v| v.silhouette.clone()).collect()
    }
}

/// Renders the orbit and, when asked, one view from a sampled condition pose.
pub fn render_fixture_set<R: Rng + ?Sized>(
    shape: &AnalyticSdf,
    resolution: u32,
    include_condition: bool,
    rng: &mut R,
) -> Result<FixtureSet> {
    let condition_pose = include_condition.then(|| sample_condition_pose(rng));
    render_fixture_set_with_pose(shape, resolution, condition_pose.as_ref())
}

/// Like [`render_fixture_set`] with an explicit condition pose.
pub fn render_fixture_set_with_pose(
    shape: &AnalyticSdf,
    resolution: u32,
    condition_pose: Option<&CameraPose>,
) -> Result<FixtureSet> {
    let light = default_light_dir();
    let views = orbit_poses()
        .iter()
        .map(|p| render(shape, p, resolution, &light))
        .collect::<Result<Vec<_>>>()?;
    let condition = condition_pose
        .map(|p| render(shape, p, resolution, &light))
        .transpose()?;
    Ok(FixtureSet { views, condition })
}
