//! Explicit surfaces: marching cubes over [`SdfGrid`]s, mesh hygiene,
//! unit-sphere normalization, area-weighted point sampling and OBJ I/O.

mod grid;
mod mc;
mod obj;
pub mod tables;

use std::collections::HashMap;

use rand::Rng;

pub use grid::SdfGrid;
pub use mc::{marching_cubes, MIN_TRIANGLE_AREA};
pub use obj::{read_obj, write_obj};

use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

impl Mesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        if let Some(t) = self.triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(Error::Domain(format!("triangle {t:?} indexes past {n} vertices")));
        }
        if self.vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::Domain("mesh has non-finite vertices".into()));
        }
        Ok(())
    }

    pub fn corners(&self, t: &[u32; 3]) -> [Vec3; 3] {
        t.map(|i| self.vertices[i as usize])
    }

    pub fn triangle_area(&self, t: &[u32; 3]) -> f64 {
        let [a, b, c] = self.corners(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn total_area(&self) -> f64 {
        self.triangles.iter().map(|t| self.triangle_area(t)).sum()
    }

    /// Signed enclosed volume; positive for closed outward-wound meshes.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = self.corners(t);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// Drops triangles with repeated indices or area below `min_area`.
    pub fn remove_degenerate(&mut self, min_area: f64) {
        let verts = &self.vertices;
        self.triangles.retain(|t| {
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return false;
            }
            let [a, b, c] = t.map(|i| verts[i as usize]);
            0.5 * (b - a).cross(&(c - a)).norm() >= min_area
        });
    }

    /// Same surface with every triangle's winding reversed.
    pub fn flipped(&self) -> Mesh {
        Mesh {
            vertices: self.vertices.clone(),
            triangles: self.triangles.iter().map(|&[a, b, c]| [a, c, b]).collect(),
        }
    }

    pub fn transformed(&self, f: impl Fn(&Vec3) -> Vec3) -> Mesh {
        Mesh {
            vertices: self.vertices.iter().map(f).collect(),
            triangles: self.triangles.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self { points, normals: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, f: impl Fn(&Vec3) -> Vec3) -> PointCloud {
        PointCloud::new(self.points.iter().map(f).collect())
    }

    pub fn centroid(&self) -> Option<Vec3> {
        (!self.points.is_empty()).then(|| self.points.iter().sum::<Vec3>() / self.points.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WatertightReport {
    pub watertight: bool,
    /// Undirected edges used by exactly one triangle.
    pub boundary_edges: usize,
    /// Undirected edges used by three or more triangles.
    pub nonmanifold_edges: usize,
    /// Edge-connected triangle components.
    pub components: usize,
}

/// Every undirected edge must be shared by exactly two triangles.
pub fn is_watertight(mesh: &Mesh) -> WatertightReport {
    let mut edges: HashMap<(u32, u32), Vec<usize>> = HashMap::new();
    for (ti, t) in mesh.triangles.iter().enumerate() {
        for e in 0..3 {
            let (a, b) = (t[e], t[(e + 1) % 3]);
            edges.entry((a.min(b), a.max(b))).or_default().push(ti);
        }
    }
    let mut parent: Vec<usize> = (0..mesh.triangles.len()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let (mut boundary, mut nonmanifold) = (0, 0);
    for tris in edges.values() {
        match tris.len() {
            1 => boundary += 1,
            2 => {}
            _ => nonmanifold += 1,
        }
        for w in tris.windows(2) {
            let (ra, rb) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
            if ra != rb {
                parent[ra] = rb;
            }
        }
    }
    let components = (0..parent.len()).filter(|&i| find(&mut parent, i) == i).count();
    WatertightReport {
        watertight: !mesh.is_empty() && boundary == 0 && nonmanifold == 0,
        boundary_edges: boundary,
        nonmanifold_edges: nonmanifold,
        components,
    }
}

/// Moves the vertex centroid to the origin and scales so the farthest vertex
/// has radius 1. Returns the mesh with the applied `(scale, center)`, i.e.
/// `v' = (v − center) · scale`.
pub fn normalize_to_unit_sphere(mesh: &Mesh) -> Result<(Mesh, f64, Vec3)> {
    if mesh.vertices.is_empty() {
        return Err(Error::Empty("cannot normalize an empty mesh".into()));
    }
    let center = mesh.vertices.iter().sum::<Vec3>() / mesh.vertices.len() as f64;
    let radius = mesh.vertices.iter().map(|v| (v - center).norm()).fold(0.0, f64::max);
    if radius <= 0.0 {
        return Err(Error::Degenerate("all mesh vertices coincide".into()));
    }
    let scale = 1.0 / radius;
    Ok((mesh.transformed(|v| (v - center) * scale), scale, center))
}

/// Area-weighted surface samples with uniform barycentric placement.
pub fn sample_surface<R: Rng + ?Sized>(mesh: &Mesh, n: usize, rng: &mut R) -> Result<PointCloud> {
    if mesh.is_empty() {
        return Err(Error::Empty("cannot sample an empty mesh".into()));
    }
    let mut cdf = Vec::with_capacity(mesh.triangles.len());
    let mut acc = 0.0;
    for t in &mesh.triangles {
        acc += mesh.triangle_area(t);
        cdf.push(acc);
    }
    if !(acc > 0.0) {
        return Err(Error::Degenerate("mesh has zero total area".into()));
    }
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for _ in 0..n {
        let r = rng.random::<f64>() * acc;
        let ti = cdf.partition_point(|&c| c <= r).min(cdf.len() - 1);
        let [a, b, c] = mesh.corners(&mesh.triangles[ti]);
        let (u, v): (f64, f64) = (rng.random(), rng.random());
        let su = u.sqrt();
        points.push(a * (1.0 - su) + b * (su * (1.0 - v)) + c * (su * v));
        let nrm = (b - a).cross(&(c - a));
        normals.push(if nrm.norm() > 0.0 { nrm.normalize() } else { nrm });
    }
    Ok(PointCloud {
        points,
        normals: Some(normals),
    })
}

/// Marching cubes of an analytic field on a node grid over `[-1, 1]³`.
pub fn mesh_from_fn(resolution: usize, f: impl Fn(&Vec3) -> f64 + Sync) -> Result<Mesh> {
    let grid = SdfGrid::sample_nodes([resolution; 3], Vec3::repeat(-1.0), Vec3::repeat(1.0), f)?;
    Ok(marching_cubes(&grid, 0.0))
}

#[cfg(test)]
mod tests;
