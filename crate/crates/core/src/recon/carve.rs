//! Visual-hull carving from binary silhouettes followed by a signed
//! Euclidean distance transform.

use image::GrayImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{pose_to_matrices, CameraMatrices, CameraPose};
use crate::surface::SdfGrid;
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarveConfig {
    /// Voxels per axis.
    pub resolution: usize,
    /// Mask values above `threshold · 255` count as foreground.
    pub threshold: f64,
    /// SDF truncation in voxel widths.
    pub truncation_voxels: f64,
    /// Cube `[-half_extent, half_extent]³` carved out.
    pub half_extent: f64,
}

impl Default for CarveConfig {
    fn default() -> Self {
        Self {
            resolution: 96,
            threshold: 0.5,
            truncation_voxels: 4.0,
            half_extent: 1.0,
        }
    }
}

impl CarveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 16 {
            return Err(Error::Domain(format!("carve resolution {} < 16", self.resolution)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Domain(format!(
                "silhouette threshold {} outside (0, 1)",
                self.threshold
            )));
        }
        if !(self.truncation_voxels > 0.0) || !(self.half_extent > 0.0) {
            return Err(Error::Domain("truncation and extent must be positive".into()));
        }
        Ok(())
    }

    pub fn voxel_size(&self) -> f64 {
        2.0 * self.half_extent / self.resolution as f64
    }
}

/// A silhouette with the camera it was taken from.
#[derive(Debug, Clone, Copy)]
pub struct Silhouette<'a> {
    pub mask: &'a GrayImage,
    pub pose: &'a CameraPose,
}

struct View {
    cam: CameraMatrices,
    fg: Vec<bool>,
    width: i64,
    height: i64,
}

impl View {
    fn new(s: &Silhouette, threshold: f64) -> Result<Self> {
        let (w, h) = s.mask.dimensions();
        if w == 0 || h == 0 {
            return Err(Error::Size("empty silhouette".into()));
        }
        let cam = pose_to_matrices(s.pose, w, h)?;
        let cut = threshold * 255.0;
        let fg = s.mask.pixels().map(|p| p[0] as f64 > cut).collect();
        Ok(Self {
            cam,
            fg,
            width: w as i64,
            height: h as i64,
        })
    }

    /// Foreground test with a one-pixel dilation, so points inside the
    /// true shape survive even where the rendered boundary is undersampled.
    fn covers(&self, p: &Vec3) -> bool {
        let Some((u, v)) = self.cam.project(p) else {
            return false;
        };
        let (pi, pj) = (u.floor() as i64, v.floor() as i64);
        for j in pj - 1..=pj + 1 {
            for i in pi - 1..=pi + 1 {
                if i >= 0 && j >= 0 && i < self.width && j < self.height && self.fg[(j * self.width + i) as usize] {
                    return true;
                }
            }
        }
        false
    }
}

/// Occupancy at voxel centers (x fastest): inside iff covered in every view.
pub fn visual_hull(views: &[Silhouette], cfg: &CarveConfig) -> Result<(Vec<bool>, SdfGrid)> {
    cfg.validate()?;
    if views.is_empty() {
        return Err(Error::Empty("carving needs at least one silhouette".into()));
    }
    let views = views
        .iter()
        .map(|s| View::new(s, cfg.threshold))
        .collect::<Result<Vec<_>>>()?;
    let n = cfg.resolution;
    let h = cfg.voxel_size();
    let origin = Vec3::repeat(-cfg.half_extent + 0.5 * h);
    let mut occ = vec![false; n * n * n];
    occ.par_chunks_mut(n * n).enumerate().for_each(|(k, slab)| {
        for j in 0..n {
            for i in 0..n {
                let p = origin + Vec3::new(i as f64, j as f64, k as f64) * h;
                slab[i + n * j] = views.iter().all(|v| v.covers(&p));
            }
        }
    });
    let layout = SdfGrid::from_values([n; 3], origin, Vec3::repeat(h), vec![0.0; n * n * n])?;
    Ok((occ, layout))
}

/// Carves the orbit silhouettes (plus an optional posed condition
/// silhouette) and returns a truncated signed distance grid, negative inside.
pub fn carve(views: &[Silhouette], condition: Option<Silhouette>, cfg: &CarveConfig) -> Result<SdfGrid> {
    let mut all: Vec<Silhouette> = views.to_vec();
    all.extend(condition);
    let (occ, mut grid) = visual_hull(&all, cfg)?;
    if !occ.iter().any(|&o| o) {
        return Err(Error::EmptyHull);
    }
    grid.values = occupancy_sdf(&occ, cfg.resolution, cfg.voxel_size(), cfg.truncation_voxels);
    Ok(grid)
}

/// Signed distance from occupancy: distance between voxel centers minus half
/// a voxel, so the zero level falls midway between inside and outside centers.
pub fn occupancy_sdf(occ: &[bool], n: usize, voxel: f64, truncation_voxels: f64) -> Vec<f64> {
    let outside: Vec<bool> = occ.iter().map(|o| !o).collect();
    let to_inside = squared_edt(occ, [n; 3]);
    let to_outside = squared_edt(&outside, [n; 3]);
    let cap = truncation_voxels;
    occ.iter()
        .zip(to_inside.iter().zip(&to_outside))
        .map(|(&o, (&di, &dout))| {
            let d = if o { -(dout.sqrt() - 0.5) } else { di.sqrt() - 0.5 };
            d.clamp(-cap, cap) * voxel
        })
        .collect()
}

const FAR: f64 = 1e20;

/// Exact squared Euclidean distance (in voxels) from every voxel to the
/// nearest `true` voxel, by three separable lower-envelope passes.
/// Voxels outside the grid count as absent; with no `true` voxel every
/// distance is at least `1e20`.
pub fn squared_edt(mask: &[bool], dims: [usize; 3]) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    assert_eq!(mask.len(), nx * ny * nz);
    let mut d: Vec<f64> = mask.iter().map(|&m| if m { 0.0 } else { FAR }).collect();

    // x rows are contiguous
    d.par_chunks_mut(nx).for_each(|row| {
        let f = row.to_vec();
        envelope_1d(&f, row);
    });
    // y columns within each z slab
    d.par_chunks_mut(nx * ny).for_each(|slab| {
        let mut f = vec![0.0; ny];
        let mut out = vec![0.0; ny];
        for i in 0..nx {
            for j in 0..ny {
                f[j] = slab[i + nx * j];
            }
            envelope_1d(&f, &mut out);
            for j in 0..ny {
                slab[i + nx * j] = out[j];
            }
        }
    });
    // z columns: gather per (i, j), then scatter back
    let slab = nx * ny;
    let columns: Vec<Vec<f64>> = (0..slab)
        .into_par_iter()
        .map(|ij| {
            let f: Vec<f64> = (0..nz).map(|k| d[ij + slab * k]).collect();
            let mut out = vec![0.0; nz];
            envelope_1d(&f, &mut out);
            out
        })
        .collect();
    for (ij, col) in columns.iter().enumerate() {
        for (k, v) in col.iter().enumerate() {
            d[ij + slab * k] = *v;
        }
    }
    d
}

/// 1-D squared distance transform of a sampled function (lower envelope of
/// parabolas rooted at each sample).
fn envelope_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let meet = |q: usize, p: usize| ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
    for q in 1..n {
        let mut s = meet(q, v[k]);
        // z[0] is -inf, so this stops at k == 0
        while s <= z[k] {
            k -= 1;
            s = meet(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        *o = (dq * dq + f[p]).min(FAR);
    }
}
