use std::io::{Read, Write};

use rayon::prelude::*;

use crate::{Error, Result, Vec3};

/// Regular scalar grid. Sample `(i, j, k)` sits at
/// `origin + (i·spacing.x, j·spacing.y, k·spacing.z)`; storage is x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfGrid {
    pub dims: [usize; 3],
    pub origin: Vec3,
    pub spacing: Vec3,
    pub values: Vec<f64>,
}

const MAGIC: &[u8; 4] = b"SDFG";
const VERSION: u32 = 1;

impl SdfGrid {
    pub fn from_values(dims: [usize; 3], origin: Vec3, spacing: Vec3, values: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::Domain(format!("grid resolution {dims:?} must be >= 2 per axis")));
        }
        if values.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::Size(format!("{} values for dims {dims:?}", values.len())));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) || origin.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "bad grid geometry origin={origin:?} spacing={spacing:?}"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("grid contains non-finite values".into()));
        }
        Ok(Self {
            dims,
            origin,
            spacing,
            values,
        })
    }

    /// Samples on the nodes of a lattice spanning `[min, max]` inclusive.
    pub fn sample_nodes(dims: [usize; 3], min: Vec3, max: Vec3, f: impl Fn(&Vec3) -> f64 + Sync) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::Domain(format!("grid resolution {dims:?} must be >= 2 per axis")));
        }
        let spacing = Vec3::from_fn(|a, _| (max[a] - min[a]) / (dims[a] - 1) as f64);
        Self::sample(dims, min, spacing, f)
    }

    /// Samples at the centers of `dims` cells tiling `[min, max]`.
    pub fn sample_cells(dims: [usize; 3], min: Vec3, max: Vec3, f: impl Fn(&Vec3) -> f64 + Sync) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::Domain(format!("grid resolution {dims:?} must be >= 2 per axis")));
        }
        let spacing = Vec3::from_fn(|a, _| (max[a] - min[a]) / dims[a] as f64);
        Self::sample(dims, min + spacing * 0.5, spacing, f)
    }

    fn sample(dims: [usize; 3], origin: Vec3, spacing: Vec3, f: impl Fn(&Vec3) -> f64 + Sync) -> Result<Self> {
        let slab = dims[0] * dims[1];
        let mut values = vec![0.0; slab * dims[2]];
        values.par_chunks_mut(slab).enumerate().for_each(|(k, chunk)| {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let p = origin + Vec3::new(i as f64 * spacing.x, j as f64 * spacing.y, k as f64 * spacing.z);
                    chunk[i + dims[0] * j] = f(&p);
                }
            }
        });
        Self::from_values(dims, origin, spacing, values)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    #[inline]
    pub fn position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin
            + Vec3::new(
                i as f64 * self.spacing.x,
                j as f64 * self.spacing.y,
                k as f64 * self.spacing.z,
            )
    }

    /// Largest sample position.
    pub fn max_corner(&self) -> Vec3 {
        self.position(self.dims[0] - 1, self.dims[1] - 1, self.dims[2] - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn negated(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| -v).collect(),
            ..self.clone()
        }
    }

    /// Trilinear interpolation, clamped to the sampled box.
    pub fn trilinear(&self, p: &Vec3) -> f64 {
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let s = ((p[a] - self.origin[a]) / self.spacing[a]).clamp(0.0, (self.dims[a] - 1) as f64);
            let i = (s.floor() as usize).min(self.dims[a] - 2);
            base[a] = i;
            frac[a] = s - i as f64;
        }
        let mut acc = 0.0;
        for c in 0..8 {
            let (di, dj, dk) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            let w = (if di == 1 { frac[0] } else { 1.0 - frac[0] })
                * (if dj == 1 { frac[1] } else { 1.0 - frac[1] })
                * (if dk == 1 { frac[2] } else { 1.0 - frac[2] });
            acc += w * self.value(base[0] + di, base[1] + dj, base[2] + dk);
        }
        acc
    }

    /// Binary dump: `SDFG`, u32 version, u32 dims ×3, f64 origin ×3,
    /// f64 spacing ×3, then f32 values, all little-endian.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for d in self.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in self.origin.iter().chain(self.spacing.iter()) {
            w.write_all(&v.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.values.len() * 4);
        for v in &self.values {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::format("sdf grid", "bad magic"));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::format("sdf grid", format!("unsupported version {version}")));
        }
        let dims = [
            read_u32(&mut r)? as usize,
            read_u32(&mut r)? as usize,
            read_u32(&mut r)? as usize,
        ];
        let mut geo = [0.0; 6];
        for g in &mut geo {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            *g = f64::from_le_bytes(b);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::format("sdf grid", "dims overflow"))?;
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Self::from_values(
            dims,
            Vec3::new(geo[0], geo[1], geo[2]),
            Vec3::new(geo[3], geo[4], geo[5]),
            values,
        )
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::at_path(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::at_path(path, e))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
