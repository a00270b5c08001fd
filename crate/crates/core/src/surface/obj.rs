use std::fmt::Write as _;
use std::io::{BufRead, Write};

use super::Mesh;
use crate::{Error, Result, Vec3};

/// ASCII OBJ with `v` and triangular `f` records. Coordinates use the
/// shortest round-trip decimal form, so output is byte-stable.
pub fn write_obj<W: Write>(mesh: &Mesh, mut w: W) -> Result<()> {
    let mut s = String::with_capacity(mesh.vertices.len() * 40 + mesh.triangles.len() * 24);
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for t in &mesh.triangles {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    w.write_all(s.as_bytes())?;
    Ok(())
}

/// Reads vertices and faces; polygons are fan-triangulated and
/// texture/normal indices (`f 1/2/3`) ignored.
pub fn read_obj<R: BufRead>(r: R) -> Result<Mesh> {
    let mut mesh = Mesh::default();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::format("obj", format!("line {}: {e}", lineno + 1)))?;
                if c.len() != 3 {
                    return Err(Error::format(
                        "obj",
                        format!("line {}: vertex needs 3 coordinates", lineno + 1),
                    ));
                }
                mesh.vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let n = mesh.vertices.len() as i64;
                let idx: Vec<u32> = it
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or("");
                        let i: i64 = head
                            .parse()
                            .map_err(|e| Error::format("obj", format!("line {}: {e}", lineno + 1)))?;
                        let i = if i < 0 { n + i } else { i - 1 };
                        if i < 0 || i >= n {
                            return Err(Error::format("obj", format!("line {}: index out of range", lineno + 1)));
                        }
                        Ok(i as u32)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(Error::format(
                        "obj",
                        format!("line {}: face needs 3 vertices", lineno + 1),
                    ));
                }
                for k in 1..idx.len() - 1 {
                    mesh.triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    mesh.validate()?;
    Ok(mesh)
}

impl Mesh {
    pub fn save_obj(&self, path: &std::path::Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::at_path(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        write_obj(self, &mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_obj(path: &std::path::Path) -> Result<Mesh> {
        let f = std::fs::File::open(path).map_err(|e| Error::at_path(path, e))?;
        read_obj(std::io::BufReader::new(f))
    }
}
