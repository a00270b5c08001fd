use std::collections::{HashMap, HashSet};

use rayon::prelude::*;

use super::tables::{CORNERS, EDGES, TRIANGLES};
use super::{Mesh, SdfGrid};
use crate::Vec3;

/// Triangles below this area are dropped after extraction.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// Vertex identity shared between neighbouring cells: either the crossing on
/// a lattice edge (`axis` 0..=2 from `node`) or a lattice node itself when the
/// crossing lands exactly on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct VertexKey(u64);

impl VertexKey {
    fn edge(node: usize, axis: usize) -> Self {
        VertexKey(((node as u64) << 2) | axis as u64)
    }

    fn node(node: usize) -> Self {
        VertexKey(((node as u64) << 2) | 3)
    }
}

struct SlabOutput {
    triangles: Vec<[VertexKey; 3]>,
    vertices: Vec<(VertexKey, Vec3)>,
}

/// Iso-surface of `grid` at `iso`. Samples `<= iso` count as inside and
/// triangles wind counter-clockwise seen from outside (normals point towards
/// increasing values). Grids entirely on one side yield an empty mesh.
pub fn marching_cubes(grid: &SdfGrid, iso: f64) -> Mesh {
    let nz = grid.dims[2];
    let slabs: Vec<SlabOutput> = (0..nz - 1)
        .into_par_iter()
        .map(|k| extract_slab(grid, iso, k))
        .collect();

    let mut index: HashMap<VertexKey, u32> = HashMap::new();
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for slab in slabs {
        let local: HashMap<VertexKey, Vec3> = slab.vertices.into_iter().collect();
        for tri in slab.triangles {
            let ids = tri.map(|key| {
                *index.entry(key).or_insert_with(|| {
                    vertices.push(local[&key]);
                    (vertices.len() - 1) as u32
                })
            });
            triangles.push(ids);
        }
    }
    let mut mesh = Mesh { vertices, triangles };
    mesh.remove_degenerate(MIN_TRIANGLE_AREA);
    mesh
}

fn extract_slab(grid: &SdfGrid, iso: f64, k: usize) -> SlabOutput {
    let [nx, ny, _] = grid.dims;
    let mut out = SlabOutput {
        triangles: Vec::new(),
        vertices: Vec::new(),
    };
    let mut seen: HashSet<VertexKey> = HashSet::new();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let nodes = CORNERS.map(|[di, dj, dk]| grid.index(i + di, j + dj, k + dk));
            let vals = nodes.map(|n| grid.values[n]);
            let mut case = 0usize;
            for (c, v) in vals.iter().enumerate() {
                if *v <= iso {
                    case |= 1 << c;
                }
            }
            if case == 0 || case == 255 {
                continue;
            }
            let mut edge_keys = [None; 12];
            let row = &TRIANGLES[case];
            for tri in row.chunks_exact(3).take_while(|t| t[0] >= 0) {
                let mut keys = [VertexKey(0); 3];
                for (slot, &e) in keys.iter_mut().zip(tri) {
                    let e = e as usize;
                    let key = *edge_keys[e].get_or_insert_with(|| {
                        let [ca, cb] = EDGES[e];
                        // orient every lattice edge from its lower node
                        let (ca, cb) = if nodes[ca] < nodes[cb] { (ca, cb) } else { (cb, ca) };
                        let (na, nb) = (nodes[ca], nodes[cb]);
                        let (va, vb) = (vals[ca], vals[cb]);
                        let t = (iso - va) / (vb - va);
                        let (key, pos) = if t <= 0.0 {
                            (VertexKey::node(na), node_pos(grid, i, j, k, ca))
                        } else if t >= 1.0 {
                            (VertexKey::node(nb), node_pos(grid, i, j, k, cb))
                        } else {
                            let axis = (0..3).find(|&a| CORNERS[ca][a] != CORNERS[cb][a]).unwrap();
                            let pa = node_pos(grid, i, j, k, ca);
                            let pb = node_pos(grid, i, j, k, cb);
                            (VertexKey::edge(na, axis), pa + (pb - pa) * t)
                        };
                        if seen.insert(key) {
                            out.vertices.push((key, pos));
                        }
                        key
                    });
                    *slot = key;
                }
                // the table winds the other way round for our inside convention
                out.triangles.push([keys[0], keys[2], keys[1]]);
            }
        }
    }
    out
}

#[inline]
fn node_pos(grid: &SdfGrid, i: usize, j: usize, k: usize, corner: usize) -> Vec3 {
    let [di, dj, dk] = CORNERS[corner];
    grid.position(i + di, j + dj, k + dk)
}
