//! Triangle-mesh extraction from a signed-distance field (marching cubes with
//! linear interpolation) and geometric quality metrics.

mod tables;

use crate::sdf::SdfField;
use crate::spatial::KdTree3;
use crate::{Aabb, Error, Result, Vec3};
use rayon::prelude::*;
use std::collections::HashMap;
use tables::{case_table, corner_pos, EDGE_CORNERS};

#[derive(Debug, Clone, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub normals: Vec<Vec3>,
}

impl TriangleMesh {
    pub fn area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let a = self.vertices[t[0] as usize];
                let b = self.vertices[t[1] as usize];
                let c = self.vertices[t[2] as usize];
                0.5 * (b - a).cross(&(c - a)).norm()
            })
            .sum()
    }

    /// V - E + F over unique undirected edges.
    pub fn euler_characteristic(&self) -> i64 {
        let mut edges = std::collections::HashSet::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        self.vertices.len() as i64 - edges.len() as i64 + self.triangles.len() as i64
    }

    /// True when every edge is shared by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        let mut counts: HashMap<(u32, u32), u32> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts.values().all(|&c| c == 2)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        for t in &self.triangles {
            if t.iter().any(|&i| i >= n) {
                return Err(Error::IndexOutOfRange("triangle vertex index".into()));
            }
        }
        Ok(())
    }
}

/// Marching cubes over `resolution^3` cells spanning `bbox` at iso value 0.
pub fn marching_cubes<F: SdfField + ?Sized>(
    field: &F,
    bbox: &Aabb,
    resolution: usize,
) -> Result<TriangleMesh> {
    if resolution < 8 {
        return Err(Error::InvalidConfig("resolution must be at least 8".into()));
    }
    let n = resolution;
    let np = n + 1;
    let step = [
        (bbox.max[0] - bbox.min[0]) / n as f64,
        (bbox.max[1] - bbox.min[1]) / n as f64,
        (bbox.max[2] - bbox.min[2]) / n as f64,
    ];
    let lattice_point = |i: usize, j: usize, k: usize| {
        Vec3::new(
            bbox.min[0] + i as f64 * step[0],
            bbox.min[1] + j as f64 * step[1],
            bbox.min[2] + k as f64 * step[2],
        )
    };
    // field values on the lattice, z fastest
    let values: Vec<f64> = (0..np * np * np)
        .into_par_iter()
        .map(|flat| {
            let i = flat / (np * np);
            let j = (flat / np) % np;
            let k = flat % np;
            field.value(&lattice_point(i, j, k))
        })
        .collect();
    let at = |i: usize, j: usize, k: usize| values[(i * np + j) * np + k];

    let table = case_table();
    let mut mesh = TriangleMesh::default();
    // shared vertices keyed by (lattice corner of the edge, axis)
    let mut vertex_ids: HashMap<(usize, usize, usize, u8), u32> = HashMap::new();
    let mut any_crossing = false;

    for ci in 0..n {
        for cj in 0..n {
            for ck in 0..n {
                let mut config = 0u8;
                for c in 0..8 {
                    let p = corner_pos(c);
                    let v = at(ci + p[0] as usize, cj + p[1] as usize, ck + p[2] as usize);
                    if v < 0.0 {
                        config |= 1 << c;
                    }
                }
                if config == 0 || config == 255 {
                    continue;
                }
                any_crossing = true;
                let mut edge_vertex = [u32::MAX; 12];
                for tri in &table.cases[config as usize] {
                    for &e in tri {
                        if edge_vertex[e] != u32::MAX {
                            continue;
                        }
                        let (a, b) = EDGE_CORNERS[e];
                        let pa = corner_pos(a);
                        let pb = corner_pos(b);
                        let ia = (ci + pa[0] as usize, cj + pa[1] as usize, ck + pa[2] as usize);
                        let ib = (ci + pb[0] as usize, cj + pb[1] as usize, ck + pb[2] as usize);
                        let axis = if ia.0 != ib.0 {
                            0u8
                        } else if ia.1 != ib.1 {
                            1
                        } else {
                            2
                        };
                        let key = (ia.0.min(ib.0), ia.1.min(ib.1), ia.2.min(ib.2), axis);
                        let id = *vertex_ids.entry(key).or_insert_with(|| {
                            let va = at(ia.0, ia.1, ia.2);
                            let vb = at(ib.0, ib.1, ib.2);
                            // linear zero crossing along the edge
                            let t = if (vb - va).abs() < 1e-300 {
                                0.5
                            } else {
                                (-va / (vb - va)).clamp(0.0, 1.0)
                            };
                            let p0 = lattice_point(ia.0, ia.1, ia.2);
                            let p1 = lattice_point(ib.0, ib.1, ib.2);
                            let id = mesh.vertices.len() as u32;
                            mesh.vertices.push(p0 + (p1 - p0) * t);
                            id
                        });
                        edge_vertex[e] = id;
                    }
                    let ids = [edge_vertex[tri[0]], edge_vertex[tri[1]], edge_vertex[tri[2]]];
                    if ids[0] == ids[1] || ids[1] == ids[2] || ids[0] == ids[2] {
                        continue;
                    }
                    let a = mesh.vertices[ids[0] as usize];
                    let b = mesh.vertices[ids[1] as usize];
                    let c = mesh.vertices[ids[2] as usize];
                    if 0.5 * (b - a).cross(&(c - a)).norm() <= 1e-12 {
                        continue;
                    }
                    mesh.triangles.push(ids);
                }
            }
        }
    }

    if !any_crossing {
        return Err(Error::EmptyLevelSet);
    }
    mesh.normals = mesh
        .vertices
        .par_iter()
        .map(|v| {
            let g = field.gradient(v);
            let n = g.norm();
            if n < 1e-12 {
                Vec3::new(0.0, 0.0, 1.0)
            } else {
                g / n
            }
        })
        .collect();
    Ok(mesh)
}

/// Symmetric Chamfer distance: the average of both directional mean
/// nearest-neighbor distances.
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyPointCloud);
    }
    let d_ab = directed_mean_nn(a, b);
    let d_ba = directed_mean_nn(b, a);
    Ok(0.5 * (d_ab + d_ba))
}

fn directed_mean_nn(from: &[Vec3], to: &[Vec3]) -> f64 {
    let tree = KdTree3::build(to);
    let dists: Vec<f64> = from
        .par_iter()
        .map(|p| tree.nearest(p).map(|(_, d2)| d2.sqrt()).unwrap_or(0.0))
        .collect();
    dists.iter().sum::<f64>() / from.len() as f64
}
