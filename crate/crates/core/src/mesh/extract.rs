use std::collections::HashMap;

use rayon::prelude::*;

use super::{cross, dot, sub, TriMesh};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::scalar::Real;
use crate::transform::{Aabb, Similarity};

/// Largest grid (in samples) evaluated in memory.
const MAX_GRID_POINTS: usize = 1 << 27;

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractConfig {
    /// Cells per axis.
    pub resolution: usize,
    pub bounds: Aabb,
    /// Points per field evaluation batch.
    pub chunk: usize,
}

impl ExtractConfig {
    pub fn new(resolution: usize, bounds: Aabb) -> Self {
        ExtractConfig {
            resolution,
            bounds,
            chunk: 8192,
        }
    }
}

/// Kuhn split of the unit cube into six tetrahedra sharing the main
/// diagonal; corner `i` has offset bits (x, y, z) = (i & 1, i >> 1 & 1, i >> 2 & 1).
const TETS: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

/// Samples `field` on a regular grid over `cfg.bounds` and triangulates its
/// zero level set by marching tetrahedra. Vertices are mapped through
/// `to_output` (field coordinates to output units). Faces are wound so their
/// normals point toward positive values.
pub fn extract_mesh<T: Real, F: Field<T> + ?Sized>(
    field: &F,
    cfg: &ExtractConfig,
    to_output: &Similarity,
) -> Result<TriMesh> {
    let r = cfg.resolution;
    if r < 16 {
        return Err(Error::Validation(format!(
            "mesh resolution {r} is below the minimum of 16"
        )));
    }
    if cfg.bounds.is_empty() {
        return Err(Error::Validation("empty extraction bounds".into()));
    }
    let n = r + 1;
    if n.checked_pow(3).is_none_or(|c| c > MAX_GRID_POINTS) {
        return Err(Error::Resource(format!(
            "a {r}^3 grid does not fit in memory; lower the resolution or extract sub-regions in chunks"
        )));
    }
    let b = cfg.bounds;
    let step: [f64; 3] = std::array::from_fn(|k| (b.max[k] - b.min[k]) / r as f64);
    let grid_point = |ix: usize, iy: usize, iz: usize| -> [f64; 3] {
        [
            b.min[0] + step[0] * ix as f64,
            b.min[1] + step[1] * iy as f64,
            b.min[2] + step[2] * iz as f64,
        ]
    };
    let total = n * n * n;
    let chunk = cfg.chunk.max(1);
    let values: Vec<f64> = (0..total.div_ceil(chunk))
        .into_par_iter()
        .flat_map_iter(|c| {
            let range = c * chunk..((c + 1) * chunk).min(total);
            let pts: Vec<[T; 3]> = range
                .map(|i| grid_point(i % n, (i / n) % n, i / (n * n)).map(T::lit))
                .collect();
            field.sdf_batch(&pts).into_iter().map(|v| v.as_f64())
        })
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "field value at grid point {:?}",
            grid_point(i % n, (i / n) % n, i / (n * n))
        )));
    }

    let index = |ix: usize, iy: usize, iz: usize| ix + n * (iy + n * iz);
    let mut edges = EdgeVertices::default();
    let mut faces: Vec<[u32; 3]> = Vec::new();

    for iz in 0..r {
        for iy in 0..r {
            for ix in 0..r {
                let corner = |c: usize| (ix + (c & 1), iy + ((c >> 1) & 1), iz + ((c >> 2) & 1));
                let gi: [usize; 8] = std::array::from_fn(|c| {
                    let (x, y, z) = corner(c);
                    index(x, y, z)
                });
                let inside: [bool; 8] = std::array::from_fn(|c| values[gi[c]] < 0.0);
                if inside.iter().all(|v| *v) || inside.iter().all(|v| !*v) {
                    continue;
                }
                let pos: [[f64; 3]; 8] = std::array::from_fn(|c| {
                    let (x, y, z) = corner(c);
                    grid_point(x, y, z)
                });
                for tet in TETS {
                    let neg: Vec<usize> = tet.iter().copied().filter(|c| inside[*c]).collect();
                    let pos_c: Vec<usize> = tet.iter().copied().filter(|c| !inside[*c]).collect();
                    if neg.is_empty() || pos_c.is_empty() {
                        continue;
                    }
                    let mut on = |a: usize, b2: usize| {
                        edges.vertex((gi[a], pos[a], values[gi[a]]), (gi[b2], pos[b2], values[gi[b2]]))
                    };
                    let polygon: Vec<u32> = match (neg.len(), pos_c.len()) {
                        (1, 3) => pos_c.iter().map(|p| on(neg[0], *p)).collect(),
                        (3, 1) => neg.iter().map(|m| on(*m, pos_c[0])).collect(),
                        _ => vec![
                            on(neg[0], pos_c[0]),
                            on(neg[0], pos_c[1]),
                            on(neg[1], pos_c[1]),
                            on(neg[1], pos_c[0]),
                        ],
                    };
                    let centroid = |cs: &[usize]| -> [f64; 3] {
                        std::array::from_fn(|k| cs.iter().map(|c| pos[*c][k]).sum::<f64>() / cs.len() as f64)
                    };
                    let outward = sub(centroid(&pos_c), centroid(&neg));
                    for k in 1..polygon.len() - 1 {
                        let tri = [polygon[0], polygon[k], polygon[k + 1]];
                        if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                            continue;
                        }
                        faces.push(oriented(&edges.vertices, tri, outward));
                    }
                }
            }
        }
    }
    let mut mesh = TriMesh {
        vertices: edges.vertices,
        faces,
        normals: None,
    };
    if *to_output != Similarity::identity() {
        mesh = mesh.transformed(to_output);
    }
    mesh.validate()?;
    Ok(mesh)
}

/// Zero-crossing vertices shared by every tetrahedron touching a grid edge.
#[derive(Default)]
struct EdgeVertices {
    map: HashMap<(usize, usize), u32>,
    vertices: Vec<[f64; 3]>,
}

impl EdgeVertices {
    fn vertex(&mut self, a: (usize, [f64; 3], f64), b: (usize, [f64; 3], f64)) -> u32 {
        let key = if a.0 < b.0 { (a.0, b.0) } else { (b.0, a.0) };
        let vertices = &mut self.vertices;
        *self.map.entry(key).or_insert_with(|| {
            let t = a.2 / (a.2 - b.2);
            vertices.push(std::array::from_fn(|k| a.1[k] + t * (b.1[k] - a.1[k])));
            (vertices.len() - 1) as u32
        })
    }
}

fn oriented(vertices: &[[f64; 3]], tri: [u32; 3], outward: [f64; 3]) -> [u32; 3] {
    let [a, b, c] = tri.map(|i| vertices[i as usize]);
    if dot(cross(sub(b, a), sub(c, a)), outward) < 0.0 {
        [tri[0], tri[2], tri[1]]
    } else {
        tri
    }
}
