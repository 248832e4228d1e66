//! Triangle meshes: zero-level-set extraction, cropping and PLY I/O.

mod extract;
mod ply;

pub use extract::{extract_mesh, ExtractConfig};
pub use ply::{read_ply, write_ply};

use crate::error::{Error, Result};
use crate::transform::{Aabb, Similarity};

/// Indexed triangle mesh.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[u32; 3]>,
    pub normals: Option<Vec<[f64; 3]>>,
}

impl TriMesh {
    pub fn new(vertices: Vec<[f64; 3]>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let mesh = TriMesh {
            vertices,
            faces,
            normals: None,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if let Some(f) = self.faces.iter().find(|f| f.iter().any(|i| *i as usize >= n)) {
            return Err(Error::Validation(format!(
                "face {f:?} references a vertex outside 0..{n}"
            )));
        }
        if self.vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mesh vertex".into()));
        }
        if let Some(normals) = &self.normals {
            if normals.len() != n {
                return Err(Error::Validation(format!(
                    "{} normals for {n} vertices",
                    normals.len()
                )));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn triangle(&self, f: usize) -> [[f64; 3]; 3] {
        self.faces[f].map(|i| self.vertices[i as usize])
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.triangle(f);
        let u = sub(b, a);
        let v = sub(c, a);
        0.5 * norm(cross(u, v))
    }

    pub fn area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(&self.vertices)
    }

    /// Appends another mesh, offsetting its indices.
    pub fn append(&mut self, other: &TriMesh) {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.faces
            .extend(other.faces.iter().map(|f| f.map(|i| i + base)));
        self.normals = None;
    }

    /// Applies a similarity to every vertex.
    pub fn transformed(&self, t: &Similarity) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|v| t.apply(*v)).collect(),
            faces: self.faces.clone(),
            normals: self.normals.clone(),
        }
    }

    /// Keeps faces for which `keep(face index)` holds and drops unreferenced
    /// vertices.
    pub fn retain_faces(&self, mut keep: impl FnMut(usize) -> bool) -> TriMesh {
        let kept: Vec<[u32; 3]> = (0..self.faces.len())
            .filter(|f| keep(*f))
            .map(|f| self.faces[f])
            .collect();
        let mut used = vec![false; self.vertices.len()];
        kept.iter().flatten().for_each(|i| used[*i as usize] = true);
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        let mut normals = self.normals.as_ref().map(|_| Vec::new());
        for (i, _) in used.iter().enumerate().filter(|(_, u)| **u) {
            remap[i] = vertices.len() as u32;
            vertices.push(self.vertices[i]);
            if let (Some(out), Some(src)) = (normals.as_mut(), self.normals.as_ref()) {
                out.push(src[i]);
            }
        }
        let faces = kept.iter().map(|f| f.map(|i| remap[i as usize])).collect();
        TriMesh {
            vertices,
            faces,
            normals,
        }
    }

    /// Outward unit normal of each face by winding order.
    pub fn face_normal(&self, f: usize) -> [f64; 3] {
        let [a, b, c] = self.triangle(f);
        let n = cross(sub(b, a), sub(c, a));
        let l = norm(n);
        if l > 0.0 {
            n.map(|v| v / l)
        } else {
            [0.0; 3]
        }
    }

    /// Triangulated axis-aligned box, wound so normals point out of the box
    /// (or into it when `inward`), each face split into `div × div` quads.
    pub fn cuboid(region: &Aabb, div: usize, inward: bool) -> TriMesh {
        let mut mesh = TriMesh::default();
        for axis in 0..3 {
            for side in [false, true] {
                mesh.append(&box_face(region, axis, side, div, inward));
            }
        }
        mesh
    }
}

/// One face of a box, optionally subdivided.
pub(crate) fn box_face(region: &Aabb, axis: usize, max_side: bool, div: usize, inward: bool) -> TriMesh {
    let div = div.max(1);
    let u = (axis + 1) % 3;
    let v = (axis + 2) % 3;
    let w = if max_side { region.max[axis] } else { region.min[axis] };
    let mut vertices = Vec::with_capacity((div + 1) * (div + 1));
    for j in 0..=div {
        for i in 0..=div {
            let mut p = [0.0; 3];
            p[axis] = w;
            p[u] = region.min[u] + (region.max[u] - region.min[u]) * i as f64 / div as f64;
            p[v] = region.min[v] + (region.max[v] - region.min[v]) * j as f64 / div as f64;
            vertices.push(p);
        }
    }
    // (u, v, axis) is right handed, so counter-clockwise in (u, v) faces +axis.
    let outward_positive = max_side != inward;
    let idx = |i: usize, j: usize| (j * (div + 1) + i) as u32;
    let mut faces = Vec::with_capacity(2 * div * div);
    for j in 0..div {
        for i in 0..div {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            if outward_positive {
                faces.push([a, b, c]);
                faces.push([a, c, d]);
            } else {
                faces.push([a, c, b]);
                faces.push([a, d, c]);
            }
        }
    }
    TriMesh {
        vertices,
        faces,
        normals: None,
    }
}

/// Removes faces lying entirely outside `region`.
pub fn crop_mesh(mesh: &TriMesh, region: &Aabb) -> TriMesh {
    mesh.retain_faces(|f| mesh.faces[f].iter().any(|i| region.contains(mesh.vertices[*i as usize])))
}

/// Removes faces lying entirely inside `region`.
pub fn exclude_region(mesh: &TriMesh, region: &Aabb) -> TriMesh {
    mesh.retain_faces(|f| !mesh.faces[f].iter().all(|i| region.contains(mesh.vertices[*i as usize])))
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cuboid_area_and_orientation() {
        let b = Aabb::centered([0.0; 3], [1.0, 2.0, 3.0]);
        let m = TriMesh::cuboid(&b, 3, false);
        assert!((m.area() - 2.0 * (2.0 * 4.0 + 2.0 * 6.0 + 4.0 * 6.0)).abs() < 1e-9);
        for f in 0..m.faces.len() {
            let [a, b2, c] = m.triangle(f);
            let centroid: [f64; 3] = std::array::from_fn(|k| (a[k] + b2[k] + c[k]) / 3.0);
            assert!(dot(m.face_normal(f), centroid) > 0.0);
        }
        let inward = TriMesh::cuboid(&b, 1, true);
        for f in 0..inward.faces.len() {
            let [a, ..] = inward.triangle(f);
            assert!(dot(inward.face_normal(f), a) < 0.0);
        }
    }

    #[test]
    fn crop_everything_is_identity_and_empty_region_empties() {
        let m = TriMesh::cuboid(&Aabb::centered([0.0; 3], [0.5; 3]), 2, false);
        assert_eq!(crop_mesh(&m, &Aabb::centered([0.0; 3], [1.0; 3])), m);
        assert!(crop_mesh(&m, &Aabb::empty()).is_empty());
    }

    #[test]
    fn invalid_index_rejected() {
        assert!(TriMesh::new(vec![[0.0; 3]; 2], vec![[0, 1, 2]]).is_err());
    }
}
