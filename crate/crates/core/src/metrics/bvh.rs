//! Bounding volume hierarchy for exact point-to-triangle-mesh distances.

use crate::mesh::TriMesh;

type P = [f64; 3];

#[inline]
fn sub(a: P, b: P) -> P {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn dot(a: P, b: P) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn axpy(a: P, s: f64, d: P) -> P {
    [a[0] + s * d[0], a[1] + s * d[1], a[2] + s * d[2]]
}

/// Closest point to `p` on triangle `abc` (Voronoi-region walk).
pub fn closest_point_on_triangle(p: P, a: P, b: P, c: P) -> P {
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(ab, ap);
    let d2 = dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = sub(p, b);
    let d3 = dot(ab, bp);
    let d4 = dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return axpy(a, d1 / (d1 - d3), ab);
    }
    let cp = sub(p, c);
    let d5 = dot(ab, cp);
    let d6 = dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return axpy(a, d2 / (d2 - d6), ac);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return axpy(b, (d4 - d3) / ((d4 - d3) + (d5 - d6)), sub(c, b));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    axpy(axpy(a, v, ab), w, ac)
}

#[derive(Clone, Copy, Debug)]
struct Node {
    min: P,
    max: P,
    /// Leaf: first triangle slot; inner: index of the left child.
    start: u32,
    /// Leaf: triangle count; inner: 0.
    count: u32,
    right: u32,
}

const LEAF_SIZE: usize = 4;

/// Static tree over the faces of a mesh.
#[derive(Clone, Debug)]
pub struct TriangleBvh {
    tris: Vec<[P; 3]>,
    nodes: Vec<Node>,
}

fn box_distance_sq(p: P, min: P, max: P) -> f64 {
    let mut d = 0.0;
    for k in 0..3 {
        let e = (min[k] - p[k]).max(0.0).max(p[k] - max[k]);
        d += e * e;
    }
    d
}

impl TriangleBvh {
    pub fn new(mesh: &TriMesh) -> Self {
        let mut tris: Vec<[P; 3]> = (0..mesh.faces.len()).map(|f| mesh.triangle(f)).collect();
        let mut nodes = Vec::with_capacity(2 * tris.len() / LEAF_SIZE + 1);
        if !tris.is_empty() {
            let n = tris.len();
            build(&mut tris, 0, n, &mut nodes);
        }
        TriangleBvh { tris, nodes }
    }

    pub fn is_empty(&self) -> bool {
        self.tris.is_empty()
    }

    /// Distance from `p` to the closest triangle; `+∞` for an empty tree.
    pub fn distance(&self, p: P) -> f64 {
        self.closest(p).map_or(f64::INFINITY, |(_, d)| d)
    }

    /// Closest surface point and its distance.
    pub fn closest(&self, p: P) -> Option<(P, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = f64::INFINITY;
        let mut best_point = p;
        let mut stack = vec![0u32];
        while let Some(i) = stack.pop() {
            let node = self.nodes[i as usize];
            if box_distance_sq(p, node.min, node.max) >= best {
                continue;
            }
            if node.count > 0 {
                let s = node.start as usize;
                for t in &self.tris[s..s + node.count as usize] {
                    let q = closest_point_on_triangle(p, t[0], t[1], t[2]);
                    let d = sub(p, q);
                    let d2 = dot(d, d);
                    if d2 < best {
                        best = d2;
                        best_point = q;
                    }
                }
            } else {
                let (l, r) = (node.start, node.right);
                let dl = {
                    let n = self.nodes[l as usize];
                    box_distance_sq(p, n.min, n.max)
                };
                let dr = {
                    let n = self.nodes[r as usize];
                    box_distance_sq(p, n.min, n.max)
                };
                // Visit the nearer child first.
                if dl < dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        Some((best_point, best.sqrt()))
    }
}

fn bounds(tris: &[[P; 3]]) -> (P, P) {
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for t in tris {
        for v in t {
            for k in 0..3 {
                min[k] = min[k].min(v[k]);
                max[k] = max[k].max(v[k]);
            }
        }
    }
    (min, max)
}

fn build(tris: &mut [[P; 3]], start: usize, end: usize, nodes: &mut Vec<Node>) -> u32 {
    let (min, max) = bounds(&tris[start..end]);
    let index = nodes.len() as u32;
    nodes.push(Node {
        min,
        max,
        start: start as u32,
        count: (end - start) as u32,
        right: 0,
    });
    if end - start <= LEAF_SIZE {
        return index;
    }
    let centroid = |t: &[P; 3], k: usize| t[0][k] + t[1][k] + t[2][k];
    let extent: Vec<f64> = (0..3).map(|k| max[k] - min[k]).collect();
    let axis = (0..3).max_by(|&a, &b| extent[a].total_cmp(&extent[b])).unwrap_or(0);
    let mid = (start + end) / 2;
    tris[start..end].select_nth_unstable_by(mid - start, |a, b| centroid(a, axis).total_cmp(&centroid(b, axis)));
    let left = build(tris, start, mid, nodes);
    let right = build(tris, mid, end, nodes);
    let node = &mut nodes[index as usize];
    node.start = left;
    node.count = 0;
    node.right = right;
    index
}
