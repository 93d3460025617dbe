//! Planar triangle meshes: structured annulus meshes (log-graded in radius,
//! periodic in angle) and grid meshes of polygonal domains. All meshes live
//! in Cartesian chart coordinates; metric factors enter through the implant.

use nalgebra::{Matrix2, Vector2};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("invalid mesh parameters: {0}")]
    BadParameters(String),
}

#[derive(Debug, Clone)]
pub struct TriMesh {
    pub vertices: Vec<Vector2<f64>>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_vertices(&self, t: usize) -> [Vector2<f64>; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Signed area of triangle t (positive for counter-clockwise).
    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_vertices(t);
        0.5 * ((b - a).perp(&(c - a)))
    }

    pub fn area(&self, t: usize) -> f64 {
        self.signed_area(t).abs()
    }

    pub fn centroid(&self, t: usize) -> Vector2<f64> {
        let [a, b, c] = self.triangle_vertices(t);
        (a + b + c) / 3.0
    }

    /// Gradients of the three barycentric basis functions on triangle t.
    pub fn basis_gradients(&self, t: usize) -> [Vector2<f64>; 3] {
        let [a, b, c] = self.triangle_vertices(t);
        let twice_area = (b - a).perp(&(c - a));
        let rot = |v: Vector2<f64>| Vector2::new(-v[1], v[0]);
        [
            rot(c - b) / twice_area,
            rot(a - c) / twice_area,
            rot(b - a) / twice_area,
        ]
    }

    /// Constant gradient of a P1 scalar field on triangle t.
    pub fn p1_gradient(&self, t: usize, values: &[f64]) -> Vector2<f64> {
        let g = self.basis_gradients(t);
        let [a, b, c] = self.triangles[t];
        values[a] * g[0] + values[b] * g[1] + values[c] * g[2]
    }

    /// Constant differential of a P1 map to the plane on triangle t:
    /// rows are the gradients of the two components.
    pub fn p1_differential(&self, t: usize, map: &[Vector2<f64>]) -> Matrix2<f64> {
        let g = self.basis_gradients(t);
        let [a, b, c] = self.triangles[t];
        let mut d = Matrix2::zeros();
        for (vi, gi) in [(a, g[0]), (b, g[1]), (c, g[2])] {
            d[(0, 0)] += map[vi][0] * gi[0];
            d[(0, 1)] += map[vi][0] * gi[1];
            d[(1, 0)] += map[vi][1] * gi[0];
            d[(1, 1)] += map[vi][1] * gi[1];
        }
        d
    }

    /// Oriented boundary edges (appearing in exactly one triangle), as seen
    /// from their triangle.
    pub fn boundary_edges(&self) -> Vec<(usize, usize)> {
        let mut count: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let (u, v) = (tri[k], tri[(k + 1) % 3]);
                let key = (u.min(v), u.max(v));
                let e = count.entry(key).or_insert((0, 0));
                e.0 += 1;
                if e.0 == 1 {
                    *e = (1, if u < v { 0 } else { 1 });
                }
            }
        }
        let mut edges: Vec<(usize, usize)> = Vec::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let (u, v) = (tri[k], tri[(k + 1) % 3]);
                let key = (u.min(v), u.max(v));
                if count[&key].0 == 1 {
                    edges.push((u, v));
                }
            }
        }
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// Indices of vertices on the boundary.
    pub fn boundary_vertices(&self) -> Vec<usize> {
        let mut vs: Vec<usize> = self
            .boundary_edges()
            .into_iter()
            .flat_map(|(a, b)| [a, b])
            .collect();
        vs.sort_unstable();
        vs.dedup();
        vs
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.area(t)).sum()
    }
}

/// Log-graded structured annulus mesh, periodic in angle. `n_r` rings of
/// elements, `n_phi` angular divisions; vertices in Cartesian coordinates,
/// centered at `center`.
pub fn annulus_mesh(
    center: Vector2<f64>,
    r_in: f64,
    r_out: f64,
    n_r: usize,
    n_phi: usize,
) -> Result<TriMesh, MeshError> {
    if !(r_in > 0.0 && r_out > r_in) || n_r < 1 || n_phi < 3 {
        return Err(MeshError::BadParameters(format!(
            "annulus r_in={r_in} r_out={r_out} n_r={n_r} n_phi={n_phi}"
        )));
    }
    let mut vertices = Vec::with_capacity((n_r + 1) * n_phi);
    for i in 0..=n_r {
        let r = r_in * (r_out / r_in).powf(i as f64 / n_r as f64);
        for j in 0..n_phi {
            let phi = std::f64::consts::TAU * j as f64 / n_phi as f64;
            vertices.push(center + Vector2::new(r * phi.cos(), r * phi.sin()));
        }
    }
    let idx = |i: usize, j: usize| i * n_phi + (j % n_phi);
    let mut triangles = Vec::with_capacity(2 * n_r * n_phi);
    for i in 0..n_r {
        for j in 0..n_phi {
            // split quads along alternating diagonals for isotropy
            // counter-clockwise quad: inner(j), outer(j), outer(j+1), inner(j+1)
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            if (i + j) % 2 == 0 {
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            } else {
                triangles.push([a, b, d]);
                triangles.push([b, c, d]);
            }
        }
    }
    Ok(TriMesh { vertices, triangles })
}

/// Uniformly graded (linear in radius) annulus mesh, same topology.
pub fn annulus_mesh_linear(
    center: Vector2<f64>,
    r_in: f64,
    r_out: f64,
    n_r: usize,
    n_phi: usize,
) -> Result<TriMesh, MeshError> {
    let mut m = annulus_mesh(center, r_in, r_out, n_r, n_phi)?;
    for i in 0..=n_r {
        let r = r_in + (r_out - r_in) * i as f64 / n_r as f64;
        for j in 0..n_phi {
            let phi = std::f64::consts::TAU * j as f64 / n_phi as f64;
            m.vertices[i * n_phi + j] = center + Vector2::new(r * phi.cos(), r * phi.sin());
        }
    }
    Ok(m)
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(p: Vector2<f64>, poly: &[Vector2<f64>]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Structured grid mesh of a polygonal domain: the bounding box is gridded
/// with target spacing `h`; cells whose centroid lies in the polygon are
/// kept and split into two triangles. Axis-aligned rectangles with
/// commensurate `h` are meshed exactly; other polygons get a staircase
/// boundary with O(h) geometric error.
pub fn polygon_grid_mesh(poly: &[Vector2<f64>], h: f64) -> Result<TriMesh, MeshError> {
    if poly.len() < 3 || h <= 0.0 {
        return Err(MeshError::BadParameters(format!(
            "polygon with {} vertices, h={h}",
            poly.len()
        )));
    }
    let (mut lo, mut hi) = (poly[0], poly[0]);
    for p in poly {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let nx = (((hi[0] - lo[0]) / h).round() as usize).max(1);
    let ny = (((hi[1] - lo[1]) / h).round() as usize).max(1);
    if nx * ny > 4_000_000 {
        return Err(MeshError::BadParameters(format!("grid too large: {nx}x{ny}")));
    }
    let (dx, dy) = ((hi[0] - lo[0]) / nx as f64, (hi[1] - lo[1]) / ny as f64);
    let full_idx = |i: usize, j: usize| j * (nx + 1) + i;
    let mut used = vec![usize::MAX; (nx + 1) * (ny + 1)];
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let take = |used: &mut Vec<usize>, vertices: &mut Vec<Vector2<f64>>, i: usize, j: usize| {
        let k = full_idx(i, j);
        if used[k] == usize::MAX {
            used[k] = vertices.len();
            vertices.push(lo + Vector2::new(i as f64 * dx, j as f64 * dy));
        }
        used[k]
    };
    for j in 0..ny {
        for i in 0..nx {
            let center = lo + Vector2::new((i as f64 + 0.5) * dx, (j as f64 + 0.5) * dy);
            if !point_in_polygon(center, poly) {
                continue;
            }
            let a = take(&mut used, &mut vertices, i, j);
            let b = take(&mut used, &mut vertices, i + 1, j);
            let c = take(&mut used, &mut vertices, i + 1, j + 1);
            let d = take(&mut used, &mut vertices, i, j + 1);
            if (i + j) % 2 == 0 {
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            } else {
                triangles.push([a, b, d]);
                triangles.push([b, c, d]);
            }
        }
    }
    if triangles.is_empty() {
        return Err(MeshError::BadParameters("no cells inside polygon".into()));
    }
    Ok(TriMesh { vertices, triangles })
}

/// Axis-aligned rectangle helper.
pub fn rectangle(lo: Vector2<f64>, hi: Vector2<f64>) -> Vec<Vector2<f64>> {
    vec![
        lo,
        Vector2::new(hi[0], lo[1]),
        hi,
        Vector2::new(lo[0], hi[1]),
    ]
}

/// Regular n-gon approximating a disc.
pub fn disc_polygon(center: Vector2<f64>, radius: f64, n: usize) -> Vec<Vector2<f64>> {
    (0..n)
        .map(|k| {
            let phi = std::f64::consts::TAU * k as f64 / n as f64;
            center + radius * Vector2::new(phi.cos(), phi.sin())
        })
        .collect()
}
