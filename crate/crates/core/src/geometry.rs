//! The single-dislocation model body in polar coordinates: its frame field,
//! induced metric, chart map, distance estimates and the cut-and-weld
//! developing map.
//!
//! The frame decomposes as Q = dZ + (v/2pi) dphi, so line integrals of Q
//! along arbitrary coordinate paths have exact primitives; circulation and
//! closedness checks below are quadrature-free.

use nalgebra::{Matrix2, Vector2};
use std::f64::consts::TAU;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("point with r={r} lies outside the manifold (r_inner={r_inner})")]
    OutsideManifold { r: f64, r_inner: f64 },
    #[error("outer radius {r_outer} must exceed inner radius {r_inner}")]
    BadRadii { r_outer: f64, r_inner: f64 },
    #[error("regularity violation: {condition} with constant {constant}")]
    RegularityViolation { condition: &'static str, constant: f64 },
}

/// Burgers vector of a dislocation, in length units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BurgersVector(pub Vector2<f64>);

impl BurgersVector {
    pub fn new(x: f64, y: f64) -> Self {
        Self(Vector2::new(x, y))
    }
    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

/// The model manifold M^R_v = { (r, phi) : |v| <= r < R } with the closed
/// frame field of a single edge dislocation.
#[derive(Debug, Clone, Copy)]
pub struct ModelManifold {
    pub burgers: BurgersVector,
    pub r_outer: f64,
}

impl ModelManifold {
    pub fn new(burgers: BurgersVector, r_outer: f64) -> Result<Self, GeometryError> {
        if r_outer <= burgers.norm() {
            return Err(GeometryError::BadRadii { r_outer, r_inner: burgers.norm() });
        }
        Ok(Self { burgers, r_outer })
    }

    /// Inner radius: the core cannot be smaller than the Burgers vector.
    pub fn r_inner(&self) -> f64 {
        self.burgers.norm()
    }

    fn check_point(&self, r: f64) -> Result<(), GeometryError> {
        if r < self.r_inner() - 1e-12 * (1.0 + self.r_inner()) {
            return Err(GeometryError::OutsideManifold { r, r_inner: self.r_inner() });
        }
        Ok(())
    }

    /// Coordinate matrix of the frame Q in the (dr, dphi) basis: columns are
    /// the plane images of (del_r, del_phi).
    pub fn frame_at(&self, r: f64, phi: f64) -> Result<FramePointValue, GeometryError> {
        self.check_point(r)?;
        Ok(FramePointValue { q: self.frame_raw(r, phi) })
    }

    pub(crate) fn frame_raw(&self, r: f64, phi: f64) -> Matrix2<f64> {
        let v = self.burgers.0;
        let (s, c) = phi.sin_cos();
        Matrix2::new(c, -r * s + v[0] / TAU, s, r * c + v[1] / TAU)
    }

    /// Induced metric g = Q^T Q, exact to rounding.
    pub fn metric_at(&self, r: f64, phi: f64) -> Result<Matrix2<f64>, GeometryError> {
        self.check_point(r)?;
        let q = self.frame_raw(r, phi);
        Ok(q.transpose() * q)
    }

    /// Identity chart Z(r, phi) = (r cos phi, r sin phi).
    pub fn chart_map(&self, r: f64, phi: f64) -> Result<Vector2<f64>, GeometryError> {
        self.check_point(r)?;
        Ok(Vector2::new(r * phi.cos(), r * phi.sin()))
    }

    /// Differential of the chart in the (dr, dphi) basis.
    pub fn chart_differential(&self, r: f64, phi: f64) -> Matrix2<f64> {
        let (s, c) = phi.sin_cos();
        Matrix2::new(c, -r * s, s, r * c)
    }

    /// Operator norm |dZ - Q| measured from the manifold metric to the
    /// Euclidean plane: largest singular value of (dZ - Q) G^{-1/2}.
    pub fn chart_frame_deviation(&self, r: f64, phi: f64) -> Result<f64, GeometryError> {
        let q = self.frame_at(r, phi)?.q;
        let dz = self.chart_differential(r, phi);
        let g = q.transpose() * q;
        Ok(op_norm_metric(&(dz - q), &g))
    }

    /// Brackets on the intrinsic distance-to-dislocation quantity:
    /// ((1 - 1/2pi) r + |v|/2pi, r).
    pub fn core_distance_bounds(&self, r: f64) -> (f64, f64) {
        let b = self.burgers.norm();
        ((1.0 - 1.0 / TAU) * r + b / TAU, r)
    }

    /// Exact line integral of Q along the straight coordinate segment from
    /// (r0, phi0) to (r1, phi1), using Q = dZ + (v/2pi) dphi.
    pub fn line_integral(&self, from: (f64, f64), to: (f64, f64)) -> Vector2<f64> {
        let z0 = Vector2::new(from.0 * from.1.cos(), from.0 * from.1.sin());
        let z1 = Vector2::new(to.0 * to.1.cos(), to.0 * to.1.sin());
        z1 - z0 + (to.1 - from.1) / TAU * self.burgers.0
    }

    /// Circulation of Q around a closed polygonal loop in (r, phi)
    /// coordinates (phi unwrapped, so windings add 2pi per turn).
    pub fn loop_integral(&self, loop_pts: &[(f64, f64)]) -> Vector2<f64> {
        let mut total = Vector2::zeros();
        for w in loop_pts.windows(2) {
            total += self.line_integral(w[0], w[1]);
        }
        if let (Some(first), Some(last)) = (loop_pts.first(), loop_pts.last()) {
            total += self.line_integral(*last, *first);
        }
        total
    }

    /// Developing map f(r, phi) = integral of Q along a radial-then-angular
    /// path from the base point on the cut ray, approached counter-clockwise.
    /// Multivaluedness across the cut is exactly the Burgers vector.
    pub fn develop(
        &self,
        cut_angle: f64,
        n_r: usize,
        n_phi: usize,
    ) -> Result<DevelopedImmersion, GeometryError> {
        if n_r < 2 || n_phi < 2 {
            return Err(GeometryError::BadRadii { r_outer: self.r_outer, r_inner: self.r_inner() });
        }
        let r0 = self.r_inner().max(1e-12 * self.r_outer);
        let mut rows = Vec::with_capacity(n_r * n_phi);
        for i in 0..n_r {
            let r = r0 + (self.r_outer - r0) * i as f64 / (n_r - 1) as f64;
            for j in 0..n_phi {
                // angles strictly inside (cut, cut + 2pi)
                let phi = cut_angle + TAU * (j as f64 + 0.5) / n_phi as f64;
                rows.push(DevelopedPoint { r, phi, pos: self.develop_point(cut_angle, r, phi) });
            }
        }
        let jump = self.develop_jump(cut_angle);
        Ok(DevelopedImmersion { rows, jump })
    }

    /// Value of the developing map at (r, phi) with phi in (cut, cut + 2pi).
    pub fn develop_point(&self, cut_angle: f64, r: f64, phi: f64) -> Vector2<f64> {
        let r0 = self.r_inner().max(1e-12 * self.r_outer);
        let base = Vector2::new(r0 * cut_angle.cos(), r0 * cut_angle.sin());
        // radial leg (r0, cut) -> (r, cut), then arc (r, cut) -> (r, phi)
        base + self.line_integral((r0, cut_angle), (r, cut_angle))
            + self.line_integral((r, cut_angle), (r, phi))
    }

    /// Jump of the developing map across the cut: f(phi -> cut + 2pi) minus
    /// f(phi -> cut), independent of radius and cut angle.
    pub fn develop_jump(&self, cut_angle: f64) -> Vector2<f64> {
        let r = self.r_outer;
        self.develop_point(cut_angle, r, cut_angle + TAU) - self.develop_point(cut_angle, r, cut_angle)
    }

    /// Numerical checks of the regular-inner-boundary conditions on the
    /// annulus |v| <= r <= 3|v|.
    pub fn check_regular_boundary(&self) -> Result<RegularBoundaryReport, GeometryError> {
        let b = self.burgers.norm();
        if b == 0.0 {
            return Ok(RegularBoundaryReport {
                distance_inclusion_radius: 2.0,
                isometric_inclusion: true,
                metric_equivalence: 1.0,
            });
        }
        if self.r_outer < 4.0 * b {
            return Err(GeometryError::BadRadii { r_outer: self.r_outer, r_inner: 4.0 * b });
        }
        // (1) points at intrinsic distance <= 2|v| from the dislocation have
        // r <= r_star; inclusion in the annulus needs r_star <= 3|v|.
        let r_star = (2.0 * b - b / TAU) / (1.0 - 1.0 / TAU);
        if r_star > 3.0 * b {
            return Err(GeometryError::RegularityViolation {
                condition: "distance inclusion",
                constant: r_star / b,
            });
        }
        // (2) the annulus embeds isometrically into M^{4|v|} as a submanifold.
        let isometric_inclusion = self.r_outer >= 4.0 * b;
        // (3) metric equivalence against the Euclidean annulus.
        let mut equiv: f64 = 1.0;
        let n = 64;
        for i in 0..=n {
            let r = b + 2.0 * b * i as f64 / n as f64;
            for j in 0..n {
                let phi = TAU * j as f64 / n as f64;
                let g = self.metric_at(r, phi)?;
                let e = Matrix2::new(1.0, 0.0, 0.0, r * r);
                equiv = equiv.max(metric_equivalence_constant(&g, &e));
            }
        }
        if equiv > 10.0 {
            return Err(GeometryError::RegularityViolation {
                condition: "metric equivalence",
                constant: equiv,
            });
        }
        Ok(RegularBoundaryReport {
            distance_inclusion_radius: r_star / b,
            isometric_inclusion,
            metric_equivalence: equiv,
        })
    }
}

/// Frame value at a point: maps polar tangent components to plane components.
#[derive(Debug, Clone, Copy)]
pub struct FramePointValue {
    pub q: Matrix2<f64>,
}

impl FramePointValue {
    pub fn det(&self) -> f64 {
        self.q.determinant()
    }
    pub fn induced_metric(&self) -> Matrix2<f64> {
        self.q.transpose() * self.q
    }
}

#[derive(Debug, Clone)]
pub struct DevelopedPoint {
    pub r: f64,
    pub phi: f64,
    pub pos: Vector2<f64>,
}

#[derive(Debug, Clone)]
pub struct DevelopedImmersion {
    pub rows: Vec<DevelopedPoint>,
    pub jump: Vector2<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct RegularBoundaryReport {
    /// r/|v| radius containing all points at intrinsic distance <= 2|v|.
    pub distance_inclusion_radius: f64,
    pub isometric_inclusion: bool,
    pub metric_equivalence: f64,
}

/// Largest singular value of A measured from the g-metric to the Euclidean
/// one: sigma_max(A G^{-1/2}).
pub fn op_norm_metric(a: &Matrix2<f64>, g: &Matrix2<f64>) -> f64 {
    let gi = spd_inv_sqrt(g);
    sigma_max(&(a * gi))
}

/// Largest singular value of a 2x2 matrix.
pub fn sigma_max(a: &Matrix2<f64>) -> f64 {
    let t = a.norm_squared();
    let d = a.determinant();
    let disc = (t * t - 4.0 * d * d).max(0.0).sqrt();
    (0.5 * (t + disc)).sqrt()
}

/// Smallest singular value of a 2x2 matrix.
pub fn sigma_min(a: &Matrix2<f64>) -> f64 {
    let t = a.norm_squared();
    let d = a.determinant();
    let disc = (t * t - 4.0 * d * d).max(0.0).sqrt();
    (0.5 * (t - disc)).max(0.0).sqrt()
}

/// Inverse square root of a symmetric positive-definite 2x2 matrix.
pub fn spd_inv_sqrt(g: &Matrix2<f64>) -> Matrix2<f64> {
    // eigen-decomposition of a symmetric 2x2
    let (a, b, c) = (g[(0, 0)], g[(0, 1)], g[(1, 1)]);
    let tr = a + c;
    let disc = ((a - c) * (a - c) + 4.0 * b * b).max(0.0).sqrt();
    let (l1, l2) = (0.5 * (tr + disc), 0.5 * (tr - disc));
    if b.abs() < 1e-300 * tr.abs().max(1.0) {
        return Matrix2::new(1.0 / a.sqrt(), 0.0, 0.0, 1.0 / c.sqrt());
    }
    let v1 = Vector2::new(l1 - c, b).normalize();
    let v2 = Vector2::new(-v1[1], v1[0]);
    let (s1, s2) = (1.0 / l1.sqrt(), 1.0 / l2.sqrt());
    s1 * v1 * v1.transpose() + s2 * v2 * v2.transpose()
}

/// Ratio constant L such that (1/L^2) e <= g <= L^2 e as quadratic forms;
/// returns L (length-distortion constant).
pub fn metric_equivalence_constant(g: &Matrix2<f64>, e: &Matrix2<f64>) -> f64 {
    let es = spd_inv_sqrt(e);
    let m = es * g * es; // symmetric, eigenvalues are the form ratios
    let (a, b, c) = (m[(0, 0)], m[(0, 1)], m[(1, 1)]);
    let tr = a + c;
    let disc = ((a - c) * (a - c) + 4.0 * b * b).max(0.0).sqrt();
    let (l1, l2) = (0.5 * (tr + disc), 0.5 * (tr - disc));
    (l1.sqrt()).max(1.0 / l2.sqrt().max(1e-300))
}

/// Graph-distance oracle: shortest path on an 8-neighbor polar grid with
/// edge lengths measured in the manifold metric, plus the inner radius.
/// Used to bracket-check `core_distance_bounds`.
pub fn graph_distance_to_core(m: &ModelManifold, r: f64, phi: f64, n_r: usize, n_phi: usize) -> f64 {
    let r0 = m.r_inner();
    let radii: Vec<f64> =
        (0..n_r).map(|i| r0 + (r - r0) * i as f64 / (n_r - 1) as f64).collect();
    let idx = |i: usize, j: usize| i * n_phi + j;
    let pos = |i: usize, j: usize| -> (f64, f64) {
        (radii[i], phi + TAU * j as f64 / n_phi as f64)
    };
    let edge_len = |a: (f64, f64), b: (f64, f64)| -> f64 {
        // metric length of the straight coordinate segment, midpoint rule
        let mid = (0.5 * (a.0 + b.0), 0.5 * (a.1 + b.1));
        let g = m.metric_at(mid.0, mid.1).unwrap();
        let d = Vector2::new(b.0 - a.0, b.1 - a.1);
        (d.dot(&(g * d))).sqrt()
    };
    let n = n_r * n_phi;
    let mut dist = vec![f64::INFINITY; n];
    let mut heap = std::collections::BinaryHeap::new();
    // sources: the full inner circle
    for j in 0..n_phi {
        dist[idx(0, j)] = 0.0;
        heap.push(std::cmp::Reverse((ordered_float(0.0), idx(0, j))));
    }
    while let Some(std::cmp::Reverse((d, u))) = heap.pop() {
        let d = f64::from_bits(d);
        if d > dist[u] {
            continue;
        }
        let (i, j) = (u / n_phi, u % n_phi);
        for di in -1i64..=1 {
            for dj in -1i64..=1 {
                if di == 0 && dj == 0 {
                    continue;
                }
                let ni = i as i64 + di;
                if ni < 0 || ni >= n_r as i64 {
                    continue;
                }
                let nj = (j as i64 + dj).rem_euclid(n_phi as i64) as usize;
                let vtx = idx(ni as usize, nj);
                // use unwrapped neighbor angle for the segment geometry
                let a = pos(i, j);
                let b = (radii[ni as usize], a.1 + TAU * dj as f64 / n_phi as f64);
                let nd = d + edge_len(a, b);
                if nd < dist[vtx] {
                    dist[vtx] = nd;
                    heap.push(std::cmp::Reverse((ordered_float(nd), vtx)));
                }
            }
        }
    }
    dist[idx(n_r - 1, 0)] + m.burgers.norm()
}

fn ordered_float(x: f64) -> u64 {
    // non-negative floats compare correctly as bit patterns
    x.to_bits()
}
