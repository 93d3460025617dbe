//! Discrete configurations on implanted bodies: evaluation and minimization
//! of the nonlinear elastic energy, optimal rotations, and FJM-type
//! rigidity probes.

use std::collections::BTreeMap;

use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::assembly::AssembledBody;
use crate::density::{nearest_rotation, rotation_trace, EnergyDensity};
use crate::geometry::ModelManifold;
use crate::mesh::{self, TriMesh};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("implant degenerate on element {element}: det Q = {det}")]
    CorruptBody { element: usize, det: f64 },
    #[error("minimizer diverged after {iterations} iterations (energy {energy})")]
    Divergence { iterations: usize, energy: f64 },
    #[error("mesh construction failed: {0}")]
    Mesh(#[from] mesh::MeshError),
}

/// Element chunk size for the deterministic parallel reduction. Partial sums
/// are accumulated chunk by chunk in index order, so the result is
/// bit-identical at any worker count.
const CHUNK: usize = 2048;

/// Per-element region labels for energy bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Region {
    Core(usize),
    NearCore(usize),
    Far,
}

impl Region {
    pub fn label(&self) -> String {
        match self {
            Region::Core(i) => format!("core/{i}"),
            Region::NearCore(i) => format!("near-core/{i}"),
            Region::Far => "far-field".to_string(),
        }
    }
}

/// A triangulated body together with its implanted frame: one 2x2 matrix per
/// element (constant frames, matching the piecewise-affine configurations),
/// expressed in the Cartesian coordinates of the mesh.
pub struct ImplantedBody {
    pub mesh: TriMesh,
    pub q_elems: Vec<Matrix2<f64>>,
    pub regions: Vec<Region>,
}

impl ImplantedBody {
    /// Discretize a single-dislocation model manifold on a log-graded
    /// periodic annulus. The frame is sampled at element centroids and
    /// converted from the (dr, dphi) basis to Cartesian.
    pub fn from_manifold(
        m: &ModelManifold,
        n_r: usize,
        n_phi: usize,
    ) -> Result<Self, SolveError> {
        let mesh = mesh::annulus_mesh(Vector2::zeros(), m.r_inner(), m.r_outer, n_r, n_phi)?;
        let r_in = m.r_inner();
        let near = (r_in * m.r_outer).sqrt().max(2.0 * r_in).min(m.r_outer);
        let mut q_elems = Vec::with_capacity(mesh.n_triangles());
        let mut regions = Vec::with_capacity(mesh.n_triangles());
        for t in 0..mesh.n_triangles() {
            let c = mesh.centroid(t);
            let (r, phi) = (c.norm(), c[1].atan2(c[0]));
            q_elems.push(cartesian_frame(m, r, phi));
            regions.push(if r <= 2.0 * r_in {
                Region::Core(0)
            } else if r <= near {
                Region::NearCore(0)
            } else {
                Region::Far
            });
        }
        Ok(ImplantedBody { mesh, q_elems, regions })
    }

    /// View an assembled many-dislocation body as an implanted body. Regions:
    /// the per-core ball (core radius), the smeared near-core disc (radius a),
    /// and the far field.
    pub fn from_assembled(body: &AssembledBody) -> Self {
        let a = body.measure.smear_radius;
        let mut regions = Vec::with_capacity(body.mesh.n_triangles());
        for t in 0..body.mesh.n_triangles() {
            let c = body.mesh.centroid(t);
            let mut label = Region::Far;
            for (i, (p, _)) in body.measure.atoms.iter().enumerate() {
                let d = (c - p).norm();
                if d <= body.core_radii[i] {
                    label = Region::Core(i);
                    break;
                } else if d <= a {
                    label = Region::NearCore(i);
                    break;
                }
            }
            regions.push(label);
        }
        ImplantedBody {
            mesh: body.mesh.clone(),
            q_elems: body.q_elems.clone(),
            regions,
        }
    }

    /// A flat body (Q = identity everywhere) on the given mesh.
    pub fn flat(mesh: TriMesh) -> Self {
        let n = mesh.n_triangles();
        ImplantedBody {
            mesh,
            q_elems: vec![Matrix2::identity(); n],
            regions: vec![Region::Far; n],
        }
    }

    /// Metric volume of element t.
    pub fn volume(&self, t: usize) -> f64 {
        self.q_elems[t].determinant() * self.mesh.area(t)
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.mesh.n_triangles()).map(|t| self.volume(t)).sum()
    }
}

/// Frame of the model manifold in Cartesian coordinates at (r, phi):
/// Q_cart = Q_polar * d(r, phi)/d(x, y).
pub fn cartesian_frame(m: &ModelManifold, r: f64, phi: f64) -> Matrix2<f64> {
    let q = m.frame_at(r, phi).map(|f| f.q).unwrap_or_else(|_| m.frame_at(m.r_inner(), phi).unwrap().q);
    let (s, c) = phi.sin_cos();
    let jac = Matrix2::new(c, s, -s / r, c / r);
    q * jac
}

/// A piecewise-affine configuration: vertex positions plus the per-element
/// differential they induce.
#[derive(Clone)]
pub struct Configuration {
    pub positions: Vec<Vector2<f64>>,
    pub df: Vec<Matrix2<f64>>,
}

impl Configuration {
    pub fn from_positions(mesh: &TriMesh, positions: Vec<Vector2<f64>>) -> Self {
        let df = (0..mesh.n_triangles())
            .map(|t| mesh.p1_differential(t, &positions))
            .collect();
        Configuration { positions, df }
    }

    /// The identity chart: each vertex maps to its mesh coordinates.
    pub fn identity(body: &ImplantedBody) -> Self {
        Self::from_positions(&body.mesh, body.mesh.vertices.clone())
    }

    /// Single-valued initialization near the Volterra map on a periodic
    /// annulus body: the developing map minus the linear-in-angle share of
    /// the jump, which cancels the multivaluedness exactly.
    pub fn volterra(body: &ImplantedBody, m: &ModelManifold) -> Self {
        let cut = -1e-9;
        let positions = body
            .mesh
            .vertices
            .iter()
            .map(|x| {
                let r = x.norm();
                let mut phi = x[1].atan2(x[0]);
                if phi < cut {
                    phi += std::f64::consts::TAU;
                }
                m.develop_point(cut, r, phi) - (phi - cut) / std::f64::consts::TAU * m.burgers.0
            })
            .collect();
        Self::from_positions(&body.mesh, positions)
    }

    fn refresh(&mut self, mesh: &TriMesh) {
        for t in 0..mesh.n_triangles() {
            self.df[t] = mesh.p1_differential(t, &self.positions);
        }
    }
}

/// Elastic energy split by region, with the rotation-distance distortion.
#[derive(Debug, Clone)]
pub struct EnergyBreakdown {
    pub total: f64,
    pub per_region: BTreeMap<String, f64>,
    pub distortion: f64,
}

/// dist^2(B, SO(2) Q) = |B|^2 + |Q|^2 - 2 max_{R in SO(2)} tr(B Q^T R^T).
fn dist_sq_to_rotated_frame(b: &Matrix2<f64>, q: &Matrix2<f64>) -> f64 {
    let m = b * q.transpose();
    (b.norm_squared() + q.norm_squared() - 2.0 * rotation_trace(&m)).max(0.0)
}

/// Nonlinear elastic energy of a configuration on an implanted body:
/// sum over elements of W(df Q^{-1}) det(Q) |element|.
pub fn energy(
    body: &ImplantedBody,
    f: &Configuration,
    density: &EnergyDensity,
) -> Result<EnergyBreakdown, SolveError> {
    let n = body.mesh.n_triangles();
    let partials: Vec<Result<(f64, f64, BTreeMap<String, f64>), SolveError>> = (0..n)
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut total = 0.0;
            let mut distortion = 0.0;
            let mut per_region: BTreeMap<String, f64> = BTreeMap::new();
            for &t in chunk {
                let q = &body.q_elems[t];
                let det = q.determinant();
                if det <= 0.0 {
                    return Err(SolveError::CorruptBody { element: t, det });
                }
                let vol = det * body.mesh.area(t);
                let a = f.df[t] * q.try_inverse().unwrap();
                let w = density
                    .eval(&a)
                    .map_err(|_| SolveError::CorruptBody { element: t, det })?;
                total += w * vol;
                distortion += dist_sq_to_rotated_frame(&f.df[t], q) * body.mesh.area(t);
                *per_region.entry(body.regions[t].label()).or_insert(0.0) += w * vol;
            }
            Ok((total, distortion, per_region))
        })
        .collect();
    let mut total = 0.0;
    let mut distortion = 0.0;
    let mut per_region: BTreeMap<String, f64> = BTreeMap::new();
    for p in partials {
        let (t, d, map) = p?;
        total += t;
        distortion += d;
        for (k, v) in map {
            *per_region.entry(k).or_insert(0.0) += v;
        }
    }
    Ok(EnergyBreakdown { total, per_region, distortion })
}

/// Gradient of the energy with respect to vertex positions, assembled by the
/// chain rule through the closed-form derivative of W.
pub fn energy_gradient(
    body: &ImplantedBody,
    f: &Configuration,
    density: &EnergyDensity,
) -> Vec<Vector2<f64>> {
    let n = body.mesh.n_triangles();
    let partials: Vec<Vec<(usize, Vector2<f64>)>> = (0..n)
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut local = Vec::with_capacity(3 * chunk.len());
            for &t in chunk {
                let q = &body.q_elems[t];
                let vol = q.determinant() * body.mesh.area(t);
                let q_inv = q.try_inverse().unwrap();
                let a = f.df[t] * q_inv;
                // dE/d(df) = vol * W'(A) Q^{-T}
                let dw = vol * density.gradient(&a) * q_inv.transpose();
                let grads = body.mesh.basis_gradients(t);
                let tri = body.mesh.triangles[t];
                for k in 0..3 {
                    local.push((tri[k], dw * grads[k]));
                }
            }
            local
        })
        .collect();
    let mut grad = vec![Vector2::zeros(); body.mesh.n_vertices()];
    for chunk in partials {
        for (vi, g) in chunk {
            grad[vi] += g;
        }
    }
    grad
}

#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    /// Gradient max-norm threshold, relative to the energy scale.
    pub tol_g: f64,
    /// Relative energy decrease over ten iterations below which we stop.
    pub tol_e: f64,
    pub max_iterations: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { tol_g: 1e-8, tol_e: 1e-12, max_iterations: 4000 }
    }
}

pub struct MinimizeOutcome {
    pub configuration: Configuration,
    pub breakdown: EnergyBreakdown,
    pub iterations: usize,
    pub energy_trace: Vec<f64>,
}

/// Gauge-fixed degrees of freedom: one vertex fully pinned and the second
/// coordinate of a far-away vertex constrained, removing the rigid motions.
fn gauge_mask(mesh: &TriMesh) -> Vec<usize> {
    let p0 = 0usize;
    let mut p1 = 1usize;
    let mut best = 0.0;
    for (i, v) in mesh.vertices.iter().enumerate() {
        let d = (v - mesh.vertices[p0]).norm();
        if d > best {
            best = d;
            p1 = i;
        }
    }
    vec![2 * p0, 2 * p0 + 1, 2 * p1 + 1]
}

/// Quasi-Newton (L-BFGS) descent of the elastic energy over vertex
/// positions, with Armijo backtracking and rigid-motion gauge fixing.
pub fn minimize(
    body: &ImplantedBody,
    density: &EnergyDensity,
    initial: Configuration,
    tol: Tolerances,
) -> Result<MinimizeOutcome, SolveError> {
    let nv = body.mesh.n_vertices();
    let mask = gauge_mask(&body.mesh);
    let masked = |g: &mut Vec<f64>| {
        for &i in &mask {
            g[i] = 0.0;
        }
    };
    let flatten = |pos: &[Vector2<f64>]| -> Vec<f64> {
        pos.iter().flat_map(|p| [p[0], p[1]]).collect()
    };

    let mut f = initial;
    let mut x = flatten(&f.positions);
    let mut e = energy(body, &f, density)?.total;
    let scale = e.abs().max(1e-30);
    let mut trace = vec![e];

    let grad_vec = |f: &Configuration| -> Vec<f64> {
        let g = energy_gradient(body, f, density);
        let mut v = flatten(&g);
        masked(&mut v);
        v
    };
    let mut g = grad_vec(&f);
    let g0max = g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));

    // Jacobi preconditioner: diagonal of the linearized elastic operator,
    // vol * |Q^{-T} grad phi_i|^2 per vertex, so the initial inverse Hessian
    // guess respects the strongly graded element sizes. The overall scale is
    // irrelevant; gamma below absorbs it.
    let mut weight = vec![0.0_f64; 2 * nv];
    for t in 0..body.mesh.n_triangles() {
        let vol = body.volume(t);
        let q_inv_t = body.q_elems[t].try_inverse().unwrap_or_else(Matrix2::identity).transpose();
        let grads = body.mesh.basis_gradients(t);
        for (k, &vi) in body.mesh.triangles[t].iter().enumerate() {
            let w = vol * (q_inv_t * grads[k]).norm_squared();
            weight[2 * vi] += w;
            weight[2 * vi + 1] += w;
        }
    }
    let wmin = weight.iter().cloned().fold(f64::INFINITY, f64::min).max(1e-300);
    for w in weight.iter_mut() {
        *w = w.max(wmin);
    }

    // L-BFGS history
    const M: usize = 8;
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(u, v)| u * v).sum() };

    let mut iterations = 0;
    let mut stalled = 0usize;
    while iterations < tol.max_iterations {
        let gmax = g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if gmax <= tol.tol_g * scale {
            break;
        }
        // two-loop recursion for the search direction
        let mut dir = g.iter().map(|v| -v).collect::<Vec<f64>>();
        let k = s_hist.len();
        let mut alphas = vec![0.0; k];
        for i in (0..k).rev() {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            alphas[i] = rho * dot(&s_hist[i], &dir);
            for (d, y) in dir.iter_mut().zip(&y_hist[i]) {
                *d -= alphas[i] * y;
            }
        }
        // initial inverse-Hessian guess: gamma * weight^{-1}
        let gamma = if k > 0 {
            let y = &y_hist[k - 1];
            let ym_y: f64 = y.iter().zip(&weight).map(|(v, w)| v * v / w).sum();
            dot(&s_hist[k - 1], y) / ym_y
        } else {
            1.0
        };
        for (d, w) in dir.iter_mut().zip(&weight) {
            *d *= gamma / w;
        }
        for i in 0..k {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            let beta = rho * dot(&y_hist[i], &dir);
            for (d, s) in dir.iter_mut().zip(&s_hist[i]) {
                *d += (alphas[i] - beta) * s;
            }
        }
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            // not a descent direction: restart with steepest descent
            s_hist.clear();
            y_hist.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&g, &dir);
            if !(slope < 0.0) {
                break;
            }
        }

        // Armijo backtracking with halving steps
        let mut step = 1.0;
        let mut accepted = false;
        let mut e_new = e;
        for _ in 0..40 {
            for (i, p) in f.positions.iter_mut().enumerate() {
                p[0] = x[2 * i] + step * dir[2 * i];
                p[1] = x[2 * i + 1] + step * dir[2 * i + 1];
            }
            f.refresh(&body.mesh);
            match energy(body, &f, density) {
                Ok(b) if b.total.is_finite() && b.total <= e + 1e-4 * step * slope => {
                    e_new = b.total;
                    accepted = true;
                    break;
                }
                _ => step *= 0.5,
            }
        }
        if !accepted {
            // restore the last accepted point
            for (i, p) in f.positions.iter_mut().enumerate() {
                p[0] = x[2 * i];
                p[1] = x[2 * i + 1];
            }
            f.refresh(&body.mesh);
            if !s_hist.is_empty() {
                // the quasi-Newton model went stale; retry from steepest descent
                s_hist.clear();
                y_hist.clear();
                iterations += 1;
                continue;
            }
            // even steepest descent cannot improve: either we are at the
            // numerical floor, or something genuinely diverged
            if gmax <= 1e-3 * g0max.max(1e-300) || e <= tol.tol_e * scale {
                break;
            }
            return Err(SolveError::Divergence { iterations, energy: e });
        }

        let x_new = flatten(&f.positions);
        let g_new = grad_vec(&f);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-14 * dot(&s, &s).max(1e-300) {
            s_hist.push(s);
            y_hist.push(y);
            if s_hist.len() > M {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        x = x_new;
        g = g_new;
        iterations += 1;
        // relative decrease stagnation over ten iterations
        if (e - e_new).abs() <= tol.tol_e * scale {
            stalled += 1;
        } else {
            stalled = 0;
        }
        e = e_new;
        trace.push(e);
        if stalled >= 10 {
            break;
        }
    }
    debug_assert_eq!(nv, f.positions.len());
    let breakdown = energy(body, &f, density)?;
    Ok(MinimizeOutcome { configuration: f, breakdown, iterations, energy_trace: trace })
}

/// Optimal-rotation diagnostics for a configuration.
#[derive(Debug, Clone)]
pub struct RigidityReport {
    pub rotation: Matrix2<f64>,
    /// ||df - U Q||^2 in L^2 at the optimal U.
    pub lhs: f64,
    /// Distortion integral: dist^2(df, SO(2) Q).
    pub rhs: f64,
    pub ratio: f64,
    pub slack: Option<f64>,
    pub degenerate: bool,
    /// Perturbing U by +-1e-3 radians does not decrease lhs.
    pub minimality_verified: bool,
}

fn lhs_at(body: &ImplantedBody, f: &Configuration, u: &Matrix2<f64>) -> f64 {
    (0..body.mesh.n_triangles())
        .map(|t| (f.df[t] - u * body.q_elems[t]).norm_squared() * body.mesh.area(t))
        .sum()
}

/// Closed-form Procrustes rotation: the polar factor of the volume-weighted
/// mean of df Q^{-1}, which minimizes ||df - U Q||_{L^2} over rotations U...
/// up to the frame weighting, and exactly minimizes the trace pairing used
/// in the rigidity estimates.
pub fn best_rotation(body: &ImplantedBody, f: &Configuration) -> RigidityReport {
    // minimize sum |df - U Q|^2 area  <=>  maximize tr(U^T sum df Q^T area)
    let mut m = Matrix2::zeros();
    let mut rhs = 0.0;
    for t in 0..body.mesh.n_triangles() {
        let area = body.mesh.area(t);
        m += f.df[t] * body.q_elems[t].transpose() * area;
        rhs += dist_sq_to_rotated_frame(&f.df[t], &body.q_elems[t]) * area;
    }
    let degenerate = rotation_trace(&m) <= 1e-14 * body.mesh.total_area();
    let u = if degenerate { Matrix2::identity() } else { nearest_rotation(&m) };
    let lhs = lhs_at(body, f, &u);
    let mut minimality_verified = true;
    for d in [-1e-3, 1e-3] {
        let (s, c) = (d as f64).sin_cos();
        let r = Matrix2::new(c, -s, s, c);
        if lhs_at(body, f, &(r * u)) < lhs - 1e-12 * lhs.abs() {
            minimality_verified = false;
        }
    }
    let ratio = if rhs <= 1e-12 * body.mesh.total_area() { 0.0 } else { lhs / rhs };
    RigidityReport { rotation: u, lhs, rhs, ratio, slack: None, degenerate, minimality_verified }
}

/// Energy of the Volterra frame itself: W(dZhat Q^{-1}) integrated over the
/// body, with dZhat the identity in Cartesian coordinates. This is the
/// classical log-divergent upper-bound candidate.
pub fn volterra_frame_energy(body: &ImplantedBody, density: &EnergyDensity) -> Result<f64, SolveError> {
    let mut total = 0.0;
    for t in 0..body.mesh.n_triangles() {
        let q = &body.q_elems[t];
        let det = q.determinant();
        if det <= 0.0 {
            return Err(SolveError::CorruptBody { element: t, det });
        }
        let a = q.try_inverse().unwrap();
        let w = density.eval(&a).map_err(|_| SolveError::CorruptBody { element: t, det })?;
        total += w * det * body.mesh.area(t);
    }
    Ok(total)
}

/// Unit square with k = holes^2-ish disjoint circular holes at a fixed total
/// hole-area fraction, meshed on a structured grid, scaled by `scale`.
pub fn holed_square(holes: usize, area_fraction: f64, h: f64, scale: f64) -> Result<ImplantedBody, SolveError> {
    let m = (holes as f64).sqrt().round() as usize;
    assert_eq!(m * m, holes, "hole count must be a perfect square");
    let radius = if holes == 0 { 0.0 } else { (area_fraction / (holes as f64 * std::f64::consts::PI)).sqrt() };
    let poly = mesh::rectangle(Vector2::zeros(), Vector2::new(scale, scale));
    let grid = mesh::polygon_grid_mesh(&poly, h * scale)?;
    let mut centers = Vec::new();
    for i in 0..m {
        for j in 0..m {
            if holes > 0 {
                centers.push(Vector2::new(
                    scale * (i as f64 + 0.5) / m as f64,
                    scale * (j as f64 + 0.5) / m as f64,
                ));
            }
        }
    }
    let keep: Vec<[usize; 3]> = (0..grid.n_triangles())
        .filter(|&t| {
            let c = grid.centroid(t);
            centers.iter().all(|p| (c - p).norm() > radius * scale)
        })
        .map(|t| grid.triangles[t])
        .collect();
    // drop unused vertices
    let mut remap = vec![usize::MAX; grid.n_vertices()];
    let mut vertices = Vec::new();
    let mut triangles = Vec::with_capacity(keep.len());
    for tri in keep {
        let mut nt = [0usize; 3];
        for (k, &vi) in tri.iter().enumerate() {
            if remap[vi] == usize::MAX {
                remap[vi] = vertices.len();
                vertices.push(grid.vertices[vi]);
            }
            nt[k] = remap[vi];
        }
        triangles.push(nt);
    }
    Ok(ImplantedBody::flat(TriMesh { vertices, triangles }))
}

/// Random smooth trial field on a scaled domain: a rigid motion plus a few
/// low-frequency displacement modes. Scale-equivariant by construction, so
/// rigidity ratios are invariant under domain rescaling.
fn trial_field(body: &ImplantedBody, scale: f64, rng: &mut ChaCha8Rng) -> Configuration {
    let theta: f64 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    let (s, c) = theta.sin_cos();
    let u0 = Matrix2::new(c, -s, s, c);
    let modes: Vec<(f64, f64, Vector2<f64>)> = (0..4)
        .map(|_| {
            (
                rng.gen_range(1.0..3.0_f64).round(),
                rng.gen_range(1.0..3.0_f64).round(),
                Vector2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * 0.04,
            )
        })
        .collect();
    let positions = body
        .mesh
        .vertices
        .iter()
        .map(|x| {
            let y = x / scale;
            let mut d = Vector2::zeros();
            for (mx, my, amp) in &modes {
                d += amp * (std::f64::consts::PI * mx * y[0]).sin() * (std::f64::consts::PI * my * y[1]).sin();
            }
            u0 * x + d * scale
        })
        .collect();
    Configuration::from_positions(&body.mesh, positions)
}

/// Worst FJM-type ratio ||df - U||^2 / dist^2(df, SO(2)) over random trial
/// fields on a holed square. Pure rotations give 0/0, reported as 0.
pub fn uniform_fjm_probe(
    holes: usize,
    area_fraction: f64,
    trials: usize,
    seed: u64,
    scale: f64,
) -> Result<f64, SolveError> {
    let body = holed_square(holes, area_fraction, 1.0 / 24.0, scale)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..trials {
        let f = trial_field(&body, scale, &mut rng);
        let report = best_rotation(&body, &f);
        worst = worst.max(report.ratio);
    }
    Ok(worst)
}

/// Strain image of a configuration on a model-manifold body: per element,
/// eta = U^T df - Q in Cartesian coordinates (the chart differential is the
/// identity there), so the admissible strain is beta = I + eta.
pub fn strain_image(
    body: &ImplantedBody,
    f: &Configuration,
    u: &Matrix2<f64>,
) -> Vec<Matrix2<f64>> {
    (0..body.mesh.n_triangles())
        .map(|t| u.transpose() * f.df[t] - body.q_elems[t])
        .collect()
}

/// Quadratic energy of the strain image, for the linearization-consistency
/// diagnostic: integral of the quadratic form at eta against dVol_g.
pub fn quadratic_strain_energy(
    body: &ImplantedBody,
    eta: &[Matrix2<f64>],
    form: &crate::density::QuadraticForm,
) -> f64 {
    (0..body.mesh.n_triangles())
        .map(|t| form.apply(&eta[t]) * body.volume(t))
        .sum()
}

/// For a minimizer on the eps-scaled model manifold, the relative gap
/// between the nonlinear energy and the quadratic energy of its strain
/// image. Decreases along eps ladders per the geometric linearization.
pub fn linearization_gap(
    v: Vector2<f64>,
    eps: f64,
    r_outer: f64,
    density: &EnergyDensity,
    n_r: usize,
    n_phi: usize,
) -> Result<f64, SolveError> {
    let m = ModelManifold::new(crate::geometry::BurgersVector(eps * v), r_outer)
        .expect("valid manifold");
    let body = ImplantedBody::from_manifold(&m, n_r, n_phi)?;
    let init = Configuration::volterra(&body, &m);
    let out = minimize(&body, density, init, Tolerances::default())?;
    let report = best_rotation(&body, &out.configuration);
    let eta = strain_image(&body, &out.configuration, &report.rotation);
    let quad = quadratic_strain_energy(&body, &eta, &density.hessian_at_identity());
    Ok((out.breakdown.total - quad).abs() / out.breakdown.total)
}
