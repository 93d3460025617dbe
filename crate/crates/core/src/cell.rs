//! Quadratic cell problems on annuli: the admissible-strain class, the
//! self-similar singular strain of an edge dislocation, the normalized cell
//! value I^quad_delta and its delta -> 0 extrapolation, and the near-core
//! nonlinear candidate fields built from the singular strain.

use crate::density::{EnergyDensity, QuadraticForm};
use crate::fem::{cg, Csr};
use crate::lattice::QuadForm2;
use crate::mesh::{annulus_mesh, TriMesh};
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use std::f64::consts::TAU;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CellError {
    #[error("invalid cell-problem input: {0}")]
    InvalidInput(String),
    #[error("linear solver failed: {0}")]
    SolverFailure(#[from] crate::fem::FemError),
    #[error("mesh generation failed: {0}")]
    Mesh(#[from] crate::mesh::MeshError),
    #[error("fitted form is not positive definite")]
    IndefiniteFit,
    #[error("no admissible dyadic blending ring (domain too thin)")]
    NoBlendingRing,
}

/// Fourier order used by the self-similar reduction; the classical edge
/// field needs order 1 in this frame, higher orders guard against
/// anisotropy of the quadratic form in v.
const FOURIER_ORDER: usize = 4;

/// Self-similar singular strain of a single edge dislocation with Burgers
/// vector v: beta(x) = (q e_r^T + w(theta) e_theta^T)/r with periodic w,
/// mean(w) = -v/2pi. Coefficients are produced at construction time by
/// minimizing the angular energy integral, not hard-coded.
#[derive(Debug, Clone)]
pub struct SingularStrain {
    pub burgers: Vector2<f64>,
    pub nu: f64,
    pub mu: f64,
    q: Vector2<f64>,
    w0: Vector2<f64>,
    a: Vec<Vector2<f64>>,
    b: Vec<Vector2<f64>>,
}

impl SingularStrain {
    fn w(&self, theta: f64) -> Vector2<f64> {
        let mut w = self.w0;
        for k in 1..=FOURIER_ORDER {
            let kt = k as f64 * theta;
            w += self.a[k - 1] * kt.cos() + self.b[k - 1] * kt.sin();
        }
        w
    }

    /// Strain at x != 0.
    pub fn eval(&self, x: Vector2<f64>) -> Matrix2<f64> {
        let r = x.norm();
        let theta = x[1].atan2(x[0]);
        let er = x / r;
        let et = Vector2::new(-er[1], er[0]);
        (self.q * er.transpose() + self.w(theta) * et.transpose()) / r
    }

    /// Single-valued displacement u with du = (v/2pi) dtheta + beta away
    /// from the origin (the mean of w cancels the dtheta term exactly).
    pub fn displacement(&self, x: Vector2<f64>) -> Vector2<f64> {
        let r = x.norm();
        let theta = x[1].atan2(x[0]);
        let mut u = self.q * r.ln();
        for k in 1..=FOURIER_ORDER {
            let kt = k as f64 * theta;
            u += (self.a[k - 1] * kt.sin() - self.b[k - 1] * kt.cos()) / k as f64;
        }
        u
    }

    /// Angular energy integral: the exact quadratic cell value per unit of
    /// log(1/delta), evaluated by trapezoid quadrature (exact for
    /// trigonometric polynomials at this node count).
    pub fn energy_per_log(&self, density: &QuadraticForm) -> f64 {
        let n = 1024;
        let mut total = 0.0;
        for j in 0..n {
            let theta = TAU * j as f64 / n as f64;
            let er = Vector2::new(theta.cos(), theta.sin());
            let et = Vector2::new(-er[1], er[0]);
            let phi = self.q * er.transpose() + self.w(theta) * et.transpose();
            total += density.apply(&phi);
        }
        total * TAU / n as f64
    }
}

/// Construct the singular strain by the exact one-dimensional reduction:
/// among self-similar fields with circulation -v, minimize the angular
/// energy. The minimizer solves the distributional equations (curl beta =
/// -v delta_0, div of the stress = 0) away from the origin.
pub fn singular_strain(v: Vector2<f64>, density: &QuadraticForm) -> SingularStrain {
    let nu = density.poisson();
    let mu = density.mu;
    let w0 = -v / TAU;
    if v.norm() == 0.0 {
        return SingularStrain {
            burgers: v,
            nu,
            mu,
            q: Vector2::zeros(),
            w0,
            a: vec![Vector2::zeros(); FOURIER_ORDER],
            b: vec![Vector2::zeros(); FOURIER_ORDER],
        };
    }
    // unknowns: q (2), then (a_k, b_k) pairs of 2-vectors
    let n_unknowns = 2 + 4 * FOURIER_ORDER;
    let basis = |m: usize, theta: f64| -> Matrix2<f64> {
        let er = Vector2::new(theta.cos(), theta.sin());
        let et = Vector2::new(-er[1], er[0]);
        let e = |i: usize| {
            if i == 0 {
                Vector2::new(1.0, 0.0)
            } else {
                Vector2::new(0.0, 1.0)
            }
        };
        if m < 2 {
            e(m) * er.transpose()
        } else {
            let k = (m - 2) / 4 + 1;
            let slot = (m - 2) % 4;
            let (trig, i) = match slot {
                0 => ((k as f64 * theta).cos(), 0),
                1 => ((k as f64 * theta).cos(), 1),
                2 => ((k as f64 * theta).sin(), 0),
                _ => ((k as f64 * theta).sin(), 1),
            };
            trig * e(i) * et.transpose()
        }
    };
    let bilinear = |a: &Matrix2<f64>, b: &Matrix2<f64>| density.stress(a).dot(b);
    let nq = 512;
    let mut k_mat = DMatrix::zeros(n_unknowns, n_unknowns);
    let mut c_vec = DVector::zeros(n_unknowns);
    for j in 0..nq {
        let theta = TAU * j as f64 / nq as f64;
        let et = Vector2::new(-theta.sin(), theta.cos());
        let phi0 = w0 * et.transpose();
        let phis: Vec<Matrix2<f64>> = (0..n_unknowns).map(|m| basis(m, theta)).collect();
        let w = TAU / nq as f64;
        for m in 0..n_unknowns {
            c_vec[m] += w * bilinear(&phi0, &phis[m]);
            for l in m..n_unknowns {
                let val = w * bilinear(&phis[m], &phis[l]);
                k_mat[(m, l)] += val;
                if l != m {
                    k_mat[(l, m)] += val;
                }
            }
        }
    }
    let x = k_mat
        .lu()
        .solve(&(-c_vec))
        .expect("angular reduction system is positive definite");
    let q = Vector2::new(x[0], x[1]);
    let mut a = vec![Vector2::zeros(); FOURIER_ORDER];
    let mut b = vec![Vector2::zeros(); FOURIER_ORDER];
    for k in 1..=FOURIER_ORDER {
        let base = 2 + 4 * (k - 1);
        a[k - 1] = Vector2::new(x[base], x[base + 1]);
        b[k - 1] = Vector2::new(x[base + 2], x[base + 3]);
    }
    SingularStrain { burgers: v, nu, mu, q, w0, a, b }
}

/// Resolution of the annulus discretization for cell solves.
#[derive(Debug, Clone, Copy)]
pub struct CellResolution {
    /// element rings per decade of radius (keep at least 8)
    pub radial_per_decade: usize,
    pub angular: usize,
}

impl Default for CellResolution {
    fn default() -> Self {
        Self { radial_per_decade: 16, angular: 64 }
    }
}

impl CellResolution {
    pub fn refined(&self) -> Self {
        Self { radial_per_decade: 2 * self.radial_per_decade, angular: 2 * self.angular }
    }
}

/// An admissible strain on the annulus: closed-form particular field with
/// circulation -v plus the gradient of a P1 corrector potential.
#[derive(Debug, Clone)]
pub struct AdmissibleStrainField {
    pub burgers: Vector2<f64>,
    pub mesh: TriMesh,
    /// two interleaved scalar potentials: [u0_x, u0_y, u1_x, u1_y, ...]
    pub corrector_potential: Vec<f64>,
}

impl AdmissibleStrainField {
    /// The particular field -(1/2pi) v (x) dtheta at a point.
    pub fn particular(v: Vector2<f64>, x: Vector2<f64>) -> Matrix2<f64> {
        let r2 = x.norm_squared();
        let dtheta = Vector2::new(-x[1], x[0]) / r2;
        -v / TAU * dtheta.transpose()
    }

    /// Total strain on triangle t evaluated at the point x.
    pub fn eval(&self, t: usize, x: Vector2<f64>) -> Matrix2<f64> {
        Self::particular(self.burgers, x) + self.corrector_differential(t)
    }

    pub fn corrector_differential(&self, t: usize) -> Matrix2<f64> {
        let g = self.mesh.basis_gradients(t);
        let tri = self.mesh.triangles[t];
        let mut d = Matrix2::zeros();
        for (vi, gi) in tri.iter().zip(g.iter()) {
            d[(0, 0)] += self.corrector_potential[2 * vi] * gi[0];
            d[(0, 1)] += self.corrector_potential[2 * vi] * gi[1];
            d[(1, 0)] += self.corrector_potential[2 * vi + 1] * gi[0];
            d[(1, 1)] += self.corrector_potential[2 * vi + 1] * gi[1];
        }
        d
    }

    /// Discrete curl of the total field over a triangle: the loop integral
    /// of the field around its boundary. The corrector telescopes to zero
    /// exactly; the particular part integrates in closed form.
    pub fn triangle_circulation(&self, t: usize) -> Vector2<f64> {
        let [p0, p1, p2] = self.mesh.triangle_vertices(t);
        let mut total = 0.0;
        for (a, b) in [(p0, p1), (p1, p2), (p2, p0)] {
            total += dtheta_segment_integral(a, b);
        }
        -self.burgers / TAU * total
    }
}

/// Exact integral of dtheta along the straight segment from a to b
/// (assumes the segment does not cross the origin).
pub fn dtheta_segment_integral(a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    let cross = a.perp(&b);
    let dot = a.dot(&b);
    cross.atan2(dot)
}

#[derive(Debug, Clone)]
pub struct CellResiduals {
    /// relative Euclidean residual of the Galerkin system
    pub galerkin: f64,
    /// largest triangle circulation relative to |v|
    pub max_triangle_circulation: f64,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub v: Vector2<f64>,
    pub delta: f64,
    pub value_delta: f64,
    pub mesh_resolution: usize,
    pub residuals: CellResiduals,
}

/// Minimize the normalized quadratic energy over admissible strains on the
/// annulus B_1 \ B_delta.
pub fn solve_cell(
    v: Vector2<f64>,
    delta: f64,
    density: &QuadraticForm,
    resolution: CellResolution,
) -> Result<(CellResult, AdmissibleStrainField), CellError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(CellError::InvalidInput(format!("delta = {delta}")));
    }
    if resolution.radial_per_decade < 8 {
        return Err(CellError::InvalidInput(
            "resolution below 8 radial cells per decade".into(),
        ));
    }
    let decades = (1.0 / delta).log10();
    let n_r = ((resolution.radial_per_decade as f64 * decades).ceil() as usize).max(2);
    let mesh = annulus_mesh(Vector2::zeros(), delta, 1.0, n_r, resolution.angular)?;
    let log_inv_delta = (1.0 / delta).ln();
    let nv = mesh.n_vertices();

    if v.norm() == 0.0 {
        let field = AdmissibleStrainField {
            burgers: v,
            mesh,
            corrector_potential: vec![0.0; 2 * nv],
        };
        let result = CellResult {
            v,
            delta,
            value_delta: 0.0,
            mesh_resolution: field.mesh.n_triangles(),
            residuals: CellResiduals { galerkin: 0.0, max_triangle_circulation: 0.0 },
        };
        return Ok((result, field));
    }

    // quadrature: edge midpoints (degree-2 exact)
    let quad_points = |t: usize| -> [Vector2<f64>; 3] {
        let [p0, p1, p2] = mesh.triangle_vertices(t);
        [0.5 * (p0 + p1), 0.5 * (p1 + p2), 0.5 * (p2 + p0)]
    };

    // assemble K x = -c for the corrector; dofs interleaved (vertex, comp)
    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(36 * mesh.n_triangles());
    let mut rhs = vec![0.0; 2 * nv];
    let mut j0 = 0.0; // constant term, kept for the energy identity check
    let e = [Vector2::new(1.0, 0.0), Vector2::new(0.0, 1.0)];
    for t in 0..mesh.n_triangles() {
        let grads = mesh.basis_gradients(t);
        let tri = mesh.triangles[t];
        let w = mesh.area(t) / 3.0;
        // stiffness blocks are independent of the quadrature point
        for (li, &vi) in tri.iter().enumerate() {
            for ci in 0..2 {
                let phi_i = e[ci] * grads[li].transpose();
                let stress_i = density.stress(&phi_i);
                for (lj, &vj) in tri.iter().enumerate() {
                    for cj in 0..2 {
                        let phi_j = e[cj] * grads[lj].transpose();
                        triplets.push((
                            2 * vi + ci,
                            2 * vj + cj,
                            3.0 * w * stress_i.dot(&phi_j),
                        ));
                    }
                }
            }
        }
        for x in quad_points(t) {
            let part = AdmissibleStrainField::particular(v, x);
            j0 += w * density.apply(&part);
            let stress_p = density.stress(&part);
            for (li, &vi) in tri.iter().enumerate() {
                for ci in 0..2 {
                    let phi_i = e[ci] * grads[li].transpose();
                    rhs[2 * vi + ci] -= w * stress_p.dot(&phi_i);
                }
            }
        }
    }
    let mut k = Csr::from_triplets(2 * nv, &mut triplets);
    // gauge fixing: translations (2) and the pointwise rotation null field
    // are energy-free; pin vertex 0 fully and the tangential component of
    // the antipodal vertex
    let pin2 = resolution.angular / 2; // roughly antipodal on the inner ring
    let constraints = [(0usize, 0.0f64), (1, 0.0), (2 * pin2 + 1, 0.0)];
    let mut rhs_c = rhs.clone();
    k.apply_dirichlet(&constraints, &mut rhs_c);
    let u = cg(&k, &rhs_c, 1e-12, 40 * nv + 1000)?;

    // Galerkin residual in the constrained system
    let mut ku = vec![0.0; 2 * nv];
    k.matvec(&u, &mut ku);
    let res: f64 = ku
        .iter()
        .zip(&rhs_c)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let rhs_norm: f64 = rhs_c.iter().map(|x| x * x).sum::<f64>().sqrt();
    let galerkin = res / rhs_norm.max(1e-300);

    let field = AdmissibleStrainField { burgers: v, mesh, corrector_potential: u };

    // energy value: j0 + <c, u> + (1/2) u K u, but evaluate directly by
    // quadrature for clarity
    let mut energy = 0.0;
    let mut max_circ = 0.0f64;
    for t in 0..field.mesh.n_triangles() {
        let w = field.mesh.area(t) / 3.0;
        let d = field.corrector_differential(t);
        let [p0, p1, p2] = field.mesh.triangle_vertices(t);
        for x in [0.5 * (p0 + p1), 0.5 * (p1 + p2), 0.5 * (p2 + p0)] {
            energy += w * density.apply(&(AdmissibleStrainField::particular(v, x) + d));
        }
        max_circ = max_circ.max(field.triangle_circulation(t).norm());
    }
    let _ = j0;
    let result = CellResult {
        v,
        delta,
        value_delta: energy / log_inv_delta,
        mesh_resolution: field.mesh.n_triangles(),
        residuals: CellResiduals {
            galerkin,
            max_triangle_circulation: max_circ / v.norm(),
        },
    };
    Ok((result, field))
}

#[derive(Debug, Clone)]
pub struct IzeroFit {
    pub izero: f64,
    pub slope: f64,
    pub residual: f64,
    pub monotone: bool,
}

/// Least-squares fit I_delta = I_0 + c / log(1/delta) over a delta-ladder.
pub fn extrapolate_izero(results: &[CellResult]) -> Result<IzeroFit, CellError> {
    if results.len() < 3 {
        return Err(CellError::InvalidInput("need at least 3 ladder points".into()));
    }
    let xs: Vec<f64> = results.iter().map(|r| 1.0 / (1.0 / r.delta).ln()).collect();
    let ys: Vec<f64> = results.iter().map(|r| r.value_delta).collect();
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-30 {
        return Err(CellError::InvalidInput("ladder points not distinct".into()));
    }
    let slope = (n * sxy - sx * sy) / denom;
    let izero = (sy - slope * sx) / n;
    let residual: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - izero - slope * x).powi(2))
        .sum::<f64>()
        .sqrt();
    // sort by delta descending (x descending) and check the value trend
    let mut order: Vec<usize> = (0..results.len()).collect();
    order.sort_by(|&i, &j| xs[j].partial_cmp(&xs[i]).unwrap());
    let monotone = order.windows(2).all(|w| ys[w[0]] >= ys[w[1]] - 1e-12 * ys[w[0]].abs())
        || order.windows(2).all(|w| ys[w[0]] <= ys[w[1]] + 1e-12 * ys[w[0]].abs());
    Ok(IzeroFit { izero, slope, residual, monotone })
}

/// Fit v -> izero(v) as a 2x2 positive-definite quadratic form.
pub fn fit_izero_form(samples: &[(Vector2<f64>, f64)]) -> Result<QuadForm2, CellError> {
    if samples.len() < 3 {
        return Err(CellError::InvalidInput("need at least 3 samples".into()));
    }
    let mut ata = DMatrix::zeros(3, 3);
    let mut atb = DVector::zeros(3);
    for &(v, y) in samples {
        let row = [v[0] * v[0], 2.0 * v[0] * v[1], v[1] * v[1]];
        for i in 0..3 {
            atb[i] += row[i] * y;
            for j in 0..3 {
                ata[(i, j)] += row[i] * row[j];
            }
        }
    }
    let x = ata
        .lu()
        .solve(&atb)
        .ok_or_else(|| CellError::InvalidInput("sample set does not span".into()))?;
    let m = Matrix2::new(x[0], x[1], x[1], x[2]);
    QuadForm2::new(m).map_err(|_| CellError::IndefiniteFit)
}

/// Rescaled nonlinear energy (1/(eps^2 log(1/delta))) ∫ W(df Q^{-1}) dVol_g
/// of a P1 configuration on an annulus body with the single-dislocation
/// implant Q = Id + (eps v / 2pi) (x) dtheta in chart coordinates.
pub fn nonlinear_cell_energy(
    v: Vector2<f64>,
    epsilon: f64,
    delta: f64,
    r_outer: f64,
    density: &EnergyDensity,
    mesh: &TriMesh,
    positions: &[Vector2<f64>],
) -> Result<f64, CellError> {
    if epsilon * v.norm() >= delta * r_outer {
        return Err(CellError::InvalidInput(format!(
            "core radius {} not below inner radius {}",
            epsilon * v.norm(),
            delta * r_outer
        )));
    }
    let ev = epsilon * v;
    let mut total = 0.0;
    for t in 0..mesh.n_triangles() {
        let df = mesh.p1_differential(t, positions);
        let x = mesh.centroid(t);
        let q = Matrix2::identity() + AdmissibleStrainField::particular(-ev, x);
        let qinv = q
            .try_inverse()
            .ok_or_else(|| CellError::InvalidInput("degenerate implant".into()))?;
        let a = df * qinv;
        let w = density
            .eval(&a)
            .map_err(|e| CellError::InvalidInput(e.to_string()))?;
        total += w * q.determinant() * mesh.area(t);
    }
    Ok(total / (epsilon * epsilon * (1.0 / delta).ln()))
}

/// The near-core ansatz positions f(x) = x + eps * u(x) where du is the
/// singular strain plus the implant correction (single-valued on the
/// annulus because the circulations cancel).
pub fn ansatz_positions(
    strain: &SingularStrain,
    epsilon: f64,
    mesh: &TriMesh,
) -> Vec<Vector2<f64>> {
    mesh.vertices
        .iter()
        .map(|&x| x + epsilon * strain.displacement(x))
        .collect()
}

/// Blend the near-core ansatz to an outer trace across one dyadic annulus
/// [R 2^{-k-1}, R 2^{-k}]; the ring is the smallest k (outermost ring) for
/// which the trace energy on the ring exceeds the ansatz energy, falling
/// back to the minimum-combined-energy ring. Matches the outer trace
/// exactly for r >= R 2^{-k}.
pub fn near_core_optimal_field(
    v: Vector2<f64>,
    epsilon: f64,
    r_outer: f64,
    density: &EnergyDensity,
    mesh: &TriMesh,
    outer_trace: &[Vector2<f64>],
) -> Result<Vec<Vector2<f64>>, CellError> {
    let strain = singular_strain(v, &density.hessian_at_identity());
    let ansatz = ansatz_positions(&strain, epsilon, mesh);
    // identical fields blend trivially
    let same = ansatz
        .iter()
        .zip(outer_trace)
        .all(|(a, b)| (a - b).norm() <= 1e-14 * (1.0 + a.norm()));
    if same {
        return Ok(ansatz);
    }
    let r_min = mesh
        .vertices
        .iter()
        .map(|p| p.norm())
        .fold(f64::INFINITY, f64::min);
    let max_k = ((r_outer / r_min).log2().floor() as i64 - 1).max(-1);
    if max_k < 0 {
        return Err(CellError::NoBlendingRing);
    }
    let ring_energy = |positions: &[Vector2<f64>], k: i64| -> Result<f64, CellError> {
        let (lo, hi) = (r_outer * 0.5f64.powi(k as i32 + 1), r_outer * 0.5f64.powi(k as i32));
        let mut e = 0.0;
        for t in 0..mesh.n_triangles() {
            let r = mesh.centroid(t).norm();
            if r >= lo && r < hi {
                let df = mesh.p1_differential(t, positions);
                let x = mesh.centroid(t);
                let q = Matrix2::identity()
                    + AdmissibleStrainField::particular(-(epsilon * v), x);
                let a = df * q.try_inverse().unwrap();
                e += density
                    .eval(&a)
                    .map_err(|er| CellError::InvalidInput(er.to_string()))?
                    * q.determinant()
                    * mesh.area(t);
            }
        }
        Ok(e)
    };
    let mut chosen = None;
    let mut best = (f64::INFINITY, 0i64);
    for k in 0..=max_k {
        let et = ring_energy(outer_trace, k)?;
        let ea = ring_energy(&ansatz, k)?;
        if et >= ea && chosen.is_none() {
            chosen = Some(k);
        }
        if et + ea < best.0 {
            best = (et + ea, k);
        }
    }
    let k = chosen.unwrap_or(best.1);
    let (lo, hi) = (r_outer * 0.5f64.powi(k as i32 + 1), r_outer * 0.5f64.powi(k as i32));
    // smooth transition in log r across the ring: 0 at lo (ansatz side is
    // inside), 1 at hi (trace side outside)
    let blend = |r: f64| -> f64 {
        if r <= lo {
            0.0
        } else if r >= hi {
            1.0
        } else {
            let s = (r / lo).ln() / (hi / lo).ln();
            s * s * (3.0 - 2.0 * s)
        }
    };
    Ok(mesh
        .vertices
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let t = blend(p.norm());
            ansatz[i] * (1.0 - t) + outer_trace[i] * t
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::EnergyDensity;
    use std::f64::consts::PI;

    fn iso(mu: f64, nu: f64) -> QuadraticForm {
        // lambda from nu: nu = lambda / (2 (lambda + mu))
        let lambda = 2.0 * mu * nu / (1.0 - 2.0 * nu);
        QuadraticForm { mu, lambda }
    }

    #[test]
    fn singular_strain_zero_and_circulation() {
        let density = iso(1.0, 0.25);
        let s0 = singular_strain(Vector2::zeros(), &density);
        assert_eq!(s0.eval(Vector2::new(0.3, 0.4)), Matrix2::zeros());

        let v = Vector2::new(1.0, 0.0);
        let s = singular_strain(v, &density);
        // circulation around |x| = 1 equals -v (trapezoid, row-wise)
        let n = 4000;
        let mut circ = Vector2::zeros();
        for j in 0..n {
            let t0 = TAU * j as f64 / n as f64;
            let t1 = TAU * (j + 1) as f64 / n as f64;
            let x0 = Vector2::new(t0.cos(), t0.sin());
            let x1 = Vector2::new(t1.cos(), t1.sin());
            let seg = x1 - x0;
            circ += 0.5 * (s.eval(x0) + s.eval(x1)) * seg;
        }
        assert!((circ + v).norm() < 1e-6, "circulation {circ:?}");
    }

    #[test]
    fn singular_strain_self_similar_and_decay() {
        let density = iso(1.3, 0.31);
        let v = Vector2::new(0.6, -0.8);
        let s = singular_strain(v, &density);
        let x = Vector2::new(0.7, 0.35);
        for sigma in [0.5, 2.0, 10.0] {
            let lhs = s.eval(x);
            let rhs = s.eval(x / sigma) / sigma;
            assert!((lhs - rhs).norm() <= 1e-12 * lhs.norm());
        }
        // decay |beta| <= C |v| / |x|
        let mut c_max = 0.0f64;
        for shell in [0.1, 1.0, 10.0] {
            for j in 0..64 {
                let t = TAU * j as f64 / 64.0;
                let x = shell * Vector2::new(t.cos(), t.sin());
                let norm = s.eval(x).norm();
                c_max = c_max.max(norm * x.norm() / v.norm());
            }
        }
        assert!(c_max < 1.0, "decay constant {c_max}");
    }

    #[test]
    fn singular_strain_equilibrium() {
        // divergence of the stress vanishes away from the core: check the
        // weak form against compactly supported bumps via quadrature
        let density = iso(1.0, 0.25);
        let s = singular_strain(Vector2::new(1.0, 0.0), &density);
        // div sigma = 0 iff for radial-shell test gradients the integral
        // vanishes; do a direct finite-difference divergence check instead
        let h = 1e-5;
        let mut max_divw = 0.0f64;
        for j in 0..32 {
            let t = TAU * (j as f64 + 0.3) / 32.0;
            let x = 0.8 * Vector2::new(t.cos(), t.sin());
            let sig = |y: Vector2<f64>| density.stress(&s.eval(y));
            let dx = (sig(x + Vector2::new(h, 0.0)) - sig(x - Vector2::new(h, 0.0))) / (2.0 * h);
            let dy = (sig(x + Vector2::new(0.0, h)) - sig(x - Vector2::new(0.0, h))) / (2.0 * h);
            let div = Vector2::new(dx[(0, 0)] + dy[(0, 1)], dx[(1, 0)] + dy[(1, 1)]);
            max_divw = max_divw.max(div.norm());
        }
        assert!(max_divw < 1e-4, "divergence of stress {max_divw}");
    }

    #[test]
    fn singular_strain_displacement_consistent() {
        let density = iso(1.0, 0.25);
        let v = Vector2::new(0.3, 0.5);
        let s = singular_strain(v, &density);
        // du = (v/2pi) dtheta + beta, central differences
        let h = 1e-6;
        for (px, py) in [(0.6, 0.2), (-0.4, 0.7), (0.1, -0.9)] {
            let x = Vector2::new(px, py);
            let ux = (s.displacement(x + Vector2::new(h, 0.0))
                - s.displacement(x - Vector2::new(h, 0.0)))
                / (2.0 * h);
            let uy = (s.displacement(x + Vector2::new(0.0, h))
                - s.displacement(x - Vector2::new(0.0, h)))
                / (2.0 * h);
            let du = Matrix2::from_columns(&[ux, uy]);
            let r2 = x.norm_squared();
            let dtheta = Vector2::new(-x[1], x[0]) / r2;
            let expect = v / TAU * dtheta.transpose() + s.eval(x);
            assert!((du - expect).norm() < 1e-5, "du mismatch {}", (du - expect).norm());
        }
    }

    #[test]
    fn prelog_factor_matches_classical_value() {
        // energy per unit log for the isotropic edge dislocation:
        // mu |v|^2 / (4 pi (1 - nu))
        for (mu, nu) in [(1.0, 0.25), (2.0, 0.1), (0.7, 0.4)] {
            let density = iso(mu, nu);
            let v = Vector2::new(1.0, 0.0);
            let s = singular_strain(v, &density);
            let val = s.energy_per_log(&density);
            let classical = mu / (4.0 * PI * (1.0 - nu));
            assert!(
                (val - classical).abs() < 1e-10 * classical,
                "mu={mu} nu={nu}: {val} vs {classical}"
            );
        }
    }

    #[test]
    fn solve_cell_examples() {
        let density = iso(1.0, 0.25);
        // v = 0
        let (r0, f0) = solve_cell(Vector2::zeros(), 1e-2, &density, CellResolution::default()).unwrap();
        assert_eq!(r0.value_delta, 0.0);
        assert!(f0.corrector_potential.iter().all(|&x| x == 0.0));

        let v = Vector2::new(1.0, 0.0);
        let delta = 1e-3;
        let (res, _field) = solve_cell(v, delta, &density, CellResolution::default()).unwrap();
        // oracle: the self-similar field is admissible, so its (exact)
        // normalized energy bounds the cell value from above, and the
        // gap is O(|v|^2 / log(1/delta))
        let s = singular_strain(v, &density);
        let upper = s.energy_per_log(&density);
        assert!(res.value_delta <= upper * 1.005, "{} > {}", res.value_delta, upper);
        assert!(res.value_delta >= 0.5 * upper, "cell value implausibly small");
        // within 3% of izero + fitted slope correction: check directly via
        // the ladder test below; here check invariants
        assert!(res.residuals.galerkin <= 1e-10);
        assert!(res.residuals.max_triangle_circulation <= 1e-9);
        // loop integral around the inner boundary equals -v
        let n = 2048;
        let mut circ = Vector2::zeros();
        let rr = 3.0 * delta;
        for j in 0..n {
            let t0 = TAU * j as f64 / n as f64;
            let t1 = TAU * (j + 1) as f64 / n as f64;
            let x0 = rr * Vector2::new(t0.cos(), t0.sin());
            let x1 = rr * Vector2::new(t1.cos(), t1.sin());
            // corrector contributes zero circulation; integrate the
            // particular part exactly
            circ += AdmissibleStrainField::particular(v, 0.5 * (x0 + x1)) * (x1 - x0);
        }
        assert!((circ + v).norm() <= 1e-6);

        // symmetry v -> -v
        let (res_neg, _) = solve_cell(-v, delta, &density, CellResolution::default()).unwrap();
        assert!((res_neg.value_delta - res.value_delta).abs() <= 1e-12 * res.value_delta);
    }

    #[test]
    fn cell_value_scaling_and_rotation() {
        let density = iso(1.0, 0.25);
        let delta = 1e-2;
        let v = Vector2::new(1.0, 0.0);
        let (base, _) = solve_cell(v, delta, &density, CellResolution::default()).unwrap();
        // rotation covariance (isotropic density)
        for theta in [0.7f64, 2.1] {
            let rv = Vector2::new(theta.cos() * v[0] - theta.sin() * v[1],
                                  theta.sin() * v[0] + theta.cos() * v[1]);
            let (rot, _) = solve_cell(rv, delta, &density, CellResolution::default()).unwrap();
            assert!(
                (rot.value_delta - base.value_delta).abs() <= 5e-3 * base.value_delta,
                "rotation covariance violated: {} vs {}",
                rot.value_delta,
                base.value_delta
            );
        }
    }

    #[test]
    fn mesh_refinement_converges() {
        let density = iso(1.0, 0.25);
        let v = Vector2::new(1.0, 0.0);
        let res = CellResolution::default();
        let (a, _) = solve_cell(v, 1e-2, &density, res).unwrap();
        let (b, _) = solve_cell(v, 1e-2, &density, res.refined()).unwrap();
        assert!(
            (a.value_delta - b.value_delta).abs() <= 5e-3 * b.value_delta,
            "refinement drift {} -> {}",
            a.value_delta,
            b.value_delta
        );
    }

    #[test]
    fn ladder_extrapolation_and_form_fit() {
        // synthetic exact-model data
        let deltas = [1e-2, 1e-3, 1e-4];
        let synth: Vec<CellResult> = deltas
            .iter()
            .map(|&d| CellResult {
                v: Vector2::new(1.0, 0.0),
                delta: d,
                value_delta: 0.7 + 0.3 / (1.0 / d).ln(),
                mesh_resolution: 0,
                residuals: CellResiduals { galerkin: 0.0, max_triangle_circulation: 0.0 },
            })
            .collect();
        let fit = extrapolate_izero(&synth).unwrap();
        assert!((fit.izero - 0.7).abs() < 1e-10 && (fit.slope - 0.3).abs() < 1e-10);
        assert!(fit.monotone);

        // real ladder for the isotropic case
        let density = iso(1.0, 0.25);
        let v = Vector2::new(1.0, 0.0);
        let ladder: Vec<CellResult> = [1e-2, 3e-3, 1e-3, 3e-4, 1e-4]
            .iter()
            .map(|&d| solve_cell(v, d, &density, CellResolution::default()).unwrap().0)
            .collect();
        let fit = extrapolate_izero(&ladder).unwrap();
        let oracle = singular_strain(v, &density).energy_per_log(&density);
        assert!(
            (fit.izero - oracle).abs() <= 0.03 * oracle,
            "extrapolated {} vs oracle {}",
            fit.izero,
            oracle
        );

        // quadratic-form structure: parallelogram law and isotropy
        let vs = [
            Vector2::new(1.0, 0.0),
            Vector2::new(0.0, 1.0),
            Vector2::new(1.0, 1.0),
        ];
        let samples: Vec<(Vector2<f64>, f64)> = vs
            .iter()
            .map(|&u| {
                let lad: Vec<CellResult> = [1e-2, 1e-3, 1e-4]
                    .iter()
                    .map(|&d| solve_cell(u, d, &density, CellResolution::default()).unwrap().0)
                    .collect();
                (u, extrapolate_izero(&lad).unwrap().izero)
            })
            .collect();
        // parallelogram: q(e1+e2) + q(e1-e2) = 2q(e1) + 2q(e2); with
        // isotropy q(e1-e2) = q(e1+e2)
        let q11 = samples[0].1;
        let q22 = samples[1].1;
        let q12 = samples[2].1;
        assert!((2.0 * q12 - 2.0 * (q11 + q22)).abs() <= 0.02 * 2.0 * (q11 + q22));
        let form = fit_izero_form(&samples).unwrap();
        // isotropic data -> form proportional to the identity within 2%
        assert!((form.m[(0, 0)] - form.m[(1, 1)]).abs() <= 0.02 * form.m[(0, 0)]);
        assert!(form.m[(0, 1)].abs() <= 0.02 * form.m[(0, 0)]);
        // held-out prediction
        let held = Vector2::new(2.0, -1.0);
        let lad: Vec<CellResult> = [1e-2, 1e-3, 1e-4]
            .iter()
            .map(|&d| solve_cell(held, d, &density, CellResolution::default()).unwrap().0)
            .collect();
        let actual = extrapolate_izero(&lad).unwrap().izero;
        assert!((form.eval(held) - actual).abs() <= 0.03 * actual);
        // scaling of the data scales the form
        let scaled: Vec<(Vector2<f64>, f64)> =
            samples.iter().map(|&(u, y)| (u, 3.0 * y)).collect();
        let form3 = fit_izero_form(&scaled).unwrap();
        assert!((form3.m - 3.0 * form.m).norm() <= 1e-12 * form.m.norm());
    }

    #[test]
    fn coercivity_of_cell_value() {
        let density = iso(1.0, 0.25);
        for v in [Vector2::new(1.0, 0.0), Vector2::new(0.5, 0.5), Vector2::new(0.0, 2.0)] {
            let (r, _) = solve_cell(v, 1e-2, &density, CellResolution::default()).unwrap();
            // coercivity with the recorded constant mu/(8 pi)
            assert!(r.value_delta >= density.mu / (8.0 * PI) * v.norm_squared());
        }
    }

    #[test]
    fn nonlinear_energy_limits() {
        let dens = EnergyDensity::isotropic(1.0, 1.0).unwrap(); // nu = 1/4
        let v = Vector2::new(1.0, 0.0);
        let delta = 1e-2;
        // identity chart as configuration: finite, O(|v|^2)
        let mesh = annulus_mesh(Vector2::zeros(), delta, 1.0, 48, 64).unwrap();
        let positions: Vec<Vector2<f64>> = mesh.vertices.clone();
        for eps in [3e-3, 1e-3] {
            let e = nonlinear_cell_energy(v, eps, delta, 1.0, &dens, &mesh, &positions).unwrap();
            assert!(e.is_finite() && e < 2.0 * v.norm_squared(), "chart energy {e}");
        }
        // ansatz field converges to the quadratic energy of beta_v
        let qf = dens.hessian_at_identity();
        let strain = singular_strain(v, &qf);
        let target = strain.energy_per_log(&qf);
        let mut gaps = Vec::new();
        for eps in [3e-3, 1e-3, 3e-4] {
            let pos = ansatz_positions(&strain, eps, &mesh);
            let e = nonlinear_cell_energy(v, eps, delta, 1.0, &dens, &mesh, &pos).unwrap();
            gaps.push((e - target).abs() / target);
        }
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "gaps {gaps:?}");
        assert!(gaps[2] < 0.05, "final gap {}", gaps[2]);
        // precondition violation
        assert!(nonlinear_cell_energy(v, 0.5, 1e-2, 1.0, &dens, &mesh, &positions).is_err());
    }

    #[test]
    fn blending_identity_and_cost() {
        let dens = EnergyDensity::isotropic(1.0, 1.0).unwrap();
        let v = Vector2::new(1.0, 0.0);
        let eps = 1e-3;
        let mesh = annulus_mesh(Vector2::zeros(), 2.0 * eps, 1.0, 64, 64).unwrap();
        let qf = dens.hessian_at_identity();
        let strain = singular_strain(v, &qf);
        let ansatz = ansatz_positions(&strain, eps, &mesh);
        // trace equal to the ansatz: blend is the identity
        let out = near_core_optimal_field(v, eps, 1.0, &dens, &mesh, &ansatz).unwrap();
        for (a, b) in out.iter().zip(&ansatz) {
            assert!((a - b).norm() <= 1e-14 * (1.0 + a.norm()));
        }
        // trace = identity chart: blended field matches the trace on the
        // outer boundary and adds bounded energy
        let chart: Vec<Vector2<f64>> = mesh.vertices.clone();
        let blended = near_core_optimal_field(v, eps, 1.0, &dens, &mesh, &chart).unwrap();
        for (i, p) in mesh.vertices.iter().enumerate() {
            if p.norm() >= 0.999 {
                assert!((blended[i] - chart[i]).norm() <= 1e-12);
            }
        }
        let delta_eff = 2.0 * eps;
        let e_blend =
            nonlinear_cell_energy(v, eps, delta_eff, 1.0, &dens, &mesh, &blended).unwrap();
        assert!(e_blend.is_finite() && e_blend > 0.0);
    }
}
