//! Desk-scale Gamma-limit experiments: recovery sequences, the self/elastic
//! energy split, lower-bound diagnostics, and strain compactness checks.

use std::collections::BTreeMap;

use nalgebra::{Matrix2, Vector2};
use serde::Serialize;
use thiserror::Error;

use crate::assembly::{approximate_measure, build_implant, AssemblyError, MeasureTarget};
use crate::cell::singular_strain;
use crate::density::{EnergyDensity, QuadraticForm};
use crate::fem::{solve_poisson_dirichlet, FemError};
use crate::geometry::{sigma_max, BurgersVector, ModelManifold};
use crate::lattice::{sigma, DislocationLattice, LatticeError, QuadForm2};
use crate::mesh::{polygon_grid_mesh, MeshError, TriMesh};
use crate::solve::{
    best_rotation, energy, minimize, volterra_frame_energy, Configuration, ImplantedBody,
    Region, SolveError, Tolerances,
};

use super::regime::{RegimeLabel, RegimeParams};

#[derive(Debug, Error)]
pub enum GammaError {
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error("invalid gamma-limit input: {0}")]
    Invalid(String),
    #[error("step eps = {eps}: {source}")]
    AtStep {
        eps: f64,
        #[source]
        source: Box<GammaError>,
    },
}

/// The limit strain field J0 (dJ0 = -mu, divergence-free rows, zero normal
/// trace) on a fixed evaluation mesh, with the limit energy targets.
pub struct LimitField {
    pub mesh: TriMesh,
    pub j: Vec<Matrix2<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitTargets {
    /// integral of the quadratic form at J over the domain
    pub elastic: f64,
    /// integral of the lattice self-energy density of mu
    pub self_energy: f64,
    pub total: f64,
}

/// Solve for J0 from the normalized limit measure mu = w dx: per component,
/// a Dirichlet Poisson potential chi_c with -lap chi_c = mu_c, then
/// J0 row c = (-d2 chi_c, d1 chi_c). Row-wise: curl = -mu_c exactly,
/// divergence = 0 exactly, zero tangential boundary derivative gives
/// J0(n) = 0.
pub fn limit_field(
    omega: &[Vector2<f64>],
    target: &MeasureTarget,
    grid_h: f64,
) -> Result<LimitField, GammaError> {
    let mesh = polygon_grid_mesh(omega, grid_h)?;
    let boundary: Vec<(usize, f64)> =
        mesh.boundary_vertices().into_iter().map(|v| (v, 0.0)).collect();
    let mut chi = [Vec::new(), Vec::new()];
    for comp in 0..2 {
        let source: Vec<f64> =
            (0..mesh.n_triangles()).map(|t| target.at(mesh.centroid(t))[comp]).collect();
        chi[comp] = solve_poisson_dirichlet(&mesh, &source, &boundary, 1e-12)?;
    }
    let j = (0..mesh.n_triangles())
        .map(|t| {
            let g0 = mesh.p1_gradient(t, &chi[0]);
            let g1 = mesh.p1_gradient(t, &chi[1]);
            Matrix2::new(-g0[1], g0[0], -g1[1], g1[0])
        })
        .collect();
    Ok(LimitField { mesh, j })
}

/// Limit energy targets for (J, mu): the quadratic energy of J plus the
/// 1-homogeneous lattice self-energy of mu.
pub fn limit_targets(
    field: &LimitField,
    target: &MeasureTarget,
    density: &EnergyDensity,
    lattice: &DislocationLattice,
    iquad: &QuadForm2,
) -> Result<LimitTargets, GammaError> {
    let quad = density.hessian_at_identity();
    let elastic: f64 = (0..field.mesh.n_triangles())
        .map(|t| quad.apply(&field.j[t]) * field.mesh.area(t))
        .sum();
    // uniform density: the self-energy integrand is constant, so the
    // integral is Sigma(w) * |Omega| by 1-homogeneity
    let w = match target {
        MeasureTarget::Uniform(w) => *w,
    };
    let self_energy = if w.norm() == 0.0 {
        0.0
    } else {
        sigma(lattice, iquad, w)?.value * field.mesh.total_area()
    };
    Ok(LimitTargets { elastic, self_energy, total: elastic + self_energy })
}

#[derive(Debug, Clone, Serialize)]
pub struct GammaRow {
    pub eps: f64,
    pub n_eps: f64,
    pub h_sq: f64,
    pub r_eps: f64,
    pub atoms: usize,
    /// self energy (union of core annuli), rescaled by h^2
    pub e_self: f64,
    /// far-field elastic energy, rescaled by h^2
    pub e_elastic: f64,
    pub e_total: f64,
    /// upper value from the Volterra ansatz in the cores
    pub upper: f64,
    /// lower-bound diagnostic, rescaled by h^2
    pub lower: f64,
    /// relative gap of e_total to the limit target
    pub gap_to_limit: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GammaLimitReport {
    pub targets: LimitTargets,
    pub rows: Vec<GammaRow>,
    pub regime: Vec<RegimeLabel>,
    /// final relative gap exceeded the desk-scale 20% target (flag, not a failure)
    pub gap_flagged: bool,
}

/// Per-step artifacts retained for the compactness diagnostic.
pub struct GammaStep {
    pub eps: f64,
    pub h: f64,
    pub body: ImplantedBody,
    pub configuration: Configuration,
    pub atoms: Vec<(Vector2<f64>, Vector2<f64>)>,
}

fn displacement_positions(
    mesh: &TriMesh,
    atoms: &[(Vector2<f64>, Vector2<f64>)],
    quad: &QuadraticForm,
) -> Vec<Vector2<f64>> {
    // cache the angular profiles per distinct Burgers vector
    let mut strains = BTreeMap::new();
    for (_, b) in atoms {
        strains
            .entry((b[0].to_bits(), b[1].to_bits()))
            .or_insert_with(|| singular_strain(*b, quad));
    }
    mesh.vertices
        .iter()
        .map(|&x| {
            let mut f = x;
            for (p, b) in atoms {
                let s = &strains[&(b[0].to_bits(), b[1].to_bits())];
                f += s.displacement(x - p);
            }
            f
        })
        .collect()
}

/// Far-field sub-body: drop every element within r_eps of an atom, keeping
/// the assembled implant on the rest.
fn far_field_body(body: &ImplantedBody, atoms: &[(Vector2<f64>, Vector2<f64>)], r_eps: f64) -> ImplantedBody {
    let keep: Vec<usize> = (0..body.mesh.n_triangles())
        .filter(|&t| {
            let c = body.mesh.centroid(t);
            atoms.iter().all(|(p, _)| (c - p).norm() > r_eps)
        })
        .collect();
    ImplantedBody {
        mesh: TriMesh {
            vertices: body.mesh.vertices.clone(),
            triangles: keep.iter().map(|&t| body.mesh.triangles[t]).collect(),
        },
        q_elems: keep.iter().map(|&t| body.q_elems[t]).collect(),
        regions: vec![Region::Far; keep.len()],
    }
}

/// Lower-bound diagnostic: per-core cell bounds (quadratic per-log value
/// with a 10% slack) plus a Taylor lower bound on the far-field quadratic
/// energy, (1 - 3 max|eta|) * quadratic energy.
pub fn liminf_diagnostic(
    far: &ImplantedBody,
    f: &Configuration,
    atoms: &[(Vector2<f64>, Vector2<f64>)],
    r_eps: f64,
    iquad: &QuadForm2,
    density: &EnergyDensity,
    label: RegimeLabel,
) -> f64 {
    // supercritical: the self part of the lower bound is 0
    let ball: f64 = if label == RegimeLabel::Supercritical {
        0.0
    } else {
        atoms
            .iter()
            .map(|(_, b)| {
                // Jensen on circles starting one log unit above the core
                // radius: the first annulus is lost to the core constant,
                // which is not small at desk-scale aspect ratios.
                let log = ((r_eps / b.norm()).ln() - 1.0).max(0.0);
                0.9 * iquad.eval(*b) * log
            })
            .sum()
    };
    let quad = density.hessian_at_identity();
    let mut far_quad = 0.0;
    let mut eta_max = 0.0_f64;
    for t in 0..far.mesh.n_triangles() {
        let eta = f.df[t] - far.q_elems[t];
        far_quad += quad.apply(&eta) * far.volume(t);
        eta_max = eta_max.max(sigma_max(&eta));
    }
    ball + (1.0 - 3.0 * eta_max).max(0.0) * far_quad
}

/// Build the recovery sequence for a uniform target measure with J = J0
/// (critical/supercritical) or J = 0 (subcritical; the corrector potential
/// of J - J0 is asymptotically negligible there, see the decisions record),
/// and measure the self/elastic energy split per epsilon.
pub fn recovery_sequence(
    omega: &[Vector2<f64>],
    target: &MeasureTarget,
    regime: &RegimeParams,
    lattice: &DislocationLattice,
    iquad: &QuadForm2,
    density: &EnergyDensity,
    keep_steps: bool,
) -> Result<(GammaLimitReport, Vec<GammaStep>), GammaError> {
    regime.validate().map_err(|e| GammaError::Invalid(e.to_string()))?;
    let field = limit_field(omega, target, 1.0 / 32.0)?;
    let targets = limit_targets(&field, target, density, lattice, iquad)?;
    let quad = density.hessian_at_identity();

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut steps = Vec::new();
    // per-core energies depend only on the Burgers vector and r_eps,
    // so cache them per step
    for i in 0..regime.eps.len() {
        let eps = regime.eps[i];
        let step = (|| -> Result<(GammaRow, Option<GammaStep>), GammaError> {
            let n_eps = regime.n_eps(i);
            let h_sq = regime.h_eps_sq(i);
            let r_eps = regime.r_eps(i);
            let label = regime.label(i);
            let measure = approximate_measure(target, omega, n_eps, eps, lattice, iquad)?;
            let atoms = measure.atoms.clone();

            let (e_self, upper_self) = {
                let mut cache: BTreeMap<(u64, u64), (f64, f64)> = BTreeMap::new();
                let mut total = 0.0;
                let mut upper = 0.0;
                for (_, b) in &atoms {
                    let key = (b[0].to_bits(), b[1].to_bits());
                    if !cache.contains_key(&key) {
                        let m = ModelManifold::new(BurgersVector(*b), r_eps)
                            .map_err(|e| GammaError::Invalid(e.to_string()))?;
                        let decades = (r_eps / b.norm()).log10().max(0.5);
                        let n_r = ((12.0 * decades).ceil() as usize).max(6);
                        let body = ImplantedBody::from_manifold(&m, n_r, 32)?;
                        let init = Configuration::volterra(&body, &m);
                        let ansatz = volterra_frame_energy(&body, density)?;
                        let out = minimize(&body, density, init, Tolerances::default())?;
                        cache.insert(key, (out.breakdown.total, ansatz));
                    }
                    let (e, a) = cache[&key];
                    total += e;
                    upper += a;
                }
                (total, upper)
            };

            let (e_elastic, lower, body_far, config) = if atoms.is_empty() {
                // defect-free: f = Z, zero energy
                let mesh = polygon_grid_mesh(omega, 1.0 / 16.0)?;
                let body = ImplantedBody::flat(mesh);
                let f = Configuration::identity(&body);
                let e = energy(&body, &f, density)?.total;
                (e, 0.0, body, f)
            } else {
                let h = (measure.smear_radius / 2.0).min(1.0 / 16.0);
                let assembled = build_implant(&measure, h)?;
                let full = ImplantedBody::from_assembled(&assembled);
                let far = far_field_body(&full, &atoms, r_eps);
                let positions = displacement_positions(&far.mesh, &atoms, &quad);
                let f = Configuration::from_positions(&far.mesh, positions);
                let e = energy(&far, &f, density)?.total;
                let low = liminf_diagnostic(&far, &f, &atoms, r_eps, iquad, density, label);
                (e, low, far, f)
            };

            let e_total = (e_self + e_elastic) / h_sq;
            let gap = if targets.total > 0.0 {
                (e_total - targets.total).abs() / targets.total
            } else {
                e_total
            };
            let row = GammaRow {
                eps,
                n_eps,
                h_sq,
                r_eps,
                atoms: atoms.len(),
                e_self: e_self / h_sq,
                e_elastic: e_elastic / h_sq,
                e_total,
                upper: (upper_self + e_elastic) / h_sq,
                lower: lower / h_sq,
                gap_to_limit: gap,
            };
            let kept = if keep_steps {
                Some(GammaStep {
                    eps,
                    h: h_sq.sqrt(),
                    body: body_far,
                    configuration: config,
                    atoms,
                })
            } else {
                None
            };
            Ok((row, kept))
        })()
        .map_err(|e| GammaError::AtStep { eps, source: Box::new(e) })?;
        labels.push(regime.label(i));
        rows.push(step.0);
        if let Some(s) = step.1 {
            steps.push(s);
        }
    }
    let gap_flagged = rows.last().map(|r| r.gap_to_limit > 0.2).unwrap_or(false);
    Ok((GammaLimitReport { targets, rows, regime: labels, gap_flagged }, steps))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CurlTarget {
    Zero,
    MinusMu,
}

/// Coarse-grid weak-limit surrogate of the rescaled strain.
pub struct LimitDisplacement {
    pub grid: usize,
    pub lo: Vector2<f64>,
    pub hi: Vector2<f64>,
    /// area-weighted cell averages of (U^T df - Q)/h
    pub j: Vec<Matrix2<f64>>,
    /// cell area coverage weights
    pub weights: Vec<f64>,
    pub rotation: Matrix2<f64>,
    pub curl_target: CurlTarget,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompactnessReport {
    /// weak-curl residuals for the test-field battery, normalized by the
    /// field scale
    pub curl_residuals: Vec<f64>,
    /// relative L2 distance of the recovered coarse J to the input J
    pub j_recovery_error: f64,
    /// sum |v_i|^2 per unit n_eps (Burgers square-mass bound)
    pub burgers_square_mass: f64,
}

fn bump(y: Vector2<f64>) -> (f64, Vector2<f64>) {
    // separable bump vanishing with its gradient on the unit-square boundary
    let sx = (std::f64::consts::PI * y[0]).sin();
    let sy = (std::f64::consts::PI * y[1]).sin();
    let val = sx * sx * sy * sy;
    let gx = 2.0 * std::f64::consts::PI * sx * (std::f64::consts::PI * y[0]).cos() * sy * sy;
    let gy = 2.0 * std::f64::consts::PI * sy * (std::f64::consts::PI * y[1]).cos() * sx * sx;
    (val, Vector2::new(gx, gy))
}

/// Extract the weak-limit surrogate from a far-field configuration: optimal
/// rotation, rescaled strain averaged on a fixed coarse grid, weak-curl
/// residual against the regime target, and the square-mass bound.
pub fn compactness_diagnostic(
    step: &GammaStep,
    target: &MeasureTarget,
    label: RegimeLabel,
    n_eps: f64,
    field: &LimitField,
    grid: usize,
) -> (LimitDisplacement, CompactnessReport) {
    let body = &step.body;
    let f = &step.configuration;
    let u = best_rotation(body, f).rotation;
    let (mut lo, mut hi) = (body.mesh.vertices[0], body.mesh.vertices[0]);
    for p in &body.mesh.vertices {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let cell = |p: Vector2<f64>| -> usize {
        let ix = (((p[0] - lo[0]) / (hi[0] - lo[0]) * grid as f64) as usize).min(grid - 1);
        let iy = (((p[1] - lo[1]) / (hi[1] - lo[1]) * grid as f64) as usize).min(grid - 1);
        iy * grid + ix
    };
    let mut j = vec![Matrix2::zeros(); grid * grid];
    let mut weights = vec![0.0; grid * grid];
    for t in 0..body.mesh.n_triangles() {
        let c = cell(body.mesh.centroid(t));
        let eta = (u.transpose() * f.df[t] - body.q_elems[t]) / step.h;
        let area = body.mesh.area(t);
        j[c] += eta * area;
        weights[c] += area;
    }
    for (m, &w) in j.iter_mut().zip(&weights) {
        if w > 0.0 {
            *m /= w;
        }
    }

    let curl_target =
        if label == RegimeLabel::Subcritical { CurlTarget::Zero } else { CurlTarget::MinusMu };
    // weak-curl residual per test field psi (component-wise bumps):
    // integral of (d1 psi_c J_c2 - d2 psi_c J_c1) - integral of psi_c mu_c
    let span = Vector2::new(hi[0] - lo[0], hi[1] - lo[1]);
    let cell_area = span[0] * span[1] / (grid * grid) as f64;
    let mut curl_residuals = Vec::new();
    for (amp0, amp1) in [(1.0, 0.0), (0.0, 1.0), (0.7, -0.7)] {
        let mut residual = 0.0;
        let mut scale = 0.0;
        for iy in 0..grid {
            for ix in 0..grid {
                let c = iy * grid + ix;
                if weights[c] == 0.0 {
                    continue;
                }
                let y = Vector2::new((ix as f64 + 0.5) / grid as f64, (iy as f64 + 0.5) / grid as f64);
                let (val, g) = bump(y);
                let grad = Vector2::new(g[0] / span[0], g[1] / span[1]);
                let mu = target.at(lo + y.component_mul(&span));
                for (comp, amp) in [(0usize, amp0), (1usize, amp1)] {
                    if amp == 0.0 {
                        continue;
                    }
                    let jc = j[c].row(comp);
                    residual += amp * (grad[0] * jc[1] - grad[1] * jc[0]) * cell_area;
                    scale += (amp * grad.norm() * jc.norm().max(1e-30)) * cell_area;
                    if curl_target == CurlTarget::MinusMu {
                        residual -= amp * val * mu[comp] * cell_area;
                    }
                }
            }
        }
        curl_residuals.push(residual.abs() / scale.max(1e-30));
    }

    // recovered J against the input limit field, on the same grid
    let mut j_ref = vec![Matrix2::zeros(); grid * grid];
    let mut w_ref = vec![0.0; grid * grid];
    for t in 0..field.mesh.n_triangles() {
        let c = cell(field.mesh.centroid(t));
        let area = field.mesh.area(t);
        j_ref[c] += field.j[t] * area;
        w_ref[c] += area;
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for c in 0..grid * grid {
        if weights[c] > 0.0 && w_ref[c] > 0.0 {
            let r = j_ref[c] / w_ref[c];
            num += (j[c] - r).norm_squared();
            den += r.norm_squared();
        }
    }
    let j_recovery_error = if den > 0.0 { (num / den).sqrt() } else { 0.0 };

    let sq_mass: f64 = step
        .atoms
        .iter()
        .map(|(_, b)| (b / step.eps).norm_squared())
        .sum();
    let report = CompactnessReport {
        curl_residuals,
        j_recovery_error,
        burgers_square_mass: sq_mass / n_eps.max(1e-30),
    };
    let limit = LimitDisplacement { grid, lo, hi, j, weights, rotation: u, curl_target };
    (limit, report)
}
