//! Dislocation structures (integer spans of a planar basis) and the
//! self-energy function: a finite linear program over lattice Burgers
//! vectors weighted by a positive-definite quadratic form.

use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LatticeError {
    #[error("basis is degenerate (determinant {det})")]
    DegenerateBasis { det: f64 },
    #[error("cutoff {cutoff} enumerates more than {limit} lattice points")]
    CutoffTooLarge { cutoff: f64, limit: usize },
    #[error("quadratic form is not positive definite")]
    NotPositiveDefinite,
    #[error("self-energy program infeasible (internal error)")]
    Infeasible,
}

/// Positive-definite quadratic form q(v) = v^T M v on 2-vectors.
#[derive(Debug, Clone, Copy)]
pub struct QuadForm2 {
    pub m: Matrix2<f64>,
}

impl QuadForm2 {
    pub fn new(m: Matrix2<f64>) -> Result<Self, LatticeError> {
        let sym = 0.5 * (m + m.transpose());
        if sym[(0, 0)] <= 0.0 || sym.determinant() <= 0.0 {
            return Err(LatticeError::NotPositiveDefinite);
        }
        Ok(Self { m: sym })
    }

    pub fn isotropic(c: f64) -> Result<Self, LatticeError> {
        Self::new(Matrix2::identity() * c)
    }

    pub fn eval(&self, v: Vector2<f64>) -> f64 {
        v.dot(&(self.m * v))
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let (a, b, c) = (self.m[(0, 0)], self.m[(0, 1)], self.m[(1, 1)]);
        let disc = ((a - c) * (a - c) + 4.0 * b * b).sqrt();
        0.5 * (a + c - disc)
    }
}

/// A dislocation structure: nonzero integer combinations of a planar basis,
/// enumerated up to a certified norm cutoff.
#[derive(Debug, Clone, Copy)]
pub struct DislocationLattice {
    pub basis: [Vector2<f64>; 2],
    pub cutoff_k: f64,
}

impl DislocationLattice {
    pub fn new(basis: [Vector2<f64>; 2], cutoff_k: f64) -> Result<Self, LatticeError> {
        let det = basis[0].perp(&basis[1]);
        if det.abs() < 1e-14 * basis[0].norm().max(basis[1].norm()).powi(2).max(1e-300) {
            return Err(LatticeError::DegenerateBasis { det });
        }
        Ok(Self { basis, cutoff_k })
    }

    pub fn square(cutoff_k: f64) -> Self {
        Self {
            basis: [Vector2::new(1.0, 0.0), Vector2::new(0.0, 1.0)],
            cutoff_k,
        }
    }
}

/// All nonzero integer combinations with Euclidean norm strictly below the
/// cutoff, in lexicographic order of the integer coefficients.
pub fn enumerate_lattice(l: &DislocationLattice) -> Result<Vec<Vector2<f64>>, LatticeError> {
    const LIMIT: usize = 1_000_000;
    let b = Matrix2::from_columns(&l.basis);
    let binv = b.try_inverse().ok_or(LatticeError::DegenerateBasis { det: 0.0 })?;
    // coefficient bounds: m = B^{-1} v, |m_i| <= |row_i(B^{-1})| * K
    let k = l.cutoff_k;
    let m1_max = (binv.row(0).norm() * k).floor() as i64;
    let m2_max = (binv.row(1).norm() * k).floor() as i64;
    let span = (2 * m1_max + 1).max(0) as usize * (2 * m2_max + 1).max(0) as usize;
    if span > 8 * LIMIT {
        return Err(LatticeError::CutoffTooLarge { cutoff: k, limit: LIMIT });
    }
    let mut out = Vec::new();
    for m1 in -m1_max..=m1_max {
        for m2 in -m2_max..=m2_max {
            if m1 == 0 && m2 == 0 {
                continue;
            }
            let v = m1 as f64 * l.basis[0] + m2 as f64 * l.basis[1];
            if v.norm() < k {
                out.push(v);
                if out.len() > LIMIT {
                    return Err(LatticeError::CutoffTooLarge { cutoff: k, limit: LIMIT });
                }
            }
        }
    }
    Ok(out)
}

/// Certified cutoff: K = max_i iquad(u_i) / (c1 * c) with c the smallest
/// eigenvalue of the form and c1 the distance from the origin to the convex
/// hull of {±u_1, ±u_2} (the l1-coefficient norm equivalence constant).
pub fn derive_cutoff(l: &DislocationLattice, iquad: &QuadForm2) -> Result<f64, LatticeError> {
    let c = iquad.min_eigenvalue();
    if c <= 0.0 {
        return Err(LatticeError::NotPositiveDefinite);
    }
    let mut c1 = f64::INFINITY;
    for s1 in [-1.0, 1.0] {
        for s2 in [-1.0, 1.0] {
            let (a, b) = (s1 * l.basis[0], s2 * l.basis[1]);
            // minimize |λ a + (1-λ) b| over λ in [0,1]
            let d = a - b;
            let denom = d.norm_squared();
            let lam = if denom > 0.0 { (-b.dot(&d) / denom).clamp(0.0, 1.0) } else { 0.0 };
            c1 = c1.min((lam * a + (1.0 - lam) * b).norm());
        }
    }
    let num = iquad.eval(l.basis[0]).max(iquad.eval(l.basis[1]));
    Ok(num / (c1 * c))
}

/// Optimal decomposition of a Burgers vector over the lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfEnergyResult {
    pub value: f64,
    pub decomposition: Vec<(Vector2<f64>, f64)>,
}

/// Self-energy: min Σ λ_i iquad(v_i) subject to Σ λ_i v_i = v, λ >= 0,
/// over the enumerated candidate set.
pub fn sigma(
    l: &DislocationLattice,
    iquad: &QuadForm2,
    v: Vector2<f64>,
) -> Result<SelfEnergyResult, LatticeError> {
    if v.norm() == 0.0 {
        return Ok(SelfEnergyResult { value: 0.0, decomposition: Vec::new() });
    }
    let candidates = enumerate_lattice(l)?;
    let costs: Vec<f64> = candidates.iter().map(|&u| iquad.eval(u)).collect();
    let (value, weights) = simplex_2row(&candidates, &costs, v)?;
    let decomposition: Vec<(Vector2<f64>, f64)> = weights
        .into_iter()
        .filter(|&(_, w)| w > 1e-14)
        .map(|(j, w)| (candidates[j], w))
        .collect();
    Ok(SelfEnergyResult { value, decomposition })
}

/// Re-solves with a doubled cutoff and reports the relative value change:
/// the runtime certificate that the cutoff was large enough.
pub fn certify_cutoff(
    l: &DislocationLattice,
    iquad: &QuadForm2,
    probes: &[Vector2<f64>],
) -> Result<f64, LatticeError> {
    let doubled = DislocationLattice { basis: l.basis, cutoff_k: 2.0 * l.cutoff_k };
    let mut worst = 0.0f64;
    for &v in probes {
        let s1 = sigma(l, iquad, v)?;
        let s2 = sigma(&doubled, iquad, v)?;
        let scale = s1.value.abs().max(s2.value.abs()).max(1e-300);
        worst = worst.max((s1.value - s2.value).abs() / scale);
    }
    Ok(worst)
}

#[derive(Debug, Clone)]
pub struct SigmaPropertyReport {
    pub samples: usize,
    pub max_homogeneity_violation: f64,
    pub max_convexity_violation: f64,
    pub max_upper_bound_violation: f64,
}

impl SigmaPropertyReport {
    pub fn pass(&self) -> bool {
        self.max_homogeneity_violation <= 1e-7
            && self.max_convexity_violation <= 1e-9
            && self.max_upper_bound_violation <= 1e-9
    }
}

/// Property suite: positive 1-homogeneity, convexity, and the upper bound
/// sigma(v) <= iquad(v) for lattice vectors, over random samples.
pub fn verify_sigma_properties(
    l: &DislocationLattice,
    iquad: &QuadForm2,
    samples: usize,
    seed: u64,
) -> Result<SigmaPropertyReport, LatticeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = l.basis[0].norm().max(l.basis[1].norm());
    let mut hom = 0.0f64;
    let mut conv = 0.0f64;
    let mut ub = 0.0f64;
    for _ in 0..samples {
        let u = Vector2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)) * scale;
        let v = Vector2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)) * scale;
        let t: f64 = rng.gen_range(0.0..1.0);
        let alpha: f64 = rng.gen_range(0.1..10.0);
        let su = sigma(l, iquad, u)?.value;
        let sv = sigma(l, iquad, v)?.value;
        let s_alpha = sigma(l, iquad, alpha * v)?.value;
        hom = hom.max((s_alpha - alpha * sv).abs() / (alpha * sv).abs().max(1e-300));
        let s_mix = sigma(l, iquad, t * u + (1.0 - t) * v)?.value;
        conv = conv.max(s_mix - (t * su + (1.0 - t) * sv));
        // lattice point near v
        let b = Matrix2::from_columns(&l.basis);
        let coef = b.try_inverse().unwrap() * v;
        let w = coef[0].round() * l.basis[0] + coef[1].round() * l.basis[1];
        if w.norm() > 0.0 {
            let sw = sigma(l, iquad, w)?.value;
            ub = ub.max(sw - iquad.eval(w));
        }
    }
    Ok(SigmaPropertyReport {
        samples,
        max_homogeneity_violation: hom,
        max_convexity_violation: conv,
        max_upper_bound_violation: ub,
    })
}

/// Two-row dense simplex (min c'x, Ax = b, x >= 0), Bland's rule, two-phase.
/// Returns the optimal value and the nonzero weights with column indices.
fn simplex_2row(
    columns: &[Vector2<f64>],
    costs: &[f64],
    b: Vector2<f64>,
) -> Result<(f64, Vec<(usize, f64)>), LatticeError> {
    let n = columns.len();
    if n == 0 {
        return Err(LatticeError::Infeasible);
    }
    let eps = 1e-11 * (b.norm() + 1.0);
    // phase 1: artificial columns sign-matched to b so the initial basic
    // solution is feasible
    let art = [
        Vector2::new(if b[0] >= 0.0 { 1.0 } else { -1.0 }, 0.0),
        Vector2::new(0.0, if b[1] >= 0.0 { 1.0 } else { -1.0 }),
    ];
    let col = |j: usize| -> Vector2<f64> {
        if j < n {
            columns[j]
        } else {
            art[j - n]
        }
    };
    let mut basis = [n, n + 1];
    let run = |basis: &mut [usize; 2], phase1: bool| -> Result<(), LatticeError> {
        for _iter in 0..20_000 {
            let bmat = Matrix2::from_columns(&[col(basis[0]), col(basis[1])]);
            let binv = bmat.try_inverse().ok_or(LatticeError::Infeasible)?;
            let xb = binv * b;
            let cb = Vector2::new(
                phase_cost(basis[0], n, costs, phase1),
                phase_cost(basis[1], n, costs, phase1),
            );
            let y = binv.transpose() * cb;
            // Bland: smallest-index column with negative reduced cost
            let mut entering = None;
            let jmax = if phase1 { n + 2 } else { n };
            for j in 0..jmax {
                if j == basis[0] || j == basis[1] {
                    continue;
                }
                let rc = phase_cost(j, n, costs, phase1) - y.dot(&col(j));
                if rc < -1e-10 {
                    entering = Some(j);
                    break;
                }
            }
            let Some(j) = entering else { return Ok(()) };
            let d = binv * col(j);
            let mut leave = None;
            let mut best_ratio = f64::INFINITY;
            for i in 0..2 {
                if d[i] > 1e-12 {
                    let ratio = xb[i] / d[i];
                    if ratio < best_ratio - 1e-15
                        || (ratio < best_ratio + 1e-15
                            && leave.map_or(true, |li: usize| basis[i] < basis[li]))
                    {
                        best_ratio = ratio;
                        leave = Some(i);
                    }
                }
            }
            let Some(i) = leave else {
                // unbounded: impossible for nonnegative costs
                return Err(LatticeError::Infeasible);
            };
            basis[i] = j;
        }
        Err(LatticeError::Infeasible)
    };
    run(&mut basis, true)?;
    // feasibility check: artificial mass must vanish
    let bmat = Matrix2::from_columns(&[col(basis[0]), col(basis[1])]);
    let binv = bmat.try_inverse().ok_or(LatticeError::Infeasible)?;
    let xb = binv * b;
    let art_mass: f64 = (0..2)
        .map(|i| if basis[i] >= n { xb[i].abs() } else { 0.0 })
        .sum();
    if art_mass > eps {
        return Err(LatticeError::Infeasible);
    }
    // drive any zero-level artificial out of the basis
    for i in 0..2 {
        if basis[i] >= n {
            let bmat = Matrix2::from_columns(&[col(basis[0]), col(basis[1])]);
            let binv = bmat.try_inverse().ok_or(LatticeError::Infeasible)?;
            for j in 0..n {
                if j == basis[0] || j == basis[1] {
                    continue;
                }
                let d = binv * col(j);
                if d[i].abs() > 1e-9 {
                    basis[i] = j;
                    break;
                }
            }
        }
    }
    run(&mut basis, false)?;
    let bmat = Matrix2::from_columns(&[col(basis[0]), col(basis[1])]);
    let binv = bmat.try_inverse().ok_or(LatticeError::Infeasible)?;
    let xb = binv * b;
    let mut weights = Vec::new();
    let mut value = 0.0;
    for i in 0..2 {
        if basis[i] < n && xb[i] > 0.0 {
            weights.push((basis[i], xb[i]));
            value += costs[basis[i]] * xb[i];
        }
    }
    weights.sort_unstable_by_key(|&(j, _)| j);
    Ok((value, weights))
}

fn phase_cost(j: usize, n: usize, costs: &[f64], phase1: bool) -> f64 {
    if phase1 {
        if j >= n {
            1.0
        } else {
            0.0
        }
    } else if j >= n {
        // artificials excluded in phase 2; cost only read if still basic at
        // zero level, where it cannot affect the objective
        0.0
    } else {
        costs[j]
    }
}
