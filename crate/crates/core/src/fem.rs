//! Minimal P1 finite-element kernel: CSR sparse matrices, a Jacobi
//! preconditioned conjugate-gradient solver, and Poisson assembly with
//! Dirichlet or pure-Neumann boundary handling.

use crate::mesh::TriMesh;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FemError {
    #[error("conjugate gradient failed to converge: residual {residual} after {iters} iterations")]
    NoConvergence { residual: f64, iters: usize },
    #[error("singular system: {0}")]
    Singular(String),
}

/// Compressed sparse row matrix (symmetric matrices stored in full).
#[derive(Debug, Clone)]
pub struct Csr {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl Csr {
    /// Build from (row, col, value) triplets, summing duplicates.
    pub fn from_triplets(n: usize, triplets: &mut Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut indices = Vec::new();
        let mut data: Vec<f64> = Vec::new();
        let mut rows = Vec::new();
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in triplets.iter() {
            if last == Some((r, c)) {
                *data.last_mut().unwrap() += v;
            } else {
                rows.push(r);
                indices.push(c);
                data.push(v);
                last = Some((r, c));
            }
        }
        let mut indptr = vec![0usize; n + 1];
        for &r in &rows {
            indptr[r + 1] += 1;
        }
        for r in 0..n {
            indptr[r + 1] += indptr[r];
        }
        Csr { n, indptr, indices, data }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for r in 0..self.n {
            let mut acc = 0.0;
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.data[k] * x[self.indices[k]];
            }
            y[r] = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for r in 0..self.n {
            for k in self.indptr[r]..self.indptr[r + 1] {
                if self.indices[k] == r {
                    d[r] += self.data[k];
                }
            }
        }
        d
    }

    /// Impose u[i] = value for constrained dofs by row/column elimination;
    /// modifies the matrix in place and the right-hand side accordingly.
    pub fn apply_dirichlet(&mut self, constrained: &[(usize, f64)], rhs: &mut [f64]) {
        let mut fixed = vec![f64::NAN; self.n];
        for &(i, v) in constrained {
            fixed[i] = v;
        }
        // move known values to the rhs, zero coupling entries
        for r in 0..self.n {
            if fixed[r].is_nan() {
                for k in self.indptr[r]..self.indptr[r + 1] {
                    let c = self.indices[k];
                    if !fixed[c].is_nan() {
                        rhs[r] -= self.data[k] * fixed[c];
                        self.data[k] = 0.0;
                    }
                }
            } else {
                for k in self.indptr[r]..self.indptr[r + 1] {
                    self.data[k] = if self.indices[k] == r { 1.0 } else { 0.0 };
                }
                rhs[r] = fixed[r];
            }
        }
    }
}

/// Jacobi-preconditioned conjugate gradient for SPD systems.
pub fn cg(a: &Csr, b: &[f64], tol_rel: f64, max_iter: usize) -> Result<Vec<f64>, FemError> {
    let n = a.n;
    let diag = a.diagonal();
    let minv: Vec<f64> = diag
        .iter()
        .map(|&d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let bnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut z: Vec<f64> = r.iter().zip(&minv).map(|(ri, mi)| ri * mi).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        a.matvec(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return Err(FemError::Singular(format!("non-positive curvature at iter {it}")));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm <= tol_rel * bnorm {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] * minv[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    Err(FemError::NoConvergence { residual: rnorm / bnorm, iters: max_iter })
}

/// P1 stiffness matrix for -div(c grad u) with piecewise-constant
/// coefficient `coeff` (pass None for unit coefficient).
pub fn stiffness(mesh: &TriMesh, coeff: Option<&[f64]>) -> Csr {
    let mut triplets = Vec::with_capacity(9 * mesh.n_triangles());
    for t in 0..mesh.n_triangles() {
        let g = mesh.basis_gradients(t);
        let area = mesh.area(t);
        let c = coeff.map_or(1.0, |cs| cs[t]);
        let tri = mesh.triangles[t];
        for i in 0..3 {
            for j in 0..3 {
                triplets.push((tri[i], tri[j], c * area * g[i].dot(&g[j])));
            }
        }
    }
    Csr::from_triplets(mesh.n_vertices(), &mut triplets)
}

/// Load vector for a piecewise-constant source density per element.
pub fn load_from_element_source(mesh: &TriMesh, source: &[f64]) -> Vec<f64> {
    let mut b = vec![0.0; mesh.n_vertices()];
    for t in 0..mesh.n_triangles() {
        let w = source[t] * mesh.area(t) / 3.0;
        for &v in &mesh.triangles[t] {
            b[v] += w;
        }
    }
    b
}

/// Boundary load for Neumann data: adds ∫_edge g v ds for each oriented
/// boundary edge with constant flux density `g` on that edge.
pub fn add_neumann_load(mesh: &TriMesh, edge_flux: &[((usize, usize), f64)], b: &mut [f64]) {
    for &((u, v), g) in edge_flux {
        let len = (mesh.vertices[v] - mesh.vertices[u]).norm();
        b[u] += 0.5 * g * len;
        b[v] += 0.5 * g * len;
    }
}

/// Solve the Dirichlet Poisson problem -Δu = f with u = g on the boundary.
/// `source` is per-element; `boundary` maps boundary vertices to values.
pub fn solve_poisson_dirichlet(
    mesh: &TriMesh,
    source: &[f64],
    boundary: &[(usize, f64)],
    tol: f64,
) -> Result<Vec<f64>, FemError> {
    let mut a = stiffness(mesh, None);
    let mut b = load_from_element_source(mesh, source);
    a.apply_dirichlet(boundary, &mut b);
    cg(&a, &b, tol, 20 * mesh.n_vertices() + 1000)
}

/// Solve the pure-Neumann Poisson problem -Δu = f, du/dn = g, with the
/// mean-zero gauge imposed by projection. The data must be compatible
/// (∫f + ∮g = 0); the residual mass is removed uniformly before solving.
pub fn solve_poisson_neumann(
    mesh: &TriMesh,
    source: &[f64],
    edge_flux: &[((usize, usize), f64)],
    tol: f64,
) -> Result<Vec<f64>, FemError> {
    let a = stiffness(mesh, None);
    let mut b = load_from_element_source(mesh, source);
    add_neumann_load(mesh, edge_flux, &mut b);
    // remove the incompatible mass (lumped-mass weighting) so the system is
    // solvable; gauge-fix by mean-zero projection inside CG iterates
    let masses = lumped_masses(mesh);
    let total_mass: f64 = masses.iter().sum();
    let defect: f64 = b.iter().sum::<f64>() / total_mass;
    for i in 0..mesh.n_vertices() {
        b[i] -= defect * masses[i];
    }
    let mut x = cg_projected(&a, &b, tol, 20 * mesh.n_vertices() + 1000)?;
    let mean: f64 =
        x.iter().zip(&masses).map(|(u, m)| u * m).sum::<f64>() / total_mass;
    for u in x.iter_mut() {
        *u -= mean;
    }
    Ok(x)
}

/// Lumped (row-sum) mass vector of the P1 mass matrix.
pub fn lumped_masses(mesh: &TriMesh) -> Vec<f64> {
    let mut m = vec![0.0; mesh.n_vertices()];
    for t in 0..mesh.n_triangles() {
        let w = mesh.area(t) / 3.0;
        for &v in &mesh.triangles[t] {
            m[v] += w;
        }
    }
    m
}

/// CG on the orthogonal complement of constants (for singular Neumann
/// systems): iterates are projected to zero mean.
fn cg_projected(a: &Csr, b: &[f64], tol_rel: f64, max_iter: usize) -> Result<Vec<f64>, FemError> {
    let n = a.n;
    let project = |v: &mut Vec<f64>| {
        let mean: f64 = v.iter().sum::<f64>() / n as f64;
        for x in v.iter_mut() {
            *x -= mean;
        }
    };
    let diag = a.diagonal();
    let minv: Vec<f64> = diag
        .iter()
        .map(|&d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    project(&mut r);
    let bnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut z: Vec<f64> = r.iter().zip(&minv).map(|(ri, mi)| ri * mi).collect();
    project(&mut z);
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];
    for _ in 0..max_iter {
        a.matvec(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return Err(FemError::Singular("non-positive curvature".into()));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        project(&mut r);
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm <= tol_rel * bnorm {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] * minv[i];
        }
        project(&mut z);
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    Err(FemError::NoConvergence { residual: rnorm / bnorm, iters: max_iter })
}
