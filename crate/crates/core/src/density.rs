//! Elastic energy densities and their quadratic forms at the identity.
//!
//! Two frame-indifferent densities are provided: the squared distance to
//! SO(2), and an isotropic density quadratic in the Biot strain. Both are
//! closed-form functions of the invariants |A|^2 and
//! s(A) = sqrt((a11+a22)^2 + (a21-a12)^2), which makes gradients exact.

use nalgebra::Matrix2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DensityError {
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("lame_mu must be positive, got {0}")]
    NonPositiveMu(f64),
    #[error("lame_lambda must exceed -lame_mu (got lambda={lambda}, mu={mu})")]
    LambdaTooSmall { lambda: f64, mu: f64 },
    #[error("Poisson ratio 1/2 (incompressible) is not supported")]
    Incompressible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensityKind {
    DistSquaredSo2,
    IsotropicQuadraticInStrain,
}

/// A frame-indifferent elastic energy density W on 2x2 matrices.
#[derive(Debug, Clone, Copy)]
pub struct EnergyDensity {
    pub kind: DensityKind,
    lame_mu: f64,
    lame_lambda: f64,
}

/// s(A) = sum of singular values for det A >= 0, |s1 - s2| otherwise.
/// Equals max over rotations U of tr(U^T A).
pub fn rotation_trace(a: &Matrix2<f64>) -> f64 {
    let t = a[(0, 0)] + a[(1, 1)];
    let u = a[(1, 0)] - a[(0, 1)];
    t.hypot(u)
}

/// Frobenius distance from A to SO(2).
///
/// dist^2 = |A|^2 + 2 - 2 s(A), valid for any A (including det A <= 0).
pub fn dist_to_rotations(a: &Matrix2<f64>) -> f64 {
    let d2 = a.norm_squared() + 2.0 - 2.0 * rotation_trace(a);
    d2.max(0.0).sqrt()
}

/// Rotation U closest to A in the Frobenius norm (Procrustes).
/// Falls back to the identity when the problem is degenerate (s(A) = 0).
pub fn nearest_rotation(a: &Matrix2<f64>) -> Matrix2<f64> {
    let t = a[(0, 0)] + a[(1, 1)];
    let u = a[(1, 0)] - a[(0, 1)];
    let s = t.hypot(u);
    if s <= f64::EPSILON * (1.0 + a.norm()) {
        return Matrix2::identity();
    }
    let (c, w) = (t / s, u / s);
    Matrix2::new(c, -w, w, c)
}

impl EnergyDensity {
    pub fn dist_squared(lame_mu: f64) -> Result<Self, DensityError> {
        Self::new(DensityKind::DistSquaredSo2, lame_mu, 0.0)
    }

    pub fn isotropic(lame_mu: f64, lame_lambda: f64) -> Result<Self, DensityError> {
        Self::new(DensityKind::IsotropicQuadraticInStrain, lame_mu, lame_lambda)
    }

    pub fn new(kind: DensityKind, lame_mu: f64, lame_lambda: f64) -> Result<Self, DensityError> {
        if !(lame_mu > 0.0) {
            return Err(DensityError::NonPositiveMu(lame_mu));
        }
        if !(lame_lambda > -lame_mu) {
            return Err(DensityError::LambdaTooSmall { lambda: lame_lambda, mu: lame_mu });
        }
        let d = Self { kind, lame_mu, lame_lambda };
        if (d.poisson() - 0.5).abs() < 1e-14 {
            return Err(DensityError::Incompressible);
        }
        Ok(d)
    }

    pub fn lame_mu(&self) -> f64 {
        self.lame_mu
    }

    pub fn lame_lambda(&self) -> f64 {
        match self.kind {
            DensityKind::DistSquaredSo2 => 0.0,
            DensityKind::IsotropicQuadraticInStrain => self.lame_lambda,
        }
    }

    /// Plane-strain Poisson ratio lambda / (2 (lambda + mu)).
    pub fn poisson(&self) -> f64 {
        let (mu, la) = (self.lame_mu(), self.lame_lambda());
        la / (2.0 * (la + mu))
    }

    /// Effective (mu, lambda) of the density as a function of invariants:
    /// W(A) = mu (|A|^2 - 2 s + 2) + (lambda/2)(s - 2)^2.
    fn coeffs(&self) -> (f64, f64) {
        match self.kind {
            DensityKind::DistSquaredSo2 => (1.0, 0.0),
            DensityKind::IsotropicQuadraticInStrain => (self.lame_mu, self.lame_lambda),
        }
    }

    pub fn eval(&self, a: &Matrix2<f64>) -> Result<f64, DensityError> {
        if !a.iter().all(|x| x.is_finite()) {
            return Err(DensityError::NonFinite);
        }
        let (mu, la) = self.coeffs();
        let s = rotation_trace(a);
        let dist2 = (a.norm_squared() + 2.0 - 2.0 * s).max(0.0);
        Ok(mu * dist2 + 0.5 * la * (s - 2.0) * (s - 2.0))
    }

    /// dW/dA as a 2x2 matrix.
    pub fn gradient(&self, a: &Matrix2<f64>) -> Matrix2<f64> {
        let (mu, la) = self.coeffs();
        let t = a[(0, 0)] + a[(1, 1)];
        let u = a[(1, 0)] - a[(0, 1)];
        let s = t.hypot(u);
        // grad s = (t I + u J) / s with J = [[0,-1],[1,0]].
        let grad_s = if s > 1e-300 {
            Matrix2::new(t / s, -u / s, u / s, t / s)
        } else {
            Matrix2::identity()
        };
        2.0 * mu * a + (la * (s - 2.0) - 2.0 * mu) * grad_s
    }

    /// Half the second derivative of W at the identity, as a quadratic form.
    pub fn hessian_at_identity(&self) -> QuadraticForm {
        let (mu, la) = self.coeffs();
        QuadraticForm { mu, lambda: la }
    }
}

/// The quadratic form W(A) = mu |sym A|^2 + (lambda/2) (tr A)^2.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct QuadraticForm {
    pub mu: f64,
    pub lambda: f64,
}

impl QuadraticForm {
    pub fn apply(&self, a: &Matrix2<f64>) -> f64 {
        let sym = 0.5 * (a + a.transpose());
        self.mu * sym.norm_squared() + 0.5 * self.lambda * a.trace() * a.trace()
    }

    /// The stress D^2 W|_I (A, .) as a matrix: 2 mu sym A + lambda tr(A) I.
    pub fn stress(&self, a: &Matrix2<f64>) -> Matrix2<f64> {
        let sym = 0.5 * (a + a.transpose());
        2.0 * self.mu * sym + self.lambda * a.trace() * Matrix2::identity()
    }

    pub fn poisson(&self) -> f64 {
        self.lambda / (2.0 * (self.lambda + self.mu))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { mu: s * self.mu, lambda: s * self.lambda }
    }
}
