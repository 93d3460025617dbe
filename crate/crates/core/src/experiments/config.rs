//! JSON experiment configuration: parsing, validation with field-level
//! errors, and conversion into the typed inputs of the other modules.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::MeasureTarget;
use crate::density::{DensityKind, EnergyDensity};
use crate::lattice::{derive_cutoff, DislocationLattice, QuadForm2};
use crate::solve::Tolerances;

use super::regime::RegimeParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("config field `{field}`: {message}")]
    Field { field: &'static str, message: String },
}

fn field_err(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field { field, message: message.into() }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityConfig {
    /// "isotropic" or "dist_squared"
    pub kind: String,
    pub lame_mu: f64,
    #[serde(default)]
    pub lame_lambda: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatticeConfig {
    /// two basis vectors, rows
    pub basis: [[f64; 2]; 2],
    /// enumeration cutoff; derived from the density when omitted
    #[serde(default)]
    pub cutoff_k: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainConfig {
    /// simple polygon, counter-clockwise
    pub polygon: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasureConfig {
    /// only "uniform" is supported
    pub kind: String,
    pub density: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TolerancesConfig {
    #[serde(default = "default_tol_g")]
    pub tol_g: f64,
    #[serde(default = "default_tol_e")]
    pub tol_e: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
}

fn default_tol_g() -> f64 {
    1e-8
}
fn default_tol_e() -> f64 {
    1e-12
}
fn default_max_iterations() -> usize {
    4000
}

impl Default for TolerancesConfig {
    fn default() -> Self {
        TolerancesConfig {
            tol_g: default_tol_g(),
            tol_e: default_tol_e(),
            max_iterations: default_max_iterations(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Config {
    pub density: DensityConfig,
    pub lattice: LatticeConfig,
    pub domain: DomainConfig,
    pub measure: MeasureConfig,
    pub regime: RegimeParams,
    #[serde(default)]
    pub tolerances: TolerancesConfig,
}

impl Config {
    pub fn from_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::from_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match self.density.kind.as_str() {
            "isotropic" | "dist_squared" => {}
            other => {
                return Err(field_err(
                    "density.kind",
                    format!("unknown kind {other:?}, expected \"isotropic\" or \"dist_squared\""),
                ))
            }
        }
        if !(self.density.lame_mu > 0.0) {
            return Err(field_err("density.lame_mu", "must be positive"));
        }
        if self.density.kind == "isotropic" && self.density.lame_lambda < 0.0 {
            return Err(field_err("density.lame_lambda", "must be non-negative"));
        }
        let b = &self.lattice.basis;
        let det = b[0][0] * b[1][1] - b[0][1] * b[1][0];
        if det.abs() <= 1e-14 {
            return Err(field_err("lattice.basis", "basis vectors are linearly dependent"));
        }
        if let Some(k) = self.lattice.cutoff_k {
            if !(k > 0.0) {
                return Err(field_err("lattice.cutoff_k", "must be positive"));
            }
        }
        if self.domain.polygon.len() < 3 {
            return Err(field_err("domain.polygon", "needs at least 3 vertices"));
        }
        let area: f64 = self
            .domain
            .polygon
            .windows(2)
            .map(|w| w[0][0] * w[1][1] - w[1][0] * w[0][1])
            .sum::<f64>()
            + {
                let n = self.domain.polygon.len();
                let (a, z) = (self.domain.polygon[n - 1], self.domain.polygon[0]);
                a[0] * z[1] - z[0] * a[1]
            };
        if area <= 0.0 {
            return Err(field_err(
                "domain.polygon",
                "polygon must be counter-clockwise with positive area",
            ));
        }
        if self.measure.kind != "uniform" {
            return Err(field_err(
                "measure.kind",
                format!("unknown kind {:?}, expected \"uniform\"", self.measure.kind),
            ));
        }
        self.regime
            .validate()
            .map_err(|e| field_err("regime", e.to_string()))?;
        if !(self.tolerances.tol_g > 0.0) {
            return Err(field_err("tolerances.tol_g", "must be positive"));
        }
        if !(self.tolerances.tol_e > 0.0) {
            return Err(field_err("tolerances.tol_e", "must be positive"));
        }
        Ok(())
    }

    pub fn density(&self) -> EnergyDensity {
        let kind = match self.density.kind.as_str() {
            "dist_squared" => DensityKind::DistSquaredSo2,
            _ => DensityKind::IsotropicQuadraticInStrain,
        };
        EnergyDensity::new(kind, self.density.lame_mu, self.density.lame_lambda)
            .expect("validated density")
    }

    pub fn lattice(&self, iquad: &QuadForm2) -> DislocationLattice {
        let b = &self.lattice.basis;
        let basis = [
            Vector2::new(b[0][0], b[0][1]),
            Vector2::new(b[1][0], b[1][1]),
        ];
        let k = match self.lattice.cutoff_k {
            Some(k) => k,
            None => {
                let probe = DislocationLattice::new(basis, 1.0).expect("validated basis");
                derive_cutoff(&probe, iquad).expect("cutoff derivation")
            }
        };
        DislocationLattice::new(basis, k).expect("validated basis")
    }

    pub fn polygon(&self) -> Vec<Vector2<f64>> {
        self.domain.polygon.iter().map(|p| Vector2::new(p[0], p[1])).collect()
    }

    pub fn measure_target(&self) -> MeasureTarget {
        MeasureTarget::Uniform(Vector2::new(self.measure.density[0], self.measure.density[1]))
    }

    pub fn tolerances(&self) -> Tolerances {
        Tolerances {
            tol_g: self.tolerances.tol_g,
            tol_e: self.tolerances.tol_e,
            max_iterations: self.tolerances.max_iterations,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{
        "density": {"kind": "isotropic", "lame_mu": 1.0, "lame_lambda": 1.0},
        "lattice": {"basis": [[1.0, 0.0], [0.0, 1.0]], "cutoff_k": 4.0},
        "domain": {"polygon": [[0,0],[1,0],[1,1],[0,1]]},
        "measure": {"kind": "uniform", "density": [1.0, 0.0]},
        "regime": {"eps": [1e-2, 3e-3, 1e-3], "rule": {"kind": "log"}}
    }"#;

    #[test]
    fn good_config_parses_with_defaults() {
        let cfg = Config::from_str(GOOD).unwrap();
        assert_eq!(cfg.tolerances.tol_g, 1e-8);
        assert_eq!(cfg.regime.eps.len(), 3);
        assert_eq!(cfg.polygon().len(), 4);
    }

    #[test]
    fn field_errors_name_the_field() {
        let bad = GOOD.replace("\"lame_mu\": 1.0", "\"lame_mu\": -2.0");
        let err = Config::from_str(&bad).unwrap_err().to_string();
        assert!(err.contains("density.lame_mu"), "{err}");

        let bad = GOOD.replace("[[1.0, 0.0], [0.0, 1.0]]", "[[1.0, 0.0], [2.0, 0.0]]");
        let err = Config::from_str(&bad).unwrap_err().to_string();
        assert!(err.contains("lattice.basis"), "{err}");

        let bad = GOOD.replace("\"uniform\"", "\"gaussian\"");
        let err = Config::from_str(&bad).unwrap_err().to_string();
        assert!(err.contains("measure.kind"), "{err}");

        let bad = GOOD.replace("[1e-2, 3e-3, 1e-3]", "[1e-3, 1e-2]");
        let err = Config::from_str(&bad).unwrap_err().to_string();
        assert!(err.contains("regime"), "{err}");
    }

    #[test]
    fn parse_errors_carry_location() {
        let err = Config::from_str("{ not json").unwrap_err().to_string();
        assert!(err.contains("line"), "{err}");
    }
}
