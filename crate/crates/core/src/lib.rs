//! Numerical laboratory for a geometric model of edge dislocations:
//! model manifolds with closed frame fields, nonlinear elastic energies,
//! quadratic cell problems, lattice self-energies, and desk-scale
//! scaling experiments.

pub mod assembly;
pub mod cell;
pub mod density;
pub mod fem;
pub mod geometry;
pub mod lattice;
pub mod mesh;
pub mod experiments;
pub mod io;
pub mod solve;
