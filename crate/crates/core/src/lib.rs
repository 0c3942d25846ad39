//! Localized orthogonal decomposition for quasilinear elliptic problems on
//! the unit square: P1 finite elements, patch-local correctors computed at a
//! fixed linearization point, and Galerkin / Petrov-Galerkin coarse solves.
//!
//! Everything numerical is generic over [`scalar::Scalar`]; the aliases below
//! fix the scalar to `f64`.

pub mod error;
pub mod fem;
pub mod linalg;
pub mod mesh;
pub mod scalar;
pub mod interpolation;
pub mod coefficients;
pub mod corrector;
pub mod solver;
pub mod indicators;
pub mod experiments;

pub use error::{LodError, Result};
pub use scalar::Scalar;

pub type Mesh = mesh::TriMesh<f64>;
pub type MeshPair = mesh::NestedPair<f64>;
pub type Interpolation = interpolation::InterpolationOperator<f64>;
pub type Coefficient = fem::MatrixField<f64>;
pub type Correctors = corrector::CorrectorSet<f64>;
pub type CorrectorCache = corrector::CorrectorCache<f64>;
pub type Solution = solver::SolveResult<f64>;
pub type Problem<'a> = solver::LodProblem<'a, f64>;
pub type Strategy = solver::LinearizationStrategy<f64>;
pub type Measures<'a> = indicators::ErrorMeasures<'a, f64>;
