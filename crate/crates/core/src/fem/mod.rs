//! Structured-quad Q1 finite elements.

pub mod assembly;
pub mod dofmap;
pub mod mesh;
pub mod norms;
pub mod quadrature;
pub mod sparse;

pub use assembly::{assemble, assemble_rhs, Assembled, PointCoefficients, QuadPoint};
pub use dofmap::DofMap;
pub use mesh::QuadMesh;
pub use sparse::{solve_cg, CgOptions, CgReport, CsrMatrix, Preconditioner};
