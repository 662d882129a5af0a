//! Periodic homogenization on locally periodically deformed perforated
//! domains: geometry, unfolding, Q1 finite elements, fine and cell solvers,
//! macro limits and a verification pipeline.

pub mod cell;
pub mod coefficient;
pub mod config;
pub mod error;
pub mod expr;
pub mod fem;
pub mod geometry;
pub mod lattice;
pub mod macro_limits;
pub mod micro;
pub mod pipeline;
pub mod report;

pub use cell::{solve_cell, tensor_field, CellCorrectors, CellSetup, EffectiveTensorField, Route, TensorCache};
pub use coefficient::Coefficient;
pub use config::RunConfig;
pub use error::{Error, Result};
pub use expr::Expr;
pub use geometry::{CellTransform, EpsTransform, LimitTransform, Microstructure, PorosityField, ReferenceCell};
pub use macro_limits::{solve_homogenized, sweep_epsilon, ConvergenceTable, HomogenizedSolution};
pub use micro::{solve_fine_mapped, solve_substitute, MicroProblem, MicroSolution};
pub use pipeline::{run_oracle, run_pipeline};
pub use report::{emit_plot_data, Check, Golden, VerificationReport};
