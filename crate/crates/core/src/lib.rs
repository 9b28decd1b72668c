//! Adaptive finite elements in 2D driven by an edge-based residual
//! estimator, with newest-vertex bisection, the modified maximum marking
//! criterion, and goal-oriented marking strategies.
//!
//! The crate is organized along the adaptive loop:
//!
//! * [`mesh`] — conforming triangulations, NVB refinement, edge tails
//! * [`problem`] — region-wise PDE data and built-in benchmark problems
//! * [`fem`] — Lagrange P1/P2 assembly, sparse solves, energies, goals
//! * [`estimator`] — edge indicators, data resolution, oscillations
//! * [`marking`] — maximum and Dörfler style marking criteria
//! * [`driver`] — the adaptive loops and convergence records

pub mod driver;
pub mod estimator;
pub(crate) mod exec;
pub mod fem;
pub mod marking;
pub mod mesh;
pub mod problem;
pub mod quadrature;


pub use driver::{run_afem, run_goafem, AdaptiveRecord, RunConfig, Strategy};
pub use mesh::{Lineage, MarkSet, Mesh};
pub use problem::{builtin_problem, ProblemName, ProblemSpec};
