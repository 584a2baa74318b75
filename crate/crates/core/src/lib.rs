//! Finite-time joint estimation of states and disturbances for triangular
//! nonlinear systems with modulating functions.
//!
//! The measured output is multiplied by smooth functions that vanish with
//! their derivatives at both ends of a window; integration by parts moves every
//! derivative onto those functions, so state and disturbance coefficients
//! follow from small linear least-squares problems with no initial condition.
//!
//! * [`signals`]: grids, sampled signals, quadrature, noise, error metrics, CSV.
//! * [`modfun`]: polynomial modulating functions and the modulation operator.
//! * [`basis`]: polynomial expansion bases and the Gram matrix.
//! * [`estimator`]: state and disturbance estimation, offline and sliding-window.
//! * [`systems`]: triangular systems, RK4 simulation, benchmarks, super-twisting baseline.

pub mod basis;
pub mod estimator;
pub mod modfun;
pub mod signals;
pub mod systems;

pub use basis::{BasisFamily, BasisKind, GramMatrix};
pub use estimator::{
    EstimateSeries, Estimates, Estimator, EstimatorConfig, EstimatorError, FamilyConfig,
    Formulation, Scheme, Target,
};
pub use modfun::{ModFunSet, PolyModFun};
pub use signals::{NoiseSpec, SampledSignal, TimeGrid};
pub use systems::{StoConfig, TriangularSystem};
