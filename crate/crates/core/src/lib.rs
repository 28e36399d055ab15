//! Growth rates of age-structured cell-division models under periodic
//! control: closed-form Perron and geometric-mean benchmarks, an upwind
//! discretisation with matrix-free monodromy, Floquet and adjoint spectral
//! solvers, a delay-equation cross-check and chronotherapy sweeps.

pub mod chrono;
pub mod closed_form;
pub mod dde;
pub mod error;
pub mod experiments;
pub mod periodic;
pub mod spectral;
pub mod upwind;

pub use error::{Error, Result};
pub use periodic::{ControlSpec, Kind, PeriodicFn};
pub use spectral::{adjoint_eigen, floquet_eigen, AdjointSolution, FloquetSolution, PowerSettings};
pub use upwind::{AgeTail, GridSpec, MultiPhaseModel, OnePhaseModel, Phase, PropagatorFamily, StateVector, Therapy};
