//! Minimizing movements along a family of energies `φ_ε` at time scale `τ`.
//!
//! The crate runs the discrete variational scheme
//! `u^{i+1} ∈ argmin φ_ε(v) + d²(v, u^i)/(2τ)`, builds De Giorgi's
//! variational interpolant, estimates descending slopes and metric
//! derivatives, and checks the energy-dissipation identity, the a-priori
//! bounds, and the curve-of-maximal-slope inequality on the results.

pub mod cli;
pub mod diagnostics;
pub mod energy;
pub mod error;
pub mod io;
pub mod metric;
pub mod prox;
pub mod quadrature;
pub mod regimes;
pub mod scheme;
pub mod slope;

pub use energy::{EnergyKind, EnergySpec};
pub use error::{Error, Result};
pub use metric::{Point, SpaceDescriptor};
