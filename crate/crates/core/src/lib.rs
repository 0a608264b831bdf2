//! Cubic nonlinear Schrödinger equation on balanced star graphs.
//!
//! The crate covers the whole pipeline used to study drift of shifted
//! standing waves along a star graph with one incoming and `N - 1` outgoing
//! edges:
//!
//! * [`graph`]: the truncated star graph, its weights and staggered grids;
//! * [`states`]: exact standing waves, travelling solitons and perturbed
//!   initial data;
//! * [`functionals`]: discrete mass, energy, momentum and vertex flux;
//! * [`spectral`]: the linearized operators `L±(ω, a)`, their low-lying
//!   spectrum, the kernel basis at the half-soliton and overlap coefficients;
//! * [`evolve`]: the split-step Crank–Nicolson integrator with ghost-point
//!   vertex closure and perfectly matched layers;
//! * [`modulation`]: extraction of `(θ, ω, a)` by symplectic orthogonality;
//! * [`reduced`]: the finite-dimensional reduced Hamiltonian system;
//! * [`experiment`]: run configurations, presets and on-disk artifacts.
//!
//! Data-parallel loops go through [`par::Exec`], which uses rayon when the
//! `parallel` feature is enabled and runs sequentially otherwise.

pub mod checkpoint;
pub mod error;
pub mod evolve;
pub mod experiment;
pub mod functionals;
pub mod graph;
pub mod modulation;
pub mod par;
pub mod reduced;
pub mod spectral;
pub mod states;

mod banded;

pub use error::{Error, Result};
pub use graph::{GraphFunction, PmlConfig, StarGraph};
pub use num_complex::Complex64;
pub use par::Exec;

/// Library version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
