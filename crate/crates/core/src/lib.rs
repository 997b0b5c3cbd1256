//! Radial cubic-type nonlinear Schrodinger equation with a trapping
//! potential: the bifurcating branch of small nonlinear bound states, the
//! modulation decomposition around it, time evolution, and numerical probes
//! of the dispersive estimates that govern relaxation to the branch.

pub mod branch;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod fourier;
pub mod grid;
pub mod hamiltonian;
pub mod linalg;
pub mod modulation;
pub mod nonlinearity;
pub mod pipeline;
pub mod probes;
pub mod sampling;
pub mod snapshot;

pub use error::{Error, Result};
