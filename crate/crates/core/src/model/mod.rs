//! Dicke Hamiltonian: parameters, bases, block matrices and spectra.

pub mod basis;
pub mod displaced;
pub mod hamiltonian;
pub mod params;
pub mod spectrum;

pub use basis::{build_basis, BasisState, FockBasis};
pub use displaced::{DisplacedBasis, DisplacedState};
pub use hamiltonian::{block_hamiltonian, build_hamiltonian};
pub use params::{BasisKind, ModelParams, Parity};
pub use spectrum::{
    compute_spectrum, converged_count, diagonalize, ground_energy_intensive, ConvergenceSettings,
    SpectralData,
};
