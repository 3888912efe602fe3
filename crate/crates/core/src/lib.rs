//! Exact diagonalization toolkit for NMon-family superconducting qubits:
//! charge-basis Hamiltonians, converged spectra, code-space figures of merit,
//! parameter sweeps and flux-drive dynamics.

pub mod circuit;
pub mod dynamics;
pub mod error;
pub mod metrics;
pub mod spectral;
pub mod sweeps;

pub use circuit::{build_d_flux, build_d_ng, build_hamiltonian, ChargeOperator, CircuitSpec, Preset};
pub use error::{Error, Result};
pub use metrics::{Analysis, AnalysisOptions, CodeSpace, CodeSpaceOptions};
pub use spectral::{converged_solution, diagonalize, Channel, EigenSolution, EigenbasisOperator};
