//! Linear-systems core.
//!
//! State-space models, biorthonormal eigensystems, participation factors,
//! port-selected transfer matrices and their residues, eigenvalue
//! sensitivities to inverse transfer matrices, and exact-discretization
//! time-domain simulation.

mod eigen;
mod ports;
mod simulate;
mod statespace;

pub use eigen::{eigen_sensitivity_to_a, eigendecompose, participation_matrix, EigenSystem};
pub use ports::{
    ctrb_obsv_flags, det_h_check, gma_sensitivity, residue_at_mode, subsystem_transfer, DetTrend,
    PortSelection, ResidueMatrix,
};
pub(crate) use ports::residue_with;
pub use simulate::{simulate, InputSignal, Trajectory};
pub use statespace::StateSpace;

use thiserror::Error;

/// Relative tolerance under which two eigenvalues count as the same mode.
pub const SIMPLE_MODE_RTOL: f64 = 1e-7;

/// Relative tolerance for the controllability/observability tests.
pub const CTRB_OBSV_RTOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("duplicate {kind} label `{label}`")]
    DuplicateLabel { kind: &'static str, label: String },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("empty system (n = 0)")]
    Empty,
    #[error("matrix is non-diagonalizable within tolerance ({0})")]
    NonDiagonalizable(String),
    #[error("eigenvalue computation did not converge")]
    NoConvergence,
    #[error("evaluation at pole s = {re:+.6e}{im:+.6e}j")]
    AtPole { re: f64, im: f64 },
    #[error("mode {0} is not simple (another eigenvalue lies within tolerance)")]
    NonSimpleMode(usize),
    #[error("mode index {index} out of range (n = {n})")]
    ModeIndex { index: usize, n: usize },
    #[error(
        "mode {mode} is not {what} through the selected ports: a nonzero \
         psi_i*B1 and C1*phi_i are both required for |H(lambda_i)| = 0"
    )]
    NotControllableObservable { mode: usize, what: &'static str },
    #[error("port selection: {0}")]
    Ports(String),
    #[error("invalid simulation setup: {0}")]
    Simulation(String),
}
