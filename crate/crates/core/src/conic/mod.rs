//! Small dense convex solvers: a primal-dual interior-point method for
//! convex QCQPs and an operator-splitting method for semidefinite programs
//! with (optionally) quadratic objectives.
//!
//! Complex problems enter both solvers through real stacking: a complex
//! vector becomes `[re; im]`, a Hermitian block is vectorised with
//! [`hvec`] so that Frobenius inner products are preserved.

mod qcqp;
mod sdp;
mod vec;

pub use qcqp::{ConvexQcqp, QcqpSolution, Quadratic};
pub use sdp::{BlockValue, Cone, SdpProblem, SdpSettings, SdpSolution};
pub use vec::{hmat, hvec, hvec_len, smat, svec, svec_len};

use nalgebra::{DMatrix, SymmetricEigen};

/// Default stopping tolerance for both solvers.
pub const DEFAULT_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_MAX_ITERS: usize = 50_000;

/// Outcome reported by both solvers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    IterationLimit,
    Infeasible,
}

impl SolveStatus {
    pub fn is_converged(self) -> bool {
        self == SolveStatus::Converged
    }
}

/// Smallest eigenvalue of a symmetric matrix (0 for empty input).
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Rejects matrices whose smallest eigenvalue is below −10⁻⁹·‖M‖.
pub(crate) fn check_psd(m: &DMatrix<f64>) -> crate::Result<()> {
    let sym = (m + m.transpose()) * 0.5;
    let lam = min_eigenvalue(&sym);
    let scale = sym.norm().max(1.0);
    if lam < -1e-9 * scale {
        Err(crate::Error::NotPsd { min_eigenvalue: lam })
    } else {
        Ok(())
    }
}
