//! Validated state types: pure-state amplitude vectors and density matrices.

use num_complex::Complex64 as C64;

use crate::error::{QcError, Result};
use crate::linalg::{self, CMatrix};

/// Tolerance on the squared norm of a pure state exceeding one.
pub const NORM_EPS: f64 = 1e-9;
/// Elementwise Hermiticity tolerance for density matrices.
pub const HERMITICITY_EPS: f64 = 1e-10;
/// How negative a density-matrix eigenvalue may be before rejection.
pub const EIGENVALUE_EPS: f64 = 1e-9;

/// Complex amplitude vector over the interaction-picture energy basis.
///
/// Under conditioned (selective) evolution the squared norm is the running
/// probability of the readout, so it lies in `[0, 1]`; the norm-preserving
/// stochastic propagator keeps it at one up to integrator order.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    amplitudes: Vec<C64>,
}

impl QuantumState {
    pub fn new(amplitudes: Vec<C64>) -> Result<Self> {
        if amplitudes.len() < 2 {
            return Err(QcError::InvalidSpec(format!(
                "state dimension must be at least 2, got {}",
                amplitudes.len()
            )));
        }
        if amplitudes.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(QcError::InvalidSpec("state amplitudes must be finite".into()));
        }
        let n2 = linalg::norm_sq(&amplitudes);
        if n2 > 1.0 + NORM_EPS {
            return Err(QcError::InvalidSpec(format!(
                "squared norm {n2} exceeds 1 beyond tolerance"
            )));
        }
        Ok(QuantumState { amplitudes })
    }

    /// Basis state |n> of the given dimension.
    pub fn basis_state(dim: usize, n: usize) -> Result<Self> {
        if n >= dim {
            return Err(QcError::InvalidSpec(format!("basis index {n} out of range for dim {dim}")));
        }
        let mut amplitudes = vec![C64::new(0.0, 0.0); dim];
        amplitudes[n] = C64::new(1.0, 0.0);
        Self::new(amplitudes)
    }

    /// Normalized two-level superposition with |C_1|^2 = p1.
    pub fn two_level_superposition(p1: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p1) {
            return Err(QcError::InvalidSpec(format!("population {p1} outside [0, 1]")));
        }
        Self::new(vec![C64::new(p1.sqrt(), 0.0), C64::new((1.0 - p1).sqrt(), 0.0)])
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn norm_sq(&self) -> f64 {
        linalg::norm_sq(&self.amplitudes)
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm_sq().sqrt();
        if n <= 0.0 {
            return Err(QcError::Precondition("cannot normalize the zero state".into()));
        }
        Ok(QuantumState {
            amplitudes: self.amplitudes.iter().map(|c| c / n).collect(),
        })
    }

    /// Population |C_n|^2 / ||C||^2 of level `n`.
    pub fn population(&self, n: usize) -> f64 {
        self.amplitudes[n].norm_sqr() / self.norm_sq()
    }

    /// Projector |psi><psi| (not normalized).
    pub fn projector(&self) -> CMatrix {
        CMatrix::outer(&self.amplitudes, &self.amplitudes)
    }
}

/// Hermitian positive-semidefinite matrix with trace at most one.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    elements: CMatrix,
}

impl DensityMatrix {
    pub fn new(elements: CMatrix) -> Result<Self> {
        if elements.dim() < 2 {
            return Err(QcError::InvalidSpec("density matrix dimension must be at least 2".into()));
        }
        if elements.data().iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(QcError::InvalidSpec("density matrix entries must be finite".into()));
        }
        let h = elements.hermiticity_defect();
        if h > HERMITICITY_EPS {
            return Err(QcError::InvalidSpec(format!("hermiticity defect {h} above tolerance")));
        }
        let tr = elements.trace().re;
        if !(-NORM_EPS..=1.0 + NORM_EPS).contains(&tr) {
            return Err(QcError::InvalidSpec(format!("trace {tr} outside [0, 1]")));
        }
        let min_eig = elements
            .eigenvalues_hermitian()
            .first()
            .copied()
            .unwrap_or(0.0);
        if min_eig < -EIGENVALUE_EPS {
            return Err(QcError::InvalidSpec(format!(
                "negative eigenvalue {min_eig} below tolerance"
            )));
        }
        Ok(DensityMatrix { elements })
    }

    pub fn from_pure(state: &QuantumState) -> Result<Self> {
        Self::new(state.projector())
    }

    pub fn dim(&self) -> usize {
        self.elements.dim()
    }

    pub fn elements(&self) -> &CMatrix {
        &self.elements
    }

    pub fn trace(&self) -> f64 {
        self.elements.trace().re
    }

    pub fn purity(&self) -> f64 {
        self.elements.matmul(&self.elements).trace().re
    }

    pub fn entry(&self, i: usize, j: usize) -> C64 {
        self.elements[(i, j)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_dimension_one() {
        assert!(QuantumState::new(vec![C64::new(1.0, 0.0)]).is_err());
    }

    #[test]
    fn rejects_overnormalized_state() {
        assert!(QuantumState::new(vec![C64::new(1.0, 0.0), C64::new(0.1, 0.0)]).is_err());
        // Shrunk norms are fine: selective evolution only loses mass.
        assert!(QuantumState::new(vec![C64::new(0.3, 0.0), C64::new(0.1, 0.0)]).is_ok());
    }

    #[test]
    fn rejects_non_hermitian_density() {
        let mut m = CMatrix::zeros(2);
        m[(0, 0)] = C64::new(0.5, 0.0);
        m[(1, 1)] = C64::new(0.5, 0.0);
        m[(0, 1)] = C64::new(0.2, 0.0);
        m[(1, 0)] = C64::new(0.3, 0.0);
        assert!(DensityMatrix::new(m).is_err());
    }

    #[test]
    fn rejects_negative_eigenvalue() {
        let mut m = CMatrix::zeros(2);
        m[(0, 0)] = C64::new(0.1, 0.0);
        m[(1, 1)] = C64::new(0.1, 0.0);
        m[(0, 1)] = C64::new(0.4, 0.0);
        m[(1, 0)] = C64::new(0.4, 0.0);
        assert!(DensityMatrix::new(m).is_err());
    }

    #[test]
    fn pure_state_density_is_valid() {
        let psi = QuantumState::two_level_superposition(0.3).unwrap();
        let rho = DensityMatrix::from_pure(&psi).unwrap();
        assert!((rho.trace() - 1.0).abs() < 1e-12);
        assert!((rho.purity() - 1.0).abs() < 1e-12);
    }
}
