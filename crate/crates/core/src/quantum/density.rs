use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::eigen::eigvalsh;
use crate::error::{Error, Result};
use crate::tol;

pub type CMatrix = DMatrix<Complex64>;

/// A Hermitian positive semidefinite matrix with trace at most one.
///
/// Normalized states have unit trace; assemblage elements are allowed any
/// trace in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityMatrix {
    matrix: CMatrix,
}

impl DensityMatrix {
    /// Validates a normalized state.
    pub fn new(matrix: CMatrix) -> Result<Self> {
        let rho = Self::new_unnormalized(matrix)?;
        let tr = rho.trace();
        if (tr - 1.0).abs() > tol::TRACE {
            return Err(Error::validation(
                "unit trace",
                format!("trace is {tr}, expected 1"),
            ));
        }
        Ok(rho)
    }

    /// Validates an unnormalized assemblage element (trace in `[0, 1]`).
    pub fn new_unnormalized(matrix: CMatrix) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(Error::Shape(format!(
                "density matrix must be square and non-empty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::validation("finite entries", "matrix contains NaN or Inf"));
        }
        let herm = hermiticity_defect(&matrix);
        if herm > tol::HERMITIAN {
            return Err(Error::validation(
                "hermiticity",
                format!("max |M - M^dag| = {herm:e}"),
            ));
        }
        let min_eig = eigvalsh(&matrix)[0];
        if min_eig < -tol::PSD {
            return Err(Error::validation(
                "positive semidefiniteness",
                format!("smallest eigenvalue {min_eig:e}"),
            ));
        }
        let tr = matrix.trace().re;
        if !(-tol::TRACE..=1.0 + tol::TRACE).contains(&tr) {
            return Err(Error::validation(
                "trace in [0, 1]",
                format!("trace is {tr}"),
            ));
        }
        Ok(Self { matrix })
    }

    /// Wraps a matrix the caller has constructed to be valid.
    pub fn from_matrix_unchecked(matrix: CMatrix) -> Self {
        Self { matrix }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        eigvalsh(&self.matrix)[0]
    }

    /// `Tr(rho^2)`.
    pub fn purity(&self) -> f64 {
        let n = self.dim();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += self.matrix[(i, j)].norm_sqr();
            }
        }
        acc
    }
}

pub fn hermiticity_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}
