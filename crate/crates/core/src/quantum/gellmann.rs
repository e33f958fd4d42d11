//! Generalized Gell-Mann basis of Hermitian d x d matrices.
//!
//! Ordering, for a dimension `d`:
//!
//! 1. `G_0 = sqrt(2/d) I`
//! 2. symmetric pairs `|j><k| + |k><j|` for `j < k`, lexicographic in `(j, k)`
//! 3. antisymmetric pairs `-i|j><k| + i|k><j|` for `j < k`, same order
//! 4. diagonal `sqrt(2/(l(l+1))) (sum_{j<l} |j><j| - l |l><l|)` for `l = 1..d-1`
//!
//! With this order `d = 2` gives `(I, sigma_x, sigma_y, sigma_z)` and every
//! pair satisfies `Tr(G_mu G_nu) = 2 delta_mu_nu`.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GellMannBasis {
    dim: usize,
    matrices: Vec<DMatrix<Complex64>>,
}

/// Builds the d^2 Gell-Mann matrices for dimension `d >= 2`.
pub fn gellmann_basis(d: usize) -> Result<GellMannBasis> {
    if d < 2 {
        return Err(Error::InvalidDimension(d));
    }
    let zero = Complex64::new(0.0, 0.0);
    let mut matrices = Vec::with_capacity(d * d);

    let g0 = (2.0 / d as f64).sqrt();
    matrices.push(DMatrix::from_diagonal_element(d, d, Complex64::new(g0, 0.0)));

    for j in 0..d {
        for k in (j + 1)..d {
            let mut m = DMatrix::from_element(d, d, zero);
            m[(j, k)] = Complex64::new(1.0, 0.0);
            m[(k, j)] = Complex64::new(1.0, 0.0);
            matrices.push(m);
        }
    }
    for j in 0..d {
        for k in (j + 1)..d {
            let mut m = DMatrix::from_element(d, d, zero);
            m[(j, k)] = Complex64::new(0.0, -1.0);
            m[(k, j)] = Complex64::new(0.0, 1.0);
            matrices.push(m);
        }
    }
    for l in 1..d {
        let scale = (2.0 / (l * (l + 1)) as f64).sqrt();
        let mut m = DMatrix::from_element(d, d, zero);
        for j in 0..l {
            m[(j, j)] = Complex64::new(scale, 0.0);
        }
        m[(l, l)] = Complex64::new(-(l as f64) * scale, 0.0);
        matrices.push(m);
    }

    Ok(GellMannBasis { dim: d, matrices })
}

const CACHED_DIMS: usize = 10;

/// Process-wide basis for small dimensions; built on first use.
pub fn shared_basis(d: usize) -> Result<&'static GellMannBasis> {
    static CACHE: [OnceLock<GellMannBasis>; CACHED_DIMS] = [const { OnceLock::new() }; CACHED_DIMS];
    if d < 2 {
        return Err(Error::InvalidDimension(d));
    }
    if d >= CACHED_DIMS {
        return Err(Error::Capacity(format!("dimension {d} exceeds the cached maximum")));
    }
    Ok(CACHE[d].get_or_init(|| gellmann_basis(d).expect("d >= 2")))
}

impl GellMannBasis {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn matrices(&self) -> &[DMatrix<Complex64>] {
        &self.matrices
    }

    pub fn get(&self, mu: usize) -> &DMatrix<Complex64> {
        &self.matrices[mu]
    }

    /// `g_mu = sqrt(d/2) Tr(M G_mu)`; no Hermiticity check.
    pub fn coeffs_unchecked(&self, m: &DMatrix<Complex64>) -> Vec<f64> {
        let scale = (self.dim as f64 / 2.0).sqrt();
        self.matrices
            .iter()
            .map(|g| scale * trace_product(m, g).re)
            .collect()
    }

    /// Inverse of [`Self::coeffs_unchecked`]: `M = (1/sqrt(2d)) sum_mu g_mu G_mu`.
    pub fn reconstruct(&self, g: &[f64]) -> DMatrix<Complex64> {
        assert_eq!(g.len(), self.len(), "coefficient vector length");
        let scale = 1.0 / (2.0 * self.dim as f64).sqrt();
        let mut out = DMatrix::from_element(self.dim, self.dim, Complex64::new(0.0, 0.0));
        for (gm, m) in g.iter().zip(&self.matrices) {
            out += m * Complex64::new(scale * gm, 0.0);
        }
        out
    }

    /// Coordinates in the orthonormal frame `E_mu = G_mu / sqrt(2)`, for which
    /// `Tr(X Y) = <x, y>` for Hermitian `X`, `Y`.
    pub fn frame_coords(&self, m: &DMatrix<Complex64>) -> Vec<f64> {
        let scale = std::f64::consts::FRAC_1_SQRT_2;
        self.matrices
            .iter()
            .map(|g| scale * trace_product(m, g).re)
            .collect()
    }

    pub fn from_frame_coords(&self, x: &[f64]) -> DMatrix<Complex64> {
        assert_eq!(x.len(), self.len(), "frame coordinate length");
        let scale = std::f64::consts::FRAC_1_SQRT_2;
        let mut out = DMatrix::from_element(self.dim, self.dim, Complex64::new(0.0, 0.0));
        for (xm, m) in x.iter().zip(&self.matrices) {
            out += m * Complex64::new(scale * xm, 0.0);
        }
        out
    }
}

/// `Tr(A B)` without forming the product.
pub(crate) fn trace_product(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> Complex64 {
    let n = a.nrows();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}
