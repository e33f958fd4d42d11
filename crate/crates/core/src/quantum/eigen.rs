//! Cyclic Jacobi eigensolver for small dense complex Hermitian matrices.
//!
//! Matrices in this crate never exceed 16x16 (two parties of dimension at
//! most four), so a plain Jacobi sweep is both accurate to a few ulps and
//! fast enough for the training loop. The flat kernel works on row-major
//! buffers and allocates nothing; [`eigh`] wraps it for nalgebra matrices.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

const MAX_SWEEPS: usize = 64;

/// Eigendecomposition `A = V diag(values) V^dag` with ascending eigenvalues.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: DVector<f64>,
    /// Columns are orthonormal eigenvectors, ordered like `values`.
    pub vectors: DMatrix<Complex64>,
}

impl HermitianEigen {
    pub fn reconstruct(&self) -> DMatrix<Complex64> {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..n {
            let lambda = self.values[j];
            for i in 0..n {
                scaled[(i, j)] *= lambda;
            }
        }
        scaled * self.vectors.adjoint()
    }
}

/// Eigendecomposition of a Hermitian matrix. Only the upper triangle is
/// trusted to be consistent; the input is symmetrised before rotating.
pub fn eigh(a: &DMatrix<Complex64>) -> HermitianEigen {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "eigh needs a square matrix");
    let mut work = hermitian_row_major(a);
    let mut vecs = vec![Complex64::new(0.0, 0.0); n * n];
    let mut vals = vec![0.0; n];
    jacobi_eigh(n, &mut work, Some(&mut vecs), &mut vals);
    HermitianEigen {
        values: DVector::from_vec(vals),
        vectors: DMatrix::from_row_slice(n, n, &vecs),
    }
}

/// Eigenvalues only, ascending.
pub fn eigvalsh(a: &DMatrix<Complex64>) -> DVector<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "eigvalsh needs a square matrix");
    let mut work = hermitian_row_major(a);
    let mut vals = vec![0.0; n];
    jacobi_eigh(n, &mut work, None, &mut vals);
    DVector::from_vec(vals)
}

fn hermitian_row_major(a: &DMatrix<Complex64>) -> Vec<Complex64> {
    let n = a.nrows();
    let mut out = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        out[i * n + i] = Complex64::new(a[(i, i)].re, 0.0);
        for j in (i + 1)..n {
            let upper = 0.5 * (a[(i, j)] + a[(j, i)].conj());
            out[i * n + j] = upper;
            out[j * n + i] = upper.conj();
        }
    }
    out
}

/// In-place Jacobi diagonalisation of the row-major Hermitian matrix `a`.
///
/// On return `vals` holds the eigenvalues in ascending order and, when
/// given, the columns of the row-major `vecs` hold matching eigenvectors.
/// `a` is left in an unspecified (nearly diagonal) state.
pub fn jacobi_eigh(
    n: usize,
    a: &mut [Complex64],
    mut vecs: Option<&mut [Complex64]>,
    vals: &mut [f64],
) {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(vals.len(), n);
    if let Some(v) = vecs.as_deref_mut() {
        debug_assert_eq!(v.len(), n * n);
        v.fill(Complex64::new(0.0, 0.0));
        for i in 0..n {
            v[i * n + i] = Complex64::new(1.0, 0.0);
        }
    }

    let frob2: f64 = a.iter().map(|z| z.norm_sqr()).sum();
    let stop = frob2 * 1e-32;

    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p * n + q].norm_sqr();
            }
        }
        if off <= stop || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                let r = apq.norm();
                if r < 1e-300 {
                    continue;
                }
                let phase = apq / r;
                let app = a[p * n + p].re;
                let aqq = a[q * n + q].re;
                let theta = (aqq - app) / (2.0 * r);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(n, a, vecs.as_deref_mut(), p, q, c, s, phase);
            }
        }
    }

    for (i, v) in vals.iter_mut().enumerate() {
        *v = a[i * n + i].re;
    }
    sort_ascending(n, vals, vecs);
}

// Applies V = [[c, s], [-s e*, c e*]] on the (p, q) plane: A <- V^dag A V.
#[allow(clippy::too_many_arguments)]
fn rotate(
    n: usize,
    a: &mut [Complex64],
    vecs: Option<&mut [Complex64]>,
    p: usize,
    q: usize,
    c: f64,
    s: f64,
    phase: Complex64,
) {
    let pc = phase.conj();
    for k in 0..n {
        let akp = a[k * n + p];
        let akq = a[k * n + q];
        a[k * n + p] = akp * c - akq * pc * s;
        a[k * n + q] = akp * s + akq * pc * c;
    }
    for k in 0..n {
        let apk = a[p * n + k];
        let aqk = a[q * n + k];
        a[p * n + k] = apk * c - aqk * phase * s;
        a[q * n + k] = apk * s + aqk * phase * c;
    }
    a[p * n + q] = Complex64::new(0.0, 0.0);
    a[q * n + p] = Complex64::new(0.0, 0.0);
    a[p * n + p].im = 0.0;
    a[q * n + q].im = 0.0;

    if let Some(v) = vecs {
        for k in 0..n {
            let vkp = v[k * n + p];
            let vkq = v[k * n + q];
            v[k * n + p] = vkp * c - vkq * pc * s;
            v[k * n + q] = vkp * s + vkq * pc * c;
        }
    }
}

fn sort_ascending(n: usize, vals: &mut [f64], mut vecs: Option<&mut [Complex64]>) {
    // selection sort; n is tiny
    for i in 0..n {
        let mut best = i;
        for j in (i + 1)..n {
            if vals[j] < vals[best] {
                best = j;
            }
        }
        if best != i {
            vals.swap(i, best);
            if let Some(v) = vecs.as_deref_mut() {
                for k in 0..n {
                    v.swap(k * n + i, k * n + best);
                }
            }
        }
    }
}
