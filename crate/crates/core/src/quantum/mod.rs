//! Complex linear algebra and quantum-information primitives.

mod density;
pub mod eigen;
mod gellmann;

use nalgebra::DMatrix;
use num_complex::Complex64;

pub use density::{hermiticity_defect, CMatrix, DensityMatrix};
pub use eigen::{eigh, eigvalsh, HermitianEigen};
pub use gellmann::{gellmann_basis, shared_basis, GellMannBasis};
#[cfg(test)]
pub(crate) use gellmann::trace_product;

use crate::error::{Error, Result};
use crate::measurements::Measurement;
use crate::tol;

/// Reduced state of party B: `rho_B = tr_A rho_AB`.
pub fn partial_trace_a(rho_ab: &CMatrix, dim_a: usize, dim_b: usize) -> Result<CMatrix> {
    check_joint_shape(rho_ab, dim_a, dim_b)?;
    let mut out = DMatrix::from_element(dim_b, dim_b, Complex64::new(0.0, 0.0));
    for k in 0..dim_a {
        for i in 0..dim_b {
            for j in 0..dim_b {
                out[(i, j)] += rho_ab[(k * dim_b + i, k * dim_b + j)];
            }
        }
    }
    Ok(out)
}

/// [`partial_trace_a`] for a validated state.
pub fn reduced_state(rho_ab: &DensityMatrix, dim_a: usize, dim_b: usize) -> Result<DensityMatrix> {
    partial_trace_a(rho_ab.matrix(), dim_a, dim_b).map(DensityMatrix::from_matrix_unchecked)
}

fn check_joint_shape(rho_ab: &CMatrix, dim_a: usize, dim_b: usize) -> Result<()> {
    let n = dim_a * dim_b;
    if rho_ab.nrows() != n || rho_ab.ncols() != n {
        return Err(Error::Shape(format!(
            "joint matrix is {}x{}, expected {n}x{n} for dims ({dim_a}, {dim_b})",
            rho_ab.nrows(),
            rho_ab.ncols()
        )));
    }
    Ok(())
}

/// Trace distance `1/2 ||A - B||_1` between Hermitian operators.
pub fn trace_distance(a: &CMatrix, b: &CMatrix) -> Result<f64> {
    if a.shape() != b.shape() || a.nrows() != a.ncols() {
        return Err(Error::Shape(format!(
            "trace distance of {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    for (name, m) in [("first", a), ("second", b)] {
        let defect = hermiticity_defect(m);
        if defect > tol::HERMITIAN_INPUT {
            return Err(Error::validation(
                "hermiticity",
                format!("{name} operand has max |M - M^dag| = {defect:e}"),
            ));
        }
    }
    Ok(0.5 * trace_norm(&(a - b)))
}

/// Sum of absolute eigenvalues of a Hermitian matrix.
pub fn trace_norm(x: &CMatrix) -> f64 {
    eigvalsh(x).iter().map(|v| v.abs()).sum()
}

/// `sigma_{a|x} = tr_A[(M_{a|x} (x) I) rho_AB]` for every outcome of `m`.
pub fn quantum_assemblage(
    rho_ab: &DensityMatrix,
    dim_a: usize,
    dim_b: usize,
    m: &Measurement,
) -> Result<Vec<DensityMatrix>> {
    check_joint_shape(rho_ab.matrix(), dim_a, dim_b)?;
    if m.dim() != dim_a {
        return Err(Error::Shape(format!(
            "measurement acts on dimension {}, state has dim_a = {dim_a}",
            m.dim()
        )));
    }
    let id_b = DMatrix::<Complex64>::identity(dim_b, dim_b);
    m.elements()
        .iter()
        .map(|element| {
            let lifted = element.kronecker(&id_b);
            let product = lifted * rho_ab.matrix();
            let mut reduced = partial_trace_a(&product, dim_a, dim_b)?;
            // (M (x) I) rho is not Hermitian, but its partial trace is;
            // symmetrise away rounding.
            reduced = (&reduced + reduced.adjoint()) * Complex64::new(0.5, 0.0);
            Ok(DensityMatrix::from_matrix_unchecked(reduced))
        })
        .collect()
}

/// `sum_a D_Q(S1_a, S2_a)`.
pub fn assemblage_distance(s1: &[DensityMatrix], s2: &[DensityMatrix]) -> Result<f64> {
    if s1.len() != s2.len() {
        return Err(Error::Shape(format!(
            "assemblages have {} and {} outcomes",
            s1.len(),
            s2.len()
        )));
    }
    let mut total = 0.0;
    for (x, y) in s1.iter().zip(s2) {
        total += trace_distance(x.matrix(), y.matrix())?;
    }
    Ok(total)
}

/// Sum of the elements of an assemblage.
pub fn assemblage_marginal(s: &[DensityMatrix]) -> Option<CMatrix> {
    let mut iter = s.iter();
    let first = iter.next()?.matrix().clone();
    Some(iter.fold(first, |acc, e| acc + e.matrix()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn diag(values: &[f64]) -> CMatrix {
        DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            values.len(),
            values.iter().map(|&v| c(v)),
        ))
    }

    #[test]
    fn trace_distance_hand_values() {
        let zero = diag(&[1.0, 0.0]);
        let one = diag(&[0.0, 1.0]);
        assert!((trace_distance(&zero, &one).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(trace_distance(&zero, &zero).unwrap(), 0.0);
        let half_one = diag(&[0.0, 0.5]);
        let quarter_id = diag(&[0.25, 0.25]);
        assert!((trace_distance(&half_one, &quarter_id).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn trace_distance_rejects_non_hermitian() {
        let mut m = diag(&[0.5, 0.5]);
        m[(0, 1)] = c(1e-3);
        assert!(matches!(
            trace_distance(&m, &m),
            Err(Error::Validation { invariant: "hermiticity", .. })
        ));
        let other = diag(&[1.0, 0.0, 0.0]);
        assert!(matches!(trace_distance(&m, &other), Err(Error::Shape(_))));
    }

    #[test]
    fn partial_trace_of_product_and_maximally_mixed() {
        let sigma = DMatrix::from_row_slice(
            2,
            2,
            &[c(0.7), Complex64::new(0.1, 0.2), Complex64::new(0.1, -0.2), c(0.3)],
        );
        let ket0 = diag(&[1.0, 0.0]);
        let joint = ket0.kronecker(&sigma);
        let out = partial_trace_a(&joint, 2, 2).unwrap();
        assert!((out - &sigma).camax() < 1e-15);

        let mixed = diag(&[0.25; 4]);
        let out = partial_trace_a(&mixed, 2, 2).unwrap();
        assert!((out - diag(&[0.5, 0.5])).camax() < 1e-15);

        assert!(matches!(partial_trace_a(&mixed, 3, 2), Err(Error::Shape(_))));
    }

    #[test]
    fn assemblage_distance_swapped_projectors() {
        let s1 = vec![
            DensityMatrix::from_matrix_unchecked(diag(&[0.5, 0.0])),
            DensityMatrix::from_matrix_unchecked(diag(&[0.0, 0.5])),
        ];
        let s2 = vec![s1[1].clone(), s1[0].clone()];
        assert!((assemblage_distance(&s1, &s2).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(assemblage_distance(&s1, &s1).unwrap(), 0.0);
        assert!(matches!(
            assemblage_distance(&s1, &s2[..1]),
            Err(Error::Shape(_))
        ));
    }
}
