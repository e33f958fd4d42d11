//! Target bipartite states: the two-qubit Werner family, the two-qutrit
//! isotropic family, and arbitrary states loaded from a state file.
//!
//! State file (TOML):
//!
//! ```toml
//! dim_a = 2
//! dim_b = 2
//! matrix_re = [0.25, 0.0, ...]   # row-major, (dim_a*dim_b)^2 entries
//! matrix_im = [0.0, 0.0, ...]
//! # optional provenance
//! family = "werner2"
//! v = 0.5
//! ```

use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantum::{CMatrix, DensityMatrix};

/// Largest local dimension accepted for custom states.
pub const MAX_LOCAL_DIM: usize = 4;

/// Werner states are separable for `v <= 1/3`.
pub const WERNER_SEPARABLE_BOUND: f64 = 1.0 / 3.0;
/// Two-qutrit isotropic states are entangled for `v > 1/4`.
pub const ISOTROPIC3_ENTANGLED_BOUND: f64 = 0.25;

/// Known critical visibilities, used for reporting and plot markers.
pub mod thresholds {
    /// Werner state, Alice restricted to the three Pauli measurements.
    pub const WERNER_PAULI: f64 = 0.577_350_269_189_625_8;
    /// Werner state, arbitrary projective measurements.
    pub const WERNER_PVM: f64 = 0.5;
    /// Werner state, arbitrary POVMs.
    pub const WERNER_POVM: f64 = 0.5;
    /// Two-qutrit isotropic state, arbitrary projective measurements.
    pub const ISOTROPIC3_PVM: f64 = 5.0 / 12.0;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateFamily {
    Werner2,
    Isotropic3,
    Custom,
}

impl fmt::Display for StateFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StateFamily::Werner2 => "werner2",
            StateFamily::Isotropic3 => "isotropic3",
            StateFamily::Custom => "custom",
        })
    }
}

#[derive(Debug, Clone)]
pub struct VisibilityState {
    pub family: StateFamily,
    /// Visibility of the entangled component; `None` for custom states
    /// loaded without provenance.
    pub v: Option<f64>,
    pub rho: DensityMatrix,
    pub dim_a: usize,
    pub dim_b: usize,
}

fn check_visibility(v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) || v.is_nan() {
        return Err(Error::Range {
            name: "visibility",
            value: v,
            lo: 0.0,
            hi: 1.0,
        });
    }
    Ok(())
}

/// Mixture `v |psi><psi| + (1 - v) I / n` of a unit vector with white noise.
fn noisy_pure(psi: &[f64], v: f64) -> CMatrix {
    let n = psi.len();
    let noise = (1.0 - v) / n as f64;
    DMatrix::from_fn(n, n, |i, j| {
        let diag = if i == j { noise } else { 0.0 };
        Complex64::new(v * psi[i] * psi[j] + diag, 0.0)
    })
}

/// `v |psi-><psi-| + (1 - v) I/4` with `|psi-> = (|01> - |10>)/sqrt(2)`.
pub fn werner(v: f64) -> Result<VisibilityState> {
    check_visibility(v)?;
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let rho = noisy_pure(&[0.0, h, -h, 0.0], v);
    Ok(VisibilityState {
        family: StateFamily::Werner2,
        v: Some(v),
        rho: DensityMatrix::from_matrix_unchecked(rho),
        dim_a: 2,
        dim_b: 2,
    })
}

/// `v |psi+><psi+| + (1 - v) I/9` with `|psi+> = (|00> + |11> + |22>)/sqrt(3)`.
pub fn isotropic3(v: f64) -> Result<VisibilityState> {
    check_visibility(v)?;
    let amp = 1.0 / 3f64.sqrt();
    let mut psi = [0.0; 9];
    for k in 0..3 {
        psi[k * 3 + k] = amp;
    }
    let rho = noisy_pure(&psi, v);
    Ok(VisibilityState {
        family: StateFamily::Isotropic3,
        v: Some(v),
        rho: DensityMatrix::from_matrix_unchecked(rho),
        dim_a: 3,
        dim_b: 3,
    })
}

/// Builds a member of a named family at visibility `v`.
pub fn family_state(family: StateFamily, v: f64) -> Result<VisibilityState> {
    match family {
        StateFamily::Werner2 => werner(v),
        StateFamily::Isotropic3 => isotropic3(v),
        StateFamily::Custom => Err(Error::Config(
            "custom states have no visibility parameter; load them from a file".into(),
        )),
    }
}

/// `v rho + (1 - v) I / (d_A d_B)`: a visibility family through any state.
pub fn with_white_noise(base: &VisibilityState, v: f64) -> Result<VisibilityState> {
    check_visibility(v)?;
    let n = base.dim_a * base.dim_b;
    let noise = CMatrix::identity(n, n) * Complex64::new((1.0 - v) / n as f64, 0.0);
    let mixed = base.rho.matrix() * Complex64::new(v, 0.0) + noise;
    Ok(VisibilityState {
        family: StateFamily::Custom,
        v: Some(v),
        rho: DensityMatrix::from_matrix_unchecked(mixed),
        dim_a: base.dim_a,
        dim_b: base.dim_b,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct StateDocument {
    dim_a: usize,
    dim_b: usize,
    matrix_re: Vec<f64>,
    matrix_im: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    family: Option<StateFamily>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v: Option<f64>,
}

/// Parses and validates a state document.
pub fn load_state(source: &str) -> Result<VisibilityState> {
    let doc: StateDocument =
        toml::from_str(source).map_err(|e| Error::Parse(format!("state file: {e}")))?;
    for (name, d) in [("dim_a", doc.dim_a), ("dim_b", doc.dim_b)] {
        if d < 2 {
            return Err(Error::InvalidDimension(d));
        }
        if d > MAX_LOCAL_DIM {
            return Err(Error::Capacity(format!(
                "{name} = {d} exceeds the supported maximum {MAX_LOCAL_DIM}"
            )));
        }
    }
    let n = doc.dim_a * doc.dim_b;
    if doc.matrix_re.len() != n * n || doc.matrix_im.len() != n * n {
        return Err(Error::Shape(format!(
            "expected {} entries in matrix_re and matrix_im, got {} and {}",
            n * n,
            doc.matrix_re.len(),
            doc.matrix_im.len()
        )));
    }
    let entries: Vec<Complex64> = doc
        .matrix_re
        .iter()
        .zip(&doc.matrix_im)
        .map(|(&re, &im)| Complex64::new(re, im))
        .collect();
    let rho = DensityMatrix::new(DMatrix::from_row_slice(n, n, &entries))?;
    if let Some(v) = doc.v {
        check_visibility(v)?;
    }
    Ok(VisibilityState {
        family: doc.family.unwrap_or(StateFamily::Custom),
        v: doc.v,
        rho,
        dim_a: doc.dim_a,
        dim_b: doc.dim_b,
    })
}

pub fn load_state_file(path: impl AsRef<Path>) -> Result<VisibilityState> {
    let text = std::fs::read_to_string(path)?;
    load_state(&text)
}

impl VisibilityState {
    /// Serializes into the state-file format accepted by [`load_state`].
    pub fn to_document(&self) -> String {
        let m = self.rho.matrix();
        let n = m.nrows();
        let mut re = Vec::with_capacity(n * n);
        let mut im = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                re.push(m[(i, j)].re);
                im.push(m[(i, j)].im);
            }
        }
        let doc = StateDocument {
            dim_a: self.dim_a,
            dim_b: self.dim_b,
            matrix_re: re,
            matrix_im: im,
            family: Some(self.family),
            v: self.v,
        };
        toml::to_string(&doc).expect("state document always serializes")
    }

    pub fn reduced_b(&self) -> DensityMatrix {
        crate::quantum::reduced_state(&self.rho, self.dim_a, self.dim_b)
            .expect("state dims are consistent by construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::partial_trace_a;

    fn max_diff(a: &CMatrix, b: &CMatrix) -> f64 {
        (a - b).camax()
    }

    #[test]
    fn white_noise_family_through_werner_singlet() {
        let singlet = werner(1.0).unwrap();
        for v in [0.0, 0.3, 0.77, 1.0] {
            let a = with_white_noise(&singlet, v).unwrap();
            assert!(max_diff(a.rho.matrix(), werner(v).unwrap().rho.matrix()) < 1e-15);
        }
        assert!(with_white_noise(&singlet, 1.5).is_err());
    }

    #[test]
    fn werner_endpoints() {
        let w0 = werner(0.0).unwrap();
        let id = CMatrix::identity(4, 4) * Complex64::new(0.25, 0.0);
        assert!(max_diff(w0.rho.matrix(), &id) < 1e-16);

        let w1 = werner(1.0).unwrap();
        assert!((w1.rho.purity() - 1.0).abs() < 1e-14);
        assert!(DensityMatrix::new(w1.rho.matrix().clone()).is_ok());
        assert!((w1.rho.matrix()[(1, 2)].re + 0.5).abs() < 1e-15);
        assert_eq!(WERNER_SEPARABLE_BOUND, 1.0 / 3.0);
    }

    #[test]
    fn isotropic_endpoints() {
        let s0 = isotropic3(0.0).unwrap();
        let id = CMatrix::identity(9, 9) * Complex64::new(1.0 / 9.0, 0.0);
        assert!(max_diff(s0.rho.matrix(), &id) < 1e-16);

        let s1 = isotropic3(1.0).unwrap();
        assert!((s1.rho.purity() - 1.0).abs() < 1e-14);
        let rank = crate::quantum::eigvalsh(s1.rho.matrix())
            .iter()
            .filter(|&&e| e > 1e-10)
            .count();
        assert_eq!(rank, 1);
        assert_eq!(ISOTROPIC3_ENTANGLED_BOUND, 0.25);
    }

    #[test]
    fn visibility_out_of_range() {
        for v in [-0.1, 1.01, f64::NAN] {
            assert!(matches!(werner(v), Err(Error::Range { .. })));
            assert!(matches!(isotropic3(v), Err(Error::Range { .. })));
        }
    }

    #[test]
    fn families_are_affine_with_mixed_marginals() {
        for build in [werner as fn(f64) -> Result<VisibilityState>, isotropic3] {
            let r0 = build(0.0).unwrap();
            let r1 = build(1.0).unwrap();
            for k in 0..=20 {
                let v = k as f64 / 20.0;
                let s = build(v).unwrap();
                let affine = r1.rho.matrix() * Complex64::new(v, 0.0)
                    + r0.rho.matrix() * Complex64::new(1.0 - v, 0.0);
                assert!(max_diff(s.rho.matrix(), &affine) < 1e-15);
                let d = s.dim_b;
                let marginal = partial_trace_a(s.rho.matrix(), s.dim_a, d).unwrap();
                let mixed = CMatrix::identity(d, d) * Complex64::new(1.0 / d as f64, 0.0);
                assert!(max_diff(&marginal, &mixed) < 1e-15);
                assert!(DensityMatrix::new(s.rho.matrix().clone()).is_ok());
            }
        }
    }

    #[test]
    fn document_round_trip() {
        let w = werner(0.5).unwrap();
        let text = w.to_document();
        let back = load_state(&text).unwrap();
        assert_eq!(back.family, StateFamily::Werner2);
        assert_eq!(back.v, Some(0.5));
        assert!(max_diff(back.rho.matrix(), w.rho.matrix()) <= 1e-12);
    }

    fn diag_doc(values: &[f64]) -> String {
        let n = values.len();
        let mut re = vec![0.0; n * n];
        for (i, v) in values.iter().enumerate() {
            re[i * n + i] = *v;
        }
        let im = vec![0.0; n * n];
        format!("dim_a = 2\ndim_b = 2\nmatrix_re = {re:?}\nmatrix_im = {im:?}\n")
    }

    #[test]
    fn rejects_invalid_documents() {
        let err = load_state(&diag_doc(&[0.3, 0.2, 0.2, 0.2])).unwrap_err();
        assert!(matches!(err, Error::Validation { invariant: "unit trace", .. }), "{err}");

        let err = load_state(&diag_doc(&[0.51, 0.25, 0.25, -0.01])).unwrap_err();
        assert!(
            matches!(err, Error::Validation { invariant: "positive semidefiniteness", .. }),
            "{err}"
        );

        let mut re = vec![0.0; 16];
        re[0] = 0.25;
        re[5] = 0.25;
        re[10] = 0.25;
        re[15] = 0.25;
        re[1] = 0.1;
        let im = vec![0.0; 16];
        let doc = format!("dim_a = 2\ndim_b = 2\nmatrix_re = {re:?}\nmatrix_im = {im:?}\n");
        let err = load_state(&doc).unwrap_err();
        assert!(matches!(err, Error::Validation { invariant: "hermiticity", .. }), "{err}");

        let doc = "dim_a = 5\ndim_b = 2\nmatrix_re = []\nmatrix_im = []\n";
        assert!(matches!(load_state(doc), Err(Error::Capacity(_))));

        let doc = "dim_a = 2\ndim_b = 2\nmatrix_re = [1.0]\nmatrix_im = [0.0]\n";
        assert!(matches!(load_state(doc), Err(Error::Shape(_))));

        assert!(matches!(load_state("not toml ["), Err(Error::Parse(_))));
    }
}
