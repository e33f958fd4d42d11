//! Measurement classes on Alice's side and their samplers.
//!
//! Every element `M_{a|x}` carries its Gell-Mann coefficient vector
//! `g^a` with `M = (1/sqrt(2d)) sum_mu g_mu G_mu`.

use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantum::{eigh, eigvalsh, hermiticity_defect, shared_basis, CMatrix, GellMannBasis};
use crate::tol;

#[derive(Debug, Clone)]
pub struct Measurement {
    dim: usize,
    elements: Vec<CMatrix>,
    gm_coeffs: Vec<Vec<f64>>,
    projective: bool,
}

impl Measurement {
    /// Builds and validates a measurement from its elements.
    pub fn new(elements: Vec<CMatrix>, projective: bool) -> Result<Self> {
        let m = Self::from_elements_unchecked(elements, projective)?;
        m.validate()?;
        Ok(m)
    }

    /// Computes coefficient vectors without checking positivity or
    /// completeness. Samplers use this for outputs valid by construction.
    pub fn from_elements_unchecked(elements: Vec<CMatrix>, projective: bool) -> Result<Self> {
        let dim = elements
            .first()
            .map(|e| e.nrows())
            .ok_or_else(|| Error::Shape("measurement has no elements".into()))?;
        let basis = shared_basis(dim)?;
        let mut gm_coeffs = Vec::with_capacity(elements.len());
        for e in &elements {
            gm_coeffs.push(gellmann_coeffs(e, basis)?);
        }
        Ok(Self {
            dim,
            elements,
            gm_coeffs,
            projective,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_outcomes(&self) -> usize {
        self.elements.len()
    }

    pub fn elements(&self) -> &[CMatrix] {
        &self.elements
    }

    pub fn gm_coeffs(&self) -> &[Vec<f64>] {
        &self.gm_coeffs
    }

    pub fn is_projective(&self) -> bool {
        self.projective
    }

    /// Checks positivity, completeness, coefficient round trip and, for
    /// projective measurements, idempotency and orthogonality.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim;
        let basis = shared_basis(d)?;
        let mut sum = CMatrix::zeros(d, d);
        for (a, e) in self.elements.iter().enumerate() {
            if e.shape() != (d, d) {
                return Err(Error::Shape(format!("element {a} is not {d}x{d}")));
            }
            let herm = hermiticity_defect(e);
            if herm > tol::MEASUREMENT {
                return Err(Error::validation(
                    "hermiticity",
                    format!("element {a}: max |M - M^dag| = {herm:e}"),
                ));
            }
            let min_eig = eigvalsh(e)[0];
            if min_eig < -tol::PSD {
                return Err(Error::validation(
                    "positive semidefiniteness",
                    format!("element {a}: smallest eigenvalue {min_eig:e}"),
                ));
            }
            let back = basis.reconstruct(&self.gm_coeffs[a]);
            let rt = (back - e).camax();
            if rt > tol::MEASUREMENT {
                return Err(Error::validation(
                    "coefficient round trip",
                    format!("element {a}: reconstruction error {rt:e}"),
                ));
            }
            sum += e;
        }
        let completeness = (sum - CMatrix::identity(d, d)).camax();
        if completeness > tol::MEASUREMENT {
            return Err(Error::validation(
                "completeness",
                format!("max |sum_a M_a - I| = {completeness:e}"),
            ));
        }
        if self.projective {
            for (a, ea) in self.elements.iter().enumerate() {
                for (b, eb) in self.elements.iter().enumerate() {
                    let prod = ea * eb;
                    let want = if a == b { ea.clone() } else { CMatrix::zeros(d, d) };
                    let err = (prod - want).camax();
                    if err > tol::MEASUREMENT {
                        let invariant = if a == b { "idempotency" } else { "orthogonality" };
                        return Err(Error::validation(
                            invariant,
                            format!("elements ({a}, {b}): defect {err:e}"),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// `g_mu = sqrt(d/2) Tr(M G_mu)` for a Hermitian `M`.
pub fn gellmann_coeffs(m: &CMatrix, basis: &GellMannBasis) -> Result<Vec<f64>> {
    if m.nrows() != basis.dim() || m.ncols() != basis.dim() {
        return Err(Error::Shape(format!(
            "operator is {}x{}, basis has dimension {}",
            m.nrows(),
            m.ncols(),
            basis.dim()
        )));
    }
    let herm = hermiticity_defect(m);
    if herm > tol::HERMITIAN_INPUT {
        return Err(Error::validation(
            "hermiticity",
            format!("max |M - M^dag| = {herm:e}"),
        ));
    }
    Ok(basis.coeffs_unchecked(m))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementKind {
    /// Fixed sigma_x, sigma_y, sigma_z projective measurements on a qubit.
    PauliTriple,
    QubitPvm,
    QuditPvm,
    Povm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasurementClass {
    pub kind: MeasurementKind,
    pub d: usize,
    pub n_outcomes: usize,
}

impl MeasurementClass {
    pub fn pauli_triple() -> Self {
        Self {
            kind: MeasurementKind::PauliTriple,
            d: 2,
            n_outcomes: 2,
        }
    }

    pub fn qubit_pvm() -> Self {
        Self {
            kind: MeasurementKind::QubitPvm,
            d: 2,
            n_outcomes: 2,
        }
    }

    pub fn qudit_pvm(d: usize) -> Result<Self> {
        Self {
            kind: MeasurementKind::QuditPvm,
            d,
            n_outcomes: d,
        }
        .validated()
    }

    /// POVMs with `n_outcomes` elements; pass `d * d` for the extremal maximum.
    pub fn povm(d: usize, n_outcomes: usize) -> Result<Self> {
        Self {
            kind: MeasurementKind::Povm,
            d,
            n_outcomes,
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self> {
        if self.d < 2 {
            return Err(Error::InvalidDimension(self.d));
        }
        let ok = match self.kind {
            MeasurementKind::PauliTriple | MeasurementKind::QubitPvm => {
                self.d == 2 && self.n_outcomes == 2
            }
            MeasurementKind::QuditPvm => self.n_outcomes == self.d,
            MeasurementKind::Povm => (2..=self.d * self.d).contains(&self.n_outcomes),
        };
        if ok {
            Ok(self)
        } else {
            Err(Error::Config(format!(
                "{:?} with d = {} cannot have {} outcomes",
                self.kind, self.d, self.n_outcomes
            )))
        }
    }

    /// Dichotomic qubit classes use the sigmoid response over odd harmonics.
    pub fn is_dichotomic_qubit(&self) -> bool {
        matches!(
            self.kind,
            MeasurementKind::PauliTriple | MeasurementKind::QubitPvm
        )
    }

    /// The fixed measurement set, if the class is finite.
    pub fn fixed_set(&self) -> Option<Vec<Measurement>> {
        match self.kind {
            MeasurementKind::PauliTriple => Some(pauli_triple()),
            _ => None,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Measurement {
        match self.kind {
            MeasurementKind::PauliTriple => {
                let all = pauli_triple();
                let k = rng.random_range(0..3);
                all.into_iter().nth(k).expect("three Pauli measurements")
            }
            MeasurementKind::QubitPvm => sample_qubit_pvm(rng),
            MeasurementKind::QuditPvm => sample_qudit_pvm(self.d, rng),
            MeasurementKind::Povm => sample_povm(self.d, self.n_outcomes, rng)
                .expect("class outcome count validated at construction"),
        }
    }

    /// Measurements for one batch: the fixed set for finite classes,
    /// otherwise `count` fresh samples.
    pub fn batch<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<Measurement> {
        match self.fixed_set() {
            Some(set) => set,
            None => (0..count).map(|_| self.sample(rng)).collect(),
        }
    }
}

impl fmt::Display for MeasurementClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            MeasurementKind::PauliTriple => write!(f, "pauli"),
            MeasurementKind::QubitPvm => write!(f, "pvm(d=2)"),
            MeasurementKind::QuditPvm => write!(f, "pvm(d={})", self.d),
            MeasurementKind::Povm => write!(f, "povm(d={}, outcomes={})", self.d, self.n_outcomes),
        }
    }
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Dichotomic qubit PVM `M_a = (I + (-1)^a n.sigma)/2` for a unit vector `n`.
pub fn qubit_pvm_from_direction(n: [f64; 3]) -> Measurement {
    let plus = DMatrix::from_row_slice(
        2,
        2,
        &[
            c(0.5 * (1.0 + n[2]), 0.0),
            c(0.5 * n[0], -0.5 * n[1]),
            c(0.5 * n[0], 0.5 * n[1]),
            c(0.5 * (1.0 - n[2]), 0.0),
        ],
    );
    let minus = DMatrix::from_row_slice(
        2,
        2,
        &[
            c(0.5 * (1.0 - n[2]), 0.0),
            c(-0.5 * n[0], 0.5 * n[1]),
            c(-0.5 * n[0], -0.5 * n[1]),
            c(0.5 * (1.0 + n[2]), 0.0),
        ],
    );
    Measurement::from_elements_unchecked(vec![plus, minus], true)
        .expect("qubit elements are 2x2 and Hermitian")
}

/// X, Y and Z measurements; outcome 0 is the +1 eigenprojector.
pub fn pauli_triple() -> Vec<Measurement> {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
        .into_iter()
        .map(qubit_pvm_from_direction)
        .collect()
}

/// Uniform point on the unit 2-sphere.
pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm > 1e-12 {
            return [v[0] / norm, v[1] / norm, v[2] / norm];
        }
    }
}

/// Qubit PVM along a direction drawn uniformly from the sphere.
pub fn sample_qubit_pvm<R: Rng + ?Sized>(rng: &mut R) -> Measurement {
    qubit_pvm_from_direction(random_unit_vector(rng))
}

/// d x d matrix of i.i.d. standard complex normals.
pub fn ginibre<R: Rng + ?Sized>(d: usize, rng: &mut R) -> CMatrix {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    DMatrix::from_fn(d, d, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        c(s * re, s * im)
    })
}

/// Haar-random unitary: QR of a Ginibre matrix with the phases of `R`'s
/// diagonal moved into `Q`.
pub fn haar_unitary<R: Rng + ?Sized>(d: usize, rng: &mut R) -> CMatrix {
    loop {
        let qr = ginibre(d, rng).qr();
        let r = qr.r();
        if (0..d).any(|i| r[(i, i)].norm() < 1e-12) {
            continue;
        }
        let mut q = qr.q();
        for j in 0..d {
            let phase = r[(j, j)] / r[(j, j)].norm();
            for i in 0..d {
                q[(i, j)] *= phase;
            }
        }
        return q;
    }
}

/// Rank-one projectors onto the columns of a Haar-random unitary.
pub fn sample_qudit_pvm<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Measurement {
    let u = haar_unitary(d, rng);
    let elements = (0..d)
        .map(|k| {
            let col = u.column(k);
            col * col.adjoint()
        })
        .collect();
    Measurement::from_elements_unchecked(elements, true).expect("projectors are Hermitian")
}

/// Random POVM by Wishart normalisation: `A_a = W_a W_a^dag`,
/// `M_a = S^{-1/2} A_a S^{-1/2}` with `S = sum_a A_a`.
pub fn sample_povm<R: Rng + ?Sized>(d: usize, n_outcomes: usize, rng: &mut R) -> Result<Measurement> {
    if d < 2 {
        return Err(Error::InvalidDimension(d));
    }
    if !(2..=d * d).contains(&n_outcomes) {
        return Err(Error::Config(format!(
            "POVM on d = {d} needs between 2 and {} outcomes, got {n_outcomes}",
            d * d
        )));
    }
    loop {
        let parts: Vec<CMatrix> = (0..n_outcomes)
            .map(|_| {
                let w = ginibre(d, rng);
                &w * w.adjoint()
            })
            .collect();
        let total = parts.iter().fold(CMatrix::zeros(d, d), |acc, p| acc + p);
        let eig = eigh(&total);
        let (lo, hi) = (eig.values[0], eig.values[d - 1]);
        if lo <= 1e-12 * hi {
            continue;
        }
        let mut inv_sqrt = eig.vectors.clone();
        for j in 0..d {
            let s = 1.0 / eig.values[j].sqrt();
            for i in 0..d {
                inv_sqrt[(i, j)] *= s;
            }
        }
        let inv_sqrt = inv_sqrt * eig.vectors.adjoint();
        let elements = parts
            .iter()
            .map(|p| {
                let m = &inv_sqrt * p * &inv_sqrt;
                (&m + m.adjoint()) * c(0.5, 0.0)
            })
            .collect();
        return Measurement::from_elements_unchecked(elements, false);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use crate::quantum::gellmann_basis;

    #[test]
    fn pauli_triple_structure() {
        let triple = pauli_triple();
        assert_eq!(triple.len(), 3);
        let z = &triple[2];
        let ket0 = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        assert!((&z.elements()[0] - ket0).camax() < 1e-15);
        let x = &triple[0];
        assert_eq!(x.gm_coeffs()[0][1..], [1.0, 0.0, 0.0]);
        assert_eq!(x.gm_coeffs()[1][1..], [-1.0, 0.0, 0.0]);
        for m in &triple {
            m.validate().unwrap();
        }
    }

    #[test]
    fn qubit_projector_coefficients() {
        // (I + n.sigma)/2 has g = (1, n)
        let n = [0.6, 0.0, 0.8];
        let m = qubit_pvm_from_direction(n);
        let g = &m.gm_coeffs()[0];
        let want = [1.0, 0.6, 0.0, 0.8];
        for (x, y) in g.iter().zip(want) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_coefficients_round_trip() {
        let basis = gellmann_basis(2).unwrap();
        let id = CMatrix::identity(2, 2);
        let g = gellmann_coeffs(&id, &basis).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-15);
        assert!(g[1..].iter().all(|x| x.abs() < 1e-15));
        assert!((basis.reconstruct(&g) - id).camax() < 1e-15);
    }

    #[test]
    fn coefficients_reject_non_hermitian() {
        let basis = gellmann_basis(2).unwrap();
        let mut m = CMatrix::identity(2, 2);
        m[(0, 1)] = c(0.5, 0.0);
        assert!(matches!(
            gellmann_coeffs(&m, &basis),
            Err(Error::Validation { .. })
        ));
        let big = CMatrix::identity(3, 3);
        assert!(matches!(gellmann_coeffs(&big, &basis), Err(Error::Shape(_))));
    }

    #[test]
    fn qubit_pvm_outcomes_are_antipodal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let m = sample_qubit_pvm(&mut rng);
            let (g0, g1) = (&m.gm_coeffs()[0], &m.gm_coeffs()[1]);
            assert_eq!(g0[0], g1[0]);
            for mu in 1..4 {
                assert!((g0[mu] + g1[mu]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn povm_outcome_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_povm(2, 1, &mut rng).is_err());
        assert!(sample_povm(2, 5, &mut rng).is_err());
        assert!(sample_povm(2, 4, &mut rng).is_ok());
        assert!(MeasurementClass::povm(3, 10).is_err());
        assert!(MeasurementClass::povm(3, 9).is_ok());
        assert!(MeasurementClass::qudit_pvm(1).is_err());
    }

    #[test]
    fn sampler_validation_rejects_broken_measurement() {
        let half = CMatrix::identity(2, 2) * c(0.4, 0.0);
        let m = Measurement::new(vec![half.clone(), half], false);
        assert!(matches!(
            m,
            Err(Error::Validation { invariant: "completeness", .. })
        ));
        let half = CMatrix::identity(2, 2) * c(0.5, 0.0);
        let m = Measurement::new(vec![half.clone(), half], true);
        assert!(matches!(
            m,
            Err(Error::Validation { invariant: "idempotency", .. })
        ));
    }
}
