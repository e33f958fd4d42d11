//! The trainable local hidden-state model.
//!
//! A model holds `N_hidden` pairs `(lambda_i, M_i)`. Each `lambda_i` is a
//! coefficient matrix with one row per response rule; each `M_i` is an
//! unconstrained complex matrix mapped to the hidden state
//! `sigma_i = M_i M_i^dag / Tr[M_i M_i^dag]`. Hidden variables are weighted
//! uniformly, so for a measurement `x`
//!
//! ```text
//! sigma_LHS(a|x) = (1/N_hidden) sum_i p(a|x, lambda_i) sigma_i
//! ```
//!
//! All parameters live in one flat `Vec<f64>` (see [`ParamLayout`]) so the
//! optimiser, finite-difference checks and checkpoints can treat them
//! uniformly.

use std::ops::Range;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureMap};
use crate::measurements::{Measurement, MeasurementClass};
use crate::quantum::{CMatrix, DensityMatrix};
use crate::tol;

const INIT_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseMode {
    /// One rule row; `p(0) = sigmoid(<B(g^0), lambda>)`, `p(1) = 1 - p(0)`.
    SigmoidDichotomic,
    /// One row per outcome plus a bias; softmax over the outcomes present.
    SoftmaxGeneral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_hidden: usize,
    /// Polynomial order `D` of the feature map.
    pub order: usize,
    /// Alice's local dimension (sets the feature input size).
    pub dim_a: usize,
    pub dim_b: usize,
    /// Largest outcome count the model can answer (`O_max`).
    pub max_outcomes: usize,
    pub mode: ResponseMode,
    pub seed: u64,
}

impl ModelConfig {
    /// The natural model for a measurement class: sigmoid over odd
    /// harmonics for dichotomic qubit classes, softmax over monomials
    /// otherwise.
    pub fn for_class(
        class: &MeasurementClass,
        n_hidden: usize,
        order: usize,
        dim_b: usize,
        seed: u64,
    ) -> Self {
        let mode = if class.is_dichotomic_qubit() {
            ResponseMode::SigmoidDichotomic
        } else {
            ResponseMode::SoftmaxGeneral
        };
        Self {
            n_hidden,
            order,
            dim_a: class.d,
            dim_b,
            max_outcomes: class.n_outcomes,
            mode,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_hidden == 0 || self.order == 0 || self.max_outcomes == 0 {
            return Err(Error::Config(
                "n_hidden, order and max_outcomes must be positive".into(),
            ));
        }
        if self.dim_a < 2 {
            return Err(Error::InvalidDimension(self.dim_a));
        }
        if self.dim_b < 2 {
            return Err(Error::InvalidDimension(self.dim_b));
        }
        if self.mode == ResponseMode::SigmoidDichotomic && (self.dim_a != 2 || self.max_outcomes != 2)
        {
            return Err(Error::Config(
                "sigmoid response needs dichotomic qubit measurements".into(),
            ));
        }
        Ok(())
    }

    pub fn feature_map(&self) -> Result<FeatureMap> {
        match self.mode {
            ResponseMode::SigmoidDichotomic => FeatureMap::odd_harmonics(self.order),
            ResponseMode::SoftmaxGeneral => FeatureMap::monomials(self.order, self.dim_a * self.dim_a),
        }
    }

    /// Rule rows per hidden variable.
    pub fn rows(&self) -> usize {
        match self.mode {
            ResponseMode::SigmoidDichotomic => 1,
            ResponseMode::SoftmaxGeneral => self.max_outcomes,
        }
    }
}

/// Offsets of each parameter block in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub n_hidden: usize,
    pub rows: usize,
    pub n_features: usize,
    pub dim_b: usize,
    /// `[hidden][row][feature]`
    pub coeffs: Range<usize>,
    /// `[hidden][row]`; empty in sigmoid mode.
    pub bias: Range<usize>,
    /// `[hidden][i][j][re, im]`, row-major entries of `M_lambda`.
    pub states: Range<usize>,
}

impl ParamLayout {
    fn new(cfg: &ModelConfig, n_features: usize) -> Self {
        let rows = cfg.rows();
        let h = cfg.n_hidden;
        let n_coeffs = h * rows * n_features;
        let n_bias = match cfg.mode {
            ResponseMode::SigmoidDichotomic => 0,
            ResponseMode::SoftmaxGeneral => h * rows,
        };
        let n_states = h * cfg.dim_b * cfg.dim_b * 2;
        Self {
            n_hidden: h,
            rows,
            n_features,
            dim_b: cfg.dim_b,
            coeffs: 0..n_coeffs,
            bias: n_coeffs..n_coeffs + n_bias,
            states: n_coeffs + n_bias..n_coeffs + n_bias + n_states,
        }
    }

    pub fn len(&self) -> usize {
        self.states.end
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coeff_range(&self, hidden: usize) -> Range<usize> {
        let w = self.rows * self.n_features;
        self.coeffs.start + hidden * w..self.coeffs.start + (hidden + 1) * w
    }

    pub fn bias_range(&self, hidden: usize) -> Range<usize> {
        if self.bias.is_empty() {
            return self.bias.start..self.bias.start;
        }
        self.bias.start + hidden * self.rows..self.bias.start + (hidden + 1) * self.rows
    }

    pub fn state_range(&self, hidden: usize) -> Range<usize> {
        let w = self.dim_b * self.dim_b * 2;
        self.states.start + hidden * w..self.states.start + (hidden + 1) * w
    }

    /// Name of the block holding flat index `k`.
    pub fn block_of(&self, k: usize) -> &'static str {
        if self.coeffs.contains(&k) {
            "response coefficients"
        } else if self.bias.contains(&k) {
            "response biases"
        } else {
            "hidden-state parameters"
        }
    }
}

/// One hidden variable's response rule (the coefficient matrix `lambda`).
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenVariable {
    pub rows: usize,
    pub n_features: usize,
    /// Row-major `rows x n_features`.
    pub coeffs: Vec<f64>,
    /// One entry per row in softmax mode; empty in sigmoid mode.
    pub bias: Vec<f64>,
}

/// Unconstrained complex matrix behind one hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStateParam {
    pub m: CMatrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LhsModel {
    config: ModelConfig,
    feature_map: FeatureMap,
    params: Vec<f64>,
    #[serde(skip)]
    layout: Option<ParamLayout>,
}

impl PartialEq for LhsModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.feature_map == other.feature_map
            && self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Draws initial parameters: coefficients `~ N(0, 0.1^2)`, biases zero,
/// `M = I + (N(0, 0.1^2) + i N(0, 0.1^2))` entrywise.
pub fn init_model(cfg: ModelConfig) -> Result<LhsModel> {
    cfg.validate()?;
    let feature_map = cfg.feature_map()?;
    let layout = ParamLayout::new(&cfg, feature_map.n_features);
    let mut model = LhsModel {
        config: cfg,
        feature_map,
        params: vec![0.0; layout.len()],
        layout: Some(layout),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for i in 0..cfg.n_hidden {
        model.reinit_hidden(i, &mut rng);
    }
    Ok(model)
}

impl LhsModel {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.feature_map
    }

    pub fn mode(&self) -> ResponseMode {
        self.config.mode
    }

    pub fn n_hidden(&self) -> usize {
        self.config.n_hidden
    }

    pub fn dim_b(&self) -> usize {
        self.config.dim_b
    }

    pub fn layout(&self) -> &ParamLayout {
        self.layout
            .as_ref()
            .expect("layout is rebuilt whenever a model is constructed or loaded")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Restores derived state after deserialisation.
    pub(crate) fn rebuild(&mut self) -> Result<()> {
        self.config.validate()?;
        self.feature_map.build();
        let layout = ParamLayout::new(&self.config, self.feature_map.n_features);
        if layout.len() != self.params.len() {
            return Err(Error::Parse(format!(
                "checkpoint holds {} parameters, configuration needs {}",
                self.params.len(),
                layout.len()
            )));
        }
        self.layout = Some(layout);
        Ok(())
    }

    /// Redraws hidden pair `i` from the initial distribution.
    pub fn reinit_hidden<R: Rng + ?Sized>(&mut self, i: usize, rng: &mut R) {
        let layout = self.layout().clone();
        let normal = Normal::new(0.0, INIT_STD).expect("finite std");
        for k in layout.coeff_range(i) {
            self.params[k] = normal.sample(rng);
        }
        for k in layout.bias_range(i) {
            self.params[k] = 0.0;
        }
        let d = layout.dim_b;
        let start = layout.state_range(i).start;
        for r in 0..d {
            for c in 0..d {
                let k = start + 2 * (r * d + c);
                let diag = if r == c { 1.0 } else { 0.0 };
                self.params[k] = diag + normal.sample(rng);
                self.params[k + 1] = normal.sample(rng);
            }
        }
    }

    pub fn hidden_variable(&self, i: usize) -> HiddenVariable {
        let layout = self.layout();
        HiddenVariable {
            rows: layout.rows,
            n_features: layout.n_features,
            coeffs: self.params[layout.coeff_range(i)].to_vec(),
            bias: self.params[layout.bias_range(i)].to_vec(),
        }
    }

    pub fn set_hidden_variable(&mut self, i: usize, hv: &HiddenVariable) -> Result<()> {
        let layout = self.layout().clone();
        if hv.coeffs.len() != layout.coeff_range(i).len() || hv.bias.len() != layout.bias_range(i).len()
        {
            return Err(Error::Shape("hidden variable does not match model layout".into()));
        }
        self.params[layout.coeff_range(i)].copy_from_slice(&hv.coeffs);
        self.params[layout.bias_range(i)].copy_from_slice(&hv.bias);
        Ok(())
    }

    pub fn hidden_state_param(&self, i: usize) -> HiddenStateParam {
        let layout = self.layout();
        let d = layout.dim_b;
        let raw = &self.params[layout.state_range(i)];
        HiddenStateParam {
            m: DMatrix::from_fn(d, d, |r, c| {
                Complex64::new(raw[2 * (r * d + c)], raw[2 * (r * d + c) + 1])
            }),
        }
    }

    pub fn set_hidden_state_param(&mut self, i: usize, p: &HiddenStateParam) -> Result<()> {
        let layout = self.layout().clone();
        let d = layout.dim_b;
        if p.m.shape() != (d, d) {
            return Err(Error::Shape(format!("hidden-state parameter must be {d}x{d}")));
        }
        let start = layout.state_range(i).start;
        for r in 0..d {
            for c in 0..d {
                self.params[start + 2 * (r * d + c)] = p.m[(r, c)].re;
                self.params[start + 2 * (r * d + c) + 1] = p.m[(r, c)].im;
            }
        }
        Ok(())
    }

    /// Feature input for one measurement element: the Bloch vector in
    /// sigmoid mode, the full coefficient vector otherwise.
    pub fn feature_input<'a>(&self, gm: &'a [f64]) -> &'a [f64] {
        match self.feature_map.kind {
            FeatureKind::OddSphericalHarmonics => &gm[1..4],
            FeatureKind::Monomials => gm,
        }
    }

    /// Response probabilities of every hidden variable for `m`, as
    /// `[hidden][outcome]`.
    pub fn response_table(&self, m: &Measurement) -> Result<Vec<Vec<f64>>> {
        (0..self.n_hidden())
            .map(|i| response_probs(&self.hidden_variable(i), m, &self.feature_map, self.mode()))
            .collect()
    }

    /// Hidden states of all pairs.
    pub fn hidden_states(&self) -> Result<Vec<DensityMatrix>> {
        (0..self.n_hidden())
            .map(|i| hidden_state(&self.hidden_state_param(i)))
            .collect()
    }

    /// `(1/N_hidden) sum_i sigma_i`, the measurement-independent marginal.
    pub fn marginal(&self) -> Result<CMatrix> {
        let d = self.dim_b();
        let w = Complex64::new(1.0 / self.n_hidden() as f64, 0.0);
        let mut acc = CMatrix::zeros(d, d);
        for s in self.hidden_states()? {
            acc += s.matrix() * w;
        }
        Ok(acc)
    }
}

pub(crate) fn sigmoid(y: f64) -> f64 {
    if y >= 0.0 {
        1.0 / (1.0 + (-y).exp())
    } else {
        let e = y.exp();
        e / (1.0 + e)
    }
}

fn mode_check(m: &Measurement, fm: &FeatureMap, mode: ResponseMode) -> Result<()> {
    match mode {
        ResponseMode::SigmoidDichotomic => {
            if m.dim() != 2 || m.n_outcomes() != 2 {
                return Err(Error::Config(format!(
                    "sigmoid response needs a dichotomic qubit measurement, got d = {} with {} outcomes",
                    m.dim(),
                    m.n_outcomes()
                )));
            }
            if fm.kind != FeatureKind::OddSphericalHarmonics {
                return Err(Error::Config("sigmoid response uses odd harmonics".into()));
            }
        }
        ResponseMode::SoftmaxGeneral => {
            if fm.input_dim != m.dim() * m.dim() {
                return Err(Error::Shape(format!(
                    "feature map expects {} inputs, measurement has d^2 = {}",
                    fm.input_dim,
                    m.dim() * m.dim()
                )));
            }
        }
    }
    Ok(())
}

/// Outcome probabilities `p(a|x, lambda)` for one hidden variable.
pub fn response_probs(
    lambda: &HiddenVariable,
    m: &Measurement,
    fm: &FeatureMap,
    mode: ResponseMode,
) -> Result<Vec<f64>> {
    mode_check(m, fm, mode)?;
    if lambda.n_features != fm.n_features {
        return Err(Error::Shape(format!(
            "hidden variable has {} features per row, map produces {}",
            lambda.n_features, fm.n_features
        )));
    }
    let dot = |row: usize, b: &[f64]| -> f64 {
        lambda.coeffs[row * lambda.n_features..(row + 1) * lambda.n_features]
            .iter()
            .zip(b)
            .map(|(c, x)| c * x)
            .sum()
    };
    match mode {
        ResponseMode::SigmoidDichotomic => {
            let b = fm.eval(&m.gm_coeffs()[0][1..4]);
            let p0 = sigmoid(dot(0, &b));
            Ok(vec![p0, 1.0 - p0])
        }
        ResponseMode::SoftmaxGeneral => {
            let o = m.n_outcomes();
            if o > lambda.rows {
                return Err(Error::Capacity(format!(
                    "measurement has {o} outcomes, model answers at most {}",
                    lambda.rows
                )));
            }
            let logits: Vec<f64> = (0..o)
                .map(|a| dot(a, &fm.eval(&m.gm_coeffs()[a])) + lambda.bias[a])
                .collect();
            let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|z| (z - top).exp()).collect();
            let total: f64 = exps.iter().sum();
            Ok(exps.into_iter().map(|e| e / total).collect())
        }
    }
}

/// `sigma = M M^dag / Tr[M M^dag]`.
pub fn hidden_state(param: &HiddenStateParam) -> Result<DensityMatrix> {
    let a = &param.m * param.m.adjoint();
    let t = a.trace().re;
    if !(t > tol::MIN_STATE_NORM) || !t.is_finite() {
        return Err(Error::DegenerateParameter(t));
    }
    let mut sigma = a * Complex64::new(1.0 / t, 0.0);
    // M M^dag is Hermitian up to rounding in the off-diagonal pairs
    sigma = (&sigma + sigma.adjoint()) * Complex64::new(0.5, 0.0);
    Ok(DensityMatrix::from_matrix_unchecked(sigma))
}

/// LHS assemblage `(1/N_hidden) sum_i p(a|x, lambda_i) sigma_i`, one
/// element per outcome of `m`.
pub fn lhs_assemblage(model: &LhsModel, m: &Measurement) -> Result<Vec<DensityMatrix>> {
    let probs = model.response_table(m)?;
    let states = model.hidden_states()?;
    let d = model.dim_b();
    let w = 1.0 / model.n_hidden() as f64;
    let mut out = vec![CMatrix::zeros(d, d); m.n_outcomes()];
    for (p, s) in probs.iter().zip(&states) {
        for (a, acc) in out.iter_mut().enumerate() {
            *acc += s.matrix() * Complex64::new(w * p[a], 0.0);
        }
    }
    Ok(out.into_iter().map(DensityMatrix::from_matrix_unchecked).collect())
}
