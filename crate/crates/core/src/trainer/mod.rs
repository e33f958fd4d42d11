//! Stochastic gradient descent on the assemblage loss.
//!
//! Every step draws a fresh batch of measurements (or uses the fixed set for
//! finite classes), evaluates the mean assemblage distance and its gradient,
//! and applies one optimiser update. After the last step the model is scored
//! on a held-out measurement set drawn from an independent stream.

pub mod kernel;
pub mod optim;

use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measurements::{Measurement, MeasurementClass};
use crate::model::{init_model, LhsModel, ModelConfig};
use crate::states::VisibilityState;

use kernel::{HiddenCache, Prepared, Target};
pub use optim::{cosine_lr, Adam, Optimizer, OptimizerKind};

const BATCH_STREAM: u64 = 1;
const TEST_STREAM: u64 = 2;
const REINIT_STREAM: u64 = 3;
/// Loss above this multiple of the first loss triggers a rollback.
const DIVERGENCE_FACTOR: f64 = 10.0;
const MAX_ROLLBACKS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Constant,
    #[default]
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub n_steps: usize,
    pub n_meas_per_step: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub schedule: Schedule,
    /// Fraction of the base rate the cosine schedule decays to.
    #[serde(default)]
    pub lr_floor: f64,
    pub loss_tolerance: f64,
    pub test_set_size: usize,
    pub seed: u64,
    pub measurement_class: MeasurementClass,
    pub n_hidden: usize,
    /// Polynomial order `D` of the response features.
    pub order: usize,
    /// Steps between `loss_history` entries.
    pub log_every: usize,
    /// Steps between rollback snapshots.
    pub snapshot_every: usize,
    #[serde(default)]
    pub log_path: Option<PathBuf>,
    #[serde(default)]
    pub checkpoint_path: Option<PathBuf>,
    /// Steps between checkpoint writes; 0 writes only at the end.
    #[serde(default)]
    pub checkpoint_every: usize,
}

impl TrainConfig {
    /// Defaults for a measurement class: Adam at 1e-3 with cosine decay,
    /// 512 measurements per step and a held-out set of 10^4 (qubits) or
    /// 10^3 (higher dimensions) measurements.
    pub fn for_class(class: MeasurementClass) -> Self {
        let (n_hidden, order) = match (class.kind, class.d) {
            (crate::measurements::MeasurementKind::PauliTriple, _) => (8, 5),
            (crate::measurements::MeasurementKind::QubitPvm, _) => (100, 5),
            (crate::measurements::MeasurementKind::Povm, 2) => (150, 2),
            _ => (50, 2),
        };
        Self {
            n_steps: 20_000,
            n_meas_per_step: 512,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            schedule: Schedule::Cosine,
            lr_floor: 0.0,
            loss_tolerance: 1e-3,
            test_set_size: if class.d == 2 { 10_000 } else { 1_000 },
            seed: 0,
            measurement_class: class,
            n_hidden,
            order,
            log_every: 100,
            snapshot_every: 1_000,
            log_path: None,
            checkpoint_path: None,
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_steps", self.n_steps),
            ("n_meas_per_step", self.n_meas_per_step),
            ("test_set_size", self.test_set_size),
            ("n_hidden", self.n_hidden),
            ("order", self.order),
            ("log_every", self.log_every),
            ("snapshot_every", self.snapshot_every),
        ];
        for (name, value) in counts {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.loss_tolerance > 0.0 && self.loss_tolerance.is_finite()) {
            return Err(Error::Config(format!(
                "loss_tolerance must be positive, got {}",
                self.loss_tolerance
            )));
        }
        if !(0.0..=1.0).contains(&self.lr_floor) {
            return Err(Error::Config(format!("lr_floor must lie in [0, 1], got {}", self.lr_floor)));
        }
        self.measurement_class.validated()?;
        Ok(())
    }

    pub fn model_config(&self, dim_b: usize) -> ModelConfig {
        ModelConfig::for_class(&self.measurement_class, self.n_hidden, self.order, dim_b, self.seed)
    }

    fn lr_at(&self, step: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.learning_rate,
            Schedule::Cosine => cosine_lr(self.learning_rate, step, self.n_steps, self.lr_floor),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    /// No steering detected at this model capacity and tolerance.
    LhsFound,
    /// No LHS model found; not a proof of steerability.
    NotConverged,
}

impl Verdict {
    pub fn from_loss(test_loss: f64, tolerance: f64) -> Self {
        if test_loss <= tolerance {
            Verdict::LhsFound
        } else {
            Verdict::NotConverged
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::LhsFound => "LhsFound",
            Verdict::NotConverged => "NotConverged",
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Verdict {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "LhsFound" => Ok(Verdict::LhsFound),
            "NotConverged" => Ok(Verdict::NotConverged),
            other => Err(Error::Parse(format!("unknown verdict {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Final model on the last training batch.
    pub final_train_loss: f64,
    pub final_test_loss: f64,
    /// `(step, batch loss)` every `log_every` steps, plus the last step.
    pub loss_history: Vec<(usize, f64)>,
    pub verdict: Verdict,
    /// Seconds, including time before any resume.
    pub wall_time: f64,
    pub steps_run: usize,
    /// Rollbacks triggered by the divergence guard.
    pub rollbacks: usize,
    /// Hidden pairs redrawn after a degenerate state.
    pub reinitialised: usize,
}

/// Loss and gradient of a batch; `values` follows the model's flat layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub loss: f64,
    pub values: Vec<f64>,
}

fn prepare_cache(model: &LhsModel) -> Result<HiddenCache> {
    HiddenCache::new(model).map_err(|i| {
        let t: f64 = model.params()[model.layout().state_range(i)]
            .iter()
            .map(|x| x * x)
            .sum();
        Error::DegenerateParameter(t)
    })
}

/// Mean assemblage distance of `model` to `state` over `batch`.
pub fn batch_loss(model: &LhsModel, state: &VisibilityState, batch: &[Measurement]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Config("batch must be nonempty".into()));
    }
    let target = Target::new(state)?;
    let prepared = kernel::prepare_batch(model, &target, batch)?;
    let cache = prepare_cache(model)?;
    Ok(kernel::evaluate(model, &cache, &prepared, false).loss)
}

/// Reverse-mode gradient of [`batch_loss`] with respect to every parameter.
pub fn compute_gradients(
    model: &LhsModel,
    state: &VisibilityState,
    batch: &[Measurement],
) -> Result<Gradient> {
    if batch.is_empty() {
        return Err(Error::Config("batch must be nonempty".into()));
    }
    let target = Target::new(state)?;
    let prepared = kernel::prepare_batch(model, &target, batch)?;
    let cache = prepare_cache(model)?;
    let eval = kernel::evaluate(model, &cache, &prepared, true);
    check_finite(model, eval.loss, &eval.grad, 0)?;
    Ok(Gradient {
        loss: eval.loss,
        values: eval.grad,
    })
}

fn check_finite(model: &LhsModel, loss: f64, values: &[f64], step: usize) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::NonFinite { step, block: "loss" });
    }
    if let Some(k) = values.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            step,
            block: model.layout().block_of(k),
        });
    }
    Ok(())
}

/// Everything needed to continue a run bit-exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: LhsModel,
    pub optimizer: Optimizer,
    pub batch_rng: ChaCha8Rng,
    pub reinit_rng: ChaCha8Rng,
    pub step: usize,
    pub lr_scale: f64,
    pub initial_loss: Option<f64>,
    pub loss_history: Vec<(usize, f64)>,
    pub rollbacks: usize,
    pub reinitialised: usize,
    pub elapsed: f64,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|e| Error::Parse(e.to_string()))?;
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, json)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        ckpt.model.rebuild()?;
        Ok(ckpt)
    }
}

#[derive(Debug, Clone)]
struct Snapshot {
    params: Vec<f64>,
    optimizer: Optimizer,
}

/// A training run that can be advanced step by step and checkpointed.
pub struct Trainer {
    cfg: TrainConfig,
    target: Target,
    model: LhsModel,
    optimizer: Optimizer,
    batch_rng: ChaCha8Rng,
    reinit_rng: ChaCha8Rng,
    fixed: Option<Vec<Prepared>>,
    last_batch: Option<Vec<Prepared>>,
    step: usize,
    lr_scale: f64,
    initial_loss: Option<f64>,
    history: Vec<(usize, f64)>,
    snapshot: Snapshot,
    rollbacks: usize,
    reinitialised: usize,
    elapsed_before: f64,
    started: Instant,
    log: Option<BufWriter<File>>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn check_state(state: &VisibilityState, cfg: &TrainConfig) -> Result<()> {
    if state.dim_a != cfg.measurement_class.d {
        return Err(Error::Shape(format!(
            "state has dim_a = {}, measurement class acts on d = {}",
            state.dim_a, cfg.measurement_class.d
        )));
    }
    Ok(())
}

impl Trainer {
    pub fn new(state: &VisibilityState, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        check_state(state, &cfg)?;
        let model = init_model(cfg.model_config(state.dim_b))?;
        let optimizer = Optimizer::new(cfg.optimizer, model.params().len());
        let batch_rng = stream_rng(cfg.seed, BATCH_STREAM);
        let reinit_rng = stream_rng(cfg.seed, REINIT_STREAM);
        Self::assemble(state, cfg, model, optimizer, batch_rng, reinit_rng, 0, 1.0, None, Vec::new(), 0, 0, 0.0)
    }

    /// Continues the run stored in `ckpt`.
    pub fn resume(state: &VisibilityState, ckpt: Checkpoint) -> Result<Self> {
        ckpt.config.validate()?;
        check_state(state, &ckpt.config)?;
        let mut model = ckpt.model;
        model.rebuild()?;
        if *model.config() != ckpt.config.model_config(state.dim_b) {
            return Err(Error::Config("checkpoint model does not match its training config".into()));
        }
        Self::assemble(
            state,
            ckpt.config,
            model,
            ckpt.optimizer,
            ckpt.batch_rng,
            ckpt.reinit_rng,
            ckpt.step,
            ckpt.lr_scale,
            ckpt.initial_loss,
            ckpt.loss_history,
            ckpt.rollbacks,
            ckpt.reinitialised,
            ckpt.elapsed,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        state: &VisibilityState,
        cfg: TrainConfig,
        model: LhsModel,
        optimizer: Optimizer,
        batch_rng: ChaCha8Rng,
        reinit_rng: ChaCha8Rng,
        step: usize,
        lr_scale: f64,
        initial_loss: Option<f64>,
        history: Vec<(usize, f64)>,
        rollbacks: usize,
        reinitialised: usize,
        elapsed_before: f64,
    ) -> Result<Self> {
        let target = Target::new(state)?;
        let fixed = match cfg.measurement_class.fixed_set() {
            Some(set) => Some(kernel::prepare_batch(&model, &target, &set)?),
            None => None,
        };
        let log = match &cfg.log_path {
            Some(path) => {
                let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
                Some(BufWriter::new(file))
            }
            None => None,
        };
        let snapshot = Snapshot {
            params: model.params().to_vec(),
            optimizer: optimizer.clone(),
        };
        Ok(Self {
            cfg,
            target,
            model,
            optimizer,
            batch_rng,
            reinit_rng,
            fixed,
            last_batch: None,
            step,
            lr_scale,
            initial_loss,
            history,
            snapshot,
            rollbacks,
            reinitialised,
            elapsed_before,
            started: Instant::now(),
            log,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &LhsModel {
        &self.model
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.cfg.n_steps
    }

    fn elapsed(&self) -> f64 {
        self.elapsed_before + self.started.elapsed().as_secs_f64()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            model: self.model.clone(),
            optimizer: self.optimizer.clone(),
            batch_rng: self.batch_rng.clone(),
            reinit_rng: self.reinit_rng.clone(),
            step: self.step,
            lr_scale: self.lr_scale,
            initial_loss: self.initial_loss,
            loss_history: self.history.clone(),
            rollbacks: self.rollbacks,
            reinitialised: self.reinitialised,
            elapsed: self.elapsed(),
        }
    }

    fn draw_batch(&mut self) -> Result<Vec<Prepared>> {
        if let Some(fixed) = &self.fixed {
            return Ok(fixed.clone());
        }
        let batch = self
            .cfg
            .measurement_class
            .batch(self.cfg.n_meas_per_step, &mut self.batch_rng);
        kernel::prepare_batch(&self.model, &self.target, &batch)
    }

    /// Hidden-state cache, redrawing degenerate pairs until none remain.
    fn cache(&mut self) -> HiddenCache {
        loop {
            match HiddenCache::new(&self.model) {
                Ok(cache) => return cache,
                Err(i) => {
                    log::warn!("step {}: hidden state {i} degenerate, reinitialising", self.step);
                    self.model.reinit_hidden(i, &mut self.reinit_rng);
                    let layout = self.model.layout().clone();
                    self.optimizer.reset_range(layout.coeff_range(i));
                    self.optimizer.reset_range(layout.bias_range(i));
                    self.optimizer.reset_range(layout.state_range(i));
                    self.reinitialised += 1;
                }
            }
        }
    }

    /// One optimiser update; returns the batch loss before the update.
    pub fn step_once(&mut self) -> Result<f64> {
        let batch = self.draw_batch()?;
        let cache = self.cache();
        let eval = kernel::evaluate(&self.model, &cache, &batch, true);
        check_finite(&self.model, eval.loss, &eval.grad, self.step)?;
        let loss = eval.loss;

        let initial = *self.initial_loss.get_or_insert(loss);
        if loss > DIVERGENCE_FACTOR * initial && initial > 0.0 {
            if self.rollbacks >= MAX_ROLLBACKS {
                return Err(Error::NonFinite {
                    step: self.step,
                    block: "loss (divergence guard exhausted)",
                });
            }
            self.lr_scale *= 0.5;
            self.rollbacks += 1;
            log::warn!(
                "step {}: loss {loss:e} exceeds {DIVERGENCE_FACTOR}x initial {initial:e}; halving lr",
                self.step
            );
            self.model.params_mut().copy_from_slice(&self.snapshot.params);
            self.optimizer = self.snapshot.optimizer.clone();
            self.last_batch = Some(batch);
            self.step += 1;
            return Ok(loss);
        }

        let lr = self.cfg.lr_at(self.step) * self.lr_scale;
        self.optimizer.step(self.model.params_mut(), &eval.grad, lr);
        if let Some(k) = self.model.params().iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite {
                step: self.step,
                block: self.model.layout().block_of(k),
            });
        }

        if self.step.is_multiple_of(self.cfg.log_every) {
            self.history.push((self.step, loss));
            if let Some(log) = &mut self.log {
                writeln!(
                    log,
                    "step={} train_loss={loss:.9e} lr={lr:.6e} wall_time={:.3}",
                    self.step,
                    self.started.elapsed().as_secs_f64() + self.elapsed_before
                )?;
            }
        }
        self.step += 1;
        if self.step.is_multiple_of(self.cfg.snapshot_every) {
            self.snapshot = Snapshot {
                params: self.model.params().to_vec(),
                optimizer: self.optimizer.clone(),
            };
        }
        if self.cfg.checkpoint_every > 0 && self.step.is_multiple_of(self.cfg.checkpoint_every) {
            if let Some(path) = self.cfg.checkpoint_path.clone() {
                self.checkpoint().save(path)?;
            }
        }
        self.last_batch = Some(batch);
        Ok(loss)
    }

    /// Advances until `n_steps` have run.
    pub fn run(&mut self) -> Result<()> {
        while !self.is_done() {
            self.step_once()?;
        }
        Ok(())
    }

    /// Scores the model and returns it with the report.
    pub fn finish(mut self) -> Result<(LhsModel, TrainReport)> {
        let last = match self.last_batch.take() {
            Some(b) => b,
            None => self.draw_batch()?,
        };
        let cache = self.cache();
        let final_train_loss = kernel::evaluate(&self.model, &cache, &last, false).loss;

        let test = match &self.fixed {
            Some(fixed) => fixed.clone(),
            None => {
                let mut rng = stream_rng(self.cfg.seed.wrapping_add(1), TEST_STREAM);
                let set = self.cfg.measurement_class.batch(self.cfg.test_set_size, &mut rng);
                kernel::prepare_batch(&self.model, &self.target, &set)?
            }
        };
        let final_test_loss = kernel::evaluate(&self.model, &cache, &test, false).loss;
        if !final_train_loss.is_finite() || !final_test_loss.is_finite() {
            return Err(Error::NonFinite {
                step: self.step,
                block: "loss",
            });
        }
        if self.history.last().map(|h| h.0 + 1) != Some(self.step) && self.step > 0 {
            self.history.push((self.step, final_train_loss));
        }
        if let Some(path) = self.cfg.checkpoint_path.clone() {
            self.checkpoint().save(path)?;
        }
        if let Some(log) = &mut self.log {
            log.flush()?;
        }
        let report = TrainReport {
            final_train_loss,
            final_test_loss,
            loss_history: self.history,
            verdict: Verdict::from_loss(final_test_loss, self.cfg.loss_tolerance),
            wall_time: self.elapsed_before + self.started.elapsed().as_secs_f64(),
            steps_run: self.step,
            rollbacks: self.rollbacks,
            reinitialised: self.reinitialised,
        };
        Ok((self.model, report))
    }
}

/// Trains a fresh model on `state` for `cfg.n_steps` steps.
pub fn train(state: &VisibilityState, cfg: &TrainConfig) -> Result<(LhsModel, TrainReport)> {
    let mut trainer = Trainer::new(state, cfg.clone())?;
    trainer.run()?;
    trainer.finish()
}

/// [`train`], reduced to its one-sided verdict.
///
/// `LhsFound` means no steering was detected at this capacity and
/// tolerance; `NotConverged` means no LHS model was found, which does not
/// prove steerability.
pub fn certify(state: &VisibilityState, cfg: &TrainConfig) -> Result<(Verdict, TrainReport)> {
    let (_, report) = train(state, cfg)?;
    Ok((report.verdict, report))
}


#[cfg(test)]
mod gradient_tests {
    use super::*;
    use crate::measurements::MeasurementClass;
    use crate::states::{isotropic3, werner};
    use rand::Rng;

    fn fd_check(class: MeasurementClass, state: &VisibilityState, order: usize, seed: u64) -> f64 {
        let mut model = init_model(ModelConfig::for_class(&class, 2, order, state.dim_b, seed)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // move biases off zero so their gradients are exercised
        for k in model.layout().bias.clone() {
            model.params_mut()[k] = rng.random::<f64>() - 0.5;
        }
        let batch = class.batch(3, &mut rng);
        let g = compute_gradients(&model, state, &batch).unwrap();
        let n = model.params().len();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let k = rng.random_range(0..n);
            let mut plus = model.clone();
            plus.params_mut()[k] += h;
            let mut minus = model.clone();
            minus.params_mut()[k] -= h;
            let fd = (batch_loss(&plus, state, &batch).unwrap() - batch_loss(&minus, state, &batch).unwrap())
                / (2.0 * h);
            let err = (fd - g.values[k]).abs() / fd.abs().max(g.values[k].abs()).max(1e-6);
            worst = worst.max(err);
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cases = [
            (MeasurementClass::qubit_pvm(), werner(0.7).unwrap(), 1),
            (MeasurementClass::qubit_pvm(), werner(0.3).unwrap(), 3),
            (MeasurementClass::povm(2, 4).unwrap(), werner(0.5).unwrap(), 1),
            (MeasurementClass::qudit_pvm(3).unwrap(), isotropic3(0.6).unwrap(), 1),
        ];
        for (i, (class, state, order)) in cases.into_iter().enumerate() {
            let worst = fd_check(class, &state, order, i as u64 + 10);
            assert!(worst <= 1e-4, "{class}: worst relative error {worst:e}");
        }
    }
}
