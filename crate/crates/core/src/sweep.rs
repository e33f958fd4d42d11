//! Visibility sweeps and threshold estimation.
//!
//! A sweep trains one model per `(v, repeat)` and appends a record to a CSV
//! file as soon as the run finishes. The first line of the file is a comment
//! carrying a hash of the resolved configuration; rerunning the same
//! configuration against the same file skips the pairs already recorded.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::measurements::MeasurementClass;
use crate::states::{family_state, load_state_file, with_white_noise, StateFamily, VisibilityState};
use crate::trainer::{train, OptimizerKind, Schedule, TrainConfig, Verdict};

pub const CSV_HEADER: &str = "v,train_loss,test_loss,steps,seed,verdict,wall_time_s";
const HASH_PREFIX: &str = "# config_hash=";

/// One row of the sweep output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub v: f64,
    pub train_loss: f64,
    pub test_loss: f64,
    pub steps: usize,
    pub seed: u64,
    pub verdict: Verdict,
    pub wall_time_s: f64,
}

/// Measurement class named in a config file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassName {
    Pauli,
    Pvm,
    Povm,
}

impl ClassName {
    /// The class on Alice's dimension `d`; POVMs default to `d^2` outcomes.
    pub fn resolve(self, d: usize, outcomes: Option<usize>) -> Result<MeasurementClass> {
        match self {
            ClassName::Pauli if d == 2 && outcomes.is_none_or(|o| o == 2) => Ok(MeasurementClass::pauli_triple()),
            ClassName::Pvm if d == 2 && outcomes.is_none_or(|o| o == 2) => Ok(MeasurementClass::qubit_pvm()),
            ClassName::Pvm if outcomes.is_none_or(|o| o == d) => MeasurementClass::qudit_pvm(d),
            ClassName::Povm => MeasurementClass::povm(d, outcomes.unwrap_or(d * d)),
            _ => Err(Error::Config(format!(
                "class {self:?} is not available for d = {d} with {outcomes:?} outcomes"
            ))),
        }
    }
}

impl std::str::FromStr for ClassName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pauli" => Ok(ClassName::Pauli),
            "pvm" => Ok(ClassName::Pvm),
            "povm" => Ok(ClassName::Povm),
            other => Err(Error::Config(format!(
                "unknown measurement class {other:?}; expected pauli, pvm or povm"
            ))),
        }
    }
}

/// Named state families accepted in config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateName {
    Werner,
    Isotropic,
    /// `v rho + (1 - v) I / n` for a state read from `state_file`.
    Custom,
}

impl std::str::FromStr for StateName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "werner" => Ok(StateName::Werner),
            "isotropic" => Ok(StateName::Isotropic),
            "custom" => Ok(StateName::Custom),
            other => Err(Error::Config(format!(
                "unknown state {other:?}; expected werner, isotropic or custom"
            ))),
        }
    }
}

/// Optional replacements for the class defaults of [`TrainConfig`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub n_steps: Option<usize>,
    pub n_meas_per_step: Option<usize>,
    pub learning_rate: Option<f64>,
    pub optimizer: Option<OptimizerKind>,
    pub schedule: Option<Schedule>,
    pub lr_floor: Option<f64>,
    pub loss_tolerance: Option<f64>,
    pub test_set_size: Option<usize>,
    pub seed: Option<u64>,
    pub n_hidden: Option<usize>,
    pub order: Option<usize>,
    pub log_every: Option<usize>,
    pub snapshot_every: Option<usize>,
}

impl TrainOverrides {
    pub fn apply(&self, mut cfg: TrainConfig) -> TrainConfig {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(x) = self.$f { cfg.$f = x; })* };
        }
        set!(
            n_steps,
            n_meas_per_step,
            learning_rate,
            optimizer,
            schedule,
            lr_floor,
            loss_tolerance,
            test_set_size,
            seed,
            n_hidden,
            order,
            log_every,
            snapshot_every
        );
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub state: StateName,
    /// Required for `custom`.
    #[serde(default)]
    pub state_file: Option<PathBuf>,
    pub class: ClassName,
    #[serde(default)]
    pub outcomes: Option<usize>,
    /// Defaults to 0.0..=0.8 (Werner, custom) or 0.1..=0.6 (isotropic) in steps of 0.05.
    #[serde(default)]
    pub v_grid: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub repeats: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub train: TrainOverrides,
}

fn one() -> usize {
    1
}

fn grid(lo_hundredths: usize, hi_hundredths: usize) -> Vec<f64> {
    (lo_hundredths..=hi_hundredths)
        .step_by(5)
        .map(|h| h as f64 / 100.0)
        .collect()
}

/// A sweep with every default filled in.
#[derive(Debug, Clone)]
pub struct ResolvedSweep {
    pub base: Option<VisibilityState>,
    pub state: StateName,
    pub v_grid: Vec<f64>,
    pub repeats: usize,
    pub train: TrainConfig,
    pub hash: String,
}

#[derive(Serialize)]
struct HashInput<'a> {
    state: StateName,
    custom_state: Option<String>,
    v_grid: &'a [f64],
    repeats: usize,
    train: &'a TrainConfig,
}

impl SweepConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("sweep config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    /// Validates and fills in defaults.
    pub fn resolve(&self) -> Result<ResolvedSweep> {
        let base = match self.state {
            StateName::Custom => {
                let path = self
                    .state_file
                    .as_ref()
                    .ok_or_else(|| Error::Config("state = \"custom\" needs state_file".into()))?;
                Some(load_state_file(path)?)
            }
            _ => {
                if self.state_file.is_some() {
                    return Err(Error::Config("state_file is only used with state = \"custom\"".into()));
                }
                None
            }
        };
        let dim_a = match (&base, self.state) {
            (Some(b), _) => b.dim_a,
            (None, StateName::Werner) => 2,
            (None, _) => 3,
        };
        let v_grid = match &self.v_grid {
            Some(g) => g.clone(),
            None if self.state == StateName::Isotropic => grid(10, 60),
            None => grid(0, 80),
        };
        if v_grid.is_empty() {
            return Err(Error::Config("v_grid must be nonempty".into()));
        }
        for w in v_grid.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::Config(format!(
                    "v_grid must be strictly ascending, found {} before {}",
                    w[0], w[1]
                )));
            }
        }
        if let Some(&v) = v_grid.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Range {
                name: "visibility",
                value: v,
                lo: 0.0,
                hi: 1.0,
            });
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be positive".into()));
        }
        let class = self.class.resolve(dim_a, self.outcomes)?;
        let train = self.train.apply(TrainConfig::for_class(class));
        train.validate()?;

        let input = HashInput {
            state: self.state,
            custom_state: base.as_ref().map(|b| b.to_document()),
            v_grid: &v_grid,
            repeats: self.repeats,
            train: &train,
        };
        let canonical = serde_json::to_string(&input).map_err(|e| Error::Parse(e.to_string()))?;
        let digest = Sha256::digest(canonical.as_bytes());
        let hash = digest.iter().map(|b| format!("{b:02x}")).collect();
        Ok(ResolvedSweep {
            base,
            state: self.state,
            v_grid,
            repeats: self.repeats,
            train,
            hash,
        })
    }
}

impl ResolvedSweep {
    pub fn state_at(&self, v: f64) -> Result<VisibilityState> {
        match (self.state, &self.base) {
            (StateName::Werner, _) => family_state(StateFamily::Werner2, v),
            (StateName::Isotropic, _) => family_state(StateFamily::Isotropic3, v),
            (StateName::Custom, Some(base)) => with_white_noise(base, v),
            (StateName::Custom, None) => Err(Error::Config("custom sweep without a base state".into())),
        }
    }

    /// Seed of repeat `r`.
    pub fn seed_for(&self, repeat: usize) -> u64 {
        self.train.seed.wrapping_add(repeat as u64)
    }

    pub fn class(&self) -> MeasurementClass {
        self.train.measurement_class
    }
}

/// Reads records and the config hash from a sweep CSV.
pub fn read_csv(path: impl AsRef<Path>) -> Result<(Option<String>, Vec<SweepRecord>)> {
    let file = File::open(path)?;
    read_csv_from(BufReader::new(file))
}

pub fn read_csv_from<R: BufRead>(mut reader: R) -> Result<(Option<String>, Vec<SweepRecord>)> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let hash = text
        .lines()
        .next()
        .and_then(|l| l.trim_end().strip_prefix(HASH_PREFIX))
        .map(str::to_owned);
    let mut csv = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = csv
        .headers()
        .map_err(|e| Error::Parse(format!("sweep csv: {e}")))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != CSV_HEADER {
        return Err(Error::Parse(format!(
            "sweep csv header is {header:?}, expected {CSV_HEADER:?}"
        )));
    }
    let mut records = Vec::new();
    for row in csv.deserialize() {
        let rec: SweepRecord = row.map_err(|e| Error::Parse(format!("sweep csv: {e}")))?;
        records.push(rec);
    }
    Ok((hash, records))
}

fn write_record<W: Write>(out: W, rec: &SweepRecord) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.serialize(rec).map_err(|e| Error::Parse(e.to_string()))?;
    w.flush()?;
    Ok(())
}

/// Serializes records with a header (and hash comment if given).
pub fn write_csv<W: Write>(mut out: W, hash: Option<&str>, records: &[SweepRecord]) -> Result<()> {
    if let Some(h) = hash {
        writeln!(out, "{HASH_PREFIX}{h}")?;
    }
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        write_record(&mut out, r)?;
    }
    Ok(())
}

/// Opens `path` for appending, creating it with a header when new. Returns
/// the records already present.
fn open_output(path: &Path, hash: &str) -> Result<(File, Vec<SweepRecord>)> {
    let existing = match std::fs::metadata(path) {
        Ok(meta) if meta.len() > 0 => {
            let (found, records) = read_csv(path)?;
            match found {
                Some(h) if h == hash => Some(records),
                Some(h) => {
                    return Err(Error::Config(format!(
                        "{} was written by a different configuration (hash {h}); choose another output",
                        path.display()
                    )))
                }
                None => {
                    return Err(Error::Config(format!(
                        "{} has no config hash; refusing to append",
                        path.display()
                    )))
                }
            }
        }
        _ => None,
    };
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    let records = match existing {
        Some(r) => r,
        None => {
            writeln!(file, "{HASH_PREFIX}{hash}")?;
            writeln!(file, "{CSV_HEADER}")?;
            file.flush()?;
            Vec::new()
        }
    };
    Ok((file, records))
}

/// Runs every `(v, repeat)` not already in the output file.
///
/// `jobs` runs that many trainings at once. Records are returned sorted
/// by `(v, seed)`; the file holds them in completion order.
pub fn run_sweep(cfg: &SweepConfig, out: Option<&Path>, jobs: usize) -> Result<Vec<SweepRecord>> {
    let resolved = cfg.resolve()?;
    let path = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| Error::Config("no output path given".into()))?;
    let (file, mut records) = open_output(&path, &resolved.hash)?;

    let done: HashSet<(u64, u64)> = records.iter().map(|r| (r.v.to_bits(), r.seed)).collect();
    let mut todo = Vec::new();
    for &v in &resolved.v_grid {
        for r in 0..resolved.repeats {
            let seed = resolved.seed_for(r);
            if done.contains(&(v.to_bits(), seed)) {
                log::info!("v = {v}, seed = {seed}: already recorded, skipping");
            } else {
                todo.push((v, seed));
            }
        }
    }
    // states are built up front so invalid visibilities fail before training
    let states = todo
        .iter()
        .map(|&(v, _)| resolved.state_at(v))
        .collect::<Result<Vec<_>>>()?;

    let writer = Mutex::new(file);
    let run_one = |(&(v, seed), state): (&(f64, u64), &VisibilityState)| -> Result<SweepRecord> {
        let cfg = TrainConfig {
            seed,
            ..resolved.train.clone()
        };
        log::info!("training v = {v}, seed = {seed}");
        let (_, report) = train(state, &cfg)?;
        let rec = SweepRecord {
            v,
            train_loss: report.final_train_loss,
            test_loss: report.final_test_loss,
            steps: report.steps_run,
            seed,
            verdict: report.verdict,
            wall_time_s: report.wall_time,
        };
        log::info!(
            "v = {v}, seed = {seed}: test loss {:.3e} ({})",
            rec.test_loss,
            rec.verdict
        );
        let mut f = writer.lock().expect("writer lock");
        write_record(&mut *f, &rec)?;
        Ok(rec)
    };
    let fresh: Vec<SweepRecord> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| {
            todo.par_iter()
                .zip(states.par_iter())
                .map(run_one)
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        todo.iter()
            .zip(states.iter())
            .map(run_one)
            .collect::<Result<Vec<_>>>()?
    };
    records.extend(fresh);
    records.sort_by(|a, b| a.v.total_cmp(&b.v).then(a.seed.cmp(&b.seed)));
    Ok(records)
}

/// A decrease of the best loss by more than `eps / 2` between adjacent
/// grid points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityViolation {
    pub v_lo: f64,
    pub v_hi: f64,
    pub loss_lo: f64,
    pub loss_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdEstimate {
    pub v_star: f64,
    /// Largest `v` whose best loss is within `eps`.
    pub lo: f64,
    /// Smallest `v` above `lo` whose best loss exceeds `eps`.
    pub hi: f64,
    /// `(v, best test loss)` per distinct visibility, ascending.
    pub best: Vec<(f64, f64)>,
    pub violations: Vec<MonotonicityViolation>,
}

impl ThresholdEstimate {
    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

/// Brackets the critical visibility from sweep records.
///
/// Each visibility is scored by its minimum test loss across repeats. An
/// LHS model below `eps` is a certificate, so `lo` is the largest certified
/// visibility and `hi` the next visibility above it that is not certified.
pub fn estimate_threshold(records: &[SweepRecord], eps: f64) -> Result<ThresholdEstimate> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Config(format!("eps must be positive, got {eps}")));
    }
    let mut best: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
    for r in records {
        if !r.v.is_finite() || !r.test_loss.is_finite() {
            return Err(Error::Parse(format!("non-finite record at v = {}", r.v)));
        }
        // non-negative floats order like their bit patterns
        let key = (r.v + 0.0).to_bits();
        let entry = best.entry(key).or_insert((r.v, r.test_loss));
        entry.1 = entry.1.min(r.test_loss);
    }
    let best: Vec<(f64, f64)> = best.into_values().collect();
    if best.iter().any(|(v, _)| *v < 0.0) {
        return Err(Error::Parse("negative visibility in records".into()));
    }

    let lo_idx = best
        .iter()
        .rposition(|(_, l)| *l <= eps)
        .ok_or_else(|| Error::NoBracket(format!("no visibility reaches loss <= {eps:e}")))?;
    let hi_idx = best[lo_idx + 1..]
        .iter()
        .position(|(_, l)| *l > eps)
        .map(|i| i + lo_idx + 1)
        .ok_or_else(|| {
            Error::NoBracket(format!(
                "every visibility up to {} reaches loss <= {eps:e}",
                best[best.len() - 1].0
            ))
        })?;
    let (lo, hi) = (best[lo_idx].0, best[hi_idx].0);

    let violations: Vec<MonotonicityViolation> = best
        .windows(2)
        .filter(|w| w[1].1 < w[0].1 - eps / 2.0)
        .map(|w| MonotonicityViolation {
            v_lo: w[0].0,
            v_hi: w[1].0,
            loss_lo: w[0].1,
            loss_hi: w[1].1,
        })
        .collect();
    for v in &violations {
        log::warn!(
            "loss drops from {:.3e} at v = {} to {:.3e} at v = {}",
            v.loss_lo,
            v.v_lo,
            v.loss_hi,
            v.v_hi
        );
    }
    Ok(ThresholdEstimate {
        v_star: 0.5 * (lo + hi),
        lo,
        hi,
        best,
        violations,
    })
}
