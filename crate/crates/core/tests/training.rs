use lhs_core::measurements::MeasurementClass;
use lhs_core::model::{init_model, ModelConfig};
use lhs_core::states::{werner, with_white_noise};
use lhs_core::sweep::{read_csv, run_sweep, SweepConfig};
use lhs_core::trainer::{batch_loss, certify, train, Checkpoint, TrainConfig, TrainReport, Trainer, Verdict};
use lhs_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pauli_cfg() -> TrainConfig {
    TrainConfig {
        n_steps: 20_000,
        learning_rate: 3e-3,
        log_every: 1000,
        ..TrainConfig::for_class(MeasurementClass::pauli_triple())
    }
}

#[test]
fn trivial_model_reproduces_product_state() {
    let class = MeasurementClass::qubit_pvm();
    let mut model = init_model(ModelConfig::for_class(&class, 3, 3, 2, 0)).unwrap();
    let layout = model.layout().clone();
    for k in layout.coeffs.clone() {
        model.params_mut()[k] = 0.0;
    }
    for i in 0..3 {
        let r = layout.state_range(i);
        let p = &mut model.params_mut()[r];
        p.fill(0.0);
        // M = I
        p[0] = 1.0;
        p[6] = 1.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batch = class.batch(50, &mut rng);
    let loss = batch_loss(&model, &werner(0.0).unwrap(), &batch).unwrap();
    assert!(loss <= 1e-10, "{loss}");
}

#[test]
fn pauli_below_and_above_threshold() {
    let (_, low) = train(&werner(0.40).unwrap(), &pauli_cfg()).unwrap();
    let (_, high) = train(&werner(0.70).unwrap(), &pauli_cfg()).unwrap();
    assert_eq!(low.verdict, Verdict::LhsFound);
    assert!(low.final_test_loss <= 1e-3);
    assert_eq!(high.verdict, Verdict::NotConverged);
    assert!(high.final_test_loss >= 10.0 * low.final_test_loss);
}

#[test]
fn certify_endpoints() {
    let small = |class| TrainConfig {
        n_steps: 1000,
        n_meas_per_step: 64,
        test_set_size: 500,
        n_hidden: 4,
        order: 3,
        learning_rate: 1e-2,
        ..TrainConfig::for_class(class)
    };
    let (v0, r0) = certify(&werner(0.0).unwrap(), &small(MeasurementClass::qubit_pvm())).unwrap();
    assert_eq!(v0, Verdict::LhsFound, "{r0:?}");
    let (v1, r1) = certify(&werner(1.0).unwrap(), &small(MeasurementClass::qubit_pvm())).unwrap();
    assert_eq!(v1, Verdict::NotConverged, "{:e}", r1.final_test_loss);

    let json = serde_json::to_string(&r1).unwrap();
    let back: TrainReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, r1);
}

#[test]
fn converged_run_generalises() {
    let cfg = TrainConfig {
        n_steps: 4000,
        n_meas_per_step: 256,
        n_hidden: 24,
        order: 3,
        learning_rate: 1e-2,
        test_set_size: 2000,
        seed: 4,
        ..TrainConfig::for_class(MeasurementClass::qubit_pvm())
    };
    let (_, r) = train(&werner(0.3).unwrap(), &cfg).unwrap();
    assert!(
        (r.final_test_loss - r.final_train_loss).abs() <= 3.0 * r.final_train_loss + 1e-4,
        "{r:?}"
    );
    assert!(r.loss_history.iter().all(|(_, l)| *l >= 0.0));
}

#[test]
fn log_and_checkpoint_files() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("train.log");
    let ckpt = dir.path().join("model.json");
    let cfg = TrainConfig {
        n_steps: 300,
        n_meas_per_step: 16,
        test_set_size: 50,
        n_hidden: 3,
        order: 1,
        log_every: 100,
        checkpoint_every: 100,
        log_path: Some(log.clone()),
        checkpoint_path: Some(ckpt.clone()),
        ..TrainConfig::for_class(MeasurementClass::povm(2, 3).unwrap())
    };
    let state = werner(0.5).unwrap();
    let (model, _) = train(&state, &cfg).unwrap();
    let text = std::fs::read_to_string(&log).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    for l in &lines {
        let keys: Vec<&str> = l.split(' ').map(|kv| kv.split('=').next().unwrap()).collect();
        assert_eq!(keys, ["step", "train_loss", "lr", "wall_time"]);
    }
    let saved = Checkpoint::load(&ckpt).unwrap();
    assert_eq!(saved.model, model);
    assert_eq!(saved.step, 300);
    let t = Trainer::resume(&state, saved).unwrap();
    assert!(t.is_done());
}

fn pauli_sweep_toml(grid: &str, steps: usize) -> String {
    format!(
        "state = \"werner\"\nclass = \"pauli\"\nv_grid = {grid}\n[train]\nn_steps = {steps}\nlearning_rate = 3e-3\n"
    )
}

#[test]
fn sweep_writes_csv_and_restarts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let cfg = SweepConfig::from_toml(&pauli_sweep_toml("[0.4, 0.55, 0.7]", 20_000)).unwrap();
    let records = run_sweep(&cfg, Some(&out), 1).unwrap();
    let verdicts: Vec<Verdict> = records.iter().map(|r| r.verdict).collect();
    assert_eq!(verdicts, [Verdict::LhsFound, Verdict::LhsFound, Verdict::NotConverged]);

    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.lines().next().unwrap().starts_with("# config_hash="));
    assert_eq!(text.lines().nth(1).unwrap(), "v,train_loss,test_loss,steps,seed,verdict,wall_time_s");
    let (_, back) = read_csv(&out).unwrap();
    assert_eq!(back, records);

    // rerun: nothing left to train, file unchanged
    let again = run_sweep(&cfg, Some(&out), 1).unwrap();
    assert_eq!(again, records);
    assert_eq!(std::fs::read_to_string(&out).unwrap(), text);

    // a different config refuses to append
    let other = SweepConfig::from_toml(&pauli_sweep_toml("[0.4, 0.55, 0.7]", 100)).unwrap();
    assert!(matches!(run_sweep(&other, Some(&out), 1), Err(Error::Config(_))));
}

#[test]
fn sweep_resumes_partial_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let cfg = SweepConfig::from_toml(&pauli_sweep_toml("[0.0, 0.3]", 500)).unwrap();
    let full = run_sweep(&cfg, Some(&out), 1).unwrap();
    // drop the last record, as if the run had crashed
    let text = std::fs::read_to_string(&out).unwrap();
    let kept: Vec<&str> = text.lines().take(3).collect();
    std::fs::write(&out, kept.join("\n") + "\n").unwrap();
    let resumed = run_sweep(&cfg, Some(&out), 2).unwrap();
    assert_eq!(resumed.len(), 2);
    for (a, b) in resumed.iter().zip(&full) {
        assert_eq!((a.v, a.seed, a.test_loss.to_bits()), (b.v, b.seed, b.test_loss.to_bits()));
    }
    assert_eq!(full[0].verdict, Verdict::LhsFound);
}

#[test]
fn sweep_fails_on_unwritable_output_before_training() {
    let cfg = SweepConfig::from_toml(&pauli_sweep_toml("[0.1]", 10_000_000)).unwrap();
    let bad = std::path::Path::new("/nonexistent-dir/for/sure/out.csv");
    assert!(matches!(run_sweep(&cfg, Some(bad), 1), Err(Error::Io(_))));
}

#[test]
fn custom_state_sweep_matches_werner_family() {
    let dir = tempfile::tempdir().unwrap();
    let state_file = dir.path().join("singlet.toml");
    std::fs::write(&state_file, werner(1.0).unwrap().to_document()).unwrap();
    let toml = format!(
        "state = \"custom\"\nstate_file = {:?}\nclass = \"pauli\"\nv_grid = [0.3]\n[train]\nn_steps = 300\nlearning_rate = 3e-3\n",
        state_file.to_str().unwrap()
    );
    let custom = SweepConfig::from_toml(&toml).unwrap();
    let a = run_sweep(&custom, Some(&dir.path().join("a.csv")), 1).unwrap();
    let werner_cfg = SweepConfig::from_toml(&pauli_sweep_toml("[0.3]", 300)).unwrap();
    let b = run_sweep(&werner_cfg, Some(&dir.path().join("b.csv")), 1).unwrap();
    assert!((a[0].test_loss - b[0].test_loss).abs() <= 1e-9);
    let base = werner(1.0).unwrap();
    assert_eq!(with_white_noise(&base, 0.3).unwrap().v, Some(0.3));
}
