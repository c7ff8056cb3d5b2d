//! End-to-end runs: CSV ingestion, training, evaluation and checkpoints.

use stode_core::checkpoint;
use stode_core::data::{load_matrix_csv, synth_generate, write_matrix_csv, Dataset, ScalerKind, SynthParams};
use stode_core::model::{tiny_config, Ablation};
use stode_core::train::{evaluate_mae, evaluate_report, train, TrainConfig};
use stode_core::{Mode, Model, ModelConfig, SolverSpec};

fn small_dataset(mode: Mode, horizon: usize) -> Dataset {
    let (series, _) = synth_generate(&SynthParams {
        nodes: 3,
        steps: 160,
        ..SynthParams::default()
    })
    .unwrap();
    Dataset::prepare(series, [0.6, 0.2, 0.2], ScalerKind::ZScore, 4, horizon, mode).unwrap()
}

fn quick_run() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 8,
        lr: 3e-3,
        ..TrainConfig::default()
    }
}

#[test]
fn csv_train_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("series.csv");
    let (series, _) = synth_generate(&SynthParams {
        nodes: 3,
        steps: 160,
        ..SynthParams::default()
    })
    .unwrap();
    write_matrix_csv(&csv, &series).unwrap();
    let loaded = load_matrix_csv(&csv).unwrap();
    assert_eq!(loaded.values(), series.values());

    let data = Dataset::prepare(loaded, [0.6, 0.2, 0.2], ScalerKind::MaxAbs, 4, 1, Mode::SingleStep).unwrap();
    let mut model = Model::new(tiny_config(), 3).unwrap();
    let history = train(&mut model, &data, &quick_run()).unwrap();
    assert_eq!(history.epochs.len(), 2);

    let path = dir.path().join("model.json");
    checkpoint::save(&path, &model, Some(&data.scaler)).unwrap();
    let restored = checkpoint::load(&path).unwrap();
    assert_eq!(restored.scaler.as_ref(), Some(&data.scaler));
    let before = evaluate_mae(&model, &data, &data.test, 16).unwrap();
    let after = evaluate_mae(&restored.model, &data, &data.test, 16).unwrap();
    assert_eq!(before.to_bits(), after.to_bits());
    assert_eq!(
        evaluate_report(&model, &data, "test", &[1], None).unwrap(),
        evaluate_report(&restored.model, &data, "test", &[1], None).unwrap()
    );
}

#[test]
fn every_variant_trains_on_multi_step_windows() {
    let data = small_dataset(Mode::MultiStep, 3);
    for name in std::iter::once("none").chain(Ablation::NAMES) {
        let cfg = ModelConfig {
            mode: Mode::MultiStep,
            horizon: 3,
            cta: SolverSpec::rk4(1.0, 0.5).unwrap(),
            ablation: Ablation::parse(name).unwrap(),
            ..tiny_config()
        };
        let mut model = Model::new(cfg, 5).unwrap();
        let history = train(&mut model, &data, &quick_run()).unwrap();
        assert!(history.epochs.iter().all(|e| e.train_mae.is_finite()), "{name}");
        let report = evaluate_report(&model, &data, "test", &[1, 3], Some(0.0)).unwrap();
        assert_eq!(report.variant, model.variant_name());
        assert_eq!(report.rows.len(), 2);
        for row in &report.rows {
            assert!(row.values().iter().all(|(_, v)| v.is_finite()), "{name}");
        }
    }
}

#[test]
fn deeper_integration_stays_finite() {
    let data = small_dataset(Mode::SingleStep, 1);
    for steps in [2.0, 8.0] {
        let cfg = ModelConfig {
            cta: SolverSpec::euler(steps, 1.0).unwrap(),
            cgp: SolverSpec::rk4(1.0, 0.25).unwrap(),
            ..tiny_config()
        };
        let mut model = Model::new(cfg, 8).unwrap();
        let history = train(&mut model, &data, &quick_run()).unwrap();
        let best = history.best_val_mae.unwrap();
        assert!(best.is_finite() && best > 0.0);
    }
}
