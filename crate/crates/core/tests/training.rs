//! End-to-end training pipeline: every strategy runs from a generated
//! dataset to an evaluation report with finite numbers, checkpointing and
//! reporting are reproducible bit for bit, and model selection behaves.

use std::fs;

use graphmark::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use graphmark::data::{Dataset, GeneratorConfig};
use graphmark::eval::evaluate;
use graphmark::experiment::build_split_dataset;
use graphmark::model::{ArchDescriptor, ModelParams};
use graphmark::train::{pretrain, train_ssl, Strategy, TrainConfig, TrainData, TrainOutcome};

fn tiny_dataset() -> Dataset {
    let generator = GeneratorConfig { k: 3, image_h: 16, image_w: 16, ..Default::default() };
    build_split_dataset(&generator, 7, 3, 6, 2, 3).unwrap()
}

fn tiny_arch() -> ArchDescriptor {
    ArchDescriptor {
        image_h: 16,
        image_w: 16,
        enc_channels: vec![4, 8],
        enc_strides: vec![2, 2],
        gcn_width: 8,
        gcn_depth: 1,
        cascade_len: 1,
        k: 3,
    }
}

fn tiny_config(strategy: Strategy) -> TrainConfig {
    TrainConfig {
        strategy,
        epochs: 3,
        unlabeled_per_labeled: 2,
        seed: 5,
        ..TrainConfig::default()
    }
}

fn run_strategy(ds: &Dataset, strategy: Strategy) -> TrainOutcome {
    let data = TrainData::from_dataset(ds).unwrap();
    let init = ModelParams::init(&tiny_arch(), 11).unwrap();
    let warm = pretrain(init, &data, &tiny_config(Strategy::Supervised)).unwrap();
    train_ssl(warm.params, &data, &tiny_config(strategy)).unwrap()
}

#[test]
fn every_strategy_trains_to_a_finite_report() {
    let ds = tiny_dataset();
    let data = TrainData::from_dataset(&ds).unwrap();
    let test: Vec<_> = ds
        .split(graphmark::data::Split::Test)
        .into_iter()
        .map(|s| (&s.image, s.landmarks.as_ref().unwrap()))
        .collect();

    for strategy in Strategy::ALL {
        let out = run_strategy(&ds, strategy);
        assert!(out.steps > 0, "{strategy}: no steps taken");
        for e in &out.history {
            assert!(e.labeled_loss.is_finite(), "{strategy}: labeled loss not finite");
            if let Some(u) = e.unlabeled_loss {
                assert!(u.is_finite(), "{strategy}: unlabeled loss not finite");
            }
            if let Some(v) = e.val_error_px {
                assert!(v.is_finite(), "{strategy}: validation error not finite");
            }
        }
        let report =
            evaluate(&out.params, &test, &data.mean_shape, &data.topology, 0.05).unwrap();
        assert!(report.mean_error_px.is_finite(), "{strategy}: test error not finite");
        assert!(report.mean_error_px > 0.0);
        assert!((0.0..=1.0).contains(&report.failure_rate));

        assert_eq!(out.teacher.is_some(), strategy.has_teacher(), "{strategy}: teacher presence");
        let uses_unlabeled = out.history.iter().any(|e| e.unlabeled_loss.is_some());
        assert_eq!(uses_unlabeled, strategy.uses_unlabeled(), "{strategy}: unlabeled usage");
    }
}

#[test]
fn best_epoch_selection_tracks_the_validation_minimum() {
    let ds = tiny_dataset();
    let out = run_strategy(&ds, Strategy::MeanTeacher);
    let best = out.best_epoch.expect("strategy training selects a best epoch");
    let best_val = out.best_val_error_px.unwrap();
    let min_val = out
        .history
        .iter()
        .filter_map(|e| e.val_error_px)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(best_val, min_val, "selected value must be the curve minimum");
    assert_eq!(
        out.history[best].val_error_px,
        Some(best_val),
        "best epoch must point at the minimum"
    );
}

#[test]
fn identical_runs_are_bit_identical_end_to_end() {
    let dir = std::env::temp_dir().join(format!("graphmark-repro-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();

    let mut artifacts: Vec<(Vec<u8>, String)> = Vec::new();
    for round in 0..2 {
        let ds = tiny_dataset();
        let data = TrainData::from_dataset(&ds).unwrap();
        let init = ModelParams::init(&tiny_arch(), 11).unwrap();
        let warm = pretrain(init, &data, &tiny_config(Strategy::Supervised)).unwrap();
        let out = train_ssl(warm.params, &data, &tiny_config(Strategy::MeanTeacher)).unwrap();

        let ckpt = Checkpoint {
            t: out.steps,
            student: out.params.clone(),
            teacher: out.teacher.clone(),
            optimizer: None,
            mean_shape: data.mean_shape.clone(),
            topology: data.topology.clone(),
        };
        let path = dir.join(format!("run{round}.bin"));
        save_checkpoint(&path, &ckpt).unwrap();
        let bytes = fs::read(&path).unwrap();

        let test: Vec<_> = ds
            .split(graphmark::data::Split::Test)
            .into_iter()
            .map(|s| (&s.image, s.landmarks.as_ref().unwrap()))
            .collect();
        let report =
            evaluate(&out.params, &test, &data.mean_shape, &data.topology, 0.05).unwrap();
        let report_json = serde_json::to_string_pretty(&report).unwrap();
        artifacts.push((bytes, report_json));
    }

    assert_eq!(artifacts[0].0, artifacts[1].0, "checkpoint bytes differ between runs");
    assert_eq!(artifacts[0].1, artifacts[1].1, "evaluation reports differ between runs");
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn training_resumes_from_saved_weights() {
    let dir = std::env::temp_dir().join(format!("graphmark-resume-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();

    let ds = tiny_dataset();
    let data = TrainData::from_dataset(&ds).unwrap();
    let init = ModelParams::init(&tiny_arch(), 11).unwrap();
    let warm = pretrain(init, &data, &tiny_config(Strategy::Supervised)).unwrap();

    let ckpt = Checkpoint {
        t: warm.steps,
        student: warm.params.clone(),
        teacher: None,
        optimizer: None,
        mean_shape: data.mean_shape.clone(),
        topology: data.topology.clone(),
    };
    let path = dir.join("warm.bin");
    save_checkpoint(&path, &ckpt).unwrap();
    let loaded = load_checkpoint(&path).unwrap();

    // Weights pass through a 32-bit container, so the resumed run is the
    // deterministic continuation of the loaded weights: running it twice
    // must agree exactly.
    let a = train_ssl(loaded.student.clone(), &data, &tiny_config(Strategy::PiModel)).unwrap();
    let b = train_ssl(loaded.student, &data, &tiny_config(Strategy::PiModel)).unwrap();
    let ta: Vec<&graphmark::Tensor> = a.params.tensors();
    let tb: Vec<&graphmark::Tensor> = b.params.tensors();
    assert_eq!(ta.len(), tb.len());
    for (x, y) in ta.iter().zip(&tb) {
        assert_eq!(x.data(), y.data(), "resumed runs diverged");
    }
    fs::remove_dir_all(&dir).unwrap();
}
