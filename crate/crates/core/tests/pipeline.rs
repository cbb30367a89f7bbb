//! Model files, runs, reports and prediction end to end.

use leafnet::data::{batches, load_dataset, split, synthetic_blobs, write_dataset, write_imgr, SyntheticTask};
use leafnet::densenet::{build_model, load_model, param_count, save_model, write_model, DenseNetConfig, HeadConfig};
use leafnet::experiment::{
    predict_cmd, predict_dataset, run_sweep, run_training, ExperimentConfig, Report, SweepAxis, SyntheticSpec,
    CURVE_FILE, CURVE_HEADER, MODEL_FILE, REPORT_FILE, SWEEP_CSV,
};
use leafnet::Error;

fn small_config(out: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::toy();
    cfg.synthetic = Some(SyntheticSpec {
        task: SyntheticTask::B,
        per_class: 8,
    });
    cfg.epochs = 2;
    cfg.out = out.to_path_buf();
    cfg
}

#[test]
fn model_roundtrip_is_bitwise() {
    let mut model = build_model(&DenseNetConfig::toy(), &HeadConfig::new(8, 0.3, 3), 5).unwrap();
    model.freeze_backbone().unwrap();
    model.meta.class_names = vec!["a".into(), "b".into(), "c".into()];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.dgm");
    save_model(&model, &path).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back, model);
    assert_eq!(write_model(&back).unwrap(), std::fs::read(&path).unwrap());
}

#[test]
fn payload_element_count_equals_total_params() {
    let model = build_model(&DenseNetConfig::toy(), &HeadConfig::new(8, 0.1, 3), 1).unwrap();
    let bytes = write_model(&model).unwrap();
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let payload = bytes.len() - 16 - header_len - 4;
    assert_eq!(payload % 4, 0);
    assert_eq!(payload / 4, param_count(&model).total);
}

#[test]
fn frozen_eval_forward_is_deterministic() {
    let mut model = build_model(&DenseNetConfig::toy(), &HeadConfig::new(8, 0.5, 3), 2).unwrap();
    model.freeze_backbone().unwrap();
    let ds = synthetic_blobs(SyntheticTask::A, 2, 32, 0).unwrap();
    let batch = batches(&ds, 6, false, 0, 0).unwrap().next().unwrap();
    let a = model.infer(&batch.inputs).unwrap();
    let b = model.infer(&batch.inputs).unwrap();
    assert_eq!(a, b);
}

#[test]
fn load_split_batch_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&synthetic_blobs(SyntheticTask::B, 5, 12, 3).unwrap(), dir.path()).unwrap();
    let run = || {
        let ds = load_dataset(dir.path()).unwrap();
        let (train, _) = split(&ds, 0.8, 9).unwrap();
        batches(&train, 4, true, 9, 1)
            .unwrap()
            .flat_map(|b| b.inputs.into_data())
            .map(f32::to_bits)
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn zero_epochs_gives_empty_curve() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.epochs = 0;
    let report = run_training(&cfg).unwrap();
    assert!(report.curve.is_empty());
    assert_eq!(report.validation.total, 5); // round(0.8 · 24) = 19 train
    let curve = std::fs::read_to_string(dir.path().join(CURVE_FILE)).unwrap();
    assert_eq!(curve, format!("{CURVE_HEADER}\n"));
}

#[test]
fn identical_runs_write_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_training(&small_config(a.path())).unwrap();
    let mut cfg_b = small_config(b.path());
    cfg_b.out = a.path().to_path_buf();
    // same out path so the echoed config matches; copy away in between
    let first_report = std::fs::read(a.path().join(REPORT_FILE)).unwrap();
    let first_model = std::fs::read(a.path().join(MODEL_FILE)).unwrap();
    let rb = run_training(&cfg_b).unwrap();
    assert_eq!(std::fs::read(a.path().join(REPORT_FILE)).unwrap(), first_report);
    assert_eq!(std::fs::read(a.path().join(MODEL_FILE)).unwrap(), first_model);
    assert_eq!(ra.curve, rb.curve);
    assert_eq!(ra.curve.len(), 2);
}

#[test]
fn single_value_sweep_matches_training_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(&dir.path().join("sweep"));
    let sweep = run_sweep(&cfg, &SweepAxis::Dropout(vec![cfg.head_dropout])).unwrap();
    assert_eq!(sweep.rows.len(), 1);
    let run = run_training(&small_config(&dir.path().join("run"))).unwrap();
    let row = &sweep.rows[0];
    assert_eq!(row.train_acc, run.train_accuracy);
    assert_eq!(row.val_acc, run.validation.accuracy);
    assert_eq!(row.metrics, run.validation);
    assert!(sweep.recompute_ok());
    let csv = std::fs::read_to_string(dir.path().join("sweep").join(SWEEP_CSV)).unwrap();
    assert_eq!(csv, sweep.to_csv());
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn sweep_rows_share_split_and_frozen_weights() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.freeze = true;
    cfg.epochs = 1;
    run_sweep(&cfg, &SweepAxis::Optimizer(leafnet::optim::OptimizerKind::ALL.to_vec())).unwrap();
    let models: Vec<_> = ["adam", "sgd", "rmsprop"]
        .iter()
        .map(|k| load_model(dir.path().join(format!("optimizer-{k}")).join(MODEL_FILE)).unwrap())
        .collect();
    let n = models[0].meta.backbone_len;
    for m in &models[1..] {
        assert_eq!(m.layers[..n], models[0].layers[..n]);
        assert_ne!(m.layers[n..], models[0].layers[n..]);
    }
}

#[test]
fn sweep_failure_names_the_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let err = run_sweep(&cfg, &SweepAxis::Dropout(vec![0.1, 1.5])).unwrap_err();
    assert!(err.to_string().contains("dropout = 1.5"), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn evaluation_leaves_the_model_untouched() {
    let dir = tempfile::tempdir().unwrap();
    run_training(&small_config(dir.path())).unwrap();
    let model = load_model(dir.path().join(MODEL_FILE)).unwrap();
    let before = write_model(&model).unwrap();
    let ds = synthetic_blobs(SyntheticTask::B, 3, 32, 1).unwrap();
    let a = predict_dataset(&model, &ds, true).unwrap();
    let b = predict_dataset(&model, &ds, true).unwrap();
    assert_eq!(a, b);
    assert_eq!(write_model(&model).unwrap(), before);
}

#[test]
fn prediction_reports() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(&dir.path().join("run"));
    cfg.synthetic = Some(SyntheticSpec {
        task: SyntheticTask::A,
        per_class: 30,
    });
    cfg.epochs = 25;
    let report = run_training(&cfg).unwrap();

    // 40 labeled fixtures written as IMGR files
    let fixtures = synthetic_blobs(SyntheticTask::A, 14, 32, 77).unwrap();
    let mut paths = Vec::new();
    let mut labels = Vec::new();
    for (i, r) in fixtures.records.iter().take(40).enumerate() {
        let p = dir.path().join(format!("img{i:02}.imgr"));
        write_imgr(r, &p).unwrap();
        paths.push(p);
        labels.push(r.label);
    }
    let labeled = predict_cmd(&report.model_path, &paths, Some(&labels)).unwrap();
    let m = labeled.metrics.as_ref().unwrap();
    assert_eq!(m.total, 40);
    assert_eq!(m.summary.correct_count, m.correct_count);
    assert_eq!(m.summary.accuracy, m.correct_count as f64 / 40.0);
    assert!(m.correct_count >= 36, "only {} of 40 correct", m.correct_count);
    for p in &labeled.predictions {
        let s: f32 = p.probabilities.iter().sum();
        assert!((s - 1.0).abs() < 1e-5);
    }

    let unlabeled = predict_cmd(&report.model_path, &paths[..3], None).unwrap();
    assert!(unlabeled.metrics.is_none());
    assert!(!unlabeled.to_text().unwrap().contains("metrics"));
    assert_eq!(unlabeled.predictions.len(), 3);

    let err = predict_cmd(&report.model_path, &paths[..2], Some(&[0, 3])).unwrap_err();
    assert!(matches!(err, Error::Data(_)));
    let model = load_model(&report.model_path).unwrap();
    let two_classes = leafnet::data::Dataset::new(vec![fixtures.records[0].clone()], vec!["x".into(), "y".into()]).unwrap();
    assert!(predict_dataset(&model, &two_classes, true).is_err());
}

#[test]
fn pretrained_backbone_must_match_input_size() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_training(&small_config(&dir.path().join("a"))).unwrap();
    let mut cfg = small_config(&dir.path().join("b"));
    cfg.pretrained = Some(report.model_path);
    cfg.input_size = 64;
    assert_eq!(run_training(&cfg).unwrap_err().exit_code(), 2);
}
