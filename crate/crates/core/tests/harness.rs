mod common;

use std::fs;

use common::{short_run, synth};
use mambacafu::data::{load_dataset, write_gray8, DatasetManifest, Split};
use mambacafu::harness::checkpoint::{self, CheckpointMeta};
use mambacafu::harness::schedule::CosineWarmRestarts;
use mambacafu::harness::*;
use mambacafu::model::MambaCafu;
use mambacafu::Error;

#[test]
fn schedule_starts_at_the_initial_rate_and_restarts() {
    let s = CosineWarmRestarts::new(0.0025, 2, 7);
    assert_eq!(s.lr(0), 0.0025);
    assert_eq!(s.lr(14), 0.0025);
    assert_eq!(s.lr(28), 0.0025);
    for step in 1..14 {
        assert!(s.lr(step) < s.lr(step - 1), "step {step}");
        assert!(s.lr(step) > 0.0);
    }
    assert!((s.lr(7) - 0.00125).abs() < 1e-15);
}

#[test]
fn zero_epochs_leaves_an_initialised_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(&dir.path().join("data"), 8, 64, 3, 1, Split::Train);
    let mut cfg = short_run(&dir.path().join("runs"), data, None, 0, 4);
    cfg.epochs = 0;
    let run = train(&cfg).unwrap();
    assert!(run.curve.is_empty());
    assert!(run.validation.is_empty());
    let archive = checkpoint::read(&run.last_checkpoint).unwrap();
    assert_eq!(archive.meta.step, 0);
    assert_eq!(archive.meta.seed, cfg.model.seed);
    let (_, fresh) = MambaCafu::new(&cfg.model).unwrap();
    let mut loaded = fresh.clone();
    assert_eq!(checkpoint::load_into(&mut loaded, &archive, false).unwrap(), fresh.len());
    assert_eq!(loaded.max_abs_diff(&fresh), 0.0);
    for f in ["config.txt", "environment.json", "curve.csv", "metrics.json", "samples.csv", "cases.csv"] {
        assert!(run.run_dir.join(f).exists(), "{f}");
    }
}

#[test]
fn a_model_scored_against_its_own_predictions_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    let manifest_path = synth(&data_dir, 4, 64, 3, 2, Split::Test);
    let cfg = short_run(dir.path(), manifest_path.clone(), None, 0, 4).model;
    let (model, store) = MambaCafu::new(&cfg).unwrap();
    let ckpt = dir.path().join("init.ckpt");
    checkpoint::save(&ckpt, &store, &CheckpointMeta::default()).unwrap();

    let manifest = DatasetManifest::read(&manifest_path).unwrap();
    let records = load_dataset(&manifest).unwrap();
    let preds = evaluate::predict_labels(&model, &store, &records, 2).unwrap();
    for record in &records {
        let entry = manifest.entries.iter().find(|e| e.image.file_stem().unwrap() == record.id.as_str()).unwrap();
        let pred = &preds[records.iter().position(|r| r.id == record.id).unwrap()];
        write_gray8(&manifest.resolve(&entry.mask), pred, 64, 64).unwrap();
    }
    let out = dir.path().join("eval");
    let report = evaluate::evaluate(&cfg, &ckpt, &manifest_path, &out, true).unwrap();
    assert_eq!(report.mean_dsc, 1.0);
    assert_eq!(report.accuracy, 1.0);
    assert_eq!(fs::read_dir(out.join("overlays")).unwrap().count(), 4);
}

#[test]
fn a_background_only_predictor_scores_zero_and_logs_skips() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = DatasetManifest::read(&synth(dir.path(), 3, 64, 3, 3, Split::Test)).unwrap();
    let records = load_dataset(&manifest).unwrap();
    let preds: Vec<Vec<u8>> = records.iter().map(|r| vec![0; r.mask.len()]).collect();
    let report = evaluate::report_for(&records, &preds, 3);
    let present: usize = records
        .iter()
        .map(|r| (1..3u8).filter(|c| r.mask.contains(c)).count())
        .sum();
    assert_eq!(report.skipped.len(), present);
    assert!(!report.skipped.is_empty());
    let defined: Vec<f64> = report.samples.iter().flat_map(|s| s.per_class.iter().filter_map(|m| m.hd95)).collect();
    assert_eq!(defined.len(), 2 * records.len() - present);
    assert!(defined.iter().all(|&d| d == 0.0));
    if present == 2 * records.len() {
        assert_eq!(report.mean_dsc, 0.0);
    }
    let out = dir.path().join("out");
    evaluate::write_report(&out, &report).unwrap();
    let log = fs::read_to_string(out.join("skipped.txt")).unwrap();
    assert_eq!(log.lines().count(), present);
}

#[test]
fn evaluation_rejects_empty_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.tsv");
    fs::write(&empty, "#manifest split=test num_classes=3\n").unwrap();
    let cfg = mambacafu::config::ModelConfig::tiny(mambacafu::config::Variant::V1);
    let (_, store) = MambaCafu::new(&cfg).unwrap();
    let ckpt = dir.path().join("c.ckpt");
    checkpoint::save(&ckpt, &store, &CheckpointMeta::default()).unwrap();
    assert!(matches!(evaluate::evaluate(&cfg, &ckpt, &empty, dir.path(), false), Err(Error::Data { .. })));
}

#[test]
fn ablation_plans_resolve_by_table_and_slug() {
    assert_eq!(resolve_plan("table6").unwrap().len(), 5);
    assert_eq!(resolve_plan("table7").unwrap().len(), 4);
    assert_eq!(resolve_plan("all").unwrap().len(), 9);
    let picked = resolve_plan("table6-baseline, table7-full").unwrap();
    assert_eq!(picked.iter().map(|v| v.slug()).collect::<Vec<_>>(), ["table6-baseline", "table7-full"]);
    let err = resolve_plan("table8").unwrap_err();
    assert!(matches!(err, Error::UnknownVariant(ref v) if v == "table8"));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn checkpoints_round_trip_and_reject_mismatches() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = mambacafu::config::ModelConfig::tiny(mambacafu::config::Variant::V1);
    let (_, store) = MambaCafu::new(&cfg).unwrap();
    let path = dir.path().join("a.ckpt");
    let meta = CheckpointMeta { config: "scale = tiny\n".into(), seed: 7, step: 12 };
    checkpoint::save(&path, &store, &meta).unwrap();
    let archive = checkpoint::read(&path).unwrap();
    assert_eq!(archive.meta, meta);
    let mut other = MambaCafu::new(&mambacafu::config::ModelConfig { seed: 99, ..cfg.clone() }).unwrap().1;
    assert!(other.max_abs_diff(&store) > 0.0);
    checkpoint::load_into(&mut other, &archive, false).unwrap();
    assert_eq!(other.max_abs_diff(&store), 0.0);

    let v0 = mambacafu::config::ModelConfig::tiny(mambacafu::config::Variant::V0);
    let mut smaller = MambaCafu::new(&v0).unwrap().1;
    assert!(matches!(checkpoint::load_into(&mut smaller, &archive, false), Err(Error::Checkpoint(_))));

    let mut bytes = fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 8);
    let truncated = dir.path().join("b.ckpt");
    fs::write(&truncated, bytes).unwrap();
    assert!(matches!(checkpoint::read(&truncated), Err(Error::Checkpoint(_))));
}

#[test]
fn report_summarises_one_and_two_runs() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(&dir.path().join("data"), 8, 64, 3, 4, Split::Train);
    let mut cfg = short_run(&dir.path().join("runs"), data, None, 0, 4);
    cfg.epochs = 0;
    let a = train(&cfg).unwrap().run_dir;
    cfg.run_id = Some("second".into());
    let b = train(&cfg).unwrap().run_dir;
    let one = report::report(std::slice::from_ref(&a), &dir.path().join("r1")).unwrap();
    assert_eq!(one.runs.len(), 1);
    let two = report::report(&[a, b, dir.path().join("missing")], &dir.path().join("r2")).unwrap();
    assert_eq!(two.runs.len(), 2);
    assert_eq!(two.missing.len(), 1);
    let md = fs::read_to_string(dir.path().join("r2/summary.md")).unwrap();
    assert_eq!(md.lines().filter(|l| l.starts_with("| ") && l.contains("tiny")).count(), 2);
}

#[test]
fn reruns_are_bitwise_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(&dir.path().join("data"), 8, 64, 3, 5, Split::Train);
    let run = |name: &str| {
        let mut cfg = short_run(&dir.path().join(name), data.clone(), None, 3, 4);
        cfg.augment = true;
        train(&cfg).unwrap()
    };
    let (a, b) = (run("a"), run("b"));
    assert_eq!(
        fs::read(a.run_dir.join("curve.csv")).unwrap(),
        fs::read(b.run_dir.join("curve.csv")).unwrap()
    );
    assert_eq!(a.curve.len(), 3);
    let load = |p: &std::path::Path| checkpoint::read(p).unwrap();
    assert_eq!(load(&a.last_checkpoint), load(&b.last_checkpoint));
}
