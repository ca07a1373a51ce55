mod common;

use std::collections::BTreeSet;
use std::fs;

use common::synth;
use mambacafu::data::*;
use mambacafu::Error;
use rand::Rng;

fn dataset(count: usize, classes: usize, seed: u64) -> (tempfile::TempDir, Vec<SampleRecord>) {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), count, 64, classes, seed, Split::Train);
    let records = load_dataset(&DatasetManifest::read(&manifest).unwrap()).unwrap();
    (dir, records)
}

#[test]
fn same_seed_writes_identical_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    synth(a.path(), 3, 64, 3, 9, Split::Train);
    synth(b.path(), 3, 64, 3, 9, Split::Train);
    let names: BTreeSet<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 7);
    for name in names {
        assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap(), "{name:?}");
    }
}

#[test]
fn single_foreground_class_gives_two_labels() {
    let (_dir, records) = dataset(1, 2, 1);
    let labels: BTreeSet<u8> = records[0].mask.iter().copied().collect();
    assert_eq!(labels, BTreeSet::from([0, 1]));
}

#[test]
fn foreground_fraction_stays_in_range_over_a_hundred_images() {
    let (_dir, records) = dataset(100, 3, 2);
    for r in &records {
        let fg = r.mask.iter().filter(|&&l| l != 0).count() as f64 / r.mask.len() as f64;
        assert!((0.05..=0.5).contains(&fg), "{}: {fg}", r.id);
        assert!(r.mask.iter().all(|&l| l < 3));
        assert_eq!(r.image.shape(), &[1, 64, 64]);
    }
}

#[test]
fn loading_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = DatasetManifest::read(&synth(dir.path(), 4, 64, 3, 3, Split::Val)).unwrap();
    assert_eq!(manifest.split, Split::Val);
    assert_eq!(load_dataset(&manifest).unwrap(), load_dataset(&manifest).unwrap());
}

#[test]
fn empty_manifest_loads_nothing() {
    let m = DatasetManifest::parse("#manifest split=test num_classes=2\n", std::path::Path::new(".")).unwrap();
    assert!(load_dataset(&m).unwrap().is_empty());
}

#[test]
fn out_of_range_label_names_the_sample() {
    let dir = tempfile::tempdir().unwrap();
    let path = synth(dir.path(), 2, 64, 3, 4, Split::Train);
    let mut manifest = DatasetManifest::read(&path).unwrap();
    manifest.num_classes = 2;
    manifest.palette.truncate(2);
    let masks: Vec<u8> = load_dataset(&DatasetManifest::read(&path).unwrap()).unwrap().into_iter().flat_map(|r| r.mask).collect();
    assert!(masks.contains(&2), "corpus needs a label 2 for this check");
    match load_dataset(&manifest) {
        Err(Error::Data { id, reason }) => assert!(id.starts_with("image_") && reason.contains("label"), "{id}: {reason}"),
        other => panic!("expected data error, got {other:?}"),
    }
}

#[test]
fn missing_files_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = synth(dir.path(), 1, 64, 2, 5, Split::Train);
    fs::remove_file(dir.path().join("mask_0000.png")).unwrap();
    assert!(matches!(load_dataset(&DatasetManifest::read(&path).unwrap()), Err(Error::Data { .. })));
}

#[test]
fn identity_augmentation_leaves_sample_unchanged() {
    let (_dir, records) = dataset(1, 3, 6);
    assert_eq!(augment(&records[0], AugmentParams::IDENTITY), records[0]);
}

#[test]
fn augmentation_never_introduces_labels() {
    let (_dir, records) = dataset(6, 3, 7);
    let mut r = common::rng(8);
    for rec in &records {
        let before: BTreeSet<u8> = rec.mask.iter().copied().collect();
        for _ in 0..4 {
            let out = augment(rec, AugmentParams::sample(&mut r));
            let after: BTreeSet<u8> = out.mask.iter().copied().collect();
            assert!(after.is_subset(&before), "{before:?} -> {after:?}");
        }
    }
}

#[test]
fn rotation_round_trip_agrees_on_most_pixels() {
    let (_dir, records) = dataset(20, 3, 10);
    let mut r = common::rng(11);
    let mut worst = 1.0f64;
    for rec in &records {
        let angle = r.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG);
        let turn = |s: &SampleRecord, a: f64| augment(s, AugmentParams { hflip: false, vflip: false, angle_deg: a });
        let back = turn(&turn(rec, angle), -angle);
        let agree = back.mask.iter().zip(&rec.mask).filter(|(a, b)| a == b).count() as f64 / rec.mask.len() as f64;
        worst = worst.min(agree);
    }
    assert!(worst >= 0.97, "worst agreement {worst}");
}

#[test]
fn synthetic_generation_rejects_unusable_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec { count: 1, size: 50, num_classes: 3, seed: 0, split: Split::Train };
    assert!(matches!(synth_generate(dir.path(), spec), Err(Error::Config(_))));
}

#[test]
fn collate_stacks_and_adapts_channels() {
    let (_dir, records) = dataset(2, 3, 12);
    let refs: Vec<&SampleRecord> = records.iter().collect();
    let (images, labels) = collate(&refs, 3).unwrap();
    assert_eq!(images.shape(), &[2, 3, 64, 64]);
    assert_eq!(labels.len(), 2 * 64 * 64);
    assert_eq!(images.get(&[1, 2, 5, 7]), records[1].image.get(&[0, 5, 7]));
}
