//! Trains briefly, then evaluates the saved checkpoint on a held-out synthetic split
//! and writes metrics plus boundary overlays.
//!
//! `cargo run --example evaluate_checkpoint -- [steps] [out_dir]`

use std::path::PathBuf;

use mambacafu::data::{synth_generate, Split, SynthSpec};
use mambacafu::harness::{evaluate, train, TrainConfig};
use mambacafu::{ModelConfig, Variant};

fn main() -> mambacafu::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let steps: usize = args.first().map_or(40, |s| s.parse().expect("step count"));
    let out = args.get(1).map_or_else(|| std::env::temp_dir().join("evaluate_checkpoint"), PathBuf::from);
    let model = ModelConfig::tiny(Variant::V1);
    let spec = |count, seed, split| SynthSpec { count, size: model.input_size, num_classes: model.num_classes, seed, split };
    synth_generate(&out.join("train"), spec(8, 3, Split::Train))?;
    synth_generate(&out.join("test"), spec(6, 4, Split::Test))?;
    let cfg = TrainConfig {
        model: model.clone(),
        batch_size: 4,
        initial_lr: 3e-3,
        epochs: steps.div_ceil(2),
        max_steps: Some(steps),
        train_manifest: Some(out.join("train/manifest.tsv")),
        out_dir: out.join("runs"),
        run_id: Some("short".into()),
        ..TrainConfig::default()
    };
    let run = train(&cfg)?;
    let report = evaluate(&model, &run.last_checkpoint, &out.join("test/manifest.tsv"), &out.join("eval"), true)?;
    for (class, dsc, iou, hd) in &report.per_class {
        let hd = hd.map_or("-".into(), |h| format!("{h:.2}"));
        println!("class {class}: DSC {dsc:.3} IoU {iou:.3} HD95 {hd}");
    }
    println!("mean DSC {:.3}, accuracy {:.3}, {} skipped HD95 entries", report.mean_dsc, report.accuracy, report.skipped.len());
    println!("report and overlays in {}", out.join("eval").display());
    Ok(())
}
