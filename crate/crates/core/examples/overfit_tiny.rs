//! Fits the tiny model to eight synthetic images and reports training-set DSC.
//!
//! `cargo run --example overfit_tiny -- [steps] [out_dir]`

use std::path::PathBuf;
use std::time::Instant;

use mambacafu::data::{synth_generate, Split, SynthSpec};
use mambacafu::harness::{train, TrainConfig};
use mambacafu::{ModelConfig, Variant};

fn main() -> mambacafu::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let steps: usize = args.first().map_or(200, |s| s.parse().expect("step count"));
    let out = args.get(1).map_or_else(|| std::env::temp_dir().join("overfit_tiny"), PathBuf::from);
    let model = ModelConfig::tiny(Variant::V1);
    let manifest = synth_generate(
        &out.join("data"),
        SynthSpec {
            count: 8,
            size: model.input_size,
            num_classes: model.num_classes,
            seed: 11,
            split: Split::Train,
        },
    )?;
    let batch_size = std::env::var("BATCH").map_or(8, |b| b.parse().expect("batch size"));
    let epochs = steps / 8usize.div_ceil(batch_size);
    let cfg = TrainConfig {
        model,
        batch_size,
        initial_lr: 3e-3,
        epochs,
        max_steps: Some(steps),
        augment: false,
        val_interval: epochs,
        restart_epochs: epochs,
        train_manifest: Some(out.join("data").join("manifest.tsv")),
        out_dir: out.join("runs"),
        run_id: Some("overfit".into()),
        ..TrainConfig::default()
    };
    assert_eq!(manifest.entries.len(), 8);
    let start = Instant::now();
    let run = train(&cfg)?;
    for r in run.curve.iter().step_by((steps / 10).max(1)) {
        println!("{r}");
    }
    println!(
        "{} steps in {:.1}s; training-set mean DSC {:.4}",
        run.curve.len(),
        start.elapsed().as_secs_f64(),
        run.report.mean_dsc
    );
    Ok(())
}
