//! Trains every variant of an ablation plan under one budget and prints the table.
//!
//! `cargo run --example ablation_sweep -- [plan] [steps] [out_dir]`

use std::path::PathBuf;

use mambacafu::data::{synth_generate, Split, SynthSpec};
use mambacafu::harness::ablate::ablation_table;
use mambacafu::harness::{ablate, TrainConfig};
use mambacafu::{ModelConfig, Variant};

fn main() -> mambacafu::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let plan = args.first().map_or("table7", String::as_str);
    let steps: usize = args.get(1).map_or(20, |s| s.parse().expect("step count"));
    let out = args.get(2).map_or_else(|| std::env::temp_dir().join("ablation_sweep"), PathBuf::from);
    let model = ModelConfig::tiny(Variant::V1);
    let spec = |seed, split| SynthSpec { count: 8, size: model.input_size, num_classes: model.num_classes, seed, split };
    synth_generate(&out.join("train"), spec(5, Split::Train))?;
    synth_generate(&out.join("val"), spec(6, Split::Val))?;
    let base = TrainConfig {
        model,
        batch_size: 4,
        initial_lr: 3e-3,
        epochs: steps.div_ceil(2),
        max_steps: Some(steps),
        train_manifest: Some(out.join("train/manifest.tsv")),
        val_manifest: Some(out.join("val/manifest.tsv")),
        out_dir: out.join("runs"),
        run_id: Some(plan.into()),
        ..TrainConfig::default()
    };
    let rows = ablate(&base, plan)?;
    print!("{}", ablation_table(&rows));
    Ok(())
}
