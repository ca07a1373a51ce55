//! Writes a synthetic train/val pair of shape-on-noise datasets and prints their label statistics.
//!
//! `cargo run --example synth_dataset -- [out_dir] [count] [size]`

use std::path::PathBuf;

use mambacafu::data::{load_dataset, synth_generate, Split, SynthSpec};

fn main() -> mambacafu::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = args.first().map_or_else(|| std::env::temp_dir().join("synth_dataset"), PathBuf::from);
    let count: usize = args.get(1).map_or(16, |s| s.parse().expect("count"));
    let size: usize = args.get(2).map_or(64, |s| s.parse().expect("size"));
    for (split, seed) in [(Split::Train, 1), (Split::Val, 2)] {
        let dir = out.join(split.to_string());
        let manifest = synth_generate(&dir, SynthSpec { count, size, num_classes: 3, seed, split })?;
        let records = load_dataset(&manifest)?;
        let mut histogram = vec![0usize; manifest.num_classes];
        for r in &records {
            for &l in &r.mask {
                histogram[usize::from(l)] += 1;
            }
        }
        let total: usize = histogram.iter().sum();
        println!("{split}: {} samples in {}", records.len(), dir.display());
        for (name, n) in manifest.palette.iter().zip(&histogram) {
            println!("  {name:<12} {:>6.2}%", 100.0 * *n as f64 / total as f64);
        }
    }
    Ok(())
}
