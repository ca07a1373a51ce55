//! Parameter and MAC breakdown per block.
//!
//! `cargo run --example count_complexity -- [v0|v1] [full|tiny] [input_size]`

use mambacafu::harness::count_params_flops;
use mambacafu::{ModelConfig, Variant};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let variant = match args.first().map(String::as_str) {
        Some("v0") => Variant::V0,
        _ => Variant::V1,
    };
    let mut cfg = match args.get(1).map(String::as_str) {
        Some("tiny") => ModelConfig::tiny(variant),
        _ => ModelConfig::full(variant),
    };
    if let Some(size) = args.get(2) {
        cfg.input_size = size.parse()?;
    }
    let c = count_params_flops(&cfg)?;
    println!("{variant:?} {:?} at {}x{}", cfg.scale, cfg.input_size, cfg.input_size);
    print!("{}", c.render());
    println!("{:.2}M parameters, {:.2} GMac", c.mparams(), c.gmac());
    Ok(())
}
