//! Runs one forward pass and prints every named tensor next to its expected shape.
//!
//! `cargo run --example shape_contract -- [v0|v1] [full|tiny]`

use std::time::Instant;

use cafu_tensor::{Tensor, Var};
use mambacafu::config::expected_shapes;
use mambacafu::ctx::Ctx;
use mambacafu::{MambaCafu, ModelConfig, Scale, Variant};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> mambacafu::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let variant: Variant = args.first().map_or(Ok(Variant::V1), |s| s.parse())?;
    let scale: Scale = args.get(1).map_or(Ok(Scale::Full), |s| s.parse())?;
    let cfg = match scale {
        Scale::Full => ModelConfig::full(variant),
        Scale::Tiny => ModelConfig::tiny(variant),
    };
    let (model, store) = MambaCafu::new(&cfg)?;
    println!("{variant} {scale}: {} trainable parameters", store.trainable_count());

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let image = Tensor::uniform(&[1, cfg.in_channels, cfg.input_size, cfg.input_size], 0.0, 1.0, &mut rng);
    let ctx = Ctx::eval(&store);
    let start = Instant::now();
    let out = model.forward_all(&ctx, &Var::constant(image))?;
    println!("forward: {:.1}s, {:.2} GMac", start.elapsed().as_secs_f64(), ctx.total_macs() as f64 / 1e9);

    let expected = expected_shapes(&cfg)?;
    for ((name, got), (_, spec)) in out.named_shapes().iter().zip(&expected) {
        let want = [1, spec.channels, spec.resolution, spec.resolution];
        let mark = if got[..] == want { "ok" } else { "MISMATCH" };
        println!("{name:>10} {got:?} {mark}");
    }
    println!("{:>10} {:?}", "logits", out.logits.shape());
    Ok(())
}
