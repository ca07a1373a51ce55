use cafu_tensor::{Tensor, Var};
use mambacafu::ctx::Ctx;
use mambacafu::harness::complexity::{count_params_flops, macs_by_block};
use mambacafu::harness::VARIANTS;
use mambacafu::{MambaCafu, ModelConfig, Variant};

fn counted_macs(cfg: &ModelConfig) -> std::collections::BTreeMap<String, u64> {
    let (model, store) = MambaCafu::new(cfg).unwrap();
    let ctx = Ctx::eval(&store);
    let image = Tensor::zeros(&[1, cfg.in_channels, cfg.input_size, cfg.input_size]);
    model.forward(&ctx, &Var::constant(image)).unwrap();
    ctx.macs_by_block()
}

#[test]
fn analytic_macs_match_counted_macs_per_block() {
    for variant in [Variant::V0, Variant::V1] {
        let cfg = ModelConfig::tiny(variant);
        assert_eq!(macs_by_block(&cfg), counted_macs(&cfg), "{variant:?}");
    }
}

#[test]
fn analytic_macs_follow_every_ablation_variant() {
    for v in VARIANTS.iter() {
        let mut cfg = ModelConfig::tiny(Variant::V1);
        cfg.ablation = v.flags;
        assert_eq!(macs_by_block(&cfg), counted_macs(&cfg), "{}", v.slug());
    }
}

#[test]
fn block_parameters_sum_to_store_total() {
    let cfg = ModelConfig::tiny(Variant::V1);
    let c = count_params_flops(&cfg).unwrap();
    let (_, store) = MambaCafu::new(&cfg).unwrap();
    assert_eq!(c.parameters, store.trainable_count());
    assert_eq!(c.blocks.iter().map(|b| b.parameters).sum::<usize>(), c.parameters);
}
