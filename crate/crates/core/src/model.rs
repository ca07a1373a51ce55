//! The full segmentation network.

use cafu_tensor::{Tensor, TensorError, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{validate_config, ModelConfig};
use crate::ctx::Ctx;
use crate::decoder::{Decoder, DecoderOutputs};
use crate::encoder::{Encoder, EncoderOutputs};
use crate::nn::Conv2d;
use crate::params::{Builder, ParamStore};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct MambaCafu {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub head: Conv2d,
}

/// Logits together with every named intermediate tensor.
#[derive(Clone, Debug)]
pub struct ForwardOutputs {
    pub logits: Var,
    pub encoder: EncoderOutputs,
    pub decoder: DecoderOutputs,
}

impl ForwardOutputs {
    /// Encoder then decoder tensors, in shape-contract order.
    pub fn named_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let enc = self.encoder.named().into_iter().map(|(n, v)| (n, v.shape().to_vec()));
        let dec = self.decoder.named.iter().map(|(n, v)| (n.clone(), v.shape().to_vec()));
        enc.chain(dec).collect()
    }
}

impl MambaCafu {
    /// Validates `cfg` and initialises parameters from `cfg.seed`.
    pub fn new(cfg: &ModelConfig) -> Result<(Self, ParamStore)> {
        validate_config(cfg).into_result()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut b = Builder::new(&mut store, &mut rng);
        let encoder = Encoder::new(&mut b.sub("encoder"), cfg)?;
        let decoder = Decoder::new(&mut b.sub("decoder"), cfg)?;
        let head = Conv2d::pointwise(&mut b.sub("head"), cfg.stem_channels, cfg.num_classes, true);
        let model = Self {
            config: cfg.clone(),
            encoder,
            decoder,
            head,
        };
        Ok((model, store))
    }

    fn check_input(&self, image: &Var) -> Result<()> {
        let c = &self.config;
        match *image.shape() {
            [n, ch, h, w] if n > 0 && ch == c.in_channels && h == c.input_size && w == c.input_size => Ok(()),
            _ => Err(Error::Shape {
                junction: "input".into(),
                source: TensorError::Shape {
                    op: "forward",
                    detail: format!(
                        "expected [N, {}, {2}, {2}], got {:?}",
                        c.in_channels,
                        image.shape(),
                        c.input_size
                    ),
                },
            }),
        }
    }

    pub fn forward_all(&self, ctx: &Ctx, image: &Var) -> Result<ForwardOutputs> {
        self.check_input(image)?;
        let encoder = self.encoder.forward(ctx, image)?;
        let decoder = self.decoder.forward(ctx, &encoder.x)?;
        let logits = ctx.scoped("head", || self.head.forward(ctx, decoder.last()))?;
        ctx.observe("logits", &logits)?;
        Ok(ForwardOutputs {
            logits,
            encoder,
            decoder,
        })
    }

    /// Raw class logits `[N, num_classes, H, W]`.
    pub fn forward(&self, ctx: &Ctx, image: &Var) -> Result<Var> {
        Ok(self.forward_all(ctx, image)?.logits)
    }

    /// Inference on a batch tensor with running normalisation statistics.
    pub fn predict(&self, store: &ParamStore, image: &Tensor) -> Result<Tensor> {
        let ctx = Ctx::eval(store);
        Ok(self.forward(&ctx, &Var::constant(image.clone()))?.value().clone())
    }
}
