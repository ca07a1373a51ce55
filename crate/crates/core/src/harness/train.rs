use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cafu_tensor::optim::{Adam, WeightDecay};
use cafu_tensor::{Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{self, CheckpointMeta};
use super::evaluate::{evaluate_records, write_report};
use super::schedule::CosineWarmRestarts;
use crate::config::{parse_value, KeyValues, ModelConfig};
use crate::ctx::Ctx;
use crate::data::{augment, collate, load_dataset, AugmentParams, DatasetManifest, SampleRecord};
use crate::losses::combined_loss;
use crate::metrics::MetricsReport;
use crate::model::MambaCafu;
use crate::params::{ParamId, ParamStore};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    /// Decoupled weight decay.
    AdamW { weight_decay: f64 },
    Adam,
}

impl OptimizerKind {
    fn weight_decay(self) -> WeightDecay {
        match self {
            Self::AdamW { weight_decay } => WeightDecay::Decoupled(weight_decay),
            Self::Adam => WeightDecay::None,
        }
    }
}

/// Per-dataset hyper-parameter defaults.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetPreset {
    Synapse,
    Btcv,
    Acdc,
    Isic,
    Glas,
    MoNuSeg,
}

impl FromStr for DatasetPreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "synapse" => Self::Synapse,
            "btcv" => Self::Btcv,
            "acdc" => Self::Acdc,
            "isic" => Self::Isic,
            "glas" => Self::Glas,
            "monuseg" => Self::MoNuSeg,
            _ => return Err(Error::config(format!("unknown dataset preset `{s}`"))),
        })
    }
}

impl DatasetPreset {
    pub fn apply(self, cfg: &mut TrainConfig) {
        let adamw = OptimizerKind::AdamW { weight_decay: 1e-4 };
        let (lr, batch, alpha, epochs, optimizer) = match self {
            Self::Synapse => (0.0025, 18, 0.8, 100, adamw),
            Self::Btcv => (0.003, 18, 0.6, 100, adamw),
            Self::Acdc => (0.01, 12, 0.6, 400, adamw),
            Self::Isic => (0.01, 6, 0.6, 100, adamw),
            Self::Glas | Self::MoNuSeg => (0.1, 16, 0.5, 100, OptimizerKind::Adam),
        };
        cfg.initial_lr = lr;
        cfg.batch_size = batch;
        cfg.alpha = alpha;
        cfg.epochs = epochs;
        cfg.optimizer = optimizer;
        cfg.restart_epochs = 2;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    /// Weight of the Dice term.
    pub alpha: f64,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub epochs: usize,
    /// Stops after this many optimizer steps even mid-epoch.
    pub max_steps: Option<usize>,
    pub optimizer: OptimizerKind,
    /// Warm-restart period in epochs.
    pub restart_epochs: usize,
    pub augment: bool,
    /// Epochs between validation passes; the last epoch is always validated.
    pub val_interval: usize,
    pub bn_momentum: f64,
    pub deterministic: bool,
    pub train_manifest: Option<PathBuf>,
    pub val_manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub run_id: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let mut cfg = Self {
            model: ModelConfig::default(),
            alpha: 0.0,
            batch_size: 0,
            initial_lr: 0.0,
            epochs: 0,
            max_steps: None,
            optimizer: OptimizerKind::Adam,
            restart_epochs: 2,
            augment: true,
            val_interval: 1,
            bn_momentum: 0.1,
            deterministic: true,
            train_manifest: None,
            val_manifest: None,
            out_dir: PathBuf::from("runs"),
            run_id: None,
        };
        DatasetPreset::Synapse.apply(&mut cfg);
        cfg
    }
}

impl TrainConfig {
    /// Model keys, training keys and an optional `preset` applied first.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let (model, rest) = ModelConfig::from_key_values_partial(kv)?;
        let mut cfg = Self {
            model,
            ..Self::default()
        };
        if let Some(p) = kv.0.get("preset") {
            p.parse::<DatasetPreset>()?.apply(&mut cfg);
        }
        for key in rest {
            let v = &kv.0[&key];
            match key.as_str() {
                "preset" => {}
                "alpha" => cfg.alpha = parse_value(&key, v)?,
                "batch_size" => cfg.batch_size = parse_value(&key, v)?,
                "lr" => cfg.initial_lr = parse_value(&key, v)?,
                "epochs" => cfg.epochs = parse_value(&key, v)?,
                "max_steps" => cfg.max_steps = Some(parse_value(&key, v)?),
                "restart_epochs" => cfg.restart_epochs = parse_value(&key, v)?,
                "augment" => cfg.augment = parse_value(&key, v)?,
                "val_interval" => cfg.val_interval = parse_value(&key, v)?,
                "bn_momentum" => cfg.bn_momentum = parse_value(&key, v)?,
                "deterministic" => cfg.deterministic = parse_value(&key, v)?,
                "optimizer" => {
                    cfg.optimizer = match v.as_str() {
                        "adam" => OptimizerKind::Adam,
                        "adamw" => OptimizerKind::AdamW { weight_decay: 1e-4 },
                        _ => return Err(Error::config(format!("optimizer `{v}` (expected adam or adamw)"))),
                    }
                }
                "weight_decay" => {
                    let wd = parse_value(&key, v)?;
                    cfg.optimizer = OptimizerKind::AdamW { weight_decay: wd };
                }
                "train_manifest" => cfg.train_manifest = Some(v.into()),
                "val_manifest" => cfg.val_manifest = Some(v.into()),
                "out_dir" => cfg.out_dir = v.into(),
                "run_id" => cfg.run_id = Some(v.clone()),
                _ => return Err(Error::config(format!("unknown key `{key}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = self.model.to_key_values();
        let mut put = |k: &str, v: String| {
            kv.0.insert(k.to_string(), v);
        };
        put("alpha", self.alpha.to_string());
        put("batch_size", self.batch_size.to_string());
        put("lr", self.initial_lr.to_string());
        put("epochs", self.epochs.to_string());
        put("restart_epochs", self.restart_epochs.to_string());
        put("augment", self.augment.to_string());
        put("val_interval", self.val_interval.to_string());
        put("bn_momentum", self.bn_momentum.to_string());
        put("deterministic", self.deterministic.to_string());
        match self.optimizer {
            OptimizerKind::Adam => put("optimizer", "adam".into()),
            OptimizerKind::AdamW { weight_decay } => {
                put("optimizer", "adamw".into());
                put("weight_decay", weight_decay.to_string());
            }
        }
        if let Some(s) = self.max_steps {
            put("max_steps", s.to_string());
        }
        if let Some(p) = &self.train_manifest {
            put("train_manifest", p.display().to_string());
        }
        if let Some(p) = &self.val_manifest {
            put("val_manifest", p.display().to_string());
        }
        kv
    }

    pub fn validate(&self) -> Result<()> {
        let mut v = crate::config::validate_config(&self.model).violations;
        if !(0.0..=1.0).contains(&self.alpha) {
            v.push(format!("alpha must lie in [0, 1] (got {})", self.alpha));
        }
        if self.val_interval == 0 {
            v.push("val_interval must be at least 1".into());
        }
        if self.batch_size == 0 {
            v.push("batch_size must be at least 1".into());
        }
        if !(self.initial_lr > 0.0) {
            v.push(format!("lr must be positive (got {})", self.initial_lr));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            v.push(format!("bn_momentum must lie in [0, 1] (got {})", self.bn_momentum));
        }
        crate::config::ValidationResult { violations: v }.into_result()
    }

    pub fn run_id(&self) -> String {
        self.run_id.clone().unwrap_or_else(|| {
            format!("{}-{}-seed{}", self.model.variant, self.model.scale, self.model.seed)
        })
    }
}

/// Loss and learning rate of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

/// Model, parameters and optimizer state of one optimisation run.
pub struct Trainer {
    pub model: MambaCafu,
    pub store: ParamStore,
    optimizer: Adam,
    pub schedule: CosineWarmRestarts,
    alpha: f64,
    bn_momentum: f64,
    steps: usize,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig, steps_per_epoch: usize) -> Result<Self> {
        cfg.validate()?;
        let (model, store) = MambaCafu::new(&cfg.model)?;
        Ok(Self {
            model,
            store,
            optimizer: Adam::new(cfg.optimizer.weight_decay()),
            schedule: CosineWarmRestarts::new(cfg.initial_lr, cfg.restart_epochs, steps_per_epoch),
            alpha: cfg.alpha,
            bn_momentum: cfg.bn_momentum,
            steps: 0,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Loss and per-parameter gradients of one batch in training mode,
    /// without updating anything.
    pub fn loss_and_grads(&self, images: &Tensor, labels: &[u8]) -> Result<(f64, Vec<(ParamId, Tensor)>)> {
        let tape = Tape::new();
        let ctx = Ctx::train(&self.store, &tape);
        let logits = self.model.forward(&ctx, &Var::constant(images.clone()))?;
        let loss = combined_loss(&logits, labels, self.alpha)?;
        let value = loss.value().data()[0];
        let grads = tape.backward(&loss)?;
        Ok((value, ctx.param_grads(&grads)))
    }

    /// One optimizer step on a `[N, C, H, W]` batch with flat labels.
    pub fn step(&mut self, images: &Tensor, labels: &[u8]) -> Result<(f64, f64)> {
        let tape = Tape::new();
        let ctx = Ctx::train(&self.store, &tape);
        let logits = self.model.forward(&ctx, &Var::constant(images.clone()))?;
        let loss = combined_loss(&logits, labels, self.alpha)?;
        let value = loss.value().data()[0];
        if !value.is_finite() {
            let l = logits.value();
            return Err(Error::Numeric(format!(
                "loss {value} at step {}; batch min {:.4e} max {:.4e} mean {:.4e}; logits min {:.4e} max {:.4e}",
                self.steps,
                images.min(),
                images.max(),
                images.mean(),
                l.min(),
                l.max()
            )));
        }
        let grads: HashMap<ParamId, Tensor> = ctx.param_grads(&tape.backward(&loss)?).into_iter().collect();
        let updates = ctx.take_bn_updates();
        drop(ctx);
        let lr = self.schedule.lr(self.steps);
        let (ids, mut tensors): (Vec<ParamId>, Vec<&mut Tensor>) = self.store.trainable_mut().into_iter().unzip();
        let slots: Vec<Option<&Tensor>> = ids.iter().map(|id| grads.get(id)).collect();
        self.optimizer.step(lr, &mut tensors, &slots);
        self.store.apply_batch_stats(&updates, self.bn_momentum);
        self.steps += 1;
        Ok((value, lr))
    }
}

/// Files produced by [`train`].
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub run_dir: PathBuf,
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
    pub curve: Vec<StepRecord>,
    /// `(epoch, validation mean foreground DSC)`.
    pub validation: Vec<(usize, f64)>,
    /// Validation metrics of the final parameters.
    pub report: MetricsReport,
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_split(path: &Path) -> Result<(DatasetManifest, Vec<SampleRecord>)> {
    let manifest = DatasetManifest::read(path)?;
    let records = load_dataset(&manifest)?;
    Ok((manifest, records))
}

fn batches_per_epoch(n: usize, batch: usize) -> usize {
    n.div_ceil(batch)
}

/// Runs the optimisation loop and writes checkpoints, the training curve,
/// the configuration snapshot and validation metrics under
/// `out_dir/<run id>/`.
pub fn train(cfg: &TrainConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    let train_path = cfg
        .train_manifest
        .as_ref()
        .ok_or_else(|| Error::config("train_manifest is required"))?;
    let (manifest, train_set) = load_split(train_path)?;
    if train_set.is_empty() {
        return Err(Error::data(train_path.display().to_string(), "training manifest is empty"));
    }
    let classes = cfg.model.num_classes.max(2);
    if manifest.num_classes.max(2) != classes {
        return Err(Error::config(format!(
            "manifest has {} classes, model expects {}",
            manifest.num_classes, cfg.model.num_classes
        )));
    }
    let val_set = match &cfg.val_manifest {
        Some(p) => load_split(p)?.1,
        None => train_set.clone(),
    };
    let run_dir = cfg.out_dir.join(cfg.run_id());
    fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    write(&run_dir.join("config.txt"), &cfg.to_key_values().render())?;
    write(
        &run_dir.join("environment.json"),
        &serde_json::json!({
            "seed": cfg.model.seed,
            "deterministic": cfg.deterministic,
            "threads": 1,
            "device": "cpu",
            "version": env!("CARGO_PKG_VERSION"),
        })
        .to_string(),
    )?;

    let steps_per_epoch = batches_per_epoch(train_set.len(), cfg.batch_size);
    let mut trainer = Trainer::new(cfg, steps_per_epoch)?;
    let meta = |step: usize| CheckpointMeta {
        config: cfg.model.to_key_values().render(),
        seed: cfg.model.seed,
        step: step as u64,
    };
    let best_checkpoint = run_dir.join("best.ckpt");
    let last_checkpoint = run_dir.join("last.ckpt");
    checkpoint::save(&best_checkpoint, &trainer.store, &meta(0))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.model.seed ^ 0x5eed_da7a);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut curve = Vec::new();
    let mut validation = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let step_limit = cfg.max_steps.unwrap_or(usize::MAX);
    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            if trainer.steps() >= step_limit {
                break 'epochs;
            }
            let batch: Vec<SampleRecord> = chunk
                .iter()
                .map(|&i| {
                    if cfg.augment {
                        augment(&train_set[i], AugmentParams::sample(&mut rng))
                    } else {
                        train_set[i].clone()
                    }
                })
                .collect();
            let refs: Vec<&SampleRecord> = batch.iter().collect();
            let (images, labels) = collate(&refs, cfg.model.in_channels)?;
            let step = trainer.steps();
            let (loss, lr) = trainer.step(&images, &labels).inspect_err(|e| {
                let _ = write(&run_dir.join("failure.txt"), &e.to_string());
            })?;
            curve.push(StepRecord { step, epoch, loss, lr });
        }
        let last_epoch = epoch + 1 == cfg.epochs || trainer.steps() >= step_limit;
        if (epoch + 1) % cfg.val_interval != 0 && !last_epoch {
            continue;
        }
        let report = evaluate_records(&trainer.model, &trainer.store, &val_set, cfg.batch_size)?;
        validation.push((epoch, report.mean_dsc));
        if report.mean_dsc > best {
            best = report.mean_dsc;
            checkpoint::save(&best_checkpoint, &trainer.store, &meta(trainer.steps()))?;
        }
    }
    checkpoint::save(&last_checkpoint, &trainer.store, &meta(trainer.steps()))?;

    let mut log = String::from("step,epoch,loss,lr\n");
    for r in &curve {
        log.push_str(&format!("{},{},{:.10e},{:.10e}\n", r.step, r.epoch, r.loss, r.lr));
    }
    write(&run_dir.join("curve.csv"), &log)?;
    let mut val_log = String::from("epoch,val_mean_dsc\n");
    for (e, d) in &validation {
        val_log.push_str(&format!("{e},{d:.6}\n"));
    }
    write(&run_dir.join("validation.csv"), &val_log)?;
    let report = evaluate_records(&trainer.model, &trainer.store, &val_set, cfg.batch_size)?;
    write_report(&run_dir, &report)?;
    Ok(RunArtifacts {
        run_dir,
        best_checkpoint,
        last_checkpoint,
        curve,
        validation,
        report,
    })
}

impl fmt::Display for StepRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step {} epoch {} loss {:.5} lr {:.3e}", self.step, self.epoch, self.loss, self.lr)
    }
}
