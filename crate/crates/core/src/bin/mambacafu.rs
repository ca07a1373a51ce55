//! Command-line front end: train, eval, ablate, count, synth and report.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mambacafu::config::KeyValues;
use mambacafu::data::{synth_generate, Split, SynthSpec};
use mambacafu::harness::{ablate, checkpoint, count_params_flops, evaluate, report, train, TrainConfig};
use mambacafu::{Error, ModelConfig, Result};

#[derive(Parser, Debug)]
#[command(name = "mambacafu", version, about = "Hybrid CNN/transformer/state-space segmentation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Fixed shuffling and initialisation; always on with a single thread.
    #[arg(long, global = true)]
    deterministic: bool,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Device::Cpu)]
    device: Device,
    /// Configuration override, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Device {
    Cpu,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model and write checkpoints, curves and validation metrics.
    Train {
        #[arg(long)]
        train_manifest: Option<PathBuf>,
        #[arg(long)]
        val_manifest: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Write boundary overlays of the predictions.
        #[arg(long)]
        overlays: bool,
    },
    /// Train and compare ablation variants.
    Ablate {
        /// `all`, `table6`, `table7` or comma-separated variant slugs.
        #[arg(long, default_value = "all")]
        plan: String,
        #[arg(long)]
        train_manifest: Option<PathBuf>,
        #[arg(long)]
        val_manifest: Option<PathBuf>,
    },
    /// Parameter and multiply-accumulate counts per block.
    Count {
        #[arg(long)]
        json: bool,
    },
    /// Generate a synthetic shapes dataset.
    Synth {
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Summarise finished runs as a markdown table.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

impl Global {
    /// Configuration file, then `--set` overrides, then dedicated flags.
    fn key_values(&self) -> Result<KeyValues> {
        let mut kv = match &self.config {
            Some(path) => KeyValues::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)?,
            None => KeyValues::default(),
        };
        for pair in &self.overrides {
            kv.set_override(pair)?;
        }
        if let Some(seed) = self.seed {
            kv.0.insert("seed".into(), seed.to_string());
        }
        if self.deterministic {
            kv.0.insert("deterministic".into(), "true".into());
        }
        if let Some(dir) = &self.out_dir {
            kv.0.insert("out_dir".into(), dir.display().to_string());
        }
        Ok(kv)
    }

    fn train_config(&self, train_manifest: &Option<PathBuf>, val_manifest: &Option<PathBuf>) -> Result<TrainConfig> {
        let mut kv = self.key_values()?;
        if let Some(p) = train_manifest {
            kv.0.insert("train_manifest".into(), p.display().to_string());
        }
        if let Some(p) = val_manifest {
            kv.0.insert("val_manifest".into(), p.display().to_string());
        }
        TrainConfig::from_key_values(&kv)
    }

    fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs"))
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Train {
            train_manifest,
            val_manifest,
        } => {
            let cfg = g.train_config(train_manifest, val_manifest)?;
            let run = train(&cfg)?;
            for r in &run.curve {
                println!("{r}");
            }
            println!("run directory: {}", run.run_dir.display());
            println!("validation mean DSC: {:.4}", run.report.mean_dsc);
        }
        Command::Eval {
            checkpoint: path,
            manifest,
            overlays,
        } => {
            let mut kv = match &g.config {
                Some(_) => g.key_values()?,
                None => KeyValues::parse(&checkpoint::read(path)?.meta.config)?,
            };
            for pair in &g.overrides {
                kv.set_override(pair)?;
            }
            let (cfg, _) = ModelConfig::from_key_values_partial(&kv)?;
            let report = evaluate(&cfg, path, manifest, &g.out_dir(), *overlays)?;
            println!("{}", serde_json::to_string_pretty(&report.to_json()).expect("serialisable report"));
        }
        Command::Ablate {
            plan,
            train_manifest,
            val_manifest,
        } => {
            let cfg = g.train_config(train_manifest, val_manifest)?;
            let rows = ablate(&cfg, plan)?;
            print!("{}", mambacafu::harness::ablate::ablation_table(&rows));
        }
        Command::Count { json } => {
            let (cfg, _) = ModelConfig::from_key_values_partial(&g.key_values()?)?;
            let c = count_params_flops(&cfg)?;
            if *json {
                let blocks: Vec<_> = c
                    .blocks
                    .iter()
                    .map(|b| serde_json::json!({"block": b.name, "parameters": b.parameters, "macs": b.macs}))
                    .collect();
                let doc = serde_json::json!({
                    "variant": cfg.variant.to_string(),
                    "input_size": cfg.input_size,
                    "parameters": c.parameters,
                    "macs": c.macs,
                    "blocks": blocks,
                });
                println!("{}", serde_json::to_string_pretty(&doc).expect("serialisable counts"));
            } else {
                print!("{}", c.render());
                println!("{:.2}M parameters, {:.2} GMac", c.mparams(), c.gmac());
            }
        }
        Command::Synth {
            count,
            size,
            classes,
            split,
        } => {
            let split: Split = split.parse()?;
            let dir = g.out_dir();
            let manifest = synth_generate(
                &dir,
                SynthSpec {
                    count: *count,
                    size: *size,
                    num_classes: *classes,
                    seed: g.seed.unwrap_or(0),
                    split,
                },
            )?;
            println!("{} samples written to {}", manifest.entries.len(), dir.display());
        }
        Command::Report { runs } => {
            let summary = report(runs, &g.out_dir())?;
            print!("{}", summary.to_markdown());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Device::Cpu = cli.global.device;
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
