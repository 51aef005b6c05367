//! `pmdk train` — base pretraining or conditional fine-tuning, with a
//! JSONL log and a PMDK checkpoint carrying the model config.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::Args;
use serde::{Deserialize, Serialize};

use pmdk::dataset::{build_pair, encode_pair};
use pmdk::diffusion::{train, MicroDiffusion, ModelConfig, Phase, TrainConfig, TrainSample};
use pmdk::encode::EncodingConfig;
use pmdk::io::{load_checkpoint, save_checkpoint};

use super::shared::{load_config, pick, read_checkpoint_meta, CheckpointMeta};
use crate::commands::pairs::load_pair_list;
use crate::dataset_io::load_views;

#[derive(Serialize, Deserialize, Default, Debug)]
#[serde(default)]
pub struct TrainFileConfig {
    pub steps: Option<usize>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub seed: Option<u64>,
    pub log_every: Option<usize>,
    pub model: Option<ModelConfig>,
    pub storage: Option<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Pair list from `pmdk pairs`.
    #[arg(long)]
    pub pairs: PathBuf,
    /// `base` pretrains the denoiser; `conditional` freezes it and trains
    /// the conditioning pathways.
    #[arg(long)]
    pub mode: String,
    /// Checkpoint to continue from (required for conditional mode).
    #[arg(long)]
    pub base_checkpoint: Option<PathBuf>,
    /// Output checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// JSONL training log path.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub log_every: Option<usize>,
    /// Parameter storage mode: `f32` (fast) or `f64` (reference).
    #[arg(long)]
    pub storage: Option<String>,
}

fn build_samples<T: pmdk::tensor::Scalar>(
    args: &TrainArgs,
) -> anyhow::Result<(Vec<TrainSample<T>>, EncodingConfig)> {
    let views = load_views(&args.dataset)?;
    let list = load_pair_list(&args.pairs)?;
    if list.pairs.is_empty() {
        bail!("pair list {} is empty", args.pairs.display());
    }
    let encoding = EncodingConfig::default();
    let mut samples = Vec::with_capacity(list.pairs.len());
    for entry in &list.pairs {
        let pair = build_pair(&views[entry.reference], &views[entry.target], entry.source)?;
        samples.push(encode_pair::<T>(&pair, &encoding)?.sample);
    }
    Ok((samples, encoding))
}

fn run_typed<T: pmdk::tensor::Scalar>(args: &TrainArgs, phase: Phase) -> anyhow::Result<()> {
    let cfg: TrainFileConfig = load_config(&args.config)?;
    let train_cfg = TrainConfig {
        steps: pick(args.steps, cfg.steps, if phase == Phase::Base { 2000 } else { 500 }),
        batch: pick(args.batch, cfg.batch, 8),
        lr: pick(args.lr, cfg.lr, 1e-4),
        weight_decay: pick(args.weight_decay, cfg.weight_decay, 0.01),
        seed: pick(args.seed, cfg.seed, 0),
        log_every: pick(args.log_every, cfg.log_every, 25),
    };

    let (model, mut store, encoding) = match (&args.base_checkpoint, phase) {
        (Some(path), _) => {
            let (store, config_json) = load_checkpoint::<T>(path)?;
            let meta = read_checkpoint_meta(&config_json, path)?;
            (MicroDiffusion::new(meta.model)?, store, meta.encoding)
        }
        (None, Phase::Base) => {
            let model_cfg = cfg.model.clone().unwrap_or_default();
            let model = MicroDiffusion::new(model_cfg)?;
            let store = model.init_params(train_cfg.seed).cast::<T>();
            (model, store, EncodingConfig::default())
        }
        (None, Phase::Conditional) => {
            bail!("conditional training needs --base-checkpoint from the base phase")
        }
    };

    let (samples, _) = build_samples::<T>(args)?;
    println!(
        "train[{}]: {} samples, {} steps, lr {}, {} storage",
        if phase == Phase::Base { "base" } else { "conditional" },
        samples.len(),
        train_cfg.steps,
        train_cfg.lr,
        T::MODE,
    );

    let mut log_file = match &args.log {
        Some(p) => Some(fs::File::create(p).context("creating log file")?),
        None => None,
    };
    train(&model, &mut store, &samples, phase, &train_cfg, |rec| {
        if let Some(f) = &mut log_file {
            let line = serde_json::to_string(rec).expect("log record serializes");
            writeln!(f, "{line}").expect("log write");
        }
        println!("  step {:>5}  loss {:.5}  lr {:.2e}", rec.step, rec.loss, rec.lr);
    })?;

    let meta = CheckpointMeta {
        model: model.config().clone(),
        encoding,
        phase: if phase == Phase::Base { "base".into() } else { "conditional".into() },
    };
    save_checkpoint(&args.out, &store, Some(&serde_json::to_string(&meta)?))?;
    println!("train: checkpoint written to {}", args.out.display());
    Ok(())
}

pub fn run(args: TrainArgs) -> anyhow::Result<()> {
    let phase = match args.mode.as_str() {
        "base" => Phase::Base,
        "conditional" => Phase::Conditional,
        other => bail!("unknown training mode {other} (expected base|conditional)"),
    };
    let cfg: TrainFileConfig = load_config(&args.config)?;
    let storage = args
        .storage
        .clone()
        .or(cfg.storage)
        .unwrap_or_else(|| "f32".to_string());
    match storage.as_str() {
        "f32" => run_typed::<f32>(&args, phase),
        "f64" => run_typed::<f64>(&args, phase),
        other => bail!("unknown storage mode {other} (expected f32|f64)"),
    }
}
