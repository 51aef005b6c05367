//! `pmdk sample` — deterministic conditional sampling of a target view.

use std::path::PathBuf;

use anyhow::bail;
use clap::Args;

use pmdk::dataset::GeometrySource;
use pmdk::diffusion::{ddim_sample, MicroDiffusion};
use pmdk::io::{load_checkpoint, write_ppm};

use super::shared::{build_condition, read_checkpoint_meta, tensor_to_image, write_provenance, Provenance};
use crate::dataset_io::load_views;

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Reference view index; repeat for multi-view conditioning.
    #[arg(long = "reference", required = true)]
    pub references: Vec<usize>,
    /// Target view index (supplies pose, intrinsics and geometry).
    #[arg(long)]
    pub target: usize,
    /// Geometry source: dense | lidar.
    #[arg(long, default_value = "dense")]
    pub source: String,
    /// Sampler steps.
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output PPM.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn parse_source(s: &str) -> anyhow::Result<GeometrySource> {
    match s {
        "dense" => Ok(GeometrySource::Dense),
        "lidar" => Ok(GeometrySource::Lidar),
        other => bail!("unknown geometry source {other} (expected dense|lidar)"),
    }
}

pub fn run(args: SampleArgs) -> anyhow::Result<()> {
    let (store, config_json) = load_checkpoint::<f32>(&args.checkpoint)?;
    let meta = read_checkpoint_meta(&config_json, &args.checkpoint)?;
    let model = MicroDiffusion::new(meta.model.clone())?;
    let views = load_views(&args.dataset)?;
    let source = parse_source(&args.source)?;
    let (cond, _) =
        build_condition(&views, &args.references, args.target, source, &meta.encoding)?;

    let sampled = ddim_sample(&model, &store, &cond, args.steps, args.seed)?;
    let image = tensor_to_image(&sampled, meta.model.width, meta.model.height)?;
    write_ppm(&args.out, &image)?;

    let bytes = std::fs::read(&args.out)?;
    write_provenance(
        &args.out,
        &Provenance {
            command: "sample".into(),
            seed: args.seed,
            steps: Some(args.steps),
            noise_scale: None,
            checkpoint: Some(args.checkpoint.display().to_string()),
            condition: serde_json::json!({
                "dataset": args.dataset.display().to_string(),
                "references": args.references,
                "target": args.target,
                "source": args.source,
            }),
            output_sha256: pmdk::io::sha256_hex(&bytes),
        },
    )?;
    println!("sample: wrote {}", args.out.display());
    Ok(())
}
