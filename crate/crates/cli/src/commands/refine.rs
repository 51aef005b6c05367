//! `pmdk refine` — partially re-noise a candidate render and denoise it
//! under full conditioning.

use std::path::PathBuf;

use clap::Args;

use pmdk::diffusion::{refine_render, MicroDiffusion};
use pmdk::io::{load_checkpoint, read_ppm, write_ppm};
use pmdk::tensor::Tensor;

use super::shared::{
    build_condition, read_checkpoint_meta, tensor_to_image, write_provenance, Provenance,
};
use crate::commands::sample::parse_source;
use crate::dataset_io::load_views;

#[derive(Args, Debug)]
pub struct RefineArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Candidate render to refine.
    #[arg(long)]
    pub input: PathBuf,
    /// Noise scale s in [0, 1]; the candidate is noised to round(s * T).
    #[arg(long)]
    pub noise_scale: f64,
    #[arg(long = "reference", required = true)]
    pub references: Vec<usize>,
    #[arg(long)]
    pub target: usize,
    #[arg(long, default_value = "dense")]
    pub source: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: RefineArgs) -> anyhow::Result<()> {
    let (store, config_json) = load_checkpoint::<f32>(&args.checkpoint)?;
    let meta = read_checkpoint_meta(&config_json, &args.checkpoint)?;
    let model = MicroDiffusion::new(meta.model.clone())?;
    let views = load_views(&args.dataset)?;
    let source = parse_source(&args.source)?;
    let (cond, _) =
        build_condition(&views, &args.references, args.target, source, &meta.encoding)?;

    let input = read_ppm(&args.input)?;
    let candidate = Tensor::<f64>::from_vec(
        &[3, meta.model.height, meta.model.width],
        input.to_signed_chw(),
    )
    .cast::<f32>();
    let refined = refine_render(&model, &store, &candidate, args.noise_scale, &cond, args.seed)?;
    let image = tensor_to_image(&refined, meta.model.width, meta.model.height)?;
    write_ppm(&args.out, &image)?;

    let bytes = std::fs::read(&args.out)?;
    write_provenance(
        &args.out,
        &Provenance {
            command: "refine".into(),
            seed: args.seed,
            steps: None,
            noise_scale: Some(args.noise_scale),
            checkpoint: Some(args.checkpoint.display().to_string()),
            condition: serde_json::json!({
                "dataset": args.dataset.display().to_string(),
                "references": args.references,
                "target": args.target,
                "source": args.source,
                "input": args.input.display().to_string(),
            }),
            output_sha256: pmdk::io::sha256_hex(&bytes),
        },
    )?;
    println!("refine: wrote {}", args.out.display());
    Ok(())
}
