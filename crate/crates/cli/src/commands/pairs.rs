//! `pmdk pairs` — enumerate overlap-filtered training pairs, optionally
//! sourcing geometry from LiDAR with a seeded probability.

use std::fs;
use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use pmdk::dataset::{enumerate_pairs, GeometrySource};

use super::shared::{load_config, pick};
use crate::dataset_io::load_views;

#[derive(Serialize, Deserialize, Default, Debug)]
#[serde(default)]
pub struct PairsConfig {
    pub overlap_threshold: Option<f64>,
    pub lidar_prob: Option<f64>,
    pub max_gap: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct PairsArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output pair-list JSON.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Keep pairs with overlap strictly above this (normalized units).
    #[arg(long)]
    pub overlap_threshold: Option<f64>,
    /// Probability that a pair's geometry source is the sparse LiDAR map.
    #[arg(long)]
    pub lidar_prob: Option<f64>,
    /// Maximum frame-index gap between reference and target.
    #[arg(long)]
    pub max_gap: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Serialize, Deserialize, Debug)]
pub struct PairEntry {
    pub reference: usize,
    pub target: usize,
    pub overlap: f64,
    pub source: GeometrySource,
}

#[derive(Serialize, Deserialize, Debug)]
pub struct PairList {
    pub dataset: String,
    pub overlap_threshold: f64,
    pub lidar_prob: f64,
    pub max_gap: usize,
    pub seed: u64,
    pub pairs: Vec<PairEntry>,
}

pub fn run(args: PairsArgs) -> anyhow::Result<()> {
    let cfg: PairsConfig = load_config(&args.config)?;
    let threshold = pick(args.overlap_threshold, cfg.overlap_threshold, 0.2);
    let lidar_prob = pick(args.lidar_prob, cfg.lidar_prob, 0.0);
    let max_gap = pick(args.max_gap, cfg.max_gap, 3);
    let seed = pick(args.seed, cfg.seed, 0);

    let views = load_views(&args.dataset)?;
    let pairs = enumerate_pairs(&views, max_gap, threshold, lidar_prob, seed)?;
    let list = PairList {
        dataset: args.dataset.display().to_string(),
        overlap_threshold: threshold,
        lidar_prob,
        max_gap,
        seed,
        pairs: pairs
            .iter()
            .map(|p| PairEntry {
                reference: p.indices.0,
                target: p.indices.1,
                overlap: p.overlap,
                source: p.source,
            })
            .collect(),
    };
    fs::write(&args.out, serde_json::to_string_pretty(&list)?)?;
    println!("pairs: kept {} of the candidates (threshold {threshold})", list.pairs.len());
    Ok(())
}

pub fn load_pair_list(path: &std::path::Path) -> anyhow::Result<PairList> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
