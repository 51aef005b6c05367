//! `pmdk eval` — image and depth metrics into a JSON report. FID/KID need
//! pretrained feature extractors; the report reserves `fid`/`kid` as null
//! for external tools to merge.

use std::fs;
use std::path::PathBuf;

use anyhow::bail;
use clap::Args;

use pmdk::io::{depth_from_pfm, read_pfm, read_ppm};
use pmdk::metrics::{depth_metrics, psnr, ssim, EvalReport};

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Predicted image (PPM).
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth image (PPM).
    #[arg(long)]
    pub gt: PathBuf,
    /// Optional predicted depth (1-channel PFM).
    #[arg(long)]
    pub pred_depth: Option<PathBuf>,
    /// Optional reference depth (1-channel PFM).
    #[arg(long)]
    pub gt_depth: Option<PathBuf>,
    /// Output report JSON.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: EvalArgs) -> anyhow::Result<()> {
    let pred = read_ppm(&args.pred)?;
    let gt = read_ppm(&args.gt)?;
    if pred.width() != gt.width() || pred.height() != gt.height() {
        bail!(
            "image dimensions differ: {}x{} vs {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        );
    }
    let psnr_db = psnr(&pred, &gt, 1.0)?;
    let ssim_val = ssim(&pred, &gt, 11, 0.01, 0.03)?;

    let depth = match (&args.pred_depth, &args.gt_depth) {
        (Some(p), Some(g)) => {
            let dp = depth_from_pfm(&read_pfm(p)?)?;
            let dg = depth_from_pfm(&read_pfm(g)?)?;
            Some(depth_metrics(&dp, &dg, None)?)
        }
        (None, None) => None,
        _ => bail!("--pred-depth and --gt-depth must be given together"),
    };

    let report = EvalReport {
        psnr: psnr_db,
        ssim: ssim_val,
        absrel: depth.map(|d| d.absrel),
        rmse: depth.map(|d| d.rmse),
        delta1: depth.map(|d| d.delta1),
        n_pixels: pred.width() * pred.height(),
        fid: None,
        kid: None,
    };
    fs::write(&args.out, serde_json::to_string_pretty(&report)?)?;
    println!(
        "eval: psnr {:.2} dB, ssim {:.4}{}",
        report.psnr,
        report.ssim,
        depth
            .map(|d| format!(", absrel {:.4}, rmse {:.4}, delta1 {:.4}", d.absrel, d.rmse, d.delta1))
            .unwrap_or_default()
    );
    Ok(())
}
