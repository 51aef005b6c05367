//! `pmdk synth` — render a procedural dataset to disk with a hashed
//! manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use pmdk::dataset::render_views;
use pmdk::geom::Intrinsics;
use pmdk::io;
use pmdk::scene::{random_scene, Augment, LidarPattern, SceneSpec, TrajectorySpec};

use super::shared::{load_config, pick};
use crate::dataset_io::{record_file, view_paths, Manifest};

/// Config-file form of the synth settings; every field can also be set by
/// a flag, and flags win.
#[derive(Serialize, Deserialize, Default, Debug)]
#[serde(default)]
pub struct SynthConfig {
    pub scene: Option<SceneSpec>,
    pub frames: Option<usize>,
    pub step: Option<f64>,
    pub width: Option<usize>,
    pub height: Option<usize>,
    pub focal: Option<f64>,
    pub augment: Option<String>,
    pub lidar: Option<LidarPattern>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Master seed: drives the scene (unless given in --config) and is
    /// recorded in the manifest.
    #[arg(long)]
    pub seed: u64,
    /// JSON config that may set any of the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub frames: Option<usize>,
    /// Camera spacing along the trajectory, meters.
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// Focal length in pixels (fx = fy).
    #[arg(long)]
    pub focal: Option<f64>,
    /// Trajectory augmentation, e.g. `yaw:45`, `lateral:-2`, `elevate:1:10`.
    #[arg(long)]
    pub augment: Option<String>,
}

pub fn run(args: SynthArgs) -> anyhow::Result<()> {
    let cfg: SynthConfig = load_config(&args.config)?;
    let frames = pick(args.frames, cfg.frames, 8);
    let step = pick(args.step, cfg.step, 0.7);
    let width = pick(args.width, cfg.width, 48);
    let height = pick(args.height, cfg.height, 32);
    let focal = pick(args.focal, cfg.focal, 40.0);
    let augment = match args.augment.or(cfg.augment) {
        Some(s) => Augment::parse(&s)?,
        None => Augment::None,
    };
    let scene = cfg.scene.unwrap_or_else(|| random_scene(args.seed));
    scene.validate()?;
    let lidar_pattern = cfg.lidar.unwrap_or_default();

    let intrinsics =
        Intrinsics::new(focal, focal, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0, width, height)?;
    let trajectory = TrajectorySpec {
        intrinsics,
        start: [0.0, 0.0, 0.0],
        heading: 0.0,
        step,
        frames,
        augment,
    };
    let views = render_views(&scene, &trajectory, &lidar_pattern)?;

    fs::create_dir_all(args.out.join("views"))?;
    fs::create_dir_all(args.out.join("lidar"))?;
    let mut files = BTreeMap::new();

    fs::write(args.out.join("scene.json"), serde_json::to_string_pretty(&scene)?)?;
    record_file(&mut files, &args.out, "scene.json")?;

    for record in &views {
        let (ppm, pfm, cam, pmls) = view_paths(&args.out, record.index);
        io::write_ppm(&ppm, &record.image)?;
        io::write_pfm(&pfm, &io::depth_to_pfm(&record.depth))?;
        io::write_camera_json(&cam, &record.view)?;
        io::write_pmls(&pmls, &record.lidar)?;
        for rel in [
            format!("views/{:03}.ppm", record.index),
            format!("views/{:03}.pfm", record.index),
            format!("views/{:03}.json", record.index),
            format!("lidar/{:03}.pmls", record.index),
        ] {
            record_file(&mut files, &args.out, &rel)?;
        }
    }

    let manifest = Manifest {
        seed: args.seed,
        frames,
        config: serde_json::json!({
            "frames": frames, "step": step, "width": width, "height": height,
            "focal": focal, "augment": format!("{augment:?}"), "lidar": lidar_pattern,
        }),
        files,
    };
    fs::write(args.out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    println!("synth: wrote {} views to {}", frames, args.out.display());
    Ok(())
}
