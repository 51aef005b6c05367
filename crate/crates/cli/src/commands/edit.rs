//! `pmdk edit` — box-select points of a point map and translate or
//! duplicate them, keeping their original stored values.

use std::fs;
use std::path::PathBuf;

use anyhow::bail;
use clap::Args;
use serde::Deserialize;

use pmdk::geom::{edit_pointmap, pointmap_from_depth, Bbox3, EditMode, FrameId, Pose};
use pmdk::io::{
    depth_from_pfm, pointmap_from_pfm, pointmap_to_pfm, read_camera_json, read_pfm, write_pfm,
};

#[derive(Args, Debug)]
pub struct EditArgs {
    /// Input geometry: a 3-channel point-map PFM, or a 1-channel depth PFM
    /// (lifted through the camera).
    #[arg(long)]
    pub pointmap: PathBuf,
    /// Camera JSON for the map's frame (used to re-rasterize).
    #[arg(long)]
    pub camera: PathBuf,
    /// Box JSON: {"center": [x,y,z], "half_extents": [x,y,z], "yaw": r}.
    #[arg(long, name = "box")]
    pub bbox: PathBuf,
    /// Transform JSON: {"matrix": [16]} or {"translation": [x,y,z]}.
    #[arg(long)]
    pub transform: PathBuf,
    /// translate | duplicate
    #[arg(long)]
    pub mode: String,
    /// Output point map PFM.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Deserialize)]
struct TransformFile {
    matrix: Option<Vec<f64>>,
    translation: Option<[f64; 3]>,
}

pub fn run(args: EditArgs) -> anyhow::Result<()> {
    let mode = match args.mode.as_str() {
        "translate" => EditMode::Translate,
        "duplicate" => EditMode::Duplicate,
        other => bail!("unknown edit mode {other} (expected translate|duplicate)"),
    };
    let view = read_camera_json(&args.camera)?;
    let pfm = read_pfm(&args.pointmap)?;
    let map = if pfm.channels == 3 {
        pointmap_from_pfm(&pfm, FrameId(0))?
    } else {
        pointmap_from_depth(&view.intrinsics, &depth_from_pfm(&pfm)?, FrameId(0))?
    };
    let bbox: Bbox3 = serde_json::from_str(&fs::read_to_string(&args.bbox)?)?;
    let tf: TransformFile = serde_json::from_str(&fs::read_to_string(&args.transform)?)?;
    let transform = match (tf.matrix, tf.translation) {
        (Some(m), _) => {
            if m.len() != 16 {
                bail!("transform matrix needs 16 entries");
            }
            let mut arr = [0.0; 16];
            arr.copy_from_slice(&m);
            Pose::from_matrix(arr)?
        }
        (None, Some(t)) => Pose::from_translation(t),
        (None, None) => bail!("transform JSON needs either matrix or translation"),
    };

    let outcome = edit_pointmap(&map, &view, &bbox, &transform, mode)?;
    if outcome.selected == 0 {
        println!("edit: box selected no points; output equals input");
    } else {
        println!("edit: moved {} points ({:?})", outcome.selected, mode);
    }
    write_pfm(&args.out, &pointmap_to_pfm(&outcome.map))?;
    Ok(())
}
