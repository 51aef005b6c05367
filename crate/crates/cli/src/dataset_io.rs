//! Dataset directory layout:
//!
//! ```text
//! <root>/
//!   scene.json          # the procedural scene
//!   manifest.json       # config, seed, sha256 of every artifact
//!   views/NNN.ppm       # rendered RGB
//!   views/NNN.pfm       # rendered depth (1-channel)
//!   views/NNN.json      # camera
//!   lidar/NNN.pmls      # simulated scan
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use pmdk::dataset::ViewRecord;
use pmdk::io;
use pmdk::scene::SceneSpec;

#[derive(Serialize, Deserialize, Debug)]
pub struct Manifest {
    pub seed: u64,
    pub frames: usize,
    pub config: serde_json::Value,
    /// Relative path -> sha256 hex of file contents.
    pub files: BTreeMap<String, String>,
}

pub fn view_paths(root: &Path, index: usize) -> (PathBuf, PathBuf, PathBuf, PathBuf) {
    (
        root.join(format!("views/{index:03}.ppm")),
        root.join(format!("views/{index:03}.pfm")),
        root.join(format!("views/{index:03}.json")),
        root.join(format!("lidar/{index:03}.pmls")),
    )
}

pub fn load_scene(root: &Path) -> anyhow::Result<SceneSpec> {
    let text = fs::read_to_string(root.join("scene.json")).context("reading scene.json")?;
    Ok(serde_json::from_str(&text)?)
}

pub fn load_manifest(root: &Path) -> anyhow::Result<Manifest> {
    let text = fs::read_to_string(root.join("manifest.json")).context("reading manifest.json")?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads every view of a dataset in index order.
pub fn load_views(root: &Path) -> anyhow::Result<Vec<ViewRecord>> {
    let manifest = load_manifest(root)?;
    let mut out = Vec::with_capacity(manifest.frames);
    for index in 0..manifest.frames {
        let (ppm, pfm, cam, pmls) = view_paths(root, index);
        let image = io::read_ppm(&ppm).with_context(|| format!("view {index} image"))?;
        let depth = io::depth_from_pfm(&io::read_pfm(&pfm)?)?;
        let view = io::read_camera_json(&cam)?;
        let lidar = io::read_pmls(&pmls)?;
        out.push(ViewRecord { index, image, depth, view, lidar });
    }
    Ok(out)
}

/// Recomputes the hash of every manifest entry; fails on any mismatch.
pub fn verify_manifest(root: &Path) -> anyhow::Result<usize> {
    let manifest = load_manifest(root)?;
    for (rel, expect) in &manifest.files {
        let bytes =
            fs::read(root.join(rel)).with_context(|| format!("manifest entry {rel} missing"))?;
        let got = io::sha256_hex(&bytes);
        if &got != expect {
            bail!("hash mismatch for {rel}: manifest {expect}, file {got}");
        }
    }
    Ok(manifest.files.len())
}

/// Hash-records a file that was just written.
pub fn record_file(files: &mut BTreeMap<String, String>, root: &Path, rel: &str) -> anyhow::Result<()> {
    let bytes = fs::read(root.join(rel))?;
    files.insert(rel.to_string(), io::sha256_hex(&bytes));
    Ok(())
}
