//! End-to-end checks of the `pmdk` binary: determinism, file formats,
//! provenance, and the full synth -> pairs -> train -> sample -> refine ->
//! edit -> eval loop on a tiny model.

use std::fs;
use std::path::Path;
use std::process::Command;

use tempfile::tempdir;

fn pmdk() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pmdk"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn pmdk");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).to_string()
}

fn synth(dir: &Path, seed: u64, frames: usize, w: usize, h: usize) {
    run_ok(pmdk()
        .args(["synth", "--out"])
        .arg(dir)
        .args(["--seed", &seed.to_string()])
        .args(["--frames", &frames.to_string()])
        .args(["--width", &w.to_string()])
        .args(["--height", &h.to_string()])
        .args(["--focal", "14"])
        .args(["--step", "0.5"]));
}

#[test]
fn synth_is_deterministic_and_verifies() {
    let tmp = tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, 7, 5, 16, 12);
    synth(&b, 7, 5, 16, 12);
    let ma = fs::read(a.join("manifest.json")).unwrap();
    let mb = fs::read(b.join("manifest.json")).unwrap();
    assert_eq!(ma, mb, "same seed must give byte-identical manifests");

    // Requested frame count materializes as view files.
    let views = fs::read_dir(a.join("views")).unwrap().count();
    assert_eq!(views, 5 * 3); // ppm + pfm + json per frame

    run_ok(pmdk().args(["verify", "--dataset"]).arg(&a));

    // Tampering must fail verification.
    let victim = a.join("views/000.ppm");
    let mut bytes = fs::read(&victim).unwrap();
    let n = bytes.len();
    bytes[n - 1] ^= 0xFF;
    fs::write(&victim, bytes).unwrap();
    let out = pmdk().args(["verify", "--dataset"]).arg(&a).output().unwrap();
    assert!(!out.status.success(), "verify must fail after tampering");
}

#[test]
fn sixty_frame_trajectory_yields_sixty_views() {
    let tmp = tempdir().unwrap();
    let dir = tmp.path().join("d60");
    synth(&dir, 3, 60, 16, 12);
    let ppm_count = fs::read_dir(dir.join("views"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().map(|x| x == "ppm").unwrap_or(false))
        .count();
    assert_eq!(ppm_count, 60);
}

#[test]
fn pairs_thresholds_and_lidar_fraction() {
    let tmp = tempdir().unwrap();
    let dir = tmp.path().join("ds");
    synth(&dir, 11, 30, 16, 12);

    // Threshold 1.0 with the strict > rule keeps nothing (a ratio of
    // exactly 1.0 sits on the boundary and is dropped).
    let out = tmp.path().join("pairs_t1.json");
    run_ok(pmdk()
        .args(["pairs", "--dataset"])
        .arg(&dir)
        .args(["--out"])
        .arg(&out)
        .args(["--overlap-threshold", "1.0", "--max-gap", "3", "--seed", "1"]));
    let list: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(list["pairs"].as_array().unwrap().len(), 0);

    // lidar_prob 0: everything dense.
    let out0 = tmp.path().join("pairs_p0.json");
    run_ok(pmdk()
        .args(["pairs", "--dataset"])
        .arg(&dir)
        .args(["--out"])
        .arg(&out0)
        .args(["--overlap-threshold", "0.0", "--max-gap", "12", "--lidar-prob", "0", "--seed", "2"]));
    let list: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&out0).unwrap()).unwrap();
    let pairs = list["pairs"].as_array().unwrap();
    assert!(pairs.iter().all(|p| p["source"] == "dense"));

    // lidar_prob 0.5 over >= 400 pairs: fraction within +-5%.
    let outp = tmp.path().join("pairs_p05.json");
    run_ok(pmdk()
        .args(["pairs", "--dataset"])
        .arg(&dir)
        .args(["--out"])
        .arg(&outp)
        .args(["--overlap-threshold", "0.0", "--max-gap", "29", "--lidar-prob", "0.5", "--seed", "3"]));
    let list: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&outp).unwrap()).unwrap();
    let pairs = list["pairs"].as_array().unwrap();
    assert!(pairs.len() >= 400, "want >= 400 pairs, got {}", pairs.len());
    let lidar = pairs.iter().filter(|p| p["source"] == "lidar").count();
    let frac = lidar as f64 / pairs.len() as f64;
    assert!((frac - 0.5).abs() <= 0.05, "lidar fraction {frac} over {} pairs", pairs.len());
}

/// Tiny-model pipeline: train both phases briefly, then sample, refine and
/// evaluate. Checks reproducibility and the refine s=0 identity.
#[test]
fn pipeline_train_sample_refine_eval_edit() {
    let tmp = tempdir().unwrap();
    let dir = tmp.path().join("ds");
    synth(&dir, 21, 6, 12, 8);

    let pairs = tmp.path().join("pairs.json");
    run_ok(pmdk()
        .args(["pairs", "--dataset"])
        .arg(&dir)
        .args(["--out"])
        .arg(&pairs)
        .args(["--overlap-threshold", "0.1", "--max-gap", "2", "--seed", "4"]));

    // Tiny architecture via --config.
    let model_cfg = tmp.path().join("model.json");
    fs::write(
        &model_cfg,
        r#"{"model": {"width": 12, "height": 8, "channels": [4, 4, 8],
            "temb_dim": 8, "temb_hidden": 16, "groups": 4, "enc_channels": 24,
            "t_max": 100, "beta_start": 1e-4, "beta_end": 0.02, "sampler_steps": 50}}"#,
    )
    .unwrap();

    let base_ckpt = tmp.path().join("base.pmdk");
    run_ok(pmdk()
        .args(["train", "--dataset"])
        .arg(&dir)
        .args(["--pairs"])
        .arg(&pairs)
        .args(["--mode", "base", "--steps", "4", "--seed", "5", "--out"])
        .arg(&base_ckpt)
        .args(["--config"])
        .arg(&model_cfg));

    let cond_ckpt = tmp.path().join("cond.pmdk");
    let log = tmp.path().join("train.jsonl");
    run_ok(pmdk()
        .args(["train", "--dataset"])
        .arg(&dir)
        .args(["--pairs"])
        .arg(&pairs)
        .args(["--mode", "conditional", "--steps", "4", "--seed", "6", "--base-checkpoint"])
        .arg(&base_ckpt)
        .args(["--out"])
        .arg(&cond_ckpt)
        .args(["--log"])
        .arg(&log));
    // JSONL log: every line parses and carries the expected fields.
    let log_text = fs::read_to_string(&log).unwrap();
    assert!(!log_text.trim().is_empty());
    for line in log_text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["step", "loss", "lr", "wall_ms"] {
            assert!(v.get(key).is_some(), "log line missing {key}");
        }
    }

    // Sampling is seed-reproducible; default steps recorded as 50.
    let s1 = tmp.path().join("s1.ppm");
    let s2 = tmp.path().join("s2.ppm");
    for out in [&s1, &s2] {
        run_ok(pmdk()
            .args(["sample", "--checkpoint"])
            .arg(&cond_ckpt)
            .args(["--dataset"])
            .arg(&dir)
            .args(["--reference", "0", "--target", "1", "--seed", "9", "--out"])
            .arg(out));
    }
    assert_eq!(fs::read(&s1).unwrap(), fs::read(&s2).unwrap());
    let prov: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("s1.ppm.provenance.json")).unwrap())
            .unwrap();
    assert_eq!(prov["steps"], 50);
    assert_eq!(prov["seed"], 9);

    // Multi-reference sampling works.
    let s3 = tmp.path().join("s3.ppm");
    run_ok(pmdk()
        .args(["sample", "--checkpoint"])
        .arg(&cond_ckpt)
        .args(["--dataset"])
        .arg(&dir)
        .args(["--reference", "0", "--reference", "2", "--target", "1", "--steps", "10"])
        .args(["--seed", "9", "--out"])
        .arg(&s3));

    // Refine with s=0 returns the input byte-for-byte.
    let refined = tmp.path().join("r0.ppm");
    run_ok(pmdk()
        .args(["refine", "--checkpoint"])
        .arg(&cond_ckpt)
        .args(["--dataset"])
        .arg(&dir)
        .args(["--input"])
        .arg(&s1)
        .args(["--noise-scale", "0", "--reference", "0", "--target", "1", "--seed", "3", "--out"])
        .arg(&refined));
    assert_eq!(fs::read(&s1).unwrap(), fs::read(&refined).unwrap());

    // Eval on (gt, gt): capped PSNR, ssim 1, delta1 1. (On a 16x12
    // dataset: the SSIM window needs at least 11 pixels per side.)
    let small = tmp.path().join("small");
    synth(&small, 1, 1, 16, 12);
    let report = tmp.path().join("report.json");
    run_ok(pmdk()
        .args(["eval", "--pred"])
        .arg(small.join("views/000.ppm"))
        .args(["--gt"])
        .arg(small.join("views/000.ppm"))
        .args(["--pred-depth"])
        .arg(small.join("views/000.pfm"))
        .args(["--gt-depth"])
        .arg(small.join("views/000.pfm"))
        .args(["--out"])
        .arg(&report));
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(rep["psnr"], 99.0);
    assert_eq!(rep["ssim"], 1.0);
    assert_eq!(rep["delta1"], 1.0);
    assert_eq!(rep["fid"], serde_json::Value::Null);
    assert_eq!(rep["kid"], serde_json::Value::Null);

    // Eval refuses mismatched dimensions.
    let out = pmdk()
        .args(["eval", "--pred"])
        .arg(small.join("views/000.ppm"))
        .args(["--gt"])
        .arg(dir.join("views/001.ppm"))
        .args(["--out"])
        .arg(tmp.path().join("bad.json"))
        .output()
        .unwrap();
    assert!(!out.status.success());

    // Edit: identity translation leaves the lifted map unchanged.
    let edited = tmp.path().join("edited.pfm");
    let bbox = tmp.path().join("box.json");
    fs::write(&bbox, r#"{"center": [0, 0, 5], "half_extents": [50, 50, 50], "yaw": 0}"#).unwrap();
    let transform = tmp.path().join("tf.json");
    fs::write(&transform, r#"{"translation": [0, 0, 0]}"#).unwrap();
    run_ok(pmdk()
        .args(["edit", "--pointmap"])
        .arg(dir.join("views/001.pfm"))
        .args(["--camera"])
        .arg(dir.join("views/001.json"))
        .args(["--box"])
        .arg(&bbox)
        .args(["--transform"])
        .arg(&transform)
        .args(["--mode", "translate", "--out"])
        .arg(&edited));
    assert!(edited.exists());

    // Checkpoint version mismatch is rejected.
    let mut bytes = fs::read(&cond_ckpt).unwrap();
    bytes[4] = 0x7F;
    let bad_ckpt = tmp.path().join("bad.pmdk");
    fs::write(&bad_ckpt, bytes).unwrap();
    let out = pmdk()
        .args(["sample", "--checkpoint"])
        .arg(&bad_ckpt)
        .args(["--dataset"])
        .arg(&dir)
        .args(["--reference", "0", "--target", "1", "--out"])
        .arg(tmp.path().join("never.ppm"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("version"), "stderr was: {stderr}");
}
