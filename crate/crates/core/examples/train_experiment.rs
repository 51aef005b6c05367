// Measures the acceptance-critical quantities: conditional probe-loss drop
// after 500 steps, and held-out PSNR margin of correct vs shuffled refs.
use pmdk::dataset::*;
use pmdk::diffusion::*;
use pmdk::encode::EncodingConfig;
use pmdk::geom::Intrinsics;
use pmdk::img::RgbImage;
use pmdk::metrics::psnr;
use pmdk::scene::*;
use std::time::Instant;

type S = f32;

fn build_sets(lidar_prob: f64) -> (Vec<TrainSample<S>>, Vec<(TrainSample<S>, RgbImage)>) {
    let enc_cfg = EncodingConfig::default();
    let k = Intrinsics::new(40.0, 40.0, 23.5, 15.5, 48, 32).unwrap();
    let mut train = Vec::new();
    let mut held = Vec::new();
    for scene_idx in 0..12u64 {
        let scene = random_scene(100 + scene_idx);
        let spec = TrajectorySpec {
            intrinsics: k, start: [0.0, 0.0, 0.0], heading: 0.0,
            step: 0.7, frames: 8, augment: Augment::None,
        };
        let views = render_views(&scene, &spec, &LidarPattern::default()).unwrap();
        let pairs = enumerate_pairs(&views, 3, 0.2, lidar_prob, 50 + scene_idx).unwrap();
        for p in pairs {
            let ep = encode_pair::<S>(&p, &enc_cfg).unwrap();
            if scene_idx < 9 {
                if train.len() < 200 { train.push(ep.sample); }
            } else if held.len() < 32 {
                held.push((ep.sample, p.target_img.clone()));
            }
        }
    }
    println!("train {} held {}", train.len(), held.len());
    (train, held)
}

fn eval_margin(model: &MicroDiffusion, store: &pmdk::tensor::ParamStore<S>,
               held: &[(TrainSample<S>, RgbImage)], tag: &str) -> f64 {
    let n = held.len();
    let mut correct = 0.0;
    let mut shuffled = 0.0;
    let cfg = model.config();
    for (i, (s, gt)) in held.iter().enumerate() {
        let cond_ok = Condition { references: vec![(s.reference.clone(), s.enc_reference.clone())], enc_target: s.enc_target.clone() };
        let other = &held[(i + n / 2 + 1) % n].0; // derangement-ish
        let cond_bad = Condition { references: vec![(other.reference.clone(), other.enc_reference.clone())], enc_target: s.enc_target.clone() };
        let img_ok = ddim_sample(model, store, &cond_ok, 50, 900 + i as u64).unwrap();
        let img_bad = ddim_sample(model, store, &cond_bad, 50, 900 + i as u64).unwrap();
        let to_img = |t: &pmdk::tensor::Tensor<S>| RgbImage::from_signed_chw(cfg.width, cfg.height, &t.cast::<f64>().to_f64_vec()).unwrap();
        correct += psnr(&to_img(&img_ok), gt, 1.0).unwrap();
        shuffled += psnr(&to_img(&img_bad), gt, 1.0).unwrap();
    }
    let (c, s) = (correct / n as f64, shuffled / n as f64);
    println!("{tag}: correct {c:.2} dB, shuffled {s:.2} dB, margin {:.2} dB", c - s);
    c - s
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).and_then(|v| v.parse().ok()).unwrap_or(1e-4);
    let cond_steps: usize = args.get(2).and_then(|v| v.parse().ok()).unwrap_or(500);
    let pre_steps: usize = args.get(3).and_then(|v| v.parse().ok()).unwrap_or(2000);
    println!("lr {lr}, cond steps {cond_steps}, pretrain {pre_steps}");

    let model = MicroDiffusion::new(ModelConfig::default()).unwrap();
    let (train_set, held) = build_sets(0.0);

    let mut store = model.init_params(1).cast::<S>();
    let t0 = Instant::now();
    let pre_cfg = TrainConfig { steps: pre_steps, lr: 1e-4, seed: 11, log_every: 250, ..Default::default() };
    train(&model, &mut store, &train_set, Phase::Base, &pre_cfg, |r| {
        println!("  base step {} loss {:.4}", r.step, r.loss);
    }).unwrap();
    println!("pretrain done in {:.1}s", t0.elapsed().as_secs_f64());

    let probe0 = probe_loss(&model, &store, &held.iter().map(|(s, _)| s.clone()).collect::<Vec<_>>(), 77).unwrap();
    println!("probe loss at cond step 0: {probe0:.4}");

    let t0 = Instant::now();
    let cond_cfg = TrainConfig { steps: cond_steps, lr, seed: 12, log_every: 50, ..Default::default() };
    train(&model, &mut store, &train_set, Phase::Conditional, &cond_cfg, |r| {
        println!("  cond step {} loss {:.4}", r.step, r.loss);
    }).unwrap();
    println!("conditional done in {:.1}s", t0.elapsed().as_secs_f64());

    let probe1 = probe_loss(&model, &store, &held.iter().map(|(s, _)| s.clone()).collect::<Vec<_>>(), 77).unwrap();
    println!("probe loss after: {probe1:.4}  (drop {:.1}%)", 100.0 * (1.0 - probe1 / probe0));

    let t0 = Instant::now();
    eval_margin(&model, &store, &held, "margin");
    println!("eval in {:.1}s", t0.elapsed().as_secs_f64());
}
