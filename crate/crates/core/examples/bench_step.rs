use pmdk::diffusion::*;
use pmdk::tensor::Tensor;
use rand::SeedableRng;
use std::time::Instant;

fn main() {
    let model = MicroDiffusion::new(ModelConfig::default()).unwrap();
    let store64 = model.init_params(1);
    let cfg = model.config().clone();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    let mk = |rng: &mut rand_chacha::ChaCha8Rng| TrainSample::<f64> {
        target: Tensor::rand_uniform(&[3, cfg.height, cfg.width], -1.0, 1.0, rng),
        reference: Tensor::rand_uniform(&[3, cfg.height, cfg.width], -1.0, 1.0, rng),
        enc_target: Tensor::rand_uniform(&[cfg.enc_channels, cfg.height, cfg.width], -1.0, 1.0, rng),
        enc_reference: Tensor::rand_uniform(&[cfg.enc_channels, cfg.height, cfg.width], -1.0, 1.0, rng),
    };
    let samples: Vec<_> = (0..16).map(|_| mk(&mut rng)).collect();

    // Base phase step timing
    let mut store = store64.clone();
    let tc = TrainConfig { steps: 3, batch: 8, log_every: 1, ..Default::default() };
    let t0 = Instant::now();
    train(&model, &mut store, &samples, Phase::Base, &tc, |_| {}).unwrap();
    println!("base:  {:.0} ms/step", t0.elapsed().as_millis() as f64 / 3.0);

    // Conditional phase step timing
    let mut store = store64.clone();
    let t0 = Instant::now();
    train(&model, &mut store, &samples, Phase::Conditional, &tc, |_| {}).unwrap();
    println!("cond:  {:.0} ms/step", t0.elapsed().as_millis() as f64 / 3.0);

    // Sampling timing (50 steps)
    let cond = Condition {
        references: vec![(samples[0].reference.clone(), samples[0].enc_reference.clone())],
        enc_target: samples[0].enc_target.clone(),
    };
    let t0 = Instant::now();
    let img = ddim_sample(&model, &store64, &cond, 50, 7).unwrap();
    println!("sample(50): {} ms, out shape {:?}", t0.elapsed().as_millis(), img.shape());

    // f32 comparison
    let store32 = store64.cast::<f32>();
    let samples32: Vec<_> = samples.iter().map(|s| TrainSample::<f32> {
        target: s.target.cast(), reference: s.reference.cast(),
        enc_target: s.enc_target.cast(), enc_reference: s.enc_reference.cast(),
    }).collect();
    let mut store = store32.clone();
    let t0 = Instant::now();
    train(&model, &mut store, &samples32, Phase::Conditional, &tc, |_| {}).unwrap();
    println!("cond f32: {:.0} ms/step", t0.elapsed().as_millis() as f64 / 3.0);
}
