//! Fits the network to a single synthetic scene and reports loss and PSNR.
//!
//! `cargo run --release --example overfit -- [steps] [seed]`

use std::time::Instant;

use fbhdr::network::NetConfig;
use fbhdr::trainer::{score_pair, synth_scene, TrainConfig, Trainer, TrainingPair};

fn main() -> fbhdr::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(500);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);

    let scene = synth_scene(seed, 64, 64)?;
    let cfg = TrainConfig {
        net: NetConfig { channels: 16, growth: 16, iterations: 2, ..NetConfig::default() },
        ..TrainConfig::default()
    };
    let pair = TrainingPair::new(&scene.ldr, &scene.hdr, 1.0, cfg.gamma)?;
    let mut trainer = Trainer::new(cfg, 1.0)?;
    let start = Instant::now();
    let first = trainer.evaluate_loss(&[&pair])?.loss;
    for step in 0..steps {
        let r = trainer.step(&[&pair], trainer.cfg.learning_rate, 0)?;
        if step % 25 == 0 {
            println!("step {step:4} loss {:.5} l1 {:.5} per {:.5} ({:.1}s)", r.loss, r.l1.unwrap_or(0.0), r.per.unwrap_or(0.0), start.elapsed().as_secs_f64());
        }
    }
    let last = trainer.evaluate_loss(&[&pair])?.loss;
    let pred = trainer.model().predict_normalized(&scene.ldr)?;
    let (psnr, ssim) = score_pair(&pred, &pair.gt, trainer.cfg.mu)?;
    println!(
        "initial {first:.5} final {last:.5} ratio {:.4} psnr {psnr:.2} dB ssim {ssim:.4} in {:.1}s",
        last / first,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
