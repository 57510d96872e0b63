//! Trains the fingerprint encoder on synthetic triplets and reports held-out
//! locality and Gaussianity. Pass a step count to shorten the run, e.g.
//! `cargo run --release --example train_encoder -- 200`.

use modelprint::fpm::gaussian::gaussianity_check;
use modelprint::fpm::train::{evaluate_held_out, train_fpm, TrainConfig};
use modelprint::numerics::Rng;

fn main() -> modelprint::Result<()> {
    let mut cfg = TrainConfig::recommended(64, 6, 0);
    if let Some(steps) = std::env::args().nth(1).and_then(|s| s.parse::<usize>().ok()) {
        cfg.epochs = steps.div_ceil(cfg.steps_per_epoch);
    }
    let outcome = train_fpm(&cfg, |m| {
        println!(
            "epoch {:>2}: cos+ {:.3}  |cos-| {:.3}  D acc {:.2}",
            m.epoch, m.pos_cos, m.neg_abs_cos, m.discriminator_accuracy
        )
    })?;
    let file = outcome.into_file(&cfg);
    let held = evaluate_held_out(&file, &cfg, 200, &mut Rng::new(1234))?;
    let g = gaussianity_check(&held.anchor_outputs)?;
    println!(
        "held-out: cos+ {:.4}, |cos-| {:.4}, ordered {:.3}",
        held.mean_pos_cos, held.mean_abs_neg_cos, held.ordered_fraction
    );
    println!("gaussianity passed: {} ({:.1}% of coordinates)", g.passed, 100.0 * g.pass_fraction);
    let path = std::env::temp_dir().join("modelprint-encoder.hrfe");
    file.write(&path)?;
    println!("encoder written to {} (hash {})", path.display(), file.hash()?);
    Ok(())
}
