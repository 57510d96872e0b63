//! Fingerprints two base models and a fine-tuned copy of the first, then
//! compares them. Uses an encoder file if one is given, otherwise trains a
//! short one (the images are then less informative than the ICS verdict).

use modelprint::checkpoint::ArchitectureDescriptor;
use modelprint::fpm::file::EncoderFile;
use modelprint::fpm::train::{train_fpm, TrainConfig};
use modelprint::model::{generate_random_model, perturb_checkpoint};
use modelprint::numerics::Rng;
use modelprint::pipeline::{compare_invariants, fingerprint_checkpoint, PipelineConfig, DEFAULT_THRESHOLD};
use modelprint::render::image_distance;
use modelprint::vocab::Corpus;

fn main() -> modelprint::Result<()> {
    let encoder = match std::env::args().nth(1) {
        Some(path) => EncoderFile::read(path)?,
        None => {
            let cfg = TrainConfig {
                epochs: 2,
                ..TrainConfig::recommended(64, 6, 0)
            };
            train_fpm(&cfg, |_| {})?.into_file(&cfg)
        }
    };
    let mut rng = Rng::new(3);
    let arch = ArchitectureDescriptor::toy(2, 64, 256, 2);
    let base = generate_random_model(&arch, &mut rng)?;
    let tuned = perturb_checkpoint(&base, 0.01, &mut rng)?;
    let other = generate_random_model(&arch, &mut rng)?;
    let corpus = Corpus::synthetic_zipf(&mut rng, 256, 20_000, 1.1);
    let cfg = PipelineConfig::for_encoder(&encoder);

    let prints = [&base, &tuned, &other]
        .map(|m| fingerprint_checkpoint(m, &corpus, &encoder, &cfg))
        .into_iter()
        .collect::<modelprint::Result<Vec<_>>>()?;
    for (name, j) in [("fine-tuned copy", 1), ("independent model", 2)] {
        let verdict = compare_invariants(&prints[0].invariants, &prints[j].invariants, DEFAULT_THRESHOLD)?;
        println!(
            "base vs {name}: ICS {:.2}, same base {}, image distance {:.3}",
            verdict.ics,
            verdict.same_base,
            image_distance(&prints[0].image, &prints[j].image)?
        );
    }
    Ok(())
}
