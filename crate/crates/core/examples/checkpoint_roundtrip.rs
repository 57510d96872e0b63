//! Writes a random toy model to an `HRFC` file, reads it back and checks the
//! logits match.

use modelprint::checkpoint::{read_checkpoint, write_checkpoint, ArchitectureDescriptor};
use modelprint::model::{forward, generate_random_model};
use modelprint::numerics::Rng;

fn main() -> modelprint::Result<()> {
    let arch = ArchitectureDescriptor::toy(2, 32, 100, 2);
    let model = generate_random_model(&arch, &mut Rng::new(1))?;
    let dir = std::env::temp_dir().join("modelprint-roundtrip");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("toy.hrfc");
    write_checkpoint(&model, &path)?;
    let back = read_checkpoint(&path)?;

    let tokens = [3, 14, 15, 92, 65];
    let diff = forward(&model, &tokens)?.logits.max_abs_diff(&forward(&back, &tokens)?.logits)?;
    println!("wrote {} ({} parameters)", path.display(), model.numel());
    println!("content hash {}", back.content_hash()?);
    println!("max logit difference after reload: {diff}");
    Ok(())
}
