//! Builds the stacked invariant tensor of a toy model and compares it with a
//! lightly fine-tuned copy and with an unrelated model.

use modelprint::checkpoint::ArchitectureDescriptor;
use modelprint::invariants::{ics, stack_invariants, LAYOUT};
use modelprint::model::{generate_random_model, perturb_checkpoint};
use modelprint::numerics::Rng;
use modelprint::vocab::{count_frequencies, select_anchor_tokens, Corpus};

fn main() -> modelprint::Result<()> {
    let mut rng = Rng::new(21);
    let arch = ArchitectureDescriptor::toy(2, 64, 256, 2);
    let base = generate_random_model(&arch, &mut rng)?;
    let tuned = perturb_checkpoint(&base, 0.01, &mut rng)?;
    let other = generate_random_model(&arch, &mut rng)?;
    let corpus = Corpus::synthetic_zipf(&mut rng, 256, 20_000, 1.1);
    let anchors = select_anchor_tokens(&count_frequencies(&corpus.tokens, 256)?, 64)?;

    let t = stack_invariants(&base, &anchors, 2)?;
    println!("tensor: {} channels of {}x{}, layers {:?}", t.channels(), t.k(), t.k(), t.layer_span());
    println!("layout: {LAYOUT}");
    println!("ICS base vs 1% perturbed copy: {:.3}", ics(&t, &stack_invariants(&tuned, &anchors, 2)?)?);
    println!("ICS base vs independent model: {:.3}", ics(&t, &stack_invariants(&other, &anchors, 2)?)?);
    Ok(())
}
