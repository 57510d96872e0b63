//! Picks the rarest tokens of a Zipf corpus as anchors and shows that
//! appending unseen vocabulary leaves the selection unchanged.

use modelprint::numerics::Rng;
use modelprint::vocab::{count_frequencies, select_anchor_tokens, Corpus};

fn main() -> modelprint::Result<()> {
    let corpus = Corpus::synthetic_zipf(&mut Rng::new(5), 500, 8000, 1.2);
    let stats = count_frequencies(&corpus.tokens, corpus.vocab_size)?;
    let anchors = select_anchor_tokens(&stats, 16)?;
    let counts: Vec<u64> = anchors.token_ids().iter().map(|&t| stats.counts[t as usize]).collect();
    println!("anchors {:?}", anchors.token_ids());
    println!("counts  {counts:?}");
    println!("anchor hash {}", anchors.hash());

    let wider = Corpus::new(625, corpus.tokens.clone())?;
    let again = select_anchor_tokens(&count_frequencies(&wider.tokens, wider.vocab_size)?, 16)?;
    println!("after adding 125 unseen tokens, same anchors: {}", again == anchors);
    Ok(())
}
