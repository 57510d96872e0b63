//! Applies each camouflage attack to a toy model: outputs stay the same, the
//! raw parameter direction moves, the invariant terms do not.

use modelprint::attacks::{apply_attack, sample_attack, verify_output_equivalence, AttackKind};
use modelprint::checkpoint::ArchitectureDescriptor;
use modelprint::invariants::{ics, pcs, stack_invariants};
use modelprint::model::{generate_random_model, ProbeBatch};
use modelprint::numerics::Rng;
use modelprint::vocab::{count_frequencies, select_anchor_tokens, Corpus};

fn main() -> modelprint::Result<()> {
    let mut rng = Rng::new(11);
    let arch = ArchitectureDescriptor::toy(3, 64, 200, 4);
    let base = generate_random_model(&arch, &mut rng)?;
    let corpus = Corpus::synthetic_zipf(&mut rng, 200, 5000, 1.1);
    let anchors = select_anchor_tokens(&count_frequencies(&corpus.tokens, 200)?, 32)?;
    let probes = ProbeBatch::random(&mut rng, 4, 12, 200)?;
    let reference = stack_invariants(&base, &anchors, 3)?;

    let mut cases: Vec<Vec<AttackKind>> = AttackKind::ALL.iter().map(|&k| vec![k]).collect();
    cases.push(AttackKind::ALL.to_vec());
    println!("{:<52} {:>12} {:>8} {:>10}", "attack", "logit diff", "PCS", "ICS");
    for kinds in cases {
        let spec = sample_attack(&arch, &kinds, &mut rng)?;
        let attacked = apply_attack(&base, &spec)?;
        let eq = verify_output_equivalence(&base, &attacked, &probes, 1e-4)?;
        let names: Vec<&str> = kinds.iter().map(|k| k.as_str()).collect();
        println!(
            "{:<52} {:>12.2e} {:>8.2} {:>10.5}",
            names.join("+"),
            eq.max_abs_logit_diff,
            pcs(&base, &attacked)?,
            ics(&reference, &stack_invariants(&attacked, &anchors, 3)?)?
        );
    }
    Ok(())
}
