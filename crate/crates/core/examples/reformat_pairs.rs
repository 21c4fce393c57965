//! Expands sentences into one instance per (entity, trigger) and draws
//! matched and mismatched pairs for the matching loss.

use tmn::corpus::{make_match_pairs, reformat};
use tmn::harness::{generate_synthetic, SyntheticSpec};

fn main() -> tmn::Result<()> {
    let data = generate_synthetic(&SyntheticSpec {
        train_sentences: 6,
        test_sentences: 0,
        ..SyntheticSpec::default()
    })?;
    let instances = reformat(&data.train);
    for inst in &instances {
        println!(
            "sentence {} entity {} ({}) trigger {:?}",
            inst.sentence_id,
            inst.entity_index,
            inst.entity_type,
            inst.trigger_tokens()
        );
    }
    let pairs = make_match_pairs(&instances, 1.0, 7)?;
    let matched = pairs.iter().filter(|p| p.matched).count();
    println!("{} pairs: {matched} matched, {} mismatched", pairs.len(), pairs.len() - matched);
    for p in pairs.iter().filter(|p| !p.matched).take(3) {
        println!("  sentence {} vs trigger {:?}", p.sentence_id, p.trigger_tokens);
    }
    Ok(())
}
