//! Generates the synthetic language and prints its cues, a few sentences
//! and the corpus statistics.

use tmn::corpus::{compute_stats, serialize_corpus, Scheme};
use tmn::harness::{generate_synthetic, SyntheticSpec};

fn main() -> tmn::Result<()> {
    let spec = SyntheticSpec::default();
    let data = generate_synthetic(&spec)?;
    for c in &data.cues {
        let para: Vec<String> = c.paraphrases.iter().map(|p| p.join(" ")).collect();
        println!("{:<4} {:?} {:<20} held out: {}", c.entity_type, c.kind, c.words.join(" "), para.join(", "));
    }
    print!("{}", serialize_corpus(&data.train[..2], Scheme::Bio));
    println!();
    print!("{}", serialize_corpus(&data.test[..1], Scheme::Bio));
    let stats = compute_stats(&data.train);
    println!(
        "{} train / {} test sentences, {} entities, {} word vectors",
        data.train.len(),
        data.test.len(),
        stats.total.entity_count,
        data.pretrained.len()
    );
    Ok(())
}
