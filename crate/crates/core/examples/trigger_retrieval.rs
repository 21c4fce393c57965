//! Builds the trigger table and looks up held-out sentences whose cue is a
//! paraphrase never seen in training.

use std::sync::Arc;

use tmn::corpus::reformat;
use tmn::harness::{generate_synthetic, pipeline, RunConfig};
use tmn::inference::match_triggers;
use tmn::matcher::{build_trigger_table, train_stage1, Matcher};

fn main() -> tmn::Result<()> {
    let mut config = RunConfig::synthetic();
    config.apply_overrides(&["synthetic.train_sentences=250", "synthetic.test_sentences=60", "stage1.epochs=20"])?;
    let data = generate_synthetic(&config.synthetic)?;
    let instances = reformat(&data.train);
    let encoder = pipeline::build_encoder(&data.train, Arc::new(data.pretrained.clone()), &config)?;
    let matcher = Matcher::new(encoder, data.types.clone(), config.matcher.clone(), 1)?;
    let (matcher, _) = train_stage1(matcher, &instances, &config.stage1, 1)?;
    let table = build_trigger_table(&instances, &matcher)?;
    println!("{} triggers of width {}", table.len(), table.width);

    let mut source_hits = 0;
    for (s, uses) in data.test.iter().zip(&data.test_cues).take(8) {
        println!("{}", s.sentence.tokens().join(" "));
        let cue = &data.cues[uses[0].cue];
        println!("  paraphrase of {:?} ({})", cue.words, cue.entity_type);
        let matches = match_triggers(&s.sentence, &table, &matcher, config.retrieval.k)?;
        for m in &matches {
            println!("    {:.3}  {:<24} {}", m.distance, m.entry.tokens.join(" "), m.entry.entity_type);
        }
        if matches.iter().any(|m| m.entry.tokens[..] == cue.words[..]) {
            source_hits += 1;
        }
    }
    println!("source cue retrieved for {source_hits} of 8 sentences");
    Ok(())
}
