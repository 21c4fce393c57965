//! Trains the trigger-enhanced tagger and tags held-out sentences, printing
//! the retrieved triggers and the attention each token receives.

use std::sync::Arc;

use tmn::harness::{generate_synthetic, pipeline, RunConfig};

fn main() -> tmn::Result<()> {
    let mut config = RunConfig::synthetic();
    config.apply_overrides(&[
        "synthetic.train_sentences=250",
        "synthetic.test_sentences=100",
        "stage1.epochs=20",
        "stage2.epochs=30",
    ])?;
    let data = generate_synthetic(&config.synthetic)?;
    let trained = pipeline::train_tmn(&data.train, &data.types, Arc::new(data.pretrained.clone()), &config, 1)?;
    let model = &trained.model;
    for s in data.test.iter().take(4) {
        let (_, matches) = model.query(&s.sentence)?;
        let pred = model.tag(&s.sentence)?;
        let retrieved: Vec<String> = matches
            .iter()
            .map(|m| format!("{} ({})", m.entry.tokens.join(" "), m.entry.entity_type))
            .collect();
        println!("retrieved: {}", retrieved.join(", "));
        let alpha = pred.token_attention.clone().unwrap_or_default();
        for ((tok, gold), (tag, a)) in s.sentence.tokens().iter().zip(s.tags.labels()).zip(pred.tags.labels().iter().zip(&alpha)) {
            println!("  {tok:<12} {gold:<8} {tag:<8} {a:.3}");
        }
    }
    let eval = pipeline::evaluate_tmn(model, &data.test)?;
    println!("held-out F1 {:.3}", eval.f1);
    Ok(())
}
