//! Self-training from a small labeled subset, using the rest of the training
//! sentences as the unlabeled pool.

use std::sync::Arc;

use tmn::corpus::{subsample_indices, Sentence};
use tmn::harness::{generate_synthetic, pipeline, RunConfig};

fn main() -> tmn::Result<()> {
    let mut config = RunConfig::synthetic();
    config.apply_overrides(&["synthetic.test_sentences=100", "self_train.rounds=3"])?;
    let data = generate_synthetic(&config.synthetic)?;
    let idx = subsample_indices(data.train.len(), 0.1, 1)?;
    let labeled: Vec<_> = idx.iter().map(|&i| data.train[i].clone()).collect();
    let pool: Vec<Sentence> = (0..data.train.len())
        .filter(|i| !idx.contains(i))
        .map(|i| data.train[i].sentence.clone())
        .collect();
    println!("{} labeled, {} unlabeled", labeled.len(), pool.len());

    let trained = pipeline::train_tmn(&labeled, &data.types, Arc::new(data.pretrained.clone()), &config, 1)?;
    let before = pipeline::evaluate_tmn(&trained.model, &data.test)?;
    let (model, log) = pipeline::self_train_tmn(trained.model, &labeled, &pool, &config, 1)?;
    for r in &log.rounds {
        println!(
            "round {}: promoted {} of {}, mean confidence {:.3} (pool {:.3})",
            r.round,
            r.selected.len(),
            r.pool_size,
            r.mean_selected_confidence,
            r.mean_pool_confidence
        );
    }
    let after = pipeline::evaluate_tmn(&model, &data.test)?;
    println!("F1 {:.3} -> {:.3}", before.f1, after.f1);
    Ok(())
}
