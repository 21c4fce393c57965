//! Saves a trained model to JSON checkpoints, reloads it and checks that the
//! predictions are unchanged.

use std::sync::Arc;

use tmn::checkpoint::{load_tmn, MatcherCheckpoint, TaggerCheckpoint};
use tmn::harness::{generate_synthetic, pipeline, RunConfig};

fn main() -> tmn::Result<()> {
    let mut config = RunConfig::synthetic();
    config.apply_overrides(&[
        "synthetic.train_sentences=100",
        "synthetic.test_sentences=30",
        "stage1.epochs=3",
        "stage2.epochs=3",
    ])?;
    let data = generate_synthetic(&config.synthetic)?;
    let trained = pipeline::train_tmn(&data.train, &data.types, Arc::new(data.pretrained.clone()), &config, 1)?;
    let m = &trained.model;

    let dir = std::env::temp_dir().join(format!("tmn-checkpoints-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let (mp, tp) = (dir.join("matcher.json"), dir.join("tagger.json"));
    MatcherCheckpoint::new(&m.matcher, &m.table, None).save(&mp)?;
    TaggerCheckpoint::new(&m.tagger, None).save(&tp)?;
    println!(
        "matcher {} bytes, tagger {} bytes",
        std::fs::metadata(&mp)?.len(),
        std::fs::metadata(&tp)?.len()
    );

    let back = load_tmn(&mp, &tp, m.retrieval.clone())?;
    let same = data
        .test
        .iter()
        .all(|s| m.tag(&s.sentence).unwrap().tags == back.tag(&s.sentence).unwrap().tags);
    println!("reloaded predictions identical: {same}");
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
