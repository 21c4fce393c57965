//! Trains the baseline and the trigger-enhanced tagger on the default
//! synthetic corpus and reports held-out scores. Arguments: `[seed] [key=value ...]`.

use std::sync::Arc;
use std::time::Instant;

use tmn::harness::{generate_synthetic, pipeline, RunConfig};

fn main() -> tmn::Result<()> {
    env_logger::init();
    let mut config = RunConfig::synthetic();
    config.apply_overrides(&std::env::args().skip(2).collect::<Vec<_>>())?;
    let data = generate_synthetic(&config.synthetic)?;
    let pretrained = Arc::new(data.pretrained.clone());
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);

    let t = Instant::now();
    let trained = pipeline::train_tmn(&data.train, &data.types, pretrained.clone(), &config, seed)?;
    let acc = pipeline::trigger_type_accuracy(&trained.model.matcher, &data.test)?;
    let tmn = pipeline::evaluate_tmn(&trained.model, &data.test)?;
    println!(
        "tmn: trigger accuracy {acc:.3}, F1 {:.3} (P {:.3} R {:.3}), stage1 best epoch {}, stage2 best epoch {}, {:.1}s",
        tmn.f1,
        tmn.precision,
        tmn.recall,
        trained.stage1.best_epoch,
        trained.stage2.best_epoch,
        t.elapsed().as_secs_f64()
    );

    let t = Instant::now();
    let (baseline, log) = pipeline::train_baseline(&data.train, &data.types, pretrained, &config, seed)?;
    let b = pipeline::evaluate_baseline(&baseline, &data.test)?;
    println!(
        "baseline: F1 {:.3} (P {:.3} R {:.3}), best epoch {}, {:.1}s",
        b.f1,
        b.precision,
        b.recall,
        log.best_epoch,
        t.elapsed().as_secs_f64()
    );
    Ok(())
}
