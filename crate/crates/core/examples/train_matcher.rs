//! Stage one on the synthetic corpus: trigger classification plus soft
//! matching. Reports held-out trigger-type accuracy and pair distances.

use std::sync::Arc;

use tmn::corpus::{make_match_pairs, reformat};
use tmn::harness::{generate_synthetic, pipeline, RunConfig};
use tmn::matcher::{train_stage1, Matcher};

fn main() -> tmn::Result<()> {
    let mut config = RunConfig::synthetic();
    config.apply_overrides(&["synthetic.train_sentences=250", "synthetic.test_sentences=100", "stage1.epochs=20"])?;
    let data = generate_synthetic(&config.synthetic)?;
    let train = reformat(&data.train);
    let test = reformat(&data.test);

    let encoder = pipeline::build_encoder(&data.train, Arc::new(data.pretrained.clone()), &config)?;
    let matcher = Matcher::new(encoder, data.types.clone(), config.matcher.clone(), 1)?;
    println!("untrained: held-out trigger accuracy {:.3}", matcher.trigger_accuracy(&test)?);
    let (matcher, log) = train_stage1(matcher, &train, &config.stage1, 1)?;
    for e in &log.epochs {
        println!(
            "epoch {:>2}: class {:.4} match {:.4} held-out {:.4}",
            e.epoch, e.trigger_class_loss, e.matching_loss, e.heldout_loss
        );
    }
    println!("trained: held-out trigger accuracy {:.3}", matcher.trigger_accuracy(&test)?);

    let pairs = make_match_pairs(&test, 1.0, 3)?;
    let (mut same, mut diff) = (Vec::new(), Vec::new());
    for p in &pairs {
        let inst = &test[p.trigger_instance];
        let g_s = matcher.sentence_vector(&p.instance_sentence).vector;
        let g_t = matcher.trigger_vector(&inst.sentence, &inst.trigger.indices())?.vector;
        let d = g_s.iter().zip(&g_t).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        if p.matched { same.push(d) } else { diff.push(d) }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!("held-out distance: matched {:.3}, mismatched {:.3}", mean(&same), mean(&diff));
    Ok(())
}
