//! The labeled-data budget study on the synthetic corpus: baseline against
//! the trigger-enhanced model at matched fractions, three seeds each.
//! Arguments are `key=value` configuration overrides.

use std::sync::Arc;

use tmn::harness::budget::{mean_f1, results_csv};
use tmn::harness::{generate_synthetic, run_budget_experiment, RunConfig, Variant};

fn main() -> tmn::Result<()> {
    env_logger::init();
    let mut config = RunConfig::synthetic();
    let args: Vec<String> = std::env::args().skip(1).collect();
    config.apply_overrides(&args)?;
    let data = generate_synthetic(&config.synthetic)?;
    let results = run_budget_experiment(&data.train, &data.test, &data.types, Arc::new(data.pretrained.clone()), &config)?;
    print!("{}", results_csv(&results));
    for &f in &config.budget.fractions {
        let show = |v| mean_f1(&results, v, f).map_or("-".to_string(), |x| format!("{x:.3}"));
        println!(
            "{:>4.0}%  baseline {}  tmn {}  tmn+selftrain {}",
            f * 100.0,
            show(Variant::Baseline),
            show(Variant::Tmn),
            show(Variant::TmnSelfTrain)
        );
    }
    Ok(())
}
