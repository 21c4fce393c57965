//! Stretches the baseline curve of a results CSV by labeling-effort
//! multipliers.

use tmn::harness::budget::{emit_cost_curves, parse_results_csv};

const RESULTS: &str = "variant,fraction,seed,precision,recall,f1
baseline,0.1,1,0.60,0.58,0.59
baseline,0.2,1,0.86,0.85,0.855
baseline,0.4,1,0.95,0.95,0.95
tmn,0.1,1,0.68,0.67,0.675
tmn,0.2,1,0.90,0.89,0.895
";

fn main() -> tmn::Result<()> {
    let rows = parse_results_csv(RESULTS)?;
    print!("{}", emit_cost_curves(&rows, &[1.0, 1.5, 2.0])?);
    Ok(())
}
