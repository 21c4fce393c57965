//! Labeled-data budget study and cost-effectiveness curves.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{subsample_indices, Sentence, TriggerAnnotatedSentence};
use crate::encoder::PretrainedVectors;
use crate::error::{Error, Result};

use super::config::RunConfig;
use super::eval::EvalResult;
use super::pipeline::{evaluate_baseline, evaluate_tmn, self_train_tmn, train_baseline, train_tmn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "tmn")]
    Tmn,
    #[serde(rename = "tmn+selftrain")]
    TmnSelfTrain,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Baseline => "baseline",
            Variant::Tmn => "tmn",
            Variant::TmnSelfTrain => "tmn+selftrain",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "tmn" => Ok(Variant::Tmn),
            "tmn+selftrain" => Ok(Variant::TmnSelfTrain),
            other => Err(Error::InvalidArgument(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetResult {
    pub variant: Variant,
    pub fraction: f64,
    pub seed: u64,
    pub eval: EvalResult,
}

/// The training sentences used for one (fraction, seed) cell. Sets are
/// nested in the fraction for a fixed seed.
pub fn budget_subset(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    subsample_indices(n, fraction, seed)
}

/// Trains every (variant, fraction, seed) cell from scratch and evaluates it
/// on `test`. Cells run in parallel; the result order is sorted.
pub fn run_budget_experiment(
    train: &[TriggerAnnotatedSentence],
    test: &[TriggerAnnotatedSentence],
    types: &[String],
    pretrained: Arc<PretrainedVectors>,
    config: &RunConfig,
) -> Result<Vec<BudgetResult>> {
    config.validate()?;
    let b = &config.budget;
    let mut cells = Vec::new();
    for &seed in &b.seeds {
        for &fraction in &b.fractions {
            // TMN with and without self-training share one trained model
            let tmn_variants: Vec<Variant> = b.variants.iter().copied().filter(|v| *v != Variant::Baseline).collect();
            if b.variants.contains(&Variant::Baseline) {
                cells.push((seed, fraction, vec![Variant::Baseline]));
            }
            if !tmn_variants.is_empty() {
                cells.push((seed, fraction, tmn_variants));
            }
        }
    }
    let nested: Vec<Vec<BudgetResult>> = cells
        .par_iter()
        .map(|(seed, fraction, variants)| run_cell(train, test, types, pretrained.clone(), config, *seed, *fraction, variants))
        .collect::<Result<_>>()?;
    let mut out: Vec<BudgetResult> = nested.into_iter().flatten().collect();
    sort_results(&mut out);
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    train: &[TriggerAnnotatedSentence],
    test: &[TriggerAnnotatedSentence],
    types: &[String],
    pretrained: Arc<PretrainedVectors>,
    config: &RunConfig,
    seed: u64,
    fraction: f64,
    variants: &[Variant],
) -> Result<Vec<BudgetResult>> {
    let idx = budget_subset(train.len(), fraction, seed)?;
    let subset: Vec<TriggerAnnotatedSentence> = idx.iter().map(|&i| train[i].clone()).collect();
    let row = |variant, eval| BudgetResult {
        variant,
        fraction,
        seed,
        eval,
    };
    log::info!("budget cell seed={seed} fraction={fraction} variants={variants:?}");
    if variants == [Variant::Baseline] {
        let (tagger, _) = train_baseline(&subset, types, pretrained, config, seed)?;
        return Ok(vec![row(Variant::Baseline, evaluate_baseline(&tagger, test)?)]);
    }
    let trained = train_tmn(&subset, types, pretrained, config, seed)?;
    let mut out = Vec::new();
    if variants.contains(&Variant::Tmn) {
        out.push(row(Variant::Tmn, evaluate_tmn(&trained.model, test)?));
    }
    if variants.contains(&Variant::TmnSelfTrain) {
        let chosen: std::collections::BTreeSet<usize> = idx.iter().copied().collect();
        let pool: Vec<Sentence> = (0..train.len())
            .filter(|i| !chosen.contains(i))
            .map(|i| train[i].sentence.clone())
            .collect();
        let eval = if pool.is_empty() {
            log::warn!("no unlabeled remainder at fraction {fraction}; self-training skipped");
            evaluate_tmn(&trained.model, test)?
        } else {
            let (m, _) = self_train_tmn(trained.model, &subset, &pool, config, seed)?;
            evaluate_tmn(&m, test)?
        };
        out.push(row(Variant::TmnSelfTrain, eval));
    }
    Ok(out)
}

pub fn sort_results(results: &mut [BudgetResult]) {
    results.sort_by(|a, b| {
        a.variant
            .cmp(&b.variant)
            .then(a.fraction.total_cmp(&b.fraction))
            .then(a.seed.cmp(&b.seed))
    });
}

pub const CSV_HEADER: &str = "variant,fraction,seed,precision,recall,f1";

pub fn results_csv(results: &[BudgetResult]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in results {
        s.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6}\n",
            r.variant, r.fraction, r.seed, r.eval.precision, r.eval.recall, r.eval.f1
        ));
    }
    s
}

/// One parsed CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub variant: String,
    pub fraction: f64,
    pub seed: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn parse_results_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        _ => return Err(Error::Format(format!("expected header `{CSV_HEADER}`"))),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::Format(format!("bad results row `{l}`"));
            if f.len() != 6 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(CsvRow {
                variant: f[0].to_string(),
                fraction: num(f[1])?,
                seed: f[2].parse().map_err(|_| bad())?,
                precision: num(f[3])?,
                recall: num(f[4])?,
                f1: num(f[5])?,
            })
        })
        .collect()
}

/// Results CSV plus `<stem>.config.toml` with the full configuration.
pub fn write_results(path: impl AsRef<Path>, csv: &str, config: &RunConfig) -> Result<PathBuf> {
    let path = path.as_ref();
    std::fs::write(path, csv)?;
    let sidecar = path.with_extension("config.toml");
    config.save(&sidecar)?;
    Ok(sidecar)
}

pub const COST_CSV_HEADER: &str = "variant,multiplier,x,fraction,seed,f1";

/// Stretches the baseline curve along the x-axis: each baseline row is
/// repeated per multiplier with `x = fraction / multiplier`. Other rows are
/// copied once with `x = fraction`.
pub fn emit_cost_curves(results: &[CsvRow], multipliers: &[f64]) -> Result<String> {
    if multipliers.iter().any(|m| !(*m > 0.0)) {
        return Err(Error::InvalidArgument("effort multipliers must be positive".into()));
    }
    let mut s = String::from(COST_CSV_HEADER);
    s.push('\n');
    for r in results.iter().filter(|r| r.variant == "baseline") {
        for m in multipliers {
            s.push_str(&format!(
                "baseline,{m},{},{},{},{:.6}\n",
                r.fraction / m,
                r.fraction,
                r.seed,
                r.f1
            ));
        }
    }
    for r in results.iter().filter(|r| r.variant != "baseline") {
        s.push_str(&format!("{},1,{},{},{},{:.6}\n", r.variant, r.fraction, r.fraction, r.seed, r.f1));
    }
    Ok(s)
}

/// Mean F1 per (variant, fraction) over seeds.
pub fn mean_f1(results: &[BudgetResult], variant: Variant, fraction: f64) -> Option<f64> {
    let v: Vec<f64> = results
        .iter()
        .filter(|r| r.variant == variant && (r.fraction - fraction).abs() < 1e-12)
        .map(|r| r.eval.f1)
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(variant: &str, fraction: f64, f1: f64) -> CsvRow {
        CsvRow {
            variant: variant.into(),
            fraction,
            seed: 1,
            precision: f1,
            recall: f1,
            f1,
        }
    }

    #[test]
    fn stretch_transform() {
        let rows = vec![row("baseline", 0.4, 0.8), row("tmn", 0.2, 0.85)];
        let csv = emit_cost_curves(&rows, &[1.0, 2.0]).unwrap();
        let lines: Vec<&str> = csv.lines().skip(1).collect();
        assert_eq!(lines.len(), 2 + 1);
        assert_eq!(lines[0], "baseline,1,0.4,0.4,1,0.800000");
        assert_eq!(lines[1], "baseline,2,0.2,0.4,1,0.800000");
        assert!(lines[2].starts_with("tmn,1,0.2,"));
    }

    #[test]
    fn csv_round_trip() {
        let r = vec![BudgetResult {
            variant: Variant::TmnSelfTrain,
            fraction: 0.2,
            seed: 3,
            eval: EvalResult::default(),
        }];
        let rows = parse_results_csv(&results_csv(&r)).unwrap();
        assert_eq!(rows[0].variant, "tmn+selftrain");
        assert_eq!(rows[0].seed, 3);
        assert!(parse_results_csv("a,b\n").is_err());
    }

    #[test]
    fn nested_subsets() {
        for seed in 0..5 {
            let small = budget_subset(300, 0.1, seed).unwrap();
            let large = budget_subset(300, 0.2, seed).unwrap();
            assert!(small.iter().all(|i| large.contains(i)));
        }
    }

    #[test]
    fn variant_names() {
        for v in [Variant::Baseline, Variant::Tmn, Variant::TmnSelfTrain] {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
    }
}
