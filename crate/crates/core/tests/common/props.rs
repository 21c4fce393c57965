//! Property bodies for the headline invariants, each driven by plain
//! generated inputs so they can run under `proptest!` or a bare runner.

use std::collections::BTreeSet;

use ndarray::Array2;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tmn::corpus::{Scheme, Span, TagSequence};
use tmn::encoder::attentive_pool_values;
use tmn::harness::eval::entity_f1;
use tmn::inference::{select_confident, SelfTrainConfig};
use tmn::tagger::{trigger_attention, TriggerAttentionParams};

use super::losses::random_matrix;

pub const CASES: u32 = 500;

pub fn matrix_strategy() -> impl Strategy<Value = Array2<f64>> {
    (1usize..8, 1usize..6).prop_flat_map(|(n, d)| {
        prop::collection::vec(-3.0f64..3.0, n * d).prop_map(move |v| Array2::from_shape_vec((n, d), v).unwrap())
    })
}

pub fn pooling_in_hull(m: &Array2<f64>, seed: u64) -> Result<(), TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = m.ncols();
    let r = rng.random_range(1..4);
    let w1 = random_matrix(&mut rng, r, d, 2.0);
    let w2 = random_matrix(&mut rng, 1, r, 2.0);
    let p = attentive_pool_values(m, &w1, &w2).unwrap();
    prop_assert!((p.weights.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    prop_assert!(p.weights.iter().all(|&w| w >= 0.0));
    for c in 0..d {
        let col = m.column(c);
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(p.vector[c] >= lo - 1e-9 && p.vector[c] <= hi + 1e-9);
    }
    Ok(())
}

pub fn attention_normalized(h: &Array2<f64>, seed: u64) -> Result<(), TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = h.ncols();
    let a = rng.random_range(1..4);
    let p = TriggerAttentionParams {
        u1: random_matrix(&mut rng, a, d, 2.0),
        u2: random_matrix(&mut rng, a, d, 2.0),
        v: random_matrix(&mut rng, a, 1, 2.0),
    };
    let g: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
    let (alpha, hp) = trigger_attention(h, &g, &p).unwrap();
    prop_assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    prop_assert!(alpha.iter().all(|&w| w >= 0.0));
    for i in 0..h.nrows() {
        for c in 0..d {
            prop_assert!((hp[[i, c]] - alpha[i] * h[[i, c]]).abs() < 1e-12);
        }
    }
    Ok(())
}

const TYPES: [&str; 3] = ["PER", "LOC", "ORG"];

fn random_spans(rng: &mut ChaCha8Rng, n: usize, p: f64, max_len: usize) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut i = 0;
    while i < n {
        if rng.random_bool(p) {
            let len = rng.random_range(1..=max_len.min(n - i));
            spans.push(Span::new(i, i + len, *TYPES.choose(rng).unwrap()));
            i += len;
        } else {
            i += 1;
        }
    }
    spans
}

/// spans → tags → spans, and the sequence re-validates, under either scheme.
pub fn scheme_round_trip(seed: u64, n: usize, bioes: bool) -> Result<(), TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spans = random_spans(&mut rng, n, 0.4, n);
    let scheme = if bioes { Scheme::Bioes } else { Scheme::Bio };
    let seq = TagSequence::from_spans(n, &spans, scheme).unwrap();
    prop_assert_eq!(seq.spans(), spans.clone());
    prop_assert!(TagSequence::new(seq.tags.clone(), scheme).is_ok());
    let other = if bioes { Scheme::Bio } else { Scheme::Bioes };
    prop_assert_eq!(seq.to_scheme(other).to_scheme(scheme), seq);
    Ok(())
}

fn random_seq(rng: &mut ChaCha8Rng, n: usize) -> TagSequence {
    let spans = random_spans(rng, n, 0.3, 2);
    TagSequence::from_spans(n, &spans, Scheme::Bioes).unwrap()
}

/// Random gold and predicted corpora of `size` sentences.
pub fn random_pair(seed: u64, size: usize) -> (Vec<TagSequence>, Vec<TagSequence>, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gold: Vec<TagSequence> = (0..size)
        .map(|_| {
            let n = rng.random_range(1..10);
            random_seq(&mut rng, n)
        })
        .collect();
    let pred = gold.iter().map(|g| random_seq(&mut rng, g.len())).collect();
    (gold, pred, rng)
}

pub fn f1_identity(seed: u64, size: usize) -> Result<(), TestCaseError> {
    let (gold, pred, _) = random_pair(seed, size);
    let r = entity_f1(&gold, &pred).unwrap();
    let (p, rc) = (r.precision, r.recall);
    let want = if p + rc > 0.0 { 2.0 * p * rc / (p + rc) } else { 0.0 };
    prop_assert!((r.f1 - want).abs() < 1e-12);
    prop_assert!(r.counts.correct <= r.counts.gold.min(r.counts.predicted));
    prop_assert_eq!(r.counts.gold, gold.iter().map(|g| g.spans().len()).sum::<usize>());
    let per = r
        .per_type
        .values()
        .fold((0, 0, 0), |a, c| (a.0 + c.gold, a.1 + c.predicted, a.2 + c.correct));
    prop_assert_eq!(per, (r.counts.gold, r.counts.predicted, r.counts.correct));
    prop_assert_eq!(entity_f1(&gold, &gold).unwrap().f1, if r.counts.gold > 0 { 1.0 } else { 0.0 });
    Ok(())
}

/// Simulated self-training rounds over a pool with tied confidences: each
/// round takes `⌈fraction · remaining⌉` best-first and nothing is promoted
/// twice.
pub fn pool_disjoint(pool: usize, fraction: f64, rounds: usize, seed: u64) -> Result<(), TestCaseError> {
    let config = SelfTrainConfig {
        selection_fraction: fraction,
        rounds,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut remaining: Vec<usize> = (0..pool).collect();
    let mut promoted: BTreeSet<usize> = BTreeSet::new();
    for _ in 0..rounds {
        if remaining.is_empty() {
            break;
        }
        let conf: Vec<f64> = remaining.iter().map(|_| -(rng.random_range(0..5) as f64) / 4.0).collect();
        let take = config.selection_size(remaining.len());
        prop_assert_eq!(take, ((fraction * remaining.len() as f64).ceil() as usize).min(remaining.len()));
        let chosen = select_confident(&conf, take);
        prop_assert_eq!(chosen.len(), take);
        for w in chosen.windows(2) {
            prop_assert!(conf[w[0]] > conf[w[1]] || (conf[w[0]] == conf[w[1]] && w[0] < w[1]));
        }
        let worst_taken = chosen.last().map(|&c| conf[c]).unwrap_or(f64::INFINITY);
        for (pos, &c) in conf.iter().enumerate() {
            if !chosen.contains(&pos) {
                prop_assert!(c <= worst_taken);
            }
        }
        let picked: Vec<usize> = chosen.iter().map(|&c| remaining[c]).collect();
        for p in &picked {
            prop_assert!(promoted.insert(*p), "sentence {} promoted twice", p);
        }
        remaining.retain(|i| !picked.contains(i));
    }
    Ok(())
}

/// Runs the five headline properties with `cases` cases each; returns
/// `(name, outcome)` per property.
pub fn run_all(cases: u32) -> Vec<(&'static str, Result<(), String>)> {
    let runner = || TestRunner::new(Config::with_cases(cases));
    fn fmt<T: std::fmt::Debug>(r: Result<(), proptest::test_runner::TestError<T>>) -> Result<(), String> {
        r.map_err(|e| format!("{e}"))
    }
    vec![
        (
            "attention normalization",
            fmt(runner().run(&(matrix_strategy(), any::<u64>()), |(h, s)| attention_normalized(&h, s))),
        ),
        (
            "pooled-vector convex hull",
            fmt(runner().run(&(matrix_strategy(), any::<u64>()), |(m, s)| pooling_in_hull(&m, s))),
        ),
        (
            "tag-scheme round trip",
            fmt(runner().run(&(any::<u64>(), 1usize..=10, any::<bool>()), |(s, n, b)| scheme_round_trip(s, n, b))),
        ),
        (
            "F1 harmonic identity",
            fmt(runner().run(&(any::<u64>(), 1usize..12), |(s, k)| f1_identity(s, k))),
        ),
        (
            "self-training pool disjointness",
            fmt(runner().run(&(1usize..200, 0.01f64..=1.0, 1usize..8, any::<u64>()), |(p, f, r, s)| {
                pool_disjoint(p, f, r, s)
            })),
        ),
    ]
}
