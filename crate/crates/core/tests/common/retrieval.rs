//! Random trigger tables and a brute-force nearest-entry oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tmn::inference::{mean_of_matches, nearest};
use tmn::matcher::{TriggerEntry, TriggerTable};

pub fn random_table(rng: &mut ChaCha8Rng, size: usize, width: usize, coarse: bool) -> TriggerTable {
    let types = vec!["A".to_string(), "B".to_string()];
    let mut entries: Vec<TriggerEntry> = (0..size)
        .map(|i| {
            let vector = (0..width)
                .map(|_| {
                    if coarse {
                        rng.random_range(-1..=1) as f32
                    } else {
                        rng.random_range(-1.0f32..1.0)
                    }
                })
                .collect();
            TriggerEntry {
                id: i,
                source_sentence: i / 2,
                entity_type: types[i % 2].clone(),
                tokens: vec![format!("w{i}")],
                vector,
            }
        })
        .collect();
    // exact duplicates, stored out of id order
    if size > 3 {
        for _ in 0..size / 4 {
            let (a, b) = (rng.random_range(0..size), rng.random_range(0..size));
            let v = entries[a].vector.clone();
            entries[b].vector = v;
        }
        let shift = rng.random_range(0..size);
        entries.rotate_left(shift);
    }
    TriggerTable::new(width, types, entries).unwrap()
}

pub fn brute_force(table: &TriggerTable, query: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = table
        .entries
        .iter()
        .map(|e| {
            let d2: f64 = query.iter().zip(&e.vector).map(|(q, &v)| (q - v as f64).powi(2)).sum();
            (e.id, d2.sqrt())
        })
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Random tables with k ≤ 10 and k ≤ size ≤ 500; half use coarse integer
/// vectors and duplicates so distances tie. Returns the number of tables
/// whose top k contained a tie.
pub fn brute_force_check(tables: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ties_seen = 0;
    for case in 0..tables {
        let k = rng.random_range(1..=10);
        let size = rng.random_range(k..=500);
        let width = rng.random_range(1..=6);
        let coarse = case % 2 == 0;
        let table = random_table(&mut rng, size, width, coarse);
        let query: Vec<f64> = if coarse {
            (0..width).map(|_| rng.random_range(-1..=1) as f64).collect()
        } else {
            (0..width).map(|_| rng.random_range(-1.0..1.0)).collect()
        };
        let got = nearest(&table, &query, k).unwrap();
        let want = brute_force(&table, &query, k);
        assert_eq!(got.len(), k);
        for (g, (id, d)) in got.iter().zip(&want) {
            assert_eq!(g.entry.id, *id, "case {case}");
            assert_eq!(g.distance, *d, "case {case}");
        }
        if got.windows(2).any(|w| w[0].distance == w[1].distance) {
            ties_seen += 1;
        }
        let mean = mean_of_matches(&got).unwrap();
        for (j, m) in mean.iter().enumerate() {
            let oracle = want
                .iter()
                .map(|(id, _)| table.entries.iter().find(|e| e.id == *id).unwrap().vector[j] as f64)
                .sum::<f64>()
                / want.len() as f64;
            assert!((m - oracle).abs() < 1e-12);
        }
    }
    ties_seen
}

