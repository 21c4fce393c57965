//! Linear-chain CRF instances and brute-force enumeration of tag paths.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tmn::tagger::crf::{CrfMask, CrfScores};
use tmn::tagger::TagSet;

#[derive(Debug, Clone)]
pub struct Instance {
    pub e: Array2<f64>,
    pub t: Array2<f64>,
    pub s: Array1<f64>,
    pub f: Array1<f64>,
}

impl Instance {
    pub fn random(rng: &mut ChaCha8Rng, n: usize, k: usize, integer: bool) -> Self {
        let mut draw = |rows: usize, cols: usize| {
            Array2::from_shape_fn((rows, cols), |_| {
                if integer {
                    rng.random_range(-2..=2) as f64
                } else {
                    rng.random_range(-3.0..3.0)
                }
            })
        };
        let e = draw(n, k);
        let t = draw(k, k);
        let s = draw(1, k).row(0).to_owned();
        let f = draw(1, k).row(0).to_owned();
        Self { e, t, s, f }
    }

    pub fn scores<'a>(&'a self, mask: Option<&'a CrfMask>) -> CrfScores<'a> {
        CrfScores::new(self.e.view(), self.t.view(), self.s.view(), self.f.view(), mask)
    }

    /// Score summed left to right, straight from the definition.
    pub fn path_score(&self, path: &[usize], mask: Option<&CrfMask>) -> f64 {
        let add = |m: Option<f64>| m.unwrap_or(0.0);
        let mut total = self.s[path[0]] + add(mask.map(|m| m.start[path[0]])) + self.e[[0, path[0]]];
        for w in 1..path.len() {
            let (i, j) = (path[w - 1], path[w]);
            total += self.t[[i, j]] + add(mask.map(|m| m.transitions[[i, j]])) + self.e[[w, j]];
        }
        let last = path[path.len() - 1];
        total + self.f[last] + add(mask.map(|m| m.end[last]))
    }
}

pub fn all_paths(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..k).map(move |j| {
                    let mut q = p.clone();
                    q.push(j);
                    q
                })
            })
            .collect();
    }
    out
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Best path; among equal scores the one that is smallest when compared
/// from the last position backwards.
pub fn oracle_argmax(inst: &Instance, paths: &[Vec<usize>], mask: Option<&CrfMask>) -> (Vec<usize>, f64) {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for p in paths {
        let s = inst.path_score(p, mask);
        let better = match &best {
            None => true,
            Some((bp, bs)) => s > *bs || (s == *bs && p.iter().rev().lt(bp.iter().rev())),
        };
        if better {
            best = Some((p.clone(), s));
        }
    }
    best.unwrap()
}

pub fn bioes_mask(k: usize) -> CrfMask {
    // 1 + 4·types tags; k = 5 means one entity type
    assert_eq!(k, 5);
    TagSet::new(vec!["X".into()]).bioes_mask()
}

/// Random instances with n ≤ 4 and k ≤ 5, a third with integer scores so
/// ties occur; k = 5 is also run under the BIOES mask. Returns the number
/// of (instance, mask) checks.
pub fn enumeration_check(cases: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    for case in 0..cases {
        let n = rng.random_range(1..=4);
        let k = rng.random_range(1..=5);
        let integer = case % 3 == 0;
        let inst = Instance::random(&mut rng, n, k, integer);
        let masks: Vec<Option<CrfMask>> = if k == 5 { vec![None, Some(bioes_mask(5))] } else { vec![None] };
        let paths = all_paths(n, k);
        for mask in &masks {
            let m = mask.as_ref();
            let c = inst.scores(m);
            let scores: Vec<f64> = paths.iter().map(|p| inst.path_score(p, m)).collect();
            let log_z = log_sum_exp(&scores);
            assert!((c.log_partition() - log_z).abs() < 1e-6, "case {case}: {} vs {log_z}", c.log_partition());
            let (path, score) = c.viterbi();
            let (want, want_score) = oracle_argmax(&inst, &paths, m);
            assert_eq!(path, want, "case {case} (integer scores: {integer})");
            assert!((score - want_score).abs() < 1e-9);
            assert!((c.path_score(&path) - want_score).abs() < 1e-9);
            checked += 1;
        }
    }
    checked
}
