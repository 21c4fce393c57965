//! Pooling, trigger attention, losses and confidence checked against
//! independent scalar evaluations, plus their invariants.

use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

use common::losses::{classifier, random_matrix};
use common::props::{self, matrix_strategy};
use tmn::encoder::attentive_pool_values;
use tmn::inference::{mean_query, mnlp_confidence};
use tmn::matcher::{contrastive_loss, joint_loss, trigger_class_loss, MatchLossConfig, PairVectors};
use tmn::tagger::{crf_nll, trigger_attention, viterbi, CrfParams, TagSet, TriggerAttentionParams};

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Weights and vector of self-attentive pooling, one scalar at a time.
fn pool_by_hand(m: &Array2<f64>, w1: &Array2<f64>, w2: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = m.dim();
    let scores: Vec<f64> = (0..n)
        .map(|i| {
            let mut s = 0.0;
            for r in 0..w1.nrows() {
                let mut pre = 0.0;
                for c in 0..d {
                    pre += w1[[r, c]] * m[[i, c]];
                }
                s += w2[[0, r]] * pre.tanh();
            }
            s
        })
        .collect();
    let a = softmax(&scores);
    let g = (0..d).map(|c| (0..n).map(|i| a[i] * m[[i, c]]).sum()).collect();
    (a, g)
}

fn attention_by_hand(h: &Array2<f64>, g: &[f64], p: &TriggerAttentionParams) -> (Vec<f64>, Array2<f64>) {
    let (n, d) = h.dim();
    let scores: Vec<f64> = (0..n)
        .map(|i| {
            let mut s = 0.0;
            for r in 0..p.u1.nrows() {
                let mut pre = 0.0;
                for c in 0..d {
                    pre += p.u1[[r, c]] * h[[i, c]] + p.u2[[r, c]] * g[c];
                }
                s += p.v[[r, 0]] * pre.tanh();
            }
            s
        })
        .collect();
    let a = softmax(&scores);
    let hp = Array2::from_shape_fn((n, d), |(i, c)| a[i] * h[[i, c]]);
    (a, hp)
}

#[test]
fn pooling_matches_hand_computation() {
    let m = array![[0.2, -0.4, 0.9, 0.1], [1.3, 0.0, -0.7, 0.5], [-0.6, 0.8, 0.3, -1.1]];
    let w1 = array![[0.1, -0.2, 0.3, 0.05], [-0.15, 0.25, 0.1, -0.3]];
    let w2 = array![[0.7, -0.9]];
    let p = attentive_pool_values(&m, &w1, &w2).unwrap();
    let (a, g) = pool_by_hand(&m, &w1, &w2);
    for (x, y) in p.weights.iter().zip(&a) {
        assert!((x - y).abs() < 1e-12);
    }
    for (x, y) in p.vector.iter().zip(&g) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn pooling_trivial_cases() {
    let w1 = array![[0.3, 0.1], [0.2, -0.5]];
    let w2 = array![[1.0, 2.0]];
    let single = attentive_pool_values(&array![[0.4, -0.2]], &w1, &w2).unwrap();
    assert_eq!(single.weights, vec![1.0]);
    assert_eq!(single.vector, vec![0.4, -0.2]);
    let twin = attentive_pool_values(&array![[0.4, -0.2], [0.4, -0.2]], &w1, &w2).unwrap();
    assert_eq!(twin.weights, vec![0.5, 0.5]);
    assert!(twin.vector.iter().zip([0.4, -0.2]).all(|(a, b)| (a - b).abs() < 1e-15));
}

#[test]
fn attention_matches_hand_computation() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let (n, d, a) = (3, rng.random_range(1..5), rng.random_range(1..4));
        let h = random_matrix(&mut rng, n, d, 1.0);
        let g: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = TriggerAttentionParams {
            u1: random_matrix(&mut rng, a, d, 0.5),
            u2: random_matrix(&mut rng, a, d, 0.5),
            v: random_matrix(&mut rng, a, 1, 0.5),
        };
        let (alpha, hp) = trigger_attention(&h, &g, &p).unwrap();
        let (want_alpha, want_hp) = attention_by_hand(&h, &g, &p);
        for (x, y) in alpha.iter().zip(&want_alpha) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in hp.iter().zip(want_hp.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn attention_trivial_cases() {
    let p = TriggerAttentionParams {
        u1: array![[0.3, -0.1]],
        u2: array![[0.2, 0.4]],
        v: array![[1.5]],
    };
    let (a, hp) = trigger_attention(&array![[0.7, -0.3]], &[1.0, 2.0], &p).unwrap();
    assert_eq!(a, vec![1.0]);
    assert_eq!(hp, array![[0.7, -0.3]]);
    let (a, _) = trigger_attention(&array![[0.7, -0.3], [0.7, -0.3]], &[1.0, 2.0], &p).unwrap();
    assert_eq!(a, vec![0.5, 0.5]);
    assert!(trigger_attention(&array![[0.7, -0.3]], &[1.0], &p).is_err());
}

#[test]
fn closed_form_losses() {
    common::losses::closed_form_losses();
}

#[test]
fn classification_loss_falls_with_the_true_logit() {
    let mut clf = classifier(3, 1, None);
    let mut last = f64::INFINITY;
    for z in [0.0, 5.0, 10.0] {
        clf.bias[[0, 1]] = z;
        let l = trigger_class_loss(&[0.0], "T1", &clf).unwrap();
        assert!(l < last);
        last = l;
    }
}

#[test]
fn classification_loss_matches_direct_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let clf = classifier(4, 3, Some(&mut rng));
        let g: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let t = rng.random_range(0..4);
        let z: Vec<f64> = (0..4)
            .map(|k| clf.bias[[0, k]] + (0..3).map(|i| g[i] * clf.weight[[i, k]]).sum::<f64>())
            .collect();
        let want = -(z[t].exp() / z.iter().map(|v| v.exp()).sum::<f64>()).ln();
        let got = trigger_class_loss(&g, &format!("T{t}"), &clf).unwrap();
        assert!((got - want).abs() < 1e-9);
    }
}

#[test]
fn joint_loss_matches_per_pair_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..100 {
        let clf = classifier(3, 2, Some(&mut rng));
        let config = MatchLossConfig {
            margin: rng.random_range(0.5..2.0),
            lambda: if case % 10 == 0 { 0.0 } else { rng.random_range(0.0..3.0) },
            ..MatchLossConfig::default()
        };
        let n = rng.random_range(1..6);
        let mut batch: Vec<PairVectors> = (0..n)
            .map(|i| {
                let matched = i == 0 || rng.random_bool(0.5);
                PairVectors {
                    g_s: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                    g_t: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                    matched,
                    entity_type: matched.then(|| format!("T{}", rng.random_range(0..3))),
                }
            })
            .collect();
        batch.rotate_left(case % n);
        let (mut tc, mut ntc, mut sm) = (0.0, 0.0, 0.0);
        for p in &batch {
            let d = ((p.g_s[0] - p.g_t[0]).powi(2) + (p.g_s[1] - p.g_t[1]).powi(2)).sqrt();
            sm += if p.matched { 0.5 * d * d } else { 0.5 * (config.margin - d).max(0.0).powi(2) };
            if p.matched {
                tc += trigger_class_loss(&p.g_t, p.entity_type.as_deref().unwrap(), &clf).unwrap();
                ntc += 1.0;
            }
        }
        let want = tc / ntc + config.lambda * sm / batch.len() as f64;
        assert!((joint_loss(&batch, &clf, &config).unwrap() - want).abs() < 1e-9);
    }
}

fn crf_params(rng: &mut ChaCha8Rng, width: usize, k: usize, zero: bool) -> CrfParams {
    let s = if zero { 0.0 } else { 1.0 };
    let m = |rng: &mut ChaCha8Rng, r, c| if zero { Array2::zeros((r, c)) } else { random_matrix(rng, r, c, s) };
    CrfParams {
        emit_w: m(rng, width, k),
        emit_b: m(rng, 1, k),
        transitions: m(rng, k, k),
        start: Array1::from_vec(m(rng, 1, k).row(0).to_vec()),
        end: Array1::from_vec(m(rng, 1, k).row(0).to_vec()),
        mask: None,
    }
}

#[test]
fn crf_nll_closed_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in 1..=5 {
        for k in 1..=5 {
            let crf = crf_params(&mut rng, 3, k, true);
            let f = random_matrix(&mut rng, n, 3, 1.0);
            let gold: Vec<usize> = (0..n).map(|i| i % k).collect();
            let nll = crf_nll(&f, &gold, &crf).unwrap();
            assert!((nll - n as f64 * (k as f64).ln()).abs() < 1e-9);
        }
    }
    let crf = crf_params(&mut rng, 2, 1, false);
    assert!(crf_nll(&random_matrix(&mut rng, 4, 2, 1.0), &[0; 4], &crf).unwrap().abs() < 1e-9);
}

#[test]
fn mnlp_closed_forms_and_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // one tag: probability one
    let one = TagSet::new(vec![]);
    let crf = crf_params(&mut rng, 2, 1, false);
    let f = random_matrix(&mut rng, 3, 2, 1.0);
    let p = viterbi(&f, &crf, &one).unwrap();
    assert!(mnlp_confidence(&p, &f, &crf).unwrap().abs() < 1e-12);
    // all-zero scores: −ln k for any length
    let ts = TagSet::new(vec!["A".into()]);
    let crf = crf_params(&mut rng, 2, ts.len(), true);
    for n in 1..5 {
        let f = random_matrix(&mut rng, n, 2, 1.0);
        let p = viterbi(&f, &crf, &ts).unwrap();
        assert!((mnlp_confidence(&p, &f, &crf).unwrap() + (ts.len() as f64).ln()).abs() < 1e-9);
    }
    // random: (1/n) log P(best path) by enumeration
    for _ in 0..50 {
        let n = rng.random_range(1..4);
        let crf = crf_params(&mut rng, 2, ts.len(), false);
        let f = random_matrix(&mut rng, n, 2, 1.0);
        let p = viterbi(&f, &crf, &ts).unwrap();
        let e = f.dot(&crf.emit_w) + &crf.emit_b;
        let k = ts.len();
        let score = |path: &[usize]| {
            let mut s = crf.start[path[0]] + e[[0, path[0]]];
            for t in 1..path.len() {
                s += crf.transitions[[path[t - 1], path[t]]] + e[[t, path[t]]];
            }
            s + crf.end[path[path.len() - 1]]
        };
        let mut log_terms = Vec::new();
        let total = k.pow(n as u32);
        for code in 0..total {
            let path: Vec<usize> = (0..n).map(|t| (code / k.pow(t as u32)) % k).collect();
            log_terms.push(score(&path));
        }
        let m = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = m + log_terms.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        let want = (score(&p.path) - log_z) / n as f64;
        assert!((mnlp_confidence(&p, &f, &crf).unwrap() - want).abs() < 1e-9);
    }
}

#[test]
fn mismatched_loss_shape_in_distance() {
    let m = 1.5;
    let mut last = f64::INFINITY;
    for i in 0..=40 {
        let d = i as f64 * 0.05;
        let l = contrastive_loss(&[0.0, 0.0], &[d, 0.0], false, m).unwrap();
        assert!(l <= last);
        if d >= m {
            assert_eq!(l, 0.0);
        } else {
            assert!((l - 0.5 * (m - d) * (m - d)).abs() < 1e-12);
        }
        last = l;
    }
}

#[test]
fn joint_loss_is_linear_in_lambda() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let clf = classifier(2, 2, Some(&mut rng));
    let batch: Vec<PairVectors> = (0..4)
        .map(|i| PairVectors {
            g_s: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            g_t: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            matched: i % 2 == 0,
            entity_type: (i % 2 == 0).then(|| "T1".to_string()),
        })
        .collect();
    let at = |lambda: f64| joint_loss(&batch, &clf, &MatchLossConfig { lambda, ..MatchLossConfig::default() }).unwrap();
    let mean_sm = batch
        .iter()
        .map(|p| contrastive_loss(&p.g_s, &p.g_t, p.matched, 1.0).unwrap())
        .sum::<f64>()
        / batch.len() as f64;
    assert!((at(1.0) - at(0.0) - mean_sm).abs() < 1e-12);
    assert!((at(2.0) - at(1.0) - mean_sm).abs() < 1e-12);
}

#[test]
fn mnlp_ignores_a_constant_at_one_position() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let ts = TagSet::new(vec!["A".into(), "B".into()]);
    let k = ts.len();
    for _ in 0..100 {
        let n = rng.random_range(1..6);
        let mut crf = crf_params(&mut rng, 3, k, false);
        // extra feature row whose emission contribution is c for every tag
        let c = rng.random_range(-5.0..5.0);
        let mut w = Array2::zeros((4, k));
        w.slice_mut(ndarray::s![..3, ..]).assign(&crf.emit_w);
        w.row_mut(3).fill(c);
        crf.emit_w = w;
        let base = random_matrix(&mut rng, n, 3, 1.0);
        let mut plain = Array2::zeros((n, 4));
        plain.slice_mut(ndarray::s![.., ..3]).assign(&base);
        let mut shifted = plain.clone();
        shifted[[rng.random_range(0..n), 3]] = 1.0;
        let p0 = viterbi(&plain, &crf, &ts).unwrap();
        let p1 = viterbi(&shifted, &crf, &ts).unwrap();
        assert_eq!(p0.path, p1.path);
        let (m0, m1) = (mnlp_confidence(&p0, &plain, &crf).unwrap(), mnlp_confidence(&p1, &shifted, &crf).unwrap());
        assert!((m0 - m1).abs() < 1e-9);
        assert!(m0 <= 0.0);
    }
}

#[test]
fn attention_ignores_query_directions_u2_cannot_see() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..100 {
        let p = TriggerAttentionParams {
            u1: random_matrix(&mut rng, 1, 2, 1.0),
            u2: random_matrix(&mut rng, 1, 2, 1.0),
            v: random_matrix(&mut rng, 1, 1, 1.0),
        };
        let h = random_matrix(&mut rng, 5, 2, 1.0);
        let g = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let t = rng.random_range(-3.0..3.0);
        let moved = [g[0] + t * p.u2[[0, 1]], g[1] - t * p.u2[[0, 0]]];
        let (a0, h0) = trigger_attention(&h, &g, &p).unwrap();
        let (a1, h1) = trigger_attention(&h, &moved, &p).unwrap();
        for (x, y) in a0.iter().zip(&a1) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in h0.iter().zip(h1.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn mean_of_copies_is_the_vector() {
    let v = vec![0.3, -1.7, 2.25];
    for k in 1..10 {
        let m = mean_query(&vec![v.clone(); k]).unwrap();
        assert!(m.iter().zip(&v).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}

fn orthogonal(rng: &mut ChaCha8Rng, d: usize) -> Array2<f64> {
    // Gram-Schmidt on a random square matrix
    let a = random_matrix(rng, d, d, 1.0);
    let mut q = Array2::<f64>::zeros((d, d));
    for j in 0..d {
        let mut v = a.column(j).to_owned();
        for i in 0..j {
            let qi = q.column(i).to_owned();
            let proj = qi.dot(&v);
            v = v - qi * proj;
        }
        let norm = v.dot(&v).sqrt();
        q.column_mut(j).assign(&(v / norm));
    }
    q
}


proptest! {
    #![proptest_config(ProptestConfig::with_cases(props::CASES))]

    #[test]
    fn pooling_weights_normalized_and_vector_in_hull(m in matrix_strategy(), seed in any::<u64>()) {
        props::pooling_in_hull(&m, seed)?;
    }

    #[test]
    fn attention_weights_normalized(h in matrix_strategy(), seed in any::<u64>()) {
        props::attention_normalized(&h, seed)?;
    }

    #[test]
    fn contrastive_symmetric_and_rotation_invariant(seed in any::<u64>(), d in 1usize..6, matched in any::<bool>(), margin in 0.1f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let l = contrastive_loss(&a, &b, matched, margin).unwrap();
        prop_assert!((l - contrastive_loss(&b, &a, matched, margin).unwrap()).abs() < 1e-12);
        let q = orthogonal(&mut rng, d);
        let ra = q.dot(&Array1::from_vec(a)).to_vec();
        let rb = q.dot(&Array1::from_vec(b)).to_vec();
        prop_assert!((l - contrastive_loss(&ra, &rb, matched, margin).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn pooling_is_permutation_equivariant(m in matrix_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, d) = m.dim();
        let w1 = random_matrix(&mut rng, 2, d, 2.0);
        let w2 = random_matrix(&mut rng, 1, 2, 2.0);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.rotate_left(rng.random_range(0..n));
        perm.swap(0, rng.random_range(0..n));
        let permuted = m.select(ndarray::Axis(0), &perm);
        let a = attentive_pool_values(&m, &w1, &w2).unwrap();
        let b = attentive_pool_values(&permuted, &w1, &w2).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            prop_assert!((b.weights[i] - a.weights[p]).abs() < 1e-12);
        }
        for (x, y) in a.vector.iter().zip(&b.vector) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}
