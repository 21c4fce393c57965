//! Central-difference gradient checks over small random models.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use ndarray::Array2;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tmn::autodiff::{Tape, Var};
use tmn::corpus::{
    make_match_pairs, reformat, Scheme, Sentence, Span, TagSequence, Trigger, TriggerAnnotatedSentence,
};
use tmn::encoder::{
    names, CharVocab, EmbeddingConfig, Encoder, EncoderConfig, Mode, PretrainedVectors, UnknownTokenPolicy,
};
use tmn::matcher::{MatchLossConfig, Matcher, CLF_B, CLF_W};
use tmn::params::ParamStore;
use tmn::tagger::{
    Stage2Example, TagSet, Tagger, TaggerConfig, ATT_U1, ATT_U2, ATT_V, CRF_END, CRF_START, CRF_TRANS, EMIT_B, EMIT_W,
};

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
const ENTRIES_PER_GROUP: usize = 6;

const FILLERS: [&str; 8] = ["the", "a", "visited", "met", "in", "near", "said", "with"];
const NAMES: [&str; 6] = ["Qorvex", "Blatt", "Myrrin", "Zeluda", "Kappo", "Vintrel"];
pub const TYPES: [&str; 2] = ["PER", "LOC"];

pub struct Fixture {
    pub encoder: Encoder,
    pub corpus: Vec<TriggerAnnotatedSentence>,
}

/// Lowercase fillers have vectors; capitalized names do not, so the learned
/// unknown vector is on every path.
pub fn fixture(rng: &mut ChaCha8Rng) -> Fixture {
    let word_dim = rng.random_range(2..4);
    let mut pre = PretrainedVectors::new(word_dim);
    for w in FILLERS {
        pre.insert(w, (0..word_dim).map(|_| rng.random_range(-1.0..1.0)).collect());
    }
    let mut corpus = Vec::new();
    for _ in 0..rng.random_range(2..4) {
        let n = rng.random_range(4..8);
        let mut tokens: Vec<String> = (0..n).map(|_| FILLERS.choose(rng).unwrap().to_string()).collect();
        let start = rng.random_range(0..n - 1);
        let len = rng.random_range(1..=2.min(n - start));
        for t in tokens.iter_mut().skip(start).take(len) {
            *t = NAMES.choose(rng).unwrap().to_string();
        }
        let label = TYPES[rng.random_range(0..2)];
        let spans = [Span::new(start, start + len, label)];
        let outside: Vec<usize> = (0..n).filter(|i| *i < start || *i >= start + len).collect();
        let k = rng.random_range(1..=2.min(outside.len()));
        let words: Vec<usize> = outside.choose_multiple(rng, k).copied().collect();
        let sentence = Sentence::new(tokens).unwrap();
        let tags = TagSequence::from_spans(n, &spans, Scheme::Bioes).unwrap();
        corpus.push(TriggerAnnotatedSentence::new(sentence, tags, vec![Trigger::new("0", words, start)]).unwrap());
    }
    let config = EncoderConfig {
        embedding: EmbeddingConfig {
            word_dim,
            char_dim: 2,
            char_conv_window: rng.random_range(1..4),
            char_conv_filters: 2,
            unknown_token_policy: UnknownTokenPolicy::Learned,
            dropout_rate: 0.5,
            unk_replacement_rate: 0.5,
        },
        hidden_size: rng.random_range(1..3),
        attention_hidden: rng.random_range(1..3),
    };
    let chars = CharVocab::build(corpus.iter().map(|s| &s.sentence));
    let encoder = Encoder::new(config, chars, Arc::new(pre)).unwrap();
    Fixture { encoder, corpus }
}

/// Compares the tape gradient of `loss` with central differences on a few
/// entries of every group in `params`; returns the groups with a nonzero
/// analytic gradient.
pub fn check<F>(params: &mut ParamStore, rng: &mut ChaCha8Rng, label: &str, loss: F) -> BTreeSet<String>
where
    F: Fn(&ParamStore, &mut Tape) -> Var,
{
    let mut tape = Tape::new();
    let l = loss(params, &mut tape);
    let grads = tape.backward(l).unwrap();
    let mut live = BTreeSet::new();
    let group_names: Vec<String> = params.names().map(str::to_string).collect();
    for name in group_names {
        let zero = Array2::zeros(params.get(&name).unwrap().dim());
        let analytic = grads.get(&name).unwrap_or(&zero).clone();
        if analytic.iter().any(|g| *g != 0.0) {
            live.insert(name.clone());
        }
        let (rows, cols) = analytic.dim();
        for _ in 0..ENTRIES_PER_GROUP.min(rows * cols) {
            let (r, c) = (rng.random_range(0..rows), rng.random_range(0..cols));
            let original = params.get(&name).unwrap()[[r, c]];
            let mut eval_at = |x: f64| {
                params.get_mut(&name).unwrap()[[r, c]] = x;
                let mut t = Tape::new();
                let v = loss(params, &mut t);
                t.scalar(v)
            };
            let numeric = (eval_at(original + H) - eval_at(original - H)) / (2.0 * H);
            params.get_mut(&name).unwrap()[[r, c]] = original;
            let a = analytic[[r, c]];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            assert!(rel < TOL, "{label}: {name}[{r},{c}] analytic {a} numeric {numeric} rel {rel}");
        }
    }
    live
}

fn expect_groups(live: &BTreeMap<&str, BTreeSet<String>>, label: &str, want: &[&str]) {
    let got = &live[label];
    let missing: Vec<&&str> = want.iter().filter(|w| !got.contains(**w)).collect();
    assert!(missing.is_empty(), "{label}: no gradient reached {missing:?}");
}

/// L_TC, L_SM and the joint loss on `configs` random configurations;
/// every encoder, pooling and classifier group must see a gradient.
pub fn matcher_suite(configs: u64) {
    let mut live: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    for seed in 0..configs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fx = fixture(&mut rng);
        let loss = MatchLossConfig {
            margin: rng.random_range(0.5..3.0),
            lambda: rng.random_range(0.2..2.0),
            negative_ratio: 1.0,
            mask_entity_in_sentence_pool: seed % 2 == 1,
        };
        let types = TYPES.iter().map(|t| t.to_string()).collect();
        let mut matcher = Matcher::new(fx.encoder, types, loss, seed).unwrap();
        let instances = reformat(&fx.corpus);
        let pairs = make_match_pairs(&instances, 1.0, seed).unwrap();
        let snapshot = matcher.clone();
        let (m, pairs, instances) = (&snapshot, &pairs, &instances);
        let run = |which: usize| {
            move |p: &ParamStore, tape: &mut Tape| {
                let mut mm = m.clone();
                mm.params = p.clone();
                let b = mm.batch_loss(tape, pairs, instances, &mut Mode::Eval).unwrap();
                [b.trigger_class, b.matching, b.total][which]
            }
        };
        for (which, label) in ["trigger_class", "matching", "joint"].into_iter().enumerate() {
            let groups = check(&mut matcher.params, &mut rng, label, run(which));
            live.entry(label).or_default().extend(groups);
        }
    }
    let mut shared: Vec<&str> = names::ENCODER.to_vec();
    shared.extend([names::POOL_W1, names::POOL_W2]);
    expect_groups(&live, "matching", &shared);
    shared.extend([CLF_W, CLF_B]);
    expect_groups(&live, "trigger_class", &shared);
    expect_groups(&live, "joint", &shared);
    assert!(!live["matching"].contains(CLF_W));
}

/// CRF NLL of the attention tagger and the baseline on `configs` random
/// configurations.
pub fn crf_suite(configs: u64) {
    let mut live: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    for seed in 0..configs {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let fx = fixture(&mut rng);
        let d = fx.encoder.config.hidden_width();
        let tagset = TagSet::new(TYPES.iter().map(|t| t.to_string()).collect());
        for (attention, label) in [(true, "crf_attention"), (false, "crf_baseline")] {
            let config = TaggerConfig {
                use_trigger_attention: attention,
                attention_hidden: rng.random_range(1..4),
                mask_illegal_transitions: seed % 2 == 0,
                freeze_encoder: false,
                ..TaggerConfig::default()
            };
            let mut tagger = Tagger::new(fx.encoder.clone(), tagset.clone(), config, seed);
            // nonzero transitions so every CRF group is exercised
            for n in [CRF_TRANS, CRF_START, CRF_END, EMIT_B] {
                tagger.params.get_mut(n).unwrap().mapv_inplace(|_| rng.random_range(-0.5..0.5));
            }
            let s = &fx.corpus[0];
            let ex = Stage2Example {
                sentence: s.sentence.clone(),
                tags: s.tags.clone(),
                query: attention.then(|| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()),
            };
            let t = tagger.clone();
            let groups = check(&mut tagger.params, &mut rng, label, move |p, tape| {
                let mut tt = t.clone();
                tt.params = p.clone();
                tt.example_loss(tape, &ex, &mut Mode::Eval).unwrap()
            });
            live.entry(label).or_default().extend(groups);
        }
    }
    let mut head: Vec<&str> = names::ENCODER.to_vec();
    head.extend([EMIT_W, EMIT_B, CRF_TRANS, CRF_START, CRF_END]);
    expect_groups(&live, "crf_baseline", &head);
    head.extend([ATT_U1, ATT_U2, ATT_V]);
    expect_groups(&live, "crf_attention", &head);
}

