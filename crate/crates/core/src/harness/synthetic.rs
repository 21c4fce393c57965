//! Procedural trigger-annotated language for desk-scale experiments.
//!
//! Each entity type owns a handful of cue templates (two cue words placed
//! before, after, around or with a gap before the entity). Entity names come
//! from one pool shared by all types, so the type is carried by the cue.
//! Every cue has paraphrases: fresh surface words whose pretrained vectors
//! are the original ones plus a little noise. Training sentences use the
//! original cues, held-out sentences only paraphrases, and half of the
//! held-out names never occur in training (they do have pretrained vectors).

use std::collections::{BTreeSet, HashSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Scheme, Sentence, Span, TagSequence, Trigger, TriggerAnnotatedSentence};
use crate::encoder::PretrainedVectors;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub num_types: usize,
    pub cues_per_type: usize,
    pub paraphrases_per_cue: usize,
    /// Filler words.
    pub vocab_size: usize,
    /// Names usable in training.
    pub names: usize,
    /// Names reserved for the held-out split.
    pub novel_names: usize,
    /// Chance that a held-out entity uses a reserved name.
    pub novel_name_fraction: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub max_entities: usize,
    pub train_sentences: usize,
    pub test_sentences: usize,
    pub word_dim: usize,
    /// Norm of the offset between a cue word and its paraphrase.
    pub paraphrase_noise: f64,
    /// Norm of the direction shared by all name vectors.
    pub name_cluster: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            num_types: 3,
            cues_per_type: 4,
            paraphrases_per_cue: 2,
            vocab_size: 200,
            names: 60,
            novel_names: 40,
            novel_name_fraction: 0.5,
            min_len: 6,
            max_len: 14,
            max_entities: 2,
            train_sentences: 500,
            test_sentences: 200,
            word_dim: 32,
            paraphrase_noise: 0.2,
            name_cluster: 1.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("synthetic spec: {m}")));
        if self.num_types == 0 || self.cues_per_type == 0 || self.paraphrases_per_cue == 0 {
            return bad("types, cues and paraphrases must be positive");
        }
        if self.names == 0 || self.max_entities == 0 || self.word_dim == 0 {
            return bad("names, entities per sentence and word width must be positive");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad("sentence lengths");
        }
        if !(0.0..=1.0).contains(&self.novel_name_fraction) || (self.novel_name_fraction > 0.0 && self.novel_names == 0) {
            return bad("novel names");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CueKind {
    /// `c₁ c₂ ENT`
    Before,
    /// `ENT c₁ c₂`
    After,
    /// `c₁ ENT c₂`
    Around,
    /// `c₁ x c₂ ENT` with a filler `x`
    Gap,
}

const KINDS: [CueKind; 4] = [CueKind::Before, CueKind::After, CueKind::Around, CueKind::Gap];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CueTemplate {
    pub entity_type: String,
    pub kind: CueKind,
    pub words: [String; 2],
    pub paraphrases: Vec<[String; 2]>,
}

/// Which cue produced an entity; `paraphrase` is `None` for the original.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CueUse {
    pub entity_index: usize,
    pub cue: usize,
    pub paraphrase: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub types: Vec<String>,
    pub cues: Vec<CueTemplate>,
    pub train: Vec<TriggerAnnotatedSentence>,
    pub test: Vec<TriggerAnnotatedSentence>,
    pub train_cues: Vec<Vec<CueUse>>,
    pub test_cues: Vec<Vec<CueUse>>,
    pub pretrained: PretrainedVectors,
}

struct Lexicon {
    rng: ChaCha8Rng,
    seen: HashSet<String>,
}

impl Lexicon {
    fn word(&mut self, capital: bool) -> String {
        const C: &[u8] = b"bdfgklmnprstvz";
        const V: &[u8] = b"aeiou";
        loop {
            let syl = self.rng.random_range(2..=3);
            let mut w = String::new();
            for _ in 0..syl {
                w.push(C[self.rng.random_range(0..C.len())] as char);
                w.push(V[self.rng.random_range(0..V.len())] as char);
            }
            if self.rng.random_bool(0.3) {
                w.push(C[self.rng.random_range(0..C.len())] as char);
            }
            if capital {
                w = w[..1].to_uppercase() + &w[1..];
            }
            if self.seen.insert(w.to_lowercase()) {
                return w;
            }
        }
    }
}

fn type_names(n: usize) -> Vec<String> {
    const BASE: [&str; 4] = ["PER", "LOC", "ORG", "MISC"];
    (0..n)
        .map(|i| BASE.get(i).map_or_else(|| format!("TYPE{i}"), |s| s.to_string()))
        .collect()
}

fn random_vector(rng: &mut ChaCha8Rng, dim: usize, norm: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.iter().map(|x: &f64| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x * norm / n).collect()
}

#[derive(Clone, Copy, PartialEq)]
enum Role {
    Filler,
    Cue(usize),
    Entity(usize),
}

struct Plan {
    tokens: Vec<String>,
    roles: Vec<Role>,
    entities: Vec<(String, CueUse)>,
}

/// Deterministic in `spec.seed`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut lex = Lexicon {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        seen: HashSet::new(),
    };
    let types = type_names(spec.num_types);
    let fillers: Vec<String> = (0..spec.vocab_size).map(|_| lex.word(false)).collect();
    let mut cues = Vec::new();
    for ty in &types {
        for c in 0..spec.cues_per_type {
            let words = [lex.word(false), lex.word(false)];
            let paraphrases = (0..spec.paraphrases_per_cue).map(|_| [lex.word(false), lex.word(false)]).collect();
            cues.push(CueTemplate {
                entity_type: ty.clone(),
                kind: KINDS[c % KINDS.len()],
                words,
                paraphrases,
            });
        }
    }
    let names: Vec<String> = (0..spec.names).map(|_| lex.word(true)).collect();
    let novel: Vec<String> = (0..spec.novel_names).map(|_| lex.word(true)).collect();

    let mut vrng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_0001);
    let mut pretrained = PretrainedVectors::new(spec.word_dim);
    for w in &fillers {
        pretrained.insert(w.clone(), random_vector(&mut vrng, spec.word_dim, 1.0));
    }
    // names share a direction, as person and place names do in real vectors
    let centre = random_vector(&mut vrng, spec.word_dim, spec.name_cluster);
    for w in names.iter().chain(&novel) {
        let r = random_vector(&mut vrng, spec.word_dim, 1.0);
        pretrained.insert(w.clone(), centre.iter().zip(&r).map(|(a, b)| a + b).collect());
    }
    for c in &cues {
        for (i, w) in c.words.iter().enumerate() {
            let base = random_vector(&mut vrng, spec.word_dim, 1.0);
            for p in &c.paraphrases {
                let noise = random_vector(&mut vrng, spec.word_dim, spec.paraphrase_noise);
                pretrained.insert(p[i].clone(), base.iter().zip(&noise).map(|(a, b)| a + b).collect());
            }
            pretrained.insert(w.clone(), base);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_0002);
    let mut seen: HashSet<Vec<String>> = HashSet::new();
    let mut build = |n: usize, held_out: bool, rng: &mut ChaCha8Rng| -> Result<(Vec<TriggerAnnotatedSentence>, Vec<Vec<CueUse>>)> {
        let mut out = Vec::with_capacity(n);
        let mut uses = Vec::with_capacity(n);
        let mut attempts = 0usize;
        while out.len() < n {
            attempts += 1;
            if attempts > 200 * n + 1000 {
                return Err(Error::InvalidArgument(format!(
                    "lexicon too small for {n} distinct sentences (made {})",
                    out.len()
                )));
            }
            let Some(plan) = plan_sentence(spec, &cues, &fillers, &names, &novel, held_out, rng) else {
                continue;
            };
            if !seen.insert(plan.tokens.clone()) {
                continue;
            }
            let (s, u) = realise(plan)?;
            out.push(s);
            uses.push(u);
        }
        Ok((out, uses))
    };
    let (train, train_cues) = build(spec.train_sentences, false, &mut rng)?;
    let (test, test_cues) = build(spec.test_sentences, true, &mut rng)?;

    let cue_sets = |c: &[TriggerAnnotatedSentence]| -> BTreeSet<Vec<String>> {
        c.iter()
            .flat_map(|s| {
                s.triggers
                    .iter()
                    .map(|t| t.indices().iter().map(|&i| s.sentence.tokens()[i].clone()).collect())
                    .collect::<Vec<_>>()
            })
            .collect()
    };
    if !cue_sets(&train).is_disjoint(&cue_sets(&test)) {
        return Err(Error::InvalidArgument("held-out cues overlap training cues".into()));
    }
    Ok(SyntheticCorpus {
        types,
        cues,
        train,
        test,
        train_cues,
        test_cues,
        pretrained,
    })
}

fn plan_sentence(
    spec: &SyntheticSpec,
    cues: &[CueTemplate],
    fillers: &[String],
    names: &[String],
    novel: &[String],
    held_out: bool,
    rng: &mut ChaCha8Rng,
) -> Option<Plan> {
    let ne = rng.random_range(1..=spec.max_entities);
    let mut blocks: Vec<(Vec<String>, Vec<Role>)> = Vec::new();
    let mut entities = Vec::new();
    for k in 0..ne {
        let ci = rng.random_range(0..cues.len());
        let cue = &cues[ci];
        let (words, paraphrase) = if held_out {
            let p = rng.random_range(0..cue.paraphrases.len());
            (cue.paraphrases[p].clone(), Some(p))
        } else {
            (cue.words.clone(), None)
        };
        let pool = if held_out && rng.random_bool(spec.novel_name_fraction) { novel } else { names };
        let len = if rng.random_bool(0.3) { 2 } else { 1 };
        let ent: Vec<String> = (0..len).map(|_| pool.choose(rng).expect("names").clone()).collect();
        let e = Role::Entity(k);
        let c = Role::Cue(k);
        let mut toks = Vec::new();
        let mut roles = Vec::new();
        let mut push = |w: &String, r: Role| {
            toks.push(w.clone());
            roles.push(r);
        };
        match cue.kind {
            CueKind::Before => {
                push(&words[0], c);
                push(&words[1], c);
                ent.iter().for_each(|w| push(w, e));
            }
            CueKind::After => {
                ent.iter().for_each(|w| push(w, e));
                push(&words[0], c);
                push(&words[1], c);
            }
            CueKind::Around => {
                push(&words[0], c);
                ent.iter().for_each(|w| push(w, e));
                push(&words[1], c);
            }
            CueKind::Gap => {
                push(&words[0], c);
                push(fillers.choose(rng)?, Role::Filler);
                push(&words[1], c);
                ent.iter().for_each(|w| push(w, e));
            }
        }
        blocks.push((toks, roles));
        entities.push((
            cue.entity_type.clone(),
            CueUse {
                entity_index: 0,
                cue: ci,
                paraphrase,
            },
        ));
    }
    let used: usize = blocks.iter().map(|b| b.0.len()).sum();
    let separators = ne - 1;
    let target = rng.random_range(spec.min_len..=spec.max_len).max(used + separators);
    if target > spec.max_len {
        return None;
    }
    let free = target - used - separators;
    if free > 0 && fillers.is_empty() || separators > 0 && fillers.is_empty() {
        return None;
    }
    // fillers distributed over the ne + 1 gaps, one forced between blocks
    let mut gaps = vec![0usize; ne + 1];
    for g in gaps.iter_mut().take(ne).skip(1) {
        *g = 1;
    }
    for _ in 0..free {
        gaps[rng.random_range(0..=ne)] += 1;
    }
    let mut tokens = Vec::with_capacity(target);
    let mut roles = Vec::with_capacity(target);
    for (i, gap) in gaps.iter().enumerate() {
        for _ in 0..*gap {
            tokens.push(fillers.choose(rng)?.clone());
            roles.push(Role::Filler);
        }
        if let Some((t, r)) = blocks.get(i) {
            tokens.extend(t.iter().cloned());
            roles.extend(r.iter().copied());
        }
    }
    Some(Plan {
        tokens,
        roles,
        entities,
    })
}

fn realise(plan: Plan) -> Result<(TriggerAnnotatedSentence, Vec<CueUse>)> {
    let n = plan.tokens.len();
    let mut spans = Vec::new();
    let mut triggers = Vec::new();
    let mut uses = Vec::new();
    for (k, (ty, mut u)) in plan.entities.into_iter().enumerate() {
        let pos: Vec<usize> = (0..n).filter(|&i| plan.roles[i] == Role::Entity(k)).collect();
        let cue: Vec<usize> = (0..n).filter(|&i| plan.roles[i] == Role::Cue(k)).collect();
        spans.push(Span::new(pos[0], pos[pos.len() - 1] + 1, ty));
        triggers.push(Trigger::new(k.to_string(), cue, pos[0]));
        u.entity_index = pos[0];
        uses.push(u);
    }
    let sentence = Sentence::new(plan.tokens)?;
    let tags = TagSequence::from_spans(n, &spans, Scheme::Bioes)?;
    Ok((TriggerAnnotatedSentence::new(sentence, tags, triggers)?, uses))
}
