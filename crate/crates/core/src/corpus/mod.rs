//! Trigger-annotated corpora: validated types, reformatting into
//! one-entity-one-trigger instances, contrastive pair construction,
//! subsampling and summary statistics.

mod format;
pub mod scheme;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use format::{parse_corpus, parse_corpus_str, parse_plain_text, serialize_conll, serialize_corpus, write_corpus};
pub use scheme::{repair_bioes, spans_from_tags, Scheme, Span, Tag, TagSequence};

/// A pre-tokenised sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sentence {
    tokens: Vec<String>,
}

impl Sentence {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("sentence has no tokens".into()));
        }
        if let Some(i) = tokens.iter().position(|t| t.is_empty() || t.chars().any(char::is_whitespace)) {
            return Err(Error::InvalidArgument(format!("token {i} is empty or contains whitespace")));
        }
        Ok(Self { tokens })
    }

    pub fn from_words(words: &[&str]) -> Result<Self> {
        Self::new(words.iter().map(|w| w.to_string()).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A group of words explaining one entity. Indices are 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Trigger {
    /// Group label used in corpus files (`T-<group>`).
    pub group: String,
    pub word_indices: BTreeSet<usize>,
    /// First token of the associated entity.
    pub entity_index: usize,
}

impl Trigger {
    pub fn new(group: impl Into<String>, word_indices: impl IntoIterator<Item = usize>, entity_index: usize) -> Self {
        Self {
            group: group.into(),
            word_indices: word_indices.into_iter().collect(),
            entity_index,
        }
    }

    pub fn indices(&self) -> Vec<usize> {
        self.word_indices.iter().copied().collect()
    }
}

/// A sentence with its entity tags and entity triggers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriggerAnnotatedSentence {
    pub sentence: Sentence,
    pub tags: TagSequence,
    pub triggers: Vec<Trigger>,
}

impl TriggerAnnotatedSentence {
    pub fn new(sentence: Sentence, tags: TagSequence, triggers: Vec<Trigger>) -> Result<Self> {
        let s = Self {
            sentence,
            tags,
            triggers,
        };
        s.validate().map_err(|message| Error::Validation { sentence: 0, message })?;
        Ok(s)
    }

    pub fn untriggered(sentence: Sentence, tags: TagSequence) -> Result<Self> {
        Self::new(sentence, tags, Vec::new())
    }

    pub fn len(&self) -> usize {
        self.sentence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentence.is_empty()
    }

    /// Entity span whose first token is `entity_index`.
    pub fn entity_at(&self, entity_index: usize) -> Option<Span> {
        self.tags.spans().into_iter().find(|s| s.start == entity_index)
    }

    pub(crate) fn validate(&self) -> std::result::Result<(), String> {
        let n = self.sentence.len();
        if self.tags.len() != n {
            return Err(format!("{} tokens but {} tags", n, self.tags.len()));
        }
        scheme::check_well_formed(&self.tags.tags, self.tags.scheme)?;
        let spans = self.tags.spans();
        for t in &self.triggers {
            if t.word_indices.is_empty() {
                return Err(format!("trigger T-{} has no words", t.group));
            }
            if let Some(&bad) = t.word_indices.iter().find(|&&i| i >= n) {
                return Err(format!("trigger T-{} index {bad} out of range", t.group));
            }
            if t.entity_index >= n {
                return Err(format!("trigger T-{} entity index {} out of range", t.group, t.entity_index));
            }
            let span = spans
                .iter()
                .find(|s| s.start == t.entity_index)
                .ok_or_else(|| format!("trigger T-{} points at token {} which does not start an entity", t.group, t.entity_index))?;
            if t.word_indices.iter().any(|&i| span.contains(i)) {
                return Err(format!("trigger T-{} overlaps its entity", t.group));
            }
        }
        Ok(())
    }
}

/// One sentence paired with exactly one (entity, trigger).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingInstance {
    pub sentence_id: usize,
    pub sentence: Sentence,
    /// Tags with every entity other than the paired one replaced by O.
    pub tags: TagSequence,
    pub entity_index: usize,
    pub entity_type: String,
    pub trigger: Trigger,
}

impl TrainingInstance {
    pub fn trigger_tokens(&self) -> Vec<String> {
        self.trigger
            .word_indices
            .iter()
            .map(|&i| self.sentence.tokens()[i].clone())
            .collect()
    }
}

/// A (sentence, trigger) pair for the matching loss.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchPair {
    /// Sentence the pair is evaluated against.
    pub sentence_id: usize,
    pub instance_sentence: Sentence,
    /// Index into the instance list the trigger was taken from.
    pub trigger_instance: usize,
    pub trigger_tokens: Vec<String>,
    pub matched: bool,
}

/// Per-type trigger statistics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TypeStats {
    pub entity_count: usize,
    pub trigger_count: usize,
    pub avg_triggers_per_entity: f64,
    pub avg_trigger_length: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub per_type: BTreeMap<String, TypeStats>,
    pub total: TypeStats,
}

/// Entities are counted when they carry at least one trigger, matching how
/// trigger datasets report "annotated entities".
pub fn compute_stats(corpus: &[TriggerAnnotatedSentence]) -> CorpusStats {
    #[derive(Default)]
    struct Acc {
        entities: usize,
        triggers: usize,
        words: usize,
    }
    let mut acc: BTreeMap<String, Acc> = BTreeMap::new();
    for s in corpus {
        let spans = s.tags.spans();
        let mut seen = BTreeSet::new();
        for t in &s.triggers {
            let Some(span) = spans.iter().find(|sp| sp.start == t.entity_index) else {
                continue;
            };
            let a = acc.entry(span.label.clone()).or_default();
            if seen.insert(t.entity_index) {
                a.entities += 1;
            }
            a.triggers += 1;
            a.words += t.word_indices.len();
        }
    }
    let finish = |e: usize, t: usize, w: usize| TypeStats {
        entity_count: e,
        trigger_count: t,
        avg_triggers_per_entity: if e == 0 { 0.0 } else { t as f64 / e as f64 },
        avg_trigger_length: if t == 0 { 0.0 } else { w as f64 / t as f64 },
    };
    let (mut te, mut tt, mut tw) = (0, 0, 0);
    let per_type = acc
        .into_iter()
        .map(|(k, a)| {
            te += a.entities;
            tt += a.triggers;
            tw += a.words;
            (k, finish(a.entities, a.triggers, a.words))
        })
        .collect();
    CorpusStats {
        per_type,
        total: finish(te, tt, tw),
    }
}

/// Expands every (entity, trigger) pair into its own instance.
pub fn reformat(corpus: &[TriggerAnnotatedSentence]) -> Vec<TrainingInstance> {
    let mut out = Vec::new();
    for (sid, s) in corpus.iter().enumerate() {
        for t in &s.triggers {
            let span = s
                .entity_at(t.entity_index)
                .expect("validated trigger points at an entity");
            out.push(TrainingInstance {
                sentence_id: sid,
                sentence: s.sentence.clone(),
                tags: s.tags.keep_only(t.entity_index),
                entity_index: t.entity_index,
                entity_type: span.label,
                trigger: t.clone(),
            });
        }
    }
    out
}

/// All positive pairs plus `⌈ratio · |positives|⌉` mismatches, each pairing
/// a uniformly sampled trigger with a uniformly drawn sentence other than
/// its source.
pub fn make_match_pairs(instances: &[TrainingInstance], negative_ratio: f64, seed: u64) -> Result<Vec<MatchPair>> {
    if !(negative_ratio >= 0.0 && negative_ratio.is_finite()) {
        return Err(Error::InvalidArgument(format!("negative ratio {negative_ratio} must be ≥ 0")));
    }
    let mut pairs: Vec<MatchPair> = instances
        .iter()
        .enumerate()
        .map(|(i, inst)| MatchPair {
            sentence_id: inst.sentence_id,
            instance_sentence: inst.sentence.clone(),
            trigger_instance: i,
            trigger_tokens: inst.trigger_tokens(),
            matched: true,
        })
        .collect();
    if negative_ratio == 0.0 || instances.is_empty() {
        return Ok(pairs);
    }

    let mut sentences: BTreeMap<usize, &Sentence> = BTreeMap::new();
    for inst in instances {
        sentences.entry(inst.sentence_id).or_insert(&inst.sentence);
    }
    if sentences.len() < 2 {
        return Err(Error::InvalidArgument(
            "mismatched pairs need at least two distinct sentences".into(),
        ));
    }
    let ids: Vec<usize> = sentences.keys().copied().collect();
    let position: HashMap<usize, usize> = ids.iter().enumerate().map(|(p, &id)| (id, p)).collect();

    let wanted = (negative_ratio * instances.len() as f64).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..wanted {
        let ti = rng.random_range(0..instances.len());
        let src = position[&instances[ti].sentence_id];
        // uniform over all sentences except the source
        let mut p = rng.random_range(0..ids.len() - 1);
        if p >= src {
            p += 1;
        }
        let sid = ids[p];
        pairs.push(MatchPair {
            sentence_id: sid,
            instance_sentence: sentences[&sid].clone(),
            trigger_instance: ti,
            trigger_tokens: instances[ti].trigger_tokens(),
            matched: false,
        });
    }
    Ok(pairs)
}

/// Indices of `⌊fraction · n⌋` items drawn without replacement, in their
/// original order. The draw is a prefix of one seeded permutation, so for a
/// fixed seed smaller fractions select subsets of larger ones.
pub fn subsample_indices(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} outside [0, 1]")));
    }
    let take = (fraction * n as f64).floor() as usize;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut chosen = perm[..take].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

pub fn subsample<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Result<Vec<T>> {
    Ok(subsample_indices(items.len(), fraction, seed)?
        .into_iter()
        .map(|i| items[i].clone())
        .collect())
}
