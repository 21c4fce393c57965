//! Retrieval of nearest stored triggers, tagging of unlabeled sentences and
//! confidence-ranked self-training.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Sentence, TagSequence};
use crate::error::{Error, Result};
use crate::matcher::{Matcher, TriggerEntry, TriggerTable};
use crate::optim::Schedule;
use crate::tagger::{train_stage2, CrfParams, Stage2Example, TagPrediction, Tagger};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    /// Neighbours averaged into the query. Distance is always L2.
    pub k: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { k: 2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriggerMatch<'a> {
    pub entry: &'a TriggerEntry,
    pub distance: f64,
}

fn l2(a: &[f64], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, &y)| (x - y as f64).powi(2)).sum::<f64>().sqrt()
}

/// The `k` entries closest to `query`, ascending by distance then id.
pub fn nearest<'a>(table: &'a TriggerTable, query: &[f64], k: usize) -> Result<Vec<TriggerMatch<'a>>> {
    if table.is_empty() {
        return Err(Error::InvalidArgument("trigger table is empty".into()));
    }
    if k == 0 || k > table.len() {
        return Err(Error::InvalidArgument(format!("k = {k} for a table of {}", table.len())));
    }
    if query.len() != table.width {
        return Err(Error::Shape(format!("query width {} for table width {}", query.len(), table.width)));
    }
    let mut all: Vec<TriggerMatch<'a>> = table
        .entries
        .iter()
        .map(|e| TriggerMatch {
            entry: e,
            distance: l2(query, &e.vector),
        })
        .collect();
    let cmp = |a: &TriggerMatch, b: &TriggerMatch| {
        a.distance.total_cmp(&b.distance).then(a.entry.id.cmp(&b.entry.id))
    };
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, cmp);
        all.truncate(k);
    }
    all.sort_by(cmp);
    Ok(all)
}

/// Pools the sentence with the stage-one matcher and retrieves its `k`
/// nearest triggers.
pub fn match_triggers<'a>(
    sentence: &Sentence,
    table: &'a TriggerTable,
    matcher: &Matcher,
    k: usize,
) -> Result<Vec<TriggerMatch<'a>>> {
    if table.is_empty() {
        return Err(Error::InvalidArgument("trigger table is empty".into()));
    }
    let g_s = matcher.sentence_vector(sentence);
    nearest(table, &g_s.vector, k)
}

/// Arithmetic mean of equally wide vectors.
pub fn mean_query(vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::InvalidArgument("mean of no vectors".into()))?;
    let mut acc = vec![0.0; first.len()];
    for v in vectors {
        if v.len() != acc.len() {
            return Err(Error::Shape("vectors of different widths".into()));
        }
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    let n = vectors.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

pub fn mean_of_matches(matches: &[TriggerMatch<'_>]) -> Result<Vec<f64>> {
    mean_query(&matches.iter().map(|m| m.entry.vector_f64()).collect::<Vec<_>>())
}

/// Stage-one matcher, its trigger table and the trigger-enhanced tagger.
#[derive(Debug, Clone)]
pub struct TmnModel {
    pub matcher: Matcher,
    pub table: TriggerTable,
    pub tagger: Tagger,
    pub retrieval: RetrievalConfig,
}

impl TmnModel {
    /// Retrieved query `ĝ_t` and the matches it came from.
    pub fn query<'a>(&'a self, sentence: &Sentence) -> Result<(Vec<f64>, Vec<TriggerMatch<'a>>)> {
        let m = match_triggers(sentence, &self.table, &self.matcher, self.retrieval.k)?;
        Ok((mean_of_matches(&m)?, m))
    }

    pub fn tag(&self, sentence: &Sentence) -> Result<TagPrediction> {
        tag_unlabeled(sentence, self)
    }
}

/// match → mean → tag.
pub fn tag_unlabeled(sentence: &Sentence, model: &TmnModel) -> Result<TagPrediction> {
    let (q, _) = model.query(sentence)?;
    model.tagger.tag_with_query(sentence, Some(&q))
}

/// `(score(ŷ) − log Z) / n` for the Viterbi path `ŷ`.
pub fn mnlp_confidence(prediction: &TagPrediction, features: &ndarray::Array2<f64>, crf: &CrfParams) -> Result<f64> {
    let e = crf.emissions(features)?;
    if prediction.path.len() != e.nrows() {
        return Err(Error::Shape(format!(
            "path of length {} for {} feature rows",
            prediction.path.len(),
            e.nrows()
        )));
    }
    let s = crf.scores(&e);
    Ok(((s.path_score(&prediction.path) - s.log_partition()) / e.nrows() as f64).min(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfTrainConfig {
    /// Share of the remaining pool promoted per round.
    pub selection_fraction: f64,
    pub rounds: usize,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        Self {
            selection_fraction: 0.2,
            rounds: 3,
        }
    }
}

impl SelfTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.selection_fraction > 0.0 && self.selection_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "selection fraction {} outside (0, 1]",
                self.selection_fraction
            )));
        }
        if self.rounds == 0 {
            return Err(Error::InvalidArgument("at least one self-training round".into()));
        }
        Ok(())
    }

    /// Sentences promoted from a pool of `remaining`.
    pub fn selection_size(&self, remaining: usize) -> usize {
        ((self.selection_fraction * remaining as f64).ceil() as usize).min(remaining)
    }
}

/// A confidently tagged unlabeled sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakExample {
    /// Index into the original pool.
    pub pool_index: usize,
    pub sentence: Sentence,
    pub tags: TagSequence,
    pub confidence: f64,
    pub query: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub pool_size: usize,
    pub selected: Vec<usize>,
    pub mean_pool_confidence: f64,
    pub mean_selected_confidence: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelfTrainLog {
    pub rounds: Vec<RoundLog>,
    /// Set when the pool ran out before all rounds completed.
    pub stopped_early: bool,
}

/// Tags every pool sentence with retrieval and returns the predictions with
/// their confidences, in pool order.
pub fn score_pool(model: &TmnModel, pool: &[Sentence]) -> Result<Vec<(TagPrediction, Vec<f64>, f64)>> {
    let crf = model.tagger.crf();
    pool.par_iter()
        .map(|s| {
            let (q, _) = model.query(s)?;
            let (f, alpha) = model.tagger.features(s, Some(&q))?;
            let mut p = crate::tagger::viterbi(&f, &crf, &model.tagger.tagset)?;
            p.token_attention = alpha;
            let c = mnlp_confidence(&p, &f, &crf)?;
            Ok((p, q, c))
        })
        .collect()
}

/// Positions of the `take` highest confidences, best first; ties go to the
/// lower position.
pub fn select_confident(confidences: &[f64], take: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..confidences.len()).collect();
    order.sort_by(|&a, &b| confidences[b].total_cmp(&confidences[a]).then(a.cmp(&b)));
    order.truncate(take);
    order
}

/// Rounds of: tag the remaining pool, promote the most confident
/// predictions, continue stage-two training on labeled plus weak examples.
/// Only the tagger changes; the matcher and table stay fixed.
pub fn self_train(
    mut model: TmnModel,
    labeled: &[Stage2Example],
    pool: &[Sentence],
    config: &SelfTrainConfig,
    schedule: &Schedule,
    seed: u64,
) -> Result<(TmnModel, SelfTrainLog, Vec<WeakExample>)> {
    config.validate()?;
    if pool.is_empty() {
        return Err(Error::InvalidArgument("self-training needs a non-empty pool".into()));
    }
    let mut remaining: Vec<usize> = (0..pool.len()).collect();
    let mut weak: Vec<WeakExample> = Vec::new();
    let mut log = SelfTrainLog::default();
    for round in 1..=config.rounds {
        if remaining.is_empty() {
            log::info!("self-training pool exhausted after {} round(s)", round - 1);
            log.stopped_early = true;
            break;
        }
        let sentences: Vec<Sentence> = remaining.iter().map(|&i| pool[i].clone()).collect();
        let scored = score_pool(&model, &sentences)?;
        let confidences: Vec<f64> = scored.iter().map(|s| s.2).collect();
        let chosen = select_confident(&confidences, config.selection_size(remaining.len()));
        let take = chosen.len();

        let mean = |xs: &mut dyn Iterator<Item = f64>| {
            let v: Vec<f64> = xs.collect();
            v.iter().sum::<f64>() / v.len().max(1) as f64
        };
        let mut selected = Vec::with_capacity(take);
        for &c in &chosen {
            let (p, q, conf) = &scored[c];
            selected.push(remaining[c]);
            weak.push(WeakExample {
                pool_index: remaining[c],
                sentence: sentences[c].clone(),
                tags: p.tags.clone(),
                confidence: *conf,
                query: q.clone(),
            });
        }
        log.rounds.push(RoundLog {
            round,
            pool_size: remaining.len(),
            selected: selected.clone(),
            mean_pool_confidence: mean(&mut scored.iter().map(|s| s.2)),
            mean_selected_confidence: mean(&mut chosen.iter().map(|&c| scored[c].2)),
        });
        remaining.retain(|i| !selected.contains(i));

        let mut train: Vec<Stage2Example> = labeled.to_vec();
        train.extend(weak.iter().map(|w| Stage2Example {
            sentence: w.sentence.clone(),
            tags: w.tags.clone(),
            query: Some(w.query.clone()),
        }));
        let (tagger, _) = train_stage2(model.tagger, &train, schedule, seed.wrapping_add(round as u64))?;
        model.tagger = tagger;
    }
    Ok((model, log, weak))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(vectors: &[Vec<f32>]) -> TriggerTable {
        let entries = vectors
            .iter()
            .enumerate()
            .map(|(i, v)| TriggerEntry {
                id: i,
                source_sentence: i,
                entity_type: "X".into(),
                tokens: vec![format!("w{i}")],
                vector: v.clone(),
            })
            .collect();
        TriggerTable::new(vectors[0].len(), vec!["X".into()], entries).unwrap()
    }

    #[test]
    fn single_entry_table() {
        let t = table(&[vec![1.0, 2.0]]);
        let m = nearest(&t, &[0.0, 0.0], 1).unwrap();
        assert_eq!(m[0].entry.id, 0);
        assert!(nearest(&t, &[0.0, 0.0], 2).is_err());
    }

    #[test]
    fn exact_hit_is_first_and_ties_go_to_lower_id() {
        let t = table(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0], vec![5.0, 5.0]]);
        let m = nearest(&t, &[0.0, 1.0], 3).unwrap();
        assert_eq!(m.iter().map(|m| m.entry.id).collect::<Vec<_>>(), vec![1, 2, 0]);
        assert_eq!(m[0].distance, 0.0);
    }

    #[test]
    fn mean_query_examples() {
        assert_eq!(mean_query(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(mean_query(&vec![vec![0.3, 0.7]; 4]).unwrap(), vec![0.3, 0.7]);
        assert!(mean_query(&[]).is_err());
    }

    #[test]
    fn ceil_selection_arithmetic() {
        let c = SelfTrainConfig {
            selection_fraction: 0.2,
            rounds: 3,
        };
        let mut n = 10;
        let mut sizes = vec![n];
        for _ in 0..2 {
            n -= c.selection_size(n);
            sizes.push(n);
        }
        assert_eq!(sizes, vec![10, 8, 6]);
        let all = SelfTrainConfig {
            selection_fraction: 1.0,
            rounds: 1,
        };
        assert_eq!(all.selection_size(7), 7);
    }
}
