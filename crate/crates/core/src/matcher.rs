//! Stage one: trigger-type classification and sentence/trigger soft matching
//! trained jointly over a shared encoder, and the trigger table built from
//! the result.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{self, log_sum_exp, Tape, Var};
use crate::corpus::{make_match_pairs, MatchPair, Sentence, TrainingInstance};
use crate::encoder::{attentive_pool, names, Encoder, Mode, PooledVector};
use crate::error::{Error, Result};
use crate::optim::{holdout_split, Adam, Schedule};
use crate::params::ParamStore;

pub const CLF_W: &str = "clf.w";
pub const CLF_B: &str = "clf.b";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchLossConfig {
    /// Margin `m` for mismatched pairs.
    pub margin: f64,
    /// Weight `λ` of the matching loss in the joint objective.
    pub lambda: f64,
    /// Mismatched pairs drawn per positive pair, resampled every epoch.
    pub negative_ratio: f64,
    /// Pool sentence vectors over non-entity tokens only.
    pub mask_entity_in_sentence_pool: bool,
}

impl Default for MatchLossConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            lambda: 1.0,
            negative_ratio: 1.0,
            mask_entity_in_sentence_pool: false,
        }
    }
}

impl MatchLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) || !(self.lambda >= 0.0) || !(self.negative_ratio >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "need margin > 0, lambda ≥ 0, negative_ratio ≥ 0 (got {}, {}, {})",
                self.margin, self.lambda, self.negative_ratio
            )));
        }
        Ok(())
    }
}

/// Linear softmax classifier from a trigger vector to entity types.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerClassifier {
    pub types: Vec<String>,
    /// `d × K`
    pub weight: Array2<f64>,
    /// `1 × K`
    pub bias: Array2<f64>,
}

impl TriggerClassifier {
    pub fn from_params(types: &[String], params: &ParamStore) -> Self {
        Self {
            types: types.to_vec(),
            weight: params.get(CLF_W).expect("classifier weight").clone(),
            bias: params.get(CLF_B).expect("classifier bias").clone(),
        }
    }

    pub fn type_index(&self, ty: &str) -> Result<usize> {
        self.types
            .iter()
            .position(|t| t == ty)
            .ok_or_else(|| Error::UnknownLabel(ty.to_string()))
    }

    pub fn logits(&self, g_t: &[f64]) -> Vec<f64> {
        (0..self.types.len())
            .map(|k| self.bias[[0, k]] + g_t.iter().enumerate().map(|(i, x)| x * self.weight[[i, k]]).sum::<f64>())
            .collect()
    }

    pub fn probabilities(&self, g_t: &[f64]) -> Vec<f64> {
        let z = self.logits(g_t);
        let lse = log_sum_exp(z.iter().copied());
        z.iter().map(|v| (v - lse).exp()).collect()
    }

    pub fn predict(&self, g_t: &[f64]) -> &str {
        let z = self.logits(g_t);
        let best = (0..z.len()).fold(0, |b, k| if z[k] > z[b] { k } else { b });
        &self.types[best]
    }
}

/// `-log P(type | g_t)`.
pub fn trigger_class_loss(g_t: &[f64], entity_type: &str, clf: &TriggerClassifier) -> Result<f64> {
    let k = clf.type_index(entity_type)?;
    if g_t.len() != clf.weight.nrows() {
        return Err(Error::Shape(format!(
            "trigger vector of width {} for classifier of width {}",
            g_t.len(),
            clf.weight.nrows()
        )));
    }
    let z = clf.logits(g_t);
    Ok(log_sum_exp(z.iter().copied()) - z[k])
}

/// `½d²` for matched pairs, `½max(0, m − d)²` otherwise, `d = ‖g_s − g_t‖₂`.
pub fn contrastive_loss(g_s: &[f64], g_t: &[f64], matched: bool, margin: f64) -> Result<f64> {
    if g_s.len() != g_t.len() {
        return Err(Error::Shape(format!("widths {} and {}", g_s.len(), g_t.len())));
    }
    let d = g_s.iter().zip(g_t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(autodiff::contrastive_value(d, matched, margin))
}

/// Pooled vectors of one pair, ready for the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct PairVectors {
    pub g_s: Vec<f64>,
    pub g_t: Vec<f64>,
    pub matched: bool,
    /// Type of the trigger's entity; `None` for mismatches.
    pub entity_type: Option<String>,
}

/// Mean trigger-classification loss over matched pairs plus `λ` times the
/// mean matching loss over all pairs.
pub fn joint_loss(batch: &[PairVectors], clf: &TriggerClassifier, config: &MatchLossConfig) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut tc = Vec::new();
    let mut sm = Vec::with_capacity(batch.len());
    for p in batch {
        sm.push(contrastive_loss(&p.g_s, &p.g_t, p.matched, config.margin)?);
        if p.matched {
            let ty = p
                .entity_type
                .as_deref()
                .ok_or_else(|| Error::InvalidArgument("matched pair without entity type".into()))?;
            tc.push(trigger_class_loss(&p.g_t, ty, clf)?);
        }
    }
    if tc.is_empty() {
        return Err(Error::InvalidArgument("batch has no matched pair".into()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(mean(&tc) + config.lambda * mean(&sm))
}

/// Trigger encoder, matcher and classifier with their parameters.
#[derive(Debug, Clone)]
pub struct Matcher {
    pub encoder: Encoder,
    pub types: Vec<String>,
    pub loss: MatchLossConfig,
    pub params: ParamStore,
}

/// Scalar terms of one batch on a tape.
pub struct BatchLoss {
    pub total: Var,
    pub trigger_class: Var,
    pub matching: Var,
}

impl Matcher {
    pub fn new(encoder: Encoder, types: Vec<String>, loss: MatchLossConfig, seed: u64) -> Result<Self> {
        loss.validate()?;
        if types.is_empty() {
            return Err(Error::InvalidArgument("no entity types".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::default();
        encoder.init_params(&mut params, &mut rng);
        encoder.init_pool_params(&mut params, &mut rng);
        params.init_uniform(CLF_W, encoder.config.hidden_width(), types.len(), &mut rng);
        params.init_zeros(CLF_B, 1, types.len());
        Ok(Self {
            encoder,
            types,
            loss,
            params,
        })
    }

    pub fn classifier(&self) -> TriggerClassifier {
        TriggerClassifier::from_params(&self.types, &self.params)
    }

    pub fn width(&self) -> usize {
        self.encoder.config.hidden_width()
    }

    fn pool(&self, tape: &mut Tape, m: Var) -> (Var, Var) {
        let w1 = tape.param(&self.params, names::POOL_W1);
        let w2 = tape.param(&self.params, names::POOL_W2);
        attentive_pool(tape, w1, w2, m)
    }

    fn pooled(&self, tape: &Tape, (g, w): (Var, Var)) -> PooledVector {
        PooledVector {
            vector: tape.value(g).iter().copied().collect(),
            weights: tape.value(w).iter().copied().collect(),
        }
    }

    /// Eval-mode `g_s` over the full sentence.
    pub fn sentence_vector(&self, sentence: &Sentence) -> PooledVector {
        let mut tape = Tape::new();
        let h = self.encoder.encode(&mut tape, &self.params, sentence, &mut Mode::Eval);
        let p = self.pool(&mut tape, h);
        self.pooled(&tape, p)
    }

    /// Eval-mode `g_t` pooled over the hidden rows at `indices`.
    pub fn trigger_vector(&self, sentence: &Sentence, indices: &[usize]) -> Result<PooledVector> {
        if indices.is_empty() || indices.iter().any(|&i| i >= sentence.len()) {
            return Err(Error::InvalidArgument("trigger indices empty or out of range".into()));
        }
        let mut tape = Tape::new();
        let h = self.encoder.encode(&mut tape, &self.params, sentence, &mut Mode::Eval);
        let z = tape.select_rows(h, indices);
        let p = self.pool(&mut tape, z);
        Ok(self.pooled(&tape, p))
    }

    /// Builds the joint loss of `pairs` on `tape`.
    pub fn batch_loss(
        &self,
        tape: &mut Tape,
        pairs: &[MatchPair],
        instances: &[TrainingInstance],
        mode: &mut Mode<'_>,
    ) -> Result<BatchLoss> {
        if pairs.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let clf = self.classifier();
        let mut hidden: HashMap<usize, Var> = HashMap::new();
        let mut sent_vec: HashMap<usize, Var> = HashMap::new();
        let mut trig_vec: HashMap<usize, Var> = HashMap::new();

        let entity_rows: HashMap<usize, BTreeSet<usize>> = if self.loss.mask_entity_in_sentence_pool {
            let mut m: HashMap<usize, BTreeSet<usize>> = HashMap::new();
            for inst in instances {
                let rows = m.entry(inst.sentence_id).or_default();
                for sp in inst.tags.spans() {
                    rows.extend(sp.start..sp.end);
                }
            }
            m
        } else {
            HashMap::new()
        };

        let mut tc_terms = Vec::new();
        let mut sm_terms = Vec::with_capacity(pairs.len());
        for p in pairs {
            let src = &instances[p.trigger_instance];
            for (sid, sentence) in [(p.sentence_id, &p.instance_sentence), (src.sentence_id, &src.sentence)] {
                if let std::collections::hash_map::Entry::Vacant(e) = hidden.entry(sid) {
                    e.insert(self.encoder.encode(tape, &self.params, sentence, mode));
                }
            }
            let gs = match sent_vec.get(&p.sentence_id) {
                Some(&v) => v,
                None => {
                    let h = hidden[&p.sentence_id];
                    let m = match entity_rows.get(&p.sentence_id) {
                        Some(rows) if !rows.is_empty() && rows.len() < p.instance_sentence.len() => {
                            let keep: Vec<usize> = (0..p.instance_sentence.len()).filter(|i| !rows.contains(i)).collect();
                            tape.select_rows(h, &keep)
                        }
                        _ => h,
                    };
                    let (g, _) = self.pool(tape, m);
                    sent_vec.insert(p.sentence_id, g);
                    g
                }
            };
            let gt = match trig_vec.get(&p.trigger_instance) {
                Some(&v) => v,
                None => {
                    let z = tape.select_rows(hidden[&src.sentence_id], &src.trigger.indices());
                    let (g, _) = self.pool(tape, z);
                    trig_vec.insert(p.trigger_instance, g);
                    g
                }
            };
            sm_terms.push(tape.contrastive(gs, gt, p.matched, self.loss.margin));
            if p.matched {
                let w = tape.param(&self.params, CLF_W);
                let b = tape.param(&self.params, CLF_B);
                let z = tape.matmul(gt, w);
                let z = tape.add_row(z, b);
                tc_terms.push(tape.cross_entropy(z, clf.type_index(&src.entity_type)?));
            }
        }
        if tc_terms.is_empty() {
            return Err(Error::InvalidArgument("batch has no matched pair".into()));
        }
        let trigger_class = tape.mean(&tc_terms);
        let matching = tape.mean(&sm_terms);
        let weighted = tape.scale(matching, self.loss.lambda);
        let total = tape.add(trigger_class, weighted);
        Ok(BatchLoss {
            total,
            trigger_class,
            matching,
        })
    }

    /// Eval-mode joint loss over `pairs`, evaluated in one pass.
    pub fn evaluate_loss(&self, pairs: &[MatchPair], instances: &[TrainingInstance]) -> Result<(f64, f64, f64)> {
        let mut tape = Tape::new();
        let l = self.batch_loss(&mut tape, pairs, instances, &mut Mode::Eval)?;
        Ok((tape.scalar(l.total), tape.scalar(l.trigger_class), tape.scalar(l.matching)))
    }

    /// Share of instances whose trigger vector classifies to the right type.
    pub fn trigger_accuracy(&self, instances: &[TrainingInstance]) -> Result<f64> {
        if instances.is_empty() {
            return Ok(0.0);
        }
        let clf = self.classifier();
        let mut correct = 0;
        for inst in instances {
            let g = self.trigger_vector(&inst.sentence, &inst.trigger.indices())?;
            if clf.predict(&g.vector) == inst.entity_type {
                correct += 1;
            }
        }
        Ok(correct as f64 / instances.len() as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Stage1Epoch {
    pub epoch: usize,
    pub trigger_class_loss: f64,
    pub matching_loss: f64,
    pub heldout_loss: f64,
    /// Seed used to draw this epoch's mismatched pairs.
    pub negative_seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Stage1Log {
    /// Held-out joint loss before any update.
    pub initial_heldout_loss: f64,
    pub epochs: Vec<Stage1Epoch>,
    pub best_epoch: usize,
    pub best_heldout_loss: f64,
}

/// Trains encoder, pooling and classifier jointly. Mismatched pairs are
/// resampled each epoch; the parameters with the lowest held-out joint loss
/// are returned.
pub fn train_stage1(
    mut matcher: Matcher,
    instances: &[TrainingInstance],
    schedule: &Schedule,
    seed: u64,
) -> Result<(Matcher, Stage1Log)> {
    if instances.is_empty() {
        return Err(Error::InvalidArgument("stage one needs at least one instance".into()));
    }
    let sentence_ids: Vec<usize> = instances.iter().map(|i| i.sentence_id).collect::<BTreeSet<_>>().into_iter().collect();
    let (train_pos, held_pos) = holdout_split(sentence_ids.len(), schedule.holdout_fraction, seed ^ 0x5eed);
    let held_ids: BTreeSet<usize> = held_pos.iter().map(|&p| sentence_ids[p]).collect();
    let train_ids: BTreeSet<usize> = train_pos.iter().map(|&p| sentence_ids[p]).collect();
    let train: Vec<TrainingInstance> = instances.iter().filter(|i| train_ids.contains(&i.sentence_id)).cloned().collect();
    let held: Vec<TrainingInstance> = instances.iter().filter(|i| held_ids.contains(&i.sentence_id)).cloned().collect();

    let ratio_for = |set: &[TrainingInstance]| {
        let distinct = set.iter().map(|i| i.sentence_id).collect::<BTreeSet<_>>().len();
        if distinct >= 2 {
            matcher.loss.negative_ratio
        } else {
            0.0
        }
    };
    let train_ratio = ratio_for(&train);
    let held_pairs = if held.is_empty() {
        Vec::new()
    } else {
        make_match_pairs(&held, ratio_for(&held), seed ^ 0x4e1d)?
    };
    let selection_loss = |m: &Matcher, pairs_for_train: &[MatchPair]| -> Result<f64> {
        if held_pairs.is_empty() {
            Ok(m.evaluate_loss(pairs_for_train, &train)?.0)
        } else {
            Ok(m.evaluate_loss(&held_pairs, &held)?.0)
        }
    };

    let mut log = Stage1Log::default();
    let initial_pairs = make_match_pairs(&train, train_ratio, seed)?;
    log.initial_heldout_loss = selection_loss(&matcher, &initial_pairs)?;
    log.best_heldout_loss = log.initial_heldout_loss;
    if schedule.epochs == 0 {
        return Ok((matcher, log));
    }

    let mut best = matcher.params.clone();
    let mut since_best = 0;
    let mut opt = Adam::new(schedule.adam.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for epoch in 1..=schedule.epochs {
        let negative_seed = seed.wrapping_mul(1_000_003).wrapping_add(epoch as u64);
        let mut pairs = make_match_pairs(&train, train_ratio, negative_seed)?;
        pairs.shuffle(&mut rng);
        let (mut tc_sum, mut sm_sum, mut batches) = (0.0, 0.0, 0usize);
        for chunk in pairs.chunks(schedule.batch_size.max(1)) {
            if !chunk.iter().any(|p| p.matched) {
                continue;
            }
            let mut tape = Tape::new();
            let l = matcher.batch_loss(&mut tape, chunk, &train, &mut Mode::Train(&mut rng))?;
            let grads = tape.backward(l.total).map_err(|e| {
                Error::NonFinite(format!("stage one diverged at epoch {epoch}: {e}"))
            })?;
            tc_sum += tape.scalar(l.trigger_class);
            sm_sum += tape.scalar(l.matching);
            batches += 1;
            opt.step(&mut matcher.params, grads);
        }
        let heldout_loss = selection_loss(&matcher, &pairs)?;
        if !heldout_loss.is_finite() {
            return Err(Error::NonFinite(format!("held-out loss at epoch {epoch}")));
        }
        log.epochs.push(Stage1Epoch {
            epoch,
            trigger_class_loss: tc_sum / batches.max(1) as f64,
            matching_loss: sm_sum / batches.max(1) as f64,
            heldout_loss,
            negative_seed,
        });
        if heldout_loss < log.best_heldout_loss {
            log.best_heldout_loss = heldout_loss;
            log.best_epoch = epoch;
            best = matcher.params.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= schedule.patience {
                break;
            }
        }
    }
    matcher.params = best;
    Ok((matcher, log))
}

/// One learned trigger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerEntry {
    pub id: usize,
    pub source_sentence: usize,
    pub entity_type: String,
    pub tokens: Vec<String>,
    pub vector: Vec<f32>,
}

impl TriggerEntry {
    pub fn vector_f64(&self) -> Vec<f64> {
        self.vector.iter().map(|&x| x as f64).collect()
    }
}

/// Immutable lookup table of trigger vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerTable {
    pub format_version: u32,
    pub width: usize,
    pub types: Vec<String>,
    pub count: usize,
    pub entries: Vec<TriggerEntry>,
}

impl TriggerTable {
    pub const VERSION: u32 = 1;

    pub fn new(width: usize, types: Vec<String>, entries: Vec<TriggerEntry>) -> Result<Self> {
        if let Some(e) = entries.iter().find(|e| e.vector.len() != width) {
            return Err(Error::Shape(format!("entry {} has width {}, table {}", e.id, e.vector.len(), width)));
        }
        Ok(Self {
            format_version: Self::VERSION,
            width,
            types,
            count: entries.len(),
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries grouped by their source sentence.
    pub fn by_sentence(&self) -> BTreeMap<usize, Vec<&TriggerEntry>> {
        let mut m: BTreeMap<usize, Vec<&TriggerEntry>> = BTreeMap::new();
        for e in &self.entries {
            m.entry(e.source_sentence).or_default().push(e);
        }
        m
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: Self = serde_json::from_str(text)?;
        if t.format_version != Self::VERSION {
            return Err(Error::Format(format!("trigger table version {}", t.format_version)));
        }
        if t.count != t.entries.len() {
            return Err(Error::Format(format!("header count {} but {} entries", t.count, t.entries.len())));
        }
        if t.entries.iter().any(|e| e.vector.len() != t.width) {
            return Err(Error::Format("entry width differs from header".into()));
        }
        Ok(t)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// One entry per instance, vectors pooled in eval mode.
pub fn build_trigger_table(instances: &[TrainingInstance], matcher: &Matcher) -> Result<TriggerTable> {
    let mut entries = Vec::with_capacity(instances.len());
    let mut cache: HashMap<usize, Array2<f64>> = HashMap::new();
    let (w1, w2) = (
        matcher.params.get(names::POOL_W1).expect("pool.w1"),
        matcher.params.get(names::POOL_W2).expect("pool.w2"),
    );
    for (id, inst) in instances.iter().enumerate() {
        let h = cache
            .entry(inst.sentence_id)
            .or_insert_with(|| matcher.encoder.hidden(&matcher.params, &inst.sentence));
        let z = h.select(ndarray::Axis(0), &inst.trigger.indices());
        let g = crate::encoder::attentive_pool_values(&z, w1, w2)?;
        entries.push(TriggerEntry {
            id,
            source_sentence: inst.sentence_id,
            entity_type: inst.entity_type.clone(),
            tokens: inst.trigger_tokens(),
            vector: g.vector.iter().map(|&x| x as f32).collect(),
        });
    }
    TriggerTable::new(matcher.width(), matcher.types.clone(), entries)
}
