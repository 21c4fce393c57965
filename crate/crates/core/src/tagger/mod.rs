//! Stage two: trigger-query attention over the hidden matrix, `[H; H']`
//! features and a linear-chain CRF tagger. With the attention branch
//! disabled the same code is the plain BLSTM-CRF baseline.

pub mod crf;

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::corpus::{repair_bioes, Scheme, Sentence, Tag, TagSequence, TriggerAnnotatedSentence};
use crate::encoder::{names, Encoder, Mode};
use crate::error::{Error, Result};
use crate::matcher::{Matcher, TriggerTable};
use crate::optim::{holdout_split, Adam, Schedule};
use crate::params::ParamStore;

use self::crf::{CrfMask, CrfScores};

pub const ATT_U1: &str = "att.u1";
pub const ATT_U2: &str = "att.u2";
pub const ATT_V: &str = "att.v";
pub const EMIT_W: &str = "crf.emit.w";
pub const EMIT_B: &str = "crf.emit.b";
pub const CRF_TRANS: &str = "crf.trans";
pub const CRF_START: &str = "crf.start";
pub const CRF_END: &str = "crf.end";

/// BIOES tag inventory: `O` first, then `B, I, E, S` for each type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagSet {
    types: Vec<String>,
}

impl TagSet {
    pub fn new(types: Vec<String>) -> Self {
        Self { types }
    }

    pub fn from_corpus(corpus: &[TriggerAnnotatedSentence]) -> Self {
        let types: std::collections::BTreeSet<String> = corpus
            .iter()
            .flat_map(|s| s.tags.tags.iter().filter_map(|t| t.entity_type().map(str::to_string)))
            .collect();
        Self::new(types.into_iter().collect())
    }

    pub fn types(&self) -> &[String] {
        &self.types
    }

    pub fn len(&self) -> usize {
        1 + 4 * self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tag(&self, i: usize) -> Tag {
        if i == 0 {
            return Tag::Outside;
        }
        let ty = self.types[(i - 1) / 4].clone();
        match (i - 1) % 4 {
            0 => Tag::Begin(ty),
            1 => Tag::Inside(ty),
            2 => Tag::End(ty),
            _ => Tag::Single(ty),
        }
    }

    pub fn index(&self, tag: &Tag) -> Result<usize> {
        let Some(ty) = tag.entity_type() else { return Ok(0) };
        let k = self
            .types
            .iter()
            .position(|t| t == ty)
            .ok_or_else(|| Error::UnknownLabel(tag.to_string()))?;
        let off = match tag {
            Tag::Begin(_) => 0,
            Tag::Inside(_) => 1,
            Tag::End(_) => 2,
            Tag::Single(_) => 3,
            Tag::Outside => unreachable!(),
        };
        Ok(1 + 4 * k + off)
    }

    pub fn encode(&self, seq: &TagSequence) -> Result<Vec<usize>> {
        seq.to_scheme(Scheme::Bioes).tags.iter().map(|t| self.index(t)).collect()
    }

    pub fn decode(&self, path: &[usize]) -> Vec<Tag> {
        path.iter().map(|&i| self.tag(i)).collect()
    }

    /// `-∞` on every move that BIOES forbids.
    pub fn bioes_mask(&self) -> CrfMask {
        let k = self.len();
        let mut m = CrfMask::allow_all(k);
        let open = |t: &Tag| matches!(t, Tag::Begin(_) | Tag::Inside(_));
        for i in 0..k {
            let a = self.tag(i);
            if !matches!(a, Tag::Outside | Tag::Begin(_) | Tag::Single(_)) {
                m.start[i] = f64::NEG_INFINITY;
            }
            if open(&a) {
                m.end[i] = f64::NEG_INFINITY;
            }
            for j in 0..k {
                let b = self.tag(j);
                let ok = match &b {
                    Tag::Inside(t) | Tag::End(t) => open(&a) && a.entity_type() == Some(t.as_str()),
                    _ => !open(&a),
                };
                if !ok {
                    m.transitions[[i, j]] = f64::NEG_INFINITY;
                }
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryGranularity {
    /// One example per sentence; the query is the mean of all its triggers.
    PerSentence,
    /// One example per (entity, trigger) instance.
    PerInstance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggerConfig {
    /// `false` gives the BLSTM-CRF baseline.
    pub use_trigger_attention: bool,
    /// Rows of `U₁`, `U₂`.
    pub attention_hidden: usize,
    pub mask_illegal_transitions: bool,
    /// Keep the stage-one encoder fixed during stage two.
    pub freeze_encoder: bool,
    pub query: QueryGranularity,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        Self {
            use_trigger_attention: true,
            attention_hidden: 100,
            mask_illegal_transitions: false,
            freeze_encoder: false,
            query: QueryGranularity::PerInstance,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriggerAttentionParams {
    /// `a × d`
    pub u1: Array2<f64>,
    /// `a × d`
    pub u2: Array2<f64>,
    /// `a × 1`
    pub v: Array2<f64>,
}

/// `α = softmax(vᵀ tanh(U₁Hᵀ + U₂ĝᵀ))`, `H'ᵢ = αᵢ Hᵢ`, on a tape.
/// Returns `(α as n × 1, H')`.
pub fn trigger_attention_on(tape: &mut Tape, h: Var, g_hat: Var, u1: Var, u2: Var, v: Var) -> (Var, Var) {
    let u1t = tape.transpose(u1);
    let keys = tape.matmul(h, u1t);
    let u2t = tape.transpose(u2);
    let q = tape.matmul(g_hat, u2t);
    let s = tape.add_row(keys, q);
    let s = tape.tanh(s);
    let scores = tape.matmul(s, v);
    let alpha = tape.softmax_col(scores);
    let h_prime = tape.scale_rows(h, alpha);
    (alpha, h_prime)
}

/// [`trigger_attention_on`] over plain values.
pub fn trigger_attention(h: &Array2<f64>, g_hat: &[f64], p: &TriggerAttentionParams) -> Result<(Vec<f64>, Array2<f64>)> {
    let (n, d) = h.dim();
    if n == 0 {
        return Err(Error::InvalidArgument("empty hidden matrix".into()));
    }
    if g_hat.len() != d || p.u1.ncols() != d || p.u2.ncols() != d || p.u1.nrows() != p.u2.nrows() || p.v.dim() != (p.u1.nrows(), 1) {
        return Err(Error::Shape(format!(
            "hidden width {d}, query width {}, U₁ {:?}, U₂ {:?}, v {:?}",
            g_hat.len(),
            p.u1.dim(),
            p.u2.dim(),
            p.v.dim()
        )));
    }
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let g = tape.constant(Array2::from_shape_vec((1, d), g_hat.to_vec()).expect("row"));
    let u1 = tape.constant(p.u1.clone());
    let u2 = tape.constant(p.u2.clone());
    let v = tape.constant(p.v.clone());
    let (a, hp) = trigger_attention_on(&mut tape, hv, g, u1, u2, v);
    Ok((tape.value(a).iter().copied().collect(), tape.value(hp).clone()))
}

/// Emission projection and transition scores.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfParams {
    /// `F × K`
    pub emit_w: Array2<f64>,
    /// `1 × K`
    pub emit_b: Array2<f64>,
    pub transitions: Array2<f64>,
    pub start: Array1<f64>,
    pub end: Array1<f64>,
    pub mask: Option<CrfMask>,
}

impl CrfParams {
    pub fn from_store(store: &ParamStore, mask: Option<CrfMask>) -> Self {
        let row = |n: &str| store.get(n).expect("crf group").row(0).to_owned();
        Self {
            emit_w: store.get(EMIT_W).expect("crf.emit.w").clone(),
            emit_b: store.get(EMIT_B).expect("crf.emit.b").clone(),
            transitions: store.get(CRF_TRANS).expect("crf.trans").clone(),
            start: row(CRF_START),
            end: row(CRF_END),
            mask,
        }
    }

    pub fn num_tags(&self) -> usize {
        self.transitions.nrows()
    }

    pub fn emissions(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.emit_w.nrows() {
            return Err(Error::Shape(format!(
                "features of width {} for projection of width {}",
                features.ncols(),
                self.emit_w.nrows()
            )));
        }
        if features.nrows() == 0 {
            return Err(Error::InvalidArgument("empty feature matrix".into()));
        }
        Ok(features.dot(&self.emit_w) + &self.emit_b)
    }

    pub fn scores<'a>(&'a self, emissions: &'a Array2<f64>) -> CrfScores<'a> {
        CrfScores::new(
            emissions.view(),
            self.transitions.view(),
            self.start.view(),
            self.end.view(),
            self.mask.as_ref(),
        )
    }
}

/// `log Z − score(gold)` for the given features.
pub fn crf_nll(features: &Array2<f64>, gold: &[usize], crf: &CrfParams) -> Result<f64> {
    if features.nrows() != gold.len() {
        return Err(Error::Shape(format!("{} feature rows, {} gold tags", features.nrows(), gold.len())));
    }
    let e = crf.emissions(features)?;
    Ok(crf.scores(&e).nll(gold))
}

/// Decoded tags for one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct TagPrediction {
    /// Repaired to a well-formed BIOES sequence.
    pub tags: TagSequence,
    /// Raw Viterbi path over tag indices.
    pub path: Vec<usize>,
    /// Viterbi path score.
    pub score: f64,
    /// Per-token trigger attention; `None` for the baseline.
    pub token_attention: Option<Vec<f64>>,
}

pub fn viterbi(features: &Array2<f64>, crf: &CrfParams, tagset: &TagSet) -> Result<TagPrediction> {
    let e = crf.emissions(features)?;
    let (path, score) = crf.scores(&e).viterbi();
    Ok(TagPrediction {
        tags: repair_bioes(&tagset.decode(&path)),
        path,
        score,
        token_attention: None,
    })
}

/// One stage-two training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Example {
    pub sentence: Sentence,
    pub tags: TagSequence,
    /// Attention query `ĝ_t`; `None` for the baseline.
    pub query: Option<Vec<f64>>,
}

/// Stage-two examples for `corpus`. With a table, each sentence's query is
/// built from its own triggers' table vectors and sentences without
/// triggers are dropped with a warning; without one, every sentence is kept
/// with no query.
pub fn stage2_examples(
    corpus: &[TriggerAnnotatedSentence],
    table: Option<&TriggerTable>,
    granularity: QueryGranularity,
) -> Vec<Stage2Example> {
    let Some(table) = table else {
        return corpus
            .iter()
            .map(|s| Stage2Example {
                sentence: s.sentence.clone(),
                tags: s.tags.clone(),
                query: None,
            })
            .collect();
    };
    let grouped = table.by_sentence();
    let mut out = Vec::new();
    let mut dropped = 0;
    for (sid, s) in corpus.iter().enumerate() {
        let Some(entries) = grouped.get(&sid) else {
            dropped += 1;
            continue;
        };
        match granularity {
            QueryGranularity::PerSentence => {
                let vs: Vec<Vec<f64>> = entries.iter().map(|e| e.vector_f64()).collect();
                out.push(Stage2Example {
                    sentence: s.sentence.clone(),
                    tags: s.tags.clone(),
                    query: Some(crate::inference::mean_query(&vs).expect("non-empty")),
                });
            }
            QueryGranularity::PerInstance => {
                for e in entries {
                    out.push(Stage2Example {
                        sentence: s.sentence.clone(),
                        tags: s.tags.clone(),
                        query: Some(e.vector_f64()),
                    });
                }
            }
        }
    }
    if dropped > 0 {
        log::warn!("stage two: {dropped} sentence(s) without triggers excluded");
    }
    out
}

/// Sequence tagger: encoder, optional trigger attention, CRF.
#[derive(Debug, Clone)]
pub struct Tagger {
    pub encoder: Encoder,
    pub tagset: TagSet,
    pub config: TaggerConfig,
    pub params: ParamStore,
}

impl Tagger {
    /// Fresh tagger with its own encoder.
    pub fn new(encoder: Encoder, tagset: TagSet, config: TaggerConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::default();
        encoder.init_params(&mut params, &mut rng);
        let mut t = Self {
            encoder,
            tagset,
            config,
            params,
        };
        t.init_head(&mut rng);
        t
    }

    /// Tagger sharing the stage-one encoder (copied; fine-tuned unless
    /// `freeze_encoder`).
    pub fn from_matcher(matcher: &Matcher, tagset: TagSet, config: TaggerConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::default();
        for n in names::ENCODER {
            params.insert(n, matcher.params.get(n).expect("encoder group").clone());
        }
        let mut t = Self {
            encoder: matcher.encoder.clone(),
            tagset,
            config,
            params,
        };
        t.init_head(&mut rng);
        t
    }

    fn init_head(&mut self, rng: &mut ChaCha8Rng) {
        let d = self.encoder.config.hidden_width();
        let k = self.tagset.len();
        let feat = if self.config.use_trigger_attention {
            let a = self.config.attention_hidden;
            self.params.init_uniform(ATT_U1, a, d, rng);
            self.params.init_uniform(ATT_U2, a, d, rng);
            self.params.init_uniform(ATT_V, a, 1, rng);
            2 * d
        } else {
            d
        };
        self.params.init_uniform(EMIT_W, feat, k, rng);
        self.params.init_zeros(EMIT_B, 1, k);
        self.params.init_zeros(CRF_TRANS, k, k);
        self.params.init_zeros(CRF_START, 1, k);
        self.params.init_zeros(CRF_END, 1, k);
    }

    pub fn mask(&self) -> Option<CrfMask> {
        self.config.mask_illegal_transitions.then(|| self.tagset.bioes_mask())
    }

    pub fn crf(&self) -> CrfParams {
        CrfParams::from_store(&self.params, self.mask())
    }

    pub fn attention_params(&self) -> Option<TriggerAttentionParams> {
        self.config.use_trigger_attention.then(|| TriggerAttentionParams {
            u1: self.params.get(ATT_U1).expect("att.u1").clone(),
            u2: self.params.get(ATT_U2).expect("att.u2").clone(),
            v: self.params.get(ATT_V).expect("att.v").clone(),
        })
    }

    fn frozen_groups(&self) -> Vec<&'static str> {
        if self.config.freeze_encoder {
            names::ENCODER.to_vec()
        } else {
            Vec::new()
        }
    }

    /// CRF input rows: `H`, or `[H; H']` with the attention weights.
    pub fn features_on(
        &self,
        tape: &mut Tape,
        sentence: &Sentence,
        query: Option<&[f64]>,
        mode: &mut Mode<'_>,
    ) -> Result<(Var, Option<Var>)> {
        let h = self.encoder.encode(tape, &self.params, sentence, mode);
        if !self.config.use_trigger_attention {
            return Ok((h, None));
        }
        let d = self.encoder.config.hidden_width();
        let q = query.ok_or_else(|| Error::InvalidArgument("trigger-enhanced tagger needs a query".into()))?;
        if q.len() != d {
            return Err(Error::Shape(format!("query width {} for hidden width {d}", q.len())));
        }
        let g = tape.constant(Array2::from_shape_vec((1, d), q.to_vec()).expect("row"));
        let u1 = tape.param(&self.params, ATT_U1);
        let u2 = tape.param(&self.params, ATT_U2);
        let v = tape.param(&self.params, ATT_V);
        let (alpha, h_prime) = trigger_attention_on(tape, h, g, u1, u2, v);
        Ok((tape.hcat(vec![h, h_prime]), Some(alpha)))
    }

    /// Eval-mode features and attention weights.
    pub fn features(&self, sentence: &Sentence, query: Option<&[f64]>) -> Result<(Array2<f64>, Option<Vec<f64>>)> {
        let mut tape = Tape::new();
        let (f, a) = self.features_on(&mut tape, sentence, query, &mut Mode::Eval)?;
        Ok((tape.value(f).clone(), a.map(|a| tape.value(a).iter().copied().collect())))
    }

    /// embed → contextualize → trigger attention → concat → Viterbi.
    pub fn tag_with_query(&self, sentence: &Sentence, query: Option<&[f64]>) -> Result<TagPrediction> {
        let (f, alpha) = self.features(sentence, query)?;
        let mut p = viterbi(&f, &self.crf(), &self.tagset)?;
        p.token_attention = alpha;
        Ok(p)
    }

    pub fn example_loss(&self, tape: &mut Tape, ex: &Stage2Example, mode: &mut Mode<'_>) -> Result<Var> {
        let (f, _) = self.features_on(tape, &ex.sentence, ex.query.as_deref(), mode)?;
        let w = tape.param(&self.params, EMIT_W);
        let b = tape.param(&self.params, EMIT_B);
        let e = tape.matmul(f, w);
        let e = tape.add_row(e, b);
        let tr = tape.param(&self.params, CRF_TRANS);
        let st = tape.param(&self.params, CRF_START);
        let en = tape.param(&self.params, CRF_END);
        let gold = self.tagset.encode(&ex.tags)?;
        let mask = self.mask();
        tape.crf_nll(e, tr, st, en, &gold, mask.as_ref())
    }

    /// Mean eval-mode NLL over `examples`.
    pub fn mean_nll(&self, examples: &[Stage2Example]) -> Result<f64> {
        if examples.is_empty() {
            return Ok(0.0);
        }
        let crf = self.crf();
        let mut total = 0.0;
        for ex in examples {
            let (f, _) = self.features(&ex.sentence, ex.query.as_deref())?;
            total += crf_nll(&f, &self.tagset.encode(&ex.tags)?, &crf)?;
        }
        Ok(total / examples.len() as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Stage2Epoch {
    pub epoch: usize,
    pub train_nll: f64,
    pub heldout_nll: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Stage2Log {
    pub initial_heldout_nll: f64,
    pub epochs: Vec<Stage2Epoch>,
    pub best_epoch: usize,
    pub best_heldout_nll: f64,
}

/// Trains the tagger on `examples`, keeping the parameters with the lowest
/// held-out NLL.
pub fn train_stage2(
    mut tagger: Tagger,
    examples: &[Stage2Example],
    schedule: &Schedule,
    seed: u64,
) -> Result<(Tagger, Stage2Log)> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("stage two needs at least one example".into()));
    }
    let (train_idx, held_idx) = holdout_split(examples.len(), schedule.holdout_fraction, seed ^ 0x7a66);
    let train: Vec<&Stage2Example> = train_idx.iter().map(|&i| &examples[i]).collect();
    let held: Vec<Stage2Example> = held_idx.iter().map(|&i| examples[i].clone()).collect();
    let train_owned: Vec<Stage2Example> = train.iter().map(|&e| e.clone()).collect();
    let selection = |t: &Tagger| -> Result<f64> {
        if held.is_empty() {
            t.mean_nll(&train_owned)
        } else {
            t.mean_nll(&held)
        }
    };

    let mut log = Stage2Log {
        initial_heldout_nll: selection(&tagger)?,
        ..Stage2Log::default()
    };
    log.best_heldout_nll = log.initial_heldout_nll;
    if schedule.epochs == 0 {
        return Ok((tagger, log));
    }

    let frozen = tagger.frozen_groups();
    let mut best = tagger.params.clone();
    let mut since_best = 0;
    let mut opt = Adam::new(schedule.adam.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=schedule.epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let mut nll_sum = 0.0;
        for chunk in order.chunks(schedule.batch_size.max(1)) {
            let mut tape = Tape::with_frozen(frozen.iter().copied());
            let mut terms = Vec::with_capacity(chunk.len());
            for &i in chunk {
                terms.push(tagger.example_loss(&mut tape, train[i], &mut Mode::Train(&mut rng))?);
            }
            let loss = tape.mean(&terms);
            nll_sum += tape.scalar(loss) * chunk.len() as f64;
            let grads = tape
                .backward(loss)
                .map_err(|e| Error::NonFinite(format!("stage two diverged at epoch {epoch}: {e}")))?;
            opt.step(&mut tagger.params, grads);
        }
        let heldout_nll = selection(&tagger)?;
        log.epochs.push(Stage2Epoch {
            epoch,
            train_nll: nll_sum / train.len() as f64,
            heldout_nll,
        });
        if heldout_nll < log.best_heldout_nll {
            log.best_heldout_nll = heldout_nll;
            log.best_epoch = epoch;
            best = tagger.params.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= schedule.patience {
                break;
            }
        }
    }
    tagger.params = best;
    Ok((tagger, log))
}

/// Per-type count of examples, for logs.
pub fn type_histogram(examples: &[Stage2Example]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for ex in examples {
        for sp in ex.tags.spans() {
            *m.entry(sp.label).or_insert(0) += 1;
        }
    }
    m
}
