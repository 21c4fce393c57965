//! End-to-end training and evaluation of the baseline and trigger-enhanced
//! models.

use std::sync::Arc;

use rayon::prelude::*;

use crate::corpus::{reformat, Sentence, TagSequence, TriggerAnnotatedSentence};
use crate::encoder::{CharVocab, Encoder, PretrainedVectors};
use crate::error::Result;
use crate::inference::{self_train, tag_unlabeled, SelfTrainLog, TmnModel};
use crate::matcher::{build_trigger_table, train_stage1, Matcher, Stage1Log};
use crate::tagger::{stage2_examples, train_stage2, Stage2Log, TagSet, Tagger, TaggerConfig};

use super::config::RunConfig;
use super::eval::{entity_f1, EvalResult};

pub fn build_encoder(train: &[TriggerAnnotatedSentence], pretrained: Arc<PretrainedVectors>, config: &RunConfig) -> Result<Encoder> {
    Encoder::new(
        config.encoder.clone(),
        CharVocab::build(train.iter().map(|s| &s.sentence)),
        pretrained,
    )
}

#[derive(Debug, Clone)]
pub struct TmnTraining {
    pub model: TmnModel,
    pub stage1: Stage1Log,
    pub stage2: Stage2Log,
}

/// Stage one, trigger table, stage two.
pub fn train_tmn(
    train: &[TriggerAnnotatedSentence],
    types: &[String],
    pretrained: Arc<PretrainedVectors>,
    config: &RunConfig,
    seed: u64,
) -> Result<TmnTraining> {
    let instances = reformat(train);
    let encoder = build_encoder(train, pretrained, config)?;
    let matcher = Matcher::new(encoder, types.to_vec(), config.matcher.clone(), seed)?;
    let (matcher, stage1) = train_stage1(matcher, &instances, &config.stage1, seed)?;
    let table = build_trigger_table(&instances, &matcher)?;
    let tagger_config = TaggerConfig {
        use_trigger_attention: true,
        ..config.tagger.clone()
    };
    let tagger = Tagger::from_matcher(&matcher, TagSet::new(types.to_vec()), tagger_config, seed.wrapping_add(1));
    let examples = stage2_examples(train, Some(&table), config.tagger.query);
    let (tagger, stage2) = train_stage2(tagger, &examples, &config.stage2, seed)?;
    Ok(TmnTraining {
        model: TmnModel {
            matcher,
            table,
            tagger,
            retrieval: config.retrieval.clone(),
        },
        stage1,
        stage2,
    })
}

/// The same tagger with the trigger branch switched off.
pub fn train_baseline(
    train: &[TriggerAnnotatedSentence],
    types: &[String],
    pretrained: Arc<PretrainedVectors>,
    config: &RunConfig,
    seed: u64,
) -> Result<(Tagger, Stage2Log)> {
    let encoder = build_encoder(train, pretrained, config)?;
    let tagger_config = TaggerConfig {
        use_trigger_attention: false,
        ..config.tagger.clone()
    };
    let tagger = Tagger::new(encoder, TagSet::new(types.to_vec()), tagger_config, seed);
    let examples = stage2_examples(train, None, config.tagger.query);
    train_stage2(tagger, &examples, &config.stage2, seed)
}

/// Continues a trained model on confident predictions over `pool`.
pub fn self_train_tmn(
    model: TmnModel,
    labeled: &[TriggerAnnotatedSentence],
    pool: &[Sentence],
    config: &RunConfig,
    seed: u64,
) -> Result<(TmnModel, SelfTrainLog)> {
    let examples = stage2_examples(labeled, Some(&model.table), config.tagger.query);
    let (m, log, _) = self_train(model, &examples, pool, &config.self_train, &config.self_train_schedule, seed)?;
    Ok((m, log))
}

pub fn predict_baseline(tagger: &Tagger, sentences: &[Sentence]) -> Result<Vec<TagSequence>> {
    sentences
        .par_iter()
        .map(|s| Ok(tagger.tag_with_query(s, None)?.tags))
        .collect()
}

pub fn predict_tmn(model: &TmnModel, sentences: &[Sentence]) -> Result<Vec<TagSequence>> {
    sentences.par_iter().map(|s| Ok(tag_unlabeled(s, model)?.tags)).collect()
}

fn split(test: &[TriggerAnnotatedSentence]) -> (Vec<Sentence>, Vec<TagSequence>) {
    test.iter().map(|s| (s.sentence.clone(), s.tags.clone())).unzip()
}

pub fn evaluate_baseline(tagger: &Tagger, test: &[TriggerAnnotatedSentence]) -> Result<EvalResult> {
    let (s, gold) = split(test);
    entity_f1(&gold, &predict_baseline(tagger, &s)?)
}

pub fn evaluate_tmn(model: &TmnModel, test: &[TriggerAnnotatedSentence]) -> Result<EvalResult> {
    let (s, gold) = split(test);
    entity_f1(&gold, &predict_tmn(model, &s)?)
}

/// Held-out trigger-type accuracy of a stage-one matcher.
pub fn trigger_type_accuracy(matcher: &Matcher, test: &[TriggerAnnotatedSentence]) -> Result<f64> {
    matcher.trigger_accuracy(&reformat(test))
}

