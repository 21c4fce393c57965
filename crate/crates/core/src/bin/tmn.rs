use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use tmn::checkpoint::{load_tmn, MatcherCheckpoint, TaggerCheckpoint};
use tmn::corpus::{
    compute_stats, parse_corpus, parse_plain_text, reformat, serialize_conll, write_corpus, Sentence,
    TriggerAnnotatedSentence,
};
use tmn::encoder::PretrainedVectors;
use tmn::harness::budget::{emit_cost_curves, parse_results_csv, results_csv, write_results};
use tmn::harness::pipeline::{build_encoder, evaluate_baseline, evaluate_tmn};
use tmn::harness::{generate_synthetic, run_budget_experiment, RunConfig};
use tmn::inference::{self_train, TmnModel};
use tmn::matcher::{build_trigger_table, train_stage1, Matcher};
use tmn::tagger::{stage2_examples, train_stage2, TagSet, Tagger, TaggerConfig};
use tmn::{Error, Result};

#[derive(Parser)]
#[command(name = "tmn", version, about = "Trigger-enhanced named entity recognition")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Configuration override `key=value`, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Start from the small synthetic-language configuration.
    #[arg(long, global = true)]
    synthetic_defaults: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-type trigger statistics of trigger-annotated files.
    Stats {
        files: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Stage one: trigger classifier and matcher, plus the trigger table.
    TrainMatcher {
        #[command(flatten)]
        data: TrainData,
        /// Matcher checkpoint to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage two: the sequence tagger, with or without trigger attention.
    TrainTagger {
        #[command(flatten)]
        data: TrainData,
        /// Stage-one checkpoint; omit together with `--baseline`.
        #[arg(long, required_unless_present = "baseline")]
        matcher: Option<PathBuf>,
        /// Train the plain BLSTM-CRF instead.
        #[arg(long, conflicts_with = "matcher")]
        baseline: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tag plain text or CoNLL input.
    Tag {
        #[command(flatten)]
        model: ModelPaths,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = InputFormat::Text)]
        format: InputFormat,
        /// CoNLL predictions; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-token attention weights, `token<TAB>weight` per line.
        #[arg(long)]
        attention: Option<PathBuf>,
        /// Retrieved triggers per sentence, JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Confidence-based self-training on unlabeled sentences.
    SelfTrain {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        matcher: PathBuf,
        #[arg(long)]
        tagger: PathBuf,
        /// The labeled corpus the tagger was trained on.
        #[arg(long)]
        train: PathBuf,
        /// Unlabeled sentences, one per line.
        #[arg(long)]
        unlabeled: PathBuf,
        #[arg(long, value_enum, default_value_t = InputFormat::Text)]
        format: InputFormat,
        #[arg(long)]
        out: PathBuf,
        /// Promoted weak examples as a CoNLL file.
        #[arg(long)]
        weak_out: Option<PathBuf>,
    },
    /// Entity-level precision, recall and F1 on a labeled file.
    Evaluate {
        #[command(flatten)]
        model: ModelPaths,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Labeled-data budget study over fractions, variants and seeds.
    Budget {
        /// First replicate seed; replicates use consecutive seeds.
        #[arg(long)]
        seed: u64,
        #[arg(long, required_unless_present = "synthetic")]
        train: Option<PathBuf>,
        #[arg(long, required_unless_present = "synthetic")]
        test: Option<PathBuf>,
        #[arg(long)]
        pretrained: Option<PathBuf>,
        /// Use the generated synthetic corpus.
        #[arg(long, conflicts_with_all = ["train", "test"])]
        synthetic: bool,
        /// Results CSV; the configuration goes next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Writes a synthetic train/test corpus and its word vectors.
    SynthGen {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Stretched baseline curves from a budget CSV.
    CostCurves {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, value_delimiter = ',')]
        multipliers: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainData {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    train: PathBuf,
    /// Word vectors, `word v1 … vd` per line.
    #[arg(long)]
    pretrained: Option<PathBuf>,
}

#[derive(Args)]
struct ModelPaths {
    #[arg(long)]
    tagger: PathBuf,
    /// Stage-one checkpoint; required for trigger-enhanced taggers.
    #[arg(long)]
    matcher: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum InputFormat {
    Text,
    Conll,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut c = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None if cli.synthetic_defaults => RunConfig::synthetic(),
        None => RunConfig::default(),
    };
    c.apply_overrides(&cli.overrides)?;
    Ok(c)
}

fn set_path(config: &mut RunConfig, key: &str, path: Option<&Path>) -> Result<()> {
    if let Some(p) = path {
        config.set(key, &toml_string(&p.display().to_string()))?;
    }
    Ok(())
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn pretrained(config: &RunConfig) -> Result<Arc<PretrainedVectors>> {
    Ok(Arc::new(match &config.paths.pretrained {
        Some(p) => PretrainedVectors::load(p)?,
        None => {
            log::warn!("no pretrained vectors given; every word uses the unknown vector");
            PretrainedVectors::new(config.encoder.embedding.word_dim)
        }
    }))
}

fn required(p: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    p.clone().ok_or_else(|| Error::InvalidArgument(format!("missing {what} path")))
}

fn types_of(corpus: &[TriggerAnnotatedSentence]) -> Vec<String> {
    TagSet::from_corpus(corpus).types().to_vec()
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

enum Model {
    Baseline(Tagger),
    Tmn(TmnModel),
}

fn load_model(paths: &ModelPaths, config: &RunConfig) -> Result<Model> {
    match &paths.matcher {
        Some(m) => Ok(Model::Tmn(load_tmn(m, &paths.tagger, config.retrieval.clone())?)),
        None => {
            let t = TaggerCheckpoint::load(&paths.tagger)?.restore()?;
            if t.config.use_trigger_attention {
                return Err(Error::InvalidArgument("trigger-enhanced tagger needs --matcher".into()));
            }
            Ok(Model::Baseline(t))
        }
    }
}

fn read_sentences(path: &Path, format: InputFormat, config: &RunConfig) -> Result<Vec<Sentence>> {
    Ok(match format {
        InputFormat::Text => {
            if !path.exists() {
                return Err(Error::MissingFile(path.to_path_buf()));
            }
            parse_plain_text(&std::fs::read_to_string(path)?)?
        }
        InputFormat::Conll => parse_corpus(path, config.scheme)?.into_iter().map(|s| s.sentence).collect(),
    })
}

#[derive(Serialize)]
struct TraceMatch {
    trigger: String,
    entity_type: String,
    distance: f64,
}

#[derive(Serialize)]
struct TraceLine {
    sentence: usize,
    matches: Vec<TraceMatch>,
}

fn run(cli: Cli) -> Result<()> {
    let mut config = load_config(&cli)?;
    match cli.command {
        Command::Stats { files, json } => {
            for f in files {
                let corpus = parse_corpus(&f, config.scheme)?;
                let stats = compute_stats(&corpus);
                if json {
                    println!("{}", serde_json::to_string_pretty(&stats)?);
                    continue;
                }
                println!("{} ({} sentences)", f.display(), corpus.len());
                println!("{:<12} {:>9} {:>9} {:>13} {:>11}", "type", "entities", "triggers", "trig/entity", "trig length");
                for (ty, s) in stats.per_type.iter().chain([(&"total".to_string(), &stats.total)]) {
                    println!(
                        "{:<12} {:>9} {:>9} {:>13.2} {:>11.2}",
                        ty, s.entity_count, s.trigger_count, s.avg_triggers_per_entity, s.avg_trigger_length
                    );
                }
            }
        }
        Command::TrainMatcher { data, out } => {
            config.set("seed", &data.seed.to_string())?;
            set_path(&mut config, "paths.train", Some(&data.train))?;
            set_path(&mut config, "paths.pretrained", data.pretrained.as_deref())?;
            let train = parse_corpus(&data.train, config.scheme)?;
            let instances = reformat(&train);
            let encoder = build_encoder(&train, pretrained(&config)?, &config)?;
            let matcher = Matcher::new(encoder, types_of(&train), config.matcher.clone(), data.seed)?;
            let (matcher, log) = train_stage1(matcher, &instances, &config.stage1, data.seed)?;
            let table = build_trigger_table(&instances, &matcher)?;
            log::info!(
                "stage one: best epoch {} held-out loss {:.4}, {} triggers in table",
                log.best_epoch,
                log.best_heldout_loss,
                table.len()
            );
            MatcherCheckpoint::new(&matcher, &table, config.paths.pretrained.as_deref()).save(&out)?;
        }
        Command::TrainTagger {
            data,
            matcher,
            baseline,
            out,
        } => {
            config.set("seed", &data.seed.to_string())?;
            set_path(&mut config, "paths.train", Some(&data.train))?;
            set_path(&mut config, "paths.pretrained", data.pretrained.as_deref())?;
            let train = parse_corpus(&data.train, config.scheme)?;
            let (tagger, examples) = if baseline {
                let encoder = build_encoder(&train, pretrained(&config)?, &config)?;
                let tc = TaggerConfig {
                    use_trigger_attention: false,
                    ..config.tagger.clone()
                };
                let tagger = Tagger::new(encoder, TagSet::new(types_of(&train)), tc, data.seed);
                (tagger, stage2_examples(&train, None, config.tagger.query))
            } else {
                let (m, table) = MatcherCheckpoint::load(required(&matcher, "matcher")?)?.restore()?;
                if table.entries.iter().any(|e| e.source_sentence >= train.len()) {
                    return Err(Error::InvalidArgument(
                        "trigger table does not belong to this training file".into(),
                    ));
                }
                let tc = TaggerConfig {
                    use_trigger_attention: true,
                    ..config.tagger.clone()
                };
                let tagger = Tagger::from_matcher(&m, TagSet::new(m.types.clone()), tc, data.seed.wrapping_add(1));
                (tagger, stage2_examples(&train, Some(&table), config.tagger.query))
            };
            let (tagger, log) = train_stage2(tagger, &examples, &config.stage2, data.seed)?;
            log::info!("stage two: best epoch {} held-out NLL {:.4}", log.best_epoch, log.best_heldout_nll);
            TaggerCheckpoint::new(&tagger, config.paths.pretrained.as_deref()).save(&out)?;
        }
        Command::Tag {
            model,
            input,
            format,
            out,
            attention,
            trace,
        } => {
            let sentences = read_sentences(&input, format, &config)?;
            let model = load_model(&model, &config)?;
            let mut tags = Vec::with_capacity(sentences.len());
            let mut att = String::new();
            let mut trace_text = String::new();
            for (i, s) in sentences.iter().enumerate() {
                let pred = match &model {
                    Model::Baseline(t) => t.tag_with_query(s, None)?,
                    Model::Tmn(m) => {
                        let (q, matches) = m.query(s)?;
                        let line = TraceLine {
                            sentence: i,
                            matches: matches
                                .iter()
                                .map(|x| TraceMatch {
                                    trigger: x.entry.tokens.join(" "),
                                    entity_type: x.entry.entity_type.clone(),
                                    distance: x.distance,
                                })
                                .collect(),
                        };
                        trace_text.push_str(&serde_json::to_string(&line)?);
                        trace_text.push('\n');
                        m.tagger.tag_with_query(s, Some(&q))?
                    }
                };
                if let Some(a) = &pred.token_attention {
                    if i > 0 {
                        att.push('\n');
                    }
                    for (tok, w) in s.tokens().iter().zip(a) {
                        att.push_str(&format!("{tok}\t{w:.6}\n"));
                    }
                }
                tags.push(pred.tags);
            }
            write_or_print(out.as_deref(), &serialize_conll(&sentences, &tags, config.scheme)?)?;
            if let Some(p) = attention {
                if matches!(model, Model::Baseline(_)) {
                    return Err(Error::InvalidArgument("the baseline has no trigger attention".into()));
                }
                std::fs::write(p, att)?;
            }
            if let Some(p) = trace {
                if matches!(model, Model::Baseline(_)) {
                    return Err(Error::InvalidArgument("the baseline does no retrieval".into()));
                }
                std::fs::write(p, trace_text)?;
            }
        }
        Command::SelfTrain {
            seed,
            matcher,
            tagger,
            train,
            unlabeled,
            format,
            out,
            weak_out,
        } => {
            config.set("seed", &seed.to_string())?;
            let model = load_tmn(&matcher, &tagger, config.retrieval.clone())?;
            let labeled = parse_corpus(&train, config.scheme)?;
            let pool = read_sentences(&unlabeled, format, &config)?;
            let examples = stage2_examples(&labeled, Some(&model.table), config.tagger.query);
            let (model, log, weak) = self_train(
                model,
                &examples,
                &pool,
                &config.self_train,
                &config.self_train_schedule,
                seed,
            )?;
            for r in &log.rounds {
                log::info!(
                    "round {}: promoted {} of {} (mean confidence {:.4} selected, {:.4} pool)",
                    r.round,
                    r.selected.len(),
                    r.pool_size,
                    r.mean_selected_confidence,
                    r.mean_pool_confidence
                );
            }
            TaggerCheckpoint::new(&model.tagger, None).save(&out)?;
            if let Some(p) = weak_out {
                let corpus = weak
                    .into_iter()
                    .map(|w| TriggerAnnotatedSentence::untriggered(w.sentence, w.tags))
                    .collect::<Result<Vec<_>>>()?;
                write_corpus(p, &corpus, config.scheme)?;
            }
        }
        Command::Evaluate { model, test, json } => {
            let test = parse_corpus(&test, config.scheme)?;
            let r = match load_model(&model, &config)? {
                Model::Baseline(t) => evaluate_baseline(&t, &test)?,
                Model::Tmn(m) => evaluate_tmn(&m, &test)?,
            };
            if json {
                println!("{}", serde_json::to_string_pretty(&r)?);
            } else {
                println!("precision {:.4} recall {:.4} f1 {:.4}", r.precision, r.recall, r.f1);
                for (ty, c) in &r.per_type {
                    println!("  {ty:<10} precision {:.4} recall {:.4} f1 {:.4}", c.precision(), c.recall(), c.f1());
                }
            }
        }
        Command::Budget {
            seed,
            train,
            test,
            pretrained: vectors,
            synthetic,
            out,
        } => {
            let n = config.budget.seeds.len().max(1) as u64;
            let seeds: Vec<String> = (seed..seed + n).map(|s| s.to_string()).collect();
            config.set("seed", &seed.to_string())?;
            config.set("budget.seeds", &format!("[{}]", seeds.join(", ")))?;
            let (train, test, types, vectors) = if synthetic {
                let data = generate_synthetic(&config.synthetic)?;
                (data.train, data.test, data.types, Arc::new(data.pretrained))
            } else {
                set_path(&mut config, "paths.train", train.as_deref())?;
                set_path(&mut config, "paths.test", test.as_deref())?;
                set_path(&mut config, "paths.pretrained", vectors.as_deref())?;
                let tr = parse_corpus(required(&config.paths.train, "train")?, config.scheme)?;
                let te = parse_corpus(required(&config.paths.test, "test")?, config.scheme)?;
                let types = types_of(&tr);
                (tr, te, types, pretrained(&config)?)
            };
            set_path(&mut config, "paths.output", Some(&out))?;
            let results = run_budget_experiment(&train, &test, &types, vectors, &config)?;
            let csv = results_csv(&results);
            let sidecar = write_results(&out, &csv, &config)?;
            print!("{csv}");
            log::info!("configuration written to {}", sidecar.display());
        }
        Command::SynthGen { seed, out_dir } => {
            if let Some(s) = seed {
                config.set("synthetic.seed", &s.to_string())?;
            }
            let data = generate_synthetic(&config.synthetic)?;
            std::fs::create_dir_all(&out_dir)?;
            write_corpus(out_dir.join("train.txt"), &data.train, config.scheme)?;
            write_corpus(out_dir.join("test.txt"), &data.test, config.scheme)?;
            std::fs::write(out_dir.join("vectors.txt"), data.pretrained.to_text())?;
            config.save(out_dir.join("config.toml"))?;
            println!(
                "{} train, {} test sentences, {} word vectors in {}",
                data.train.len(),
                data.test.len(),
                data.pretrained.len(),
                out_dir.display()
            );
        }
        Command::CostCurves {
            results,
            multipliers,
            out,
        } => {
            if !results.exists() {
                return Err(Error::MissingFile(results));
            }
            let rows = parse_results_csv(&std::fs::read_to_string(&results)?)?;
            let m = multipliers.unwrap_or_else(|| config.budget.effort_multipliers.clone());
            write_or_print(out.as_deref(), &emit_cost_curves(&rows, &m)?)?;
        }
    }
    Ok(())
}
