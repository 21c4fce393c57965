//! Single TOML configuration covering every stage, with `key=value`
//! overrides addressed by dotted path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::Scheme;
use crate::encoder::{EmbeddingConfig, EncoderConfig};
use crate::error::{Error, Result};
use crate::inference::{RetrievalConfig, SelfTrainConfig};
use crate::matcher::MatchLossConfig;
use crate::optim::{AdamConfig, Schedule};
use crate::tagger::TaggerConfig;

use super::budget::Variant;
use super::synthetic::SyntheticSpec;

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Whitespace-separated `word v₁ … v_d` lines.
    pub pretrained: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetConfig {
    pub fractions: Vec<f64>,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub effort_multipliers: Vec<f64>,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self {
            fractions: vec![0.05, 0.1, 0.2, 0.3, 0.4, 0.5],
            variants: vec![Variant::Baseline, Variant::Tmn],
            seeds: vec![1, 2, 3],
            effort_multipliers: vec![1.0, 1.5, 2.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub version: String,
    pub seed: u64,
    /// Scheme of input files.
    pub scheme: Scheme,
    pub encoder: EncoderConfig,
    pub matcher: MatchLossConfig,
    pub tagger: TaggerConfig,
    pub stage1: Schedule,
    pub stage2: Schedule,
    pub retrieval: RetrievalConfig,
    pub self_train: SelfTrainConfig,
    /// Continued stage-two training inside each self-training round.
    pub self_train_schedule: Schedule,
    pub budget: BudgetConfig,
    pub synthetic: SyntheticSpec,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CODE_VERSION.to_string(),
            seed: 1,
            scheme: Scheme::Bio,
            encoder: EncoderConfig::default(),
            matcher: MatchLossConfig::default(),
            tagger: TaggerConfig::default(),
            stage1: Schedule::default(),
            stage2: Schedule::default(),
            retrieval: RetrievalConfig::default(),
            self_train: SelfTrainConfig::default(),
            self_train_schedule: Schedule {
                epochs: 3,
                ..Schedule::default()
            },
            budget: BudgetConfig::default(),
            synthetic: SyntheticSpec::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    /// Sizes for the synthetic language: narrower layers, shorter schedules.
    pub fn synthetic() -> Self {
        let spec = SyntheticSpec::default();
        let schedule = |epochs, patience| Schedule {
            epochs,
            batch_size: 10,
            patience,
            holdout_fraction: 0.1,
            adam: AdamConfig {
                learning_rate: 0.01,
                ..AdamConfig::default()
            },
        };
        Self {
            encoder: EncoderConfig {
                embedding: EmbeddingConfig {
                    word_dim: spec.word_dim,
                    char_dim: 16,
                    char_conv_window: 3,
                    char_conv_filters: 1,
                    dropout_rate: 0.25,
                    ..EmbeddingConfig::default()
                },
                hidden_size: 24,
                attention_hidden: 24,
            },
            tagger: TaggerConfig {
                attention_hidden: 24,
                ..TaggerConfig::default()
            },
            stage1: schedule(40, 10),
            stage2: schedule(80, 10),
            self_train_schedule: schedule(4, 4),
            budget: BudgetConfig {
                fractions: vec![0.1, 0.2, 0.3],
                ..BudgetConfig::default()
            },
            synthetic: spec,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.embedding.validate()?;
        self.matcher.validate()?;
        self.self_train.validate()?;
        if self.retrieval.k == 0 {
            return Err(Error::InvalidArgument("retrieval k must be positive".into()));
        }
        if self.budget.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::InvalidArgument("budget fractions must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    /// Sets one dotted key, e.g. `stage1.epochs=5` or
    /// `budget.fractions=[0.1, 0.2]`. Values are read as TOML literals and
    /// fall back to plain strings.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut root = toml::Value::try_from(&*self)?;
        let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        let (parent, last) = match key.rsplit_once('.') {
            Some((p, l)) => (Some(p), l),
            None => (None, key),
        };
        let unknown = || Error::InvalidArgument(format!("unknown configuration key `{key}`"));
        let mut table = root.as_table_mut().expect("config is a table");
        for part in parent.into_iter().flat_map(|p| p.split('.')) {
            table = table.get_mut(part).and_then(toml::Value::as_table_mut).ok_or_else(unknown)?;
        }
        let parsed = match (table.get(last), parsed) {
            (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (_, p) => p,
        };
        // absent optional keys are inserted, then checked for survival below
        table.insert(last.to_string(), parsed);
        let updated: Self = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidArgument(format!("`{key}={value}`: {e}")))?;
        let mut check = toml::Value::try_from(&updated)?;
        for part in key.split('.') {
            check = check.as_table_mut().and_then(|t| t.remove(part)).ok_or_else(unknown)?;
        }
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    /// Applies `key=value` strings in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("override `{o}` is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }
}
