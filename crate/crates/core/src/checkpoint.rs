//! JSON checkpoints for trained matchers and taggers.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::encoder::{CharVocab, Encoder, EncoderConfig, PretrainedVectors};
use crate::error::{Error, Result};
use crate::inference::{RetrievalConfig, TmnModel};
use crate::matcher::{MatchLossConfig, Matcher, TriggerTable};
use crate::params::{ParamArchive, ParamStore};
use crate::tagger::{TagSet, Tagger, TaggerConfig};

pub const FORMAT_VERSION: u32 = 1;

/// Where the frozen word vectors come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretrainedSource {
    Path(PathBuf),
    Inline(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderRecord {
    pub config: EncoderConfig,
    pub chars: CharVocab,
    pub pretrained: PretrainedSource,
}

impl EncoderRecord {
    /// Inlines the vectors unless `path` is given.
    pub fn new(encoder: &Encoder, path: Option<&Path>) -> Self {
        Self {
            config: encoder.config.clone(),
            chars: encoder.chars.clone(),
            pretrained: match path {
                Some(p) => PretrainedSource::Path(p.to_path_buf()),
                None => PretrainedSource::Inline(encoder.pretrained.to_text()),
            },
        }
    }

    pub fn restore(&self) -> Result<Encoder> {
        let pretrained = match &self.pretrained {
            PretrainedSource::Path(p) => PretrainedVectors::load(p)?,
            PretrainedSource::Inline(t) if t.trim().is_empty() => PretrainedVectors::new(self.config.embedding.word_dim),
            PretrainedSource::Inline(t) => PretrainedVectors::parse(t, "checkpoint")?,
        };
        let mut chars = self.chars.clone();
        chars.reindex();
        Encoder::new(self.config.clone(), chars, Arc::new(pretrained))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatcherCheckpoint {
    pub format_version: u32,
    pub encoder: EncoderRecord,
    pub types: Vec<String>,
    pub loss: MatchLossConfig,
    pub params: ParamArchive,
    pub table: TriggerTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggerCheckpoint {
    pub format_version: u32,
    pub encoder: EncoderRecord,
    pub tagset: TagSet,
    pub config: TaggerConfig,
    pub params: ParamArchive,
}

fn check_version(v: u32, what: &str) -> Result<()> {
    if v != FORMAT_VERSION {
        return Err(Error::Format(format!("{what} checkpoint version {v}, expected {FORMAT_VERSION}")));
    }
    Ok(())
}

fn read(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(std::fs::read_to_string(path)?)
}

impl MatcherCheckpoint {
    pub fn new(matcher: &Matcher, table: &TriggerTable, pretrained_path: Option<&Path>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            encoder: EncoderRecord::new(&matcher.encoder, pretrained_path),
            types: matcher.types.clone(),
            loss: matcher.loss.clone(),
            params: matcher.params.to_archive(),
            table: table.clone(),
        }
    }

    pub fn restore(&self) -> Result<(Matcher, TriggerTable)> {
        check_version(self.format_version, "matcher")?;
        let matcher = Matcher {
            encoder: self.encoder.restore()?,
            types: self.types.clone(),
            loss: self.loss.clone(),
            params: ParamStore::from_archive(&self.params)?,
        };
        Ok((matcher, self.table.clone()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let c: Self = serde_json::from_str(&read(path.as_ref())?)?;
        check_version(c.format_version, "matcher")?;
        Ok(c)
    }
}

impl TaggerCheckpoint {
    pub fn new(tagger: &Tagger, pretrained_path: Option<&Path>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            encoder: EncoderRecord::new(&tagger.encoder, pretrained_path),
            tagset: tagger.tagset.clone(),
            config: tagger.config.clone(),
            params: tagger.params.to_archive(),
        }
    }

    pub fn restore(&self) -> Result<Tagger> {
        check_version(self.format_version, "tagger")?;
        Ok(Tagger {
            encoder: self.encoder.restore()?,
            tagset: self.tagset.clone(),
            config: self.config.clone(),
            params: ParamStore::from_archive(&self.params)?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let c: Self = serde_json::from_str(&read(path.as_ref())?)?;
        check_version(c.format_version, "tagger")?;
        Ok(c)
    }
}

/// Reassembles a trigger-enhanced model from its two checkpoints.
pub fn load_tmn(matcher: impl AsRef<Path>, tagger: impl AsRef<Path>, retrieval: RetrievalConfig) -> Result<TmnModel> {
    let (matcher, table) = MatcherCheckpoint::load(matcher)?.restore()?;
    let tagger = TaggerCheckpoint::load(tagger)?.restore()?;
    if !tagger.config.use_trigger_attention {
        return Err(Error::InvalidArgument("tagger checkpoint has no trigger attention".into()));
    }
    Ok(TmnModel {
        matcher,
        table,
        tagger,
        retrieval,
    })
}
