//! Column format for trigger-annotated corpora.
//!
//! ```text
//! #ENT 0 7 RES
//! #ENT 1 7 RES
//! We      O       _
//! had     O       T-0
//! ...
//! Rumble  B-RES   _
//! Fish    I-RES   _
//! where   O       T-1
//! ```
//!
//! Sentences are separated by blank lines. Each token line holds
//! `TOKEN<TAB>TAG<TAB>TRIGGERS` where `TRIGGERS` is `_` or a comma-separated
//! list of `T-<group>` labels. Every group is declared once per sentence with
//! `#ENT <group> <entity-index> <TYPE>`, the entity index being 1-based.
//! Two-column CoNLL files (no trigger column, no headers) are also accepted,
//! and `-DOCSTART-` lines are skipped.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use super::scheme::{Scheme, Tag, TagSequence};
use super::{Sentence, Trigger, TriggerAnnotatedSentence};
use crate::error::{Error, Result};

/// Reads a corpus written in `scheme`; tags come back in BIOES.
pub fn parse_corpus(path: impl AsRef<Path>, scheme: Scheme) -> Result<Vec<TriggerAnnotatedSentence>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    parse_corpus_str(&text, scheme, &path.display().to_string())
}

struct Pending {
    first_line: usize,
    headers: BTreeMap<String, (usize, String, usize)>,
    header_order: Vec<String>,
    tokens: Vec<String>,
    tags: Vec<Tag>,
    trigger_words: BTreeMap<String, BTreeSet<usize>>,
}

impl Pending {
    fn new(line: usize) -> Self {
        Self {
            first_line: line,
            headers: BTreeMap::new(),
            header_order: Vec::new(),
            tokens: Vec::new(),
            tags: Vec::new(),
            trigger_words: BTreeMap::new(),
        }
    }

    fn is_blank(&self) -> bool {
        self.tokens.is_empty() && self.headers.is_empty()
    }
}

pub fn parse_corpus_str(text: &str, scheme: Scheme, source: &str) -> Result<Vec<TriggerAnnotatedSentence>> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: source.to_string(),
        line,
        message,
    };

    let mut out = Vec::new();
    let mut cur = Pending::new(1);
    let mut skipping_docstart = false;

    let finish = |cur: Pending, out: &mut Vec<TriggerAnnotatedSentence>| -> Result<()> {
        if cur.is_blank() {
            return Ok(());
        }
        if cur.tokens.is_empty() {
            return Err(parse_err(cur.first_line, "entity header without tokens".into()));
        }
        let idx = out.len();
        let invalid = |message: String| Error::Validation { sentence: idx, message };
        let sentence = Sentence::new(cur.tokens).map_err(|e| invalid(e.to_string()))?;
        let tags = TagSequence::new(cur.tags, scheme).map_err(|e| invalid(e.to_string()))?;
        let mut triggers = Vec::new();
        for g in &cur.header_order {
            let (entity_1based, ty, line) = &cur.headers[g];
            let words = cur.trigger_words.get(g).cloned().unwrap_or_default();
            if *entity_1based == 0 || *entity_1based > sentence.len() {
                return Err(invalid(format!("line {line}: entity index {entity_1based} out of range")));
            }
            let entity_index = entity_1based - 1;
            match tags.tags[entity_index].entity_type() {
                Some(t) if t == ty && tags.tags[entity_index].is_head() => {}
                _ => {
                    return Err(invalid(format!(
                        "line {line}: group {g} declares a {ty} entity at {entity_1based}, found `{}`",
                        tags.tags[entity_index]
                    )))
                }
            }
            triggers.push(Trigger {
                group: g.clone(),
                word_indices: words,
                entity_index,
            });
        }
        if let Some(g) = cur.trigger_words.keys().find(|g| !cur.headers.contains_key(*g)) {
            return Err(invalid(format!("trigger group T-{g} has no #ENT header")));
        }
        let s = TriggerAnnotatedSentence {
            sentence,
            tags: tags.to_scheme(Scheme::Bioes),
            triggers,
        };
        s.validate().map_err(invalid)?;
        out.push(s);
        Ok(())
    };

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            skipping_docstart = false;
            let done = std::mem::replace(&mut cur, Pending::new(lineno + 1));
            finish(done, &mut out)?;
            continue;
        }
        if skipping_docstart {
            continue;
        }
        if let Some(rest) = line.strip_prefix("#ENT") {
            if !cur.tokens.is_empty() {
                return Err(parse_err(lineno, "#ENT header after token lines".into()));
            }
            let f: Vec<&str> = rest.split_whitespace().collect();
            if f.len() != 3 {
                return Err(parse_err(lineno, "expected `#ENT <group> <index> <TYPE>`".into()));
            }
            let idx: usize = f[1]
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad entity index `{}`", f[1])))?;
            if cur.headers.insert(f[0].to_string(), (idx, f[2].to_string(), lineno)).is_some() {
                return Err(parse_err(lineno, format!("group {} declared twice", f[0])));
            }
            cur.header_order.push(f[0].to_string());
            continue;
        }
        let cols: Vec<&str> = if line.contains('\t') {
            line.split('\t').collect()
        } else {
            line.split_whitespace().collect()
        };
        if cols.first() == Some(&"-DOCSTART-") {
            skipping_docstart = true;
            continue;
        }
        if cols.len() < 2 || cols.len() > 3 {
            return Err(parse_err(lineno, format!("expected 2 or 3 columns, found {}", cols.len())));
        }
        let tag: Tag = cols[1].parse().map_err(|e: Error| parse_err(lineno, e.to_string()))?;
        let pos = cur.tokens.len();
        if cols.len() == 3 && cols[2] != "_" {
            for label in cols[2].split(',') {
                let g = label
                    .strip_prefix("T-")
                    .filter(|g| !g.is_empty())
                    .ok_or_else(|| parse_err(lineno, format!("bad trigger label `{label}`")))?;
                cur.trigger_words.entry(g.to_string()).or_default().insert(pos);
            }
        }
        cur.tokens.push(cols[0].to_string());
        cur.tags.push(tag);
    }
    finish(cur, &mut out)?;
    Ok(out)
}

/// Writes `corpus` with tags rendered in `scheme`.
pub fn serialize_corpus(corpus: &[TriggerAnnotatedSentence], scheme: Scheme) -> String {
    let mut s = String::new();
    for (k, sent) in corpus.iter().enumerate() {
        if k > 0 {
            s.push('\n');
        }
        let tags = sent.tags.to_scheme(scheme);
        for t in &sent.triggers {
            let ty = tags.tags[t.entity_index].entity_type().unwrap_or("O");
            let _ = writeln!(s, "#ENT {} {} {}", t.group, t.entity_index + 1, ty);
        }
        for (i, (tok, tag)) in sent.sentence.tokens().iter().zip(&tags.tags).enumerate() {
            let groups: Vec<String> = sent
                .triggers
                .iter()
                .filter(|t| t.word_indices.contains(&i))
                .map(|t| format!("T-{}", t.group))
                .collect();
            let trig = if groups.is_empty() { "_".to_string() } else { groups.join(",") };
            let _ = writeln!(s, "{tok}\t{tag}\t{trig}");
        }
    }
    s
}

/// Two-column `TOKEN<TAB>TAG` output, one blank line between sentences.
pub fn serialize_conll(sentences: &[Sentence], tags: &[TagSequence], scheme: Scheme) -> Result<String> {
    if sentences.len() != tags.len() {
        return Err(Error::InvalidArgument(format!("{} sentences but {} tag sequences", sentences.len(), tags.len())));
    }
    let mut s = String::new();
    for (k, (sent, seq)) in sentences.iter().zip(tags).enumerate() {
        if sent.len() != seq.len() {
            return Err(Error::InvalidArgument(format!("sentence {k}: {} tokens, {} tags", sent.len(), seq.len())));
        }
        if k > 0 {
            s.push('\n');
        }
        for (tok, tag) in sent.tokens().iter().zip(&seq.to_scheme(scheme).tags) {
            let _ = writeln!(s, "{tok}\t{tag}");
        }
    }
    Ok(s)
}

/// One sentence per non-empty line, tokens separated by whitespace.
pub fn parse_plain_text(text: &str) -> Result<Vec<Sentence>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Sentence::new(l.split_whitespace().map(str::to_string).collect()))
        .collect()
}

pub fn write_corpus(path: impl AsRef<Path>, corpus: &[TriggerAnnotatedSentence], scheme: Scheme) -> Result<()> {
    std::fs::write(path, serialize_corpus(corpus, scheme))?;
    Ok(())
}
