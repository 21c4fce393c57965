//! BIO / BIOES tags, span extraction and scheme conversion.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Scheme {
    Bio,
    Bioes,
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "BIO" | "IOB2" => Ok(Scheme::Bio),
            "BIOES" | "IOBES" => Ok(Scheme::Bioes),
            other => Err(Error::InvalidArgument(format!("unknown tagging scheme `{other}`"))),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Bio => "BIO",
            Scheme::Bioes => "BIOES",
        })
    }
}

/// One token-level entity label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    Outside,
    Begin(String),
    Inside(String),
    End(String),
    Single(String),
}

impl Tag {
    pub fn entity_type(&self) -> Option<&str> {
        match self {
            Tag::Outside => None,
            Tag::Begin(t) | Tag::Inside(t) | Tag::End(t) | Tag::Single(t) => Some(t),
        }
    }

    pub fn is_outside(&self) -> bool {
        matches!(self, Tag::Outside)
    }

    /// True for the tag that opens an entity under either scheme.
    pub fn is_head(&self) -> bool {
        matches!(self, Tag::Begin(_) | Tag::Single(_))
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Outside => f.write_str("O"),
            Tag::Begin(t) => write!(f, "B-{t}"),
            Tag::Inside(t) => write!(f, "I-{t}"),
            Tag::End(t) => write!(f, "E-{t}"),
            Tag::Single(t) => write!(f, "S-{t}"),
        }
    }
}

impl FromStr for Tag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "O" {
            return Ok(Tag::Outside);
        }
        let (prefix, ty) = s
            .split_once('-')
            .ok_or_else(|| Error::InvalidArgument(format!("malformed tag `{s}`")))?;
        if ty.is_empty() {
            return Err(Error::InvalidArgument(format!("tag `{s}` has no type")));
        }
        let ty = ty.to_string();
        match prefix {
            "B" => Ok(Tag::Begin(ty)),
            "I" => Ok(Tag::Inside(ty)),
            "E" => Ok(Tag::End(ty)),
            "S" => Ok(Tag::Single(ty)),
            _ => Err(Error::InvalidArgument(format!("malformed tag `{s}`"))),
        }
    }
}

/// A typed entity span over token positions `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl Span {
    pub fn new(start: usize, end: usize, label: impl Into<String>) -> Self {
        Self {
            start,
            end,
            label: label.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, i: usize) -> bool {
        self.start <= i && i < self.end
    }
}

/// A tag sequence together with the scheme it is written in.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TagSequence {
    pub tags: Vec<Tag>,
    pub scheme: Scheme,
}

impl TagSequence {
    /// Validates `tags` against `scheme`.
    pub fn new(tags: Vec<Tag>, scheme: Scheme) -> Result<Self> {
        check_well_formed(&tags, scheme).map_err(Error::InvalidArgument)?;
        Ok(Self { tags, scheme })
    }

    pub fn parse(labels: &[&str], scheme: Scheme) -> Result<Self> {
        let tags = labels.iter().map(|l| l.parse()).collect::<Result<Vec<Tag>>>()?;
        Self::new(tags, scheme)
    }

    pub fn outside(n: usize, scheme: Scheme) -> Self {
        Self {
            tags: vec![Tag::Outside; n],
            scheme,
        }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn spans(&self) -> Vec<Span> {
        spans_from_tags(self)
    }

    /// Renders `spans` (non-overlapping, sorted or not) in `scheme`.
    pub fn from_spans(n: usize, spans: &[Span], scheme: Scheme) -> Result<Self> {
        let mut tags = vec![Tag::Outside; n];
        let mut sorted: Vec<&Span> = spans.iter().collect();
        sorted.sort();
        let mut last_end = 0;
        for sp in sorted {
            if sp.is_empty() || sp.end > n || sp.start < last_end {
                return Err(Error::InvalidArgument(format!(
                    "span {}..{} invalid or overlapping in sequence of {n}",
                    sp.start, sp.end
                )));
            }
            last_end = sp.end;
            let l = &sp.label;
            match scheme {
                Scheme::Bio => {
                    tags[sp.start] = Tag::Begin(l.clone());
                    for t in &mut tags[sp.start + 1..sp.end] {
                        *t = Tag::Inside(l.clone());
                    }
                }
                Scheme::Bioes => {
                    if sp.len() == 1 {
                        tags[sp.start] = Tag::Single(l.clone());
                    } else {
                        tags[sp.start] = Tag::Begin(l.clone());
                        for t in &mut tags[sp.start + 1..sp.end - 1] {
                            *t = Tag::Inside(l.clone());
                        }
                        tags[sp.end - 1] = Tag::End(l.clone());
                    }
                }
            }
        }
        Ok(Self { tags, scheme })
    }

    pub fn to_scheme(&self, scheme: Scheme) -> Self {
        if scheme == self.scheme {
            return self.clone();
        }
        Self::from_spans(self.len(), &self.spans(), scheme).expect("spans of a valid sequence render")
    }

    /// Keeps only the span starting at `start`; every other entity becomes O.
    pub fn keep_only(&self, start: usize) -> Self {
        let keep: Vec<Span> = self.spans().into_iter().filter(|s| s.start == start).collect();
        Self::from_spans(self.len(), &keep, self.scheme).expect("subset of valid spans renders")
    }

    pub fn labels(&self) -> Vec<String> {
        self.tags.iter().map(Tag::to_string).collect()
    }
}

/// Maximal typed spans of a well-formed sequence.
pub fn spans_from_tags(seq: &TagSequence) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, &str)> = None;
    for (i, tag) in seq.tags.iter().enumerate() {
        match tag {
            Tag::Outside => {
                if let Some((s, l)) = open.take() {
                    spans.push(Span::new(s, i, l));
                }
            }
            Tag::Begin(t) => {
                if let Some((s, l)) = open.take() {
                    spans.push(Span::new(s, i, l));
                }
                open = Some((i, t));
            }
            Tag::Inside(t) => match open {
                Some((_, l)) if l == t => {}
                _ => {
                    if let Some((s, l)) = open.take() {
                        spans.push(Span::new(s, i, l));
                    }
                    open = Some((i, t));
                }
            },
            Tag::End(t) => {
                let s = match open.take() {
                    Some((s, l)) if l == t => s,
                    Some((s, l)) => {
                        spans.push(Span::new(s, i, l));
                        i
                    }
                    None => i,
                };
                spans.push(Span::new(s, i + 1, t.as_str()));
            }
            Tag::Single(t) => {
                if let Some((s, l)) = open.take() {
                    spans.push(Span::new(s, i, l));
                }
                spans.push(Span::new(i, i + 1, t.as_str()));
            }
        }
    }
    if let Some((s, l)) = open {
        spans.push(Span::new(s, seq.tags.len(), l));
    }
    spans
}

/// Returns a description of the first violation, if any.
pub fn check_well_formed(tags: &[Tag], scheme: Scheme) -> std::result::Result<(), String> {
    let mut prev: Option<&Tag> = None;
    for (i, tag) in tags.iter().enumerate() {
        let continues = |t: &str| match (scheme, prev) {
            (Scheme::Bio, Some(Tag::Begin(p) | Tag::Inside(p))) => p == t,
            (Scheme::Bioes, Some(Tag::Begin(p) | Tag::Inside(p))) => p == t,
            _ => false,
        };
        let prev_open = matches!(prev, Some(Tag::Begin(_) | Tag::Inside(_)));
        match (scheme, tag) {
            (_, Tag::Outside) | (_, Tag::Begin(_)) | (Scheme::Bioes, Tag::Single(_)) => {
                if scheme == Scheme::Bioes && prev_open {
                    return Err(format!("position {i}: `{tag}` follows an unterminated entity"));
                }
            }
            (_, Tag::Inside(t)) => {
                if !continues(t) {
                    return Err(format!("position {i}: `{tag}` without a preceding B-{t}/I-{t}"));
                }
            }
            (Scheme::Bioes, Tag::End(t)) => {
                if !continues(t) {
                    return Err(format!("position {i}: `{tag}` without a preceding B-{t}/I-{t}"));
                }
            }
            (Scheme::Bio, Tag::End(_) | Tag::Single(_)) => {
                return Err(format!("position {i}: `{tag}` is not a BIO tag"));
            }
        }
        prev = Some(tag);
    }
    if scheme == Scheme::Bioes && matches!(prev, Some(Tag::Begin(_) | Tag::Inside(_))) {
        return Err("sequence ends inside an entity".into());
    }
    Ok(())
}

/// Rewrites an arbitrary BIOES-alphabet sequence into a well-formed one:
/// orphan `I-X`/`E-X` open a new entity, unterminated entities are closed.
pub fn repair_bioes(tags: &[Tag]) -> TagSequence {
    let mut out: Vec<Tag> = Vec::with_capacity(tags.len());
    let mut open: Option<String> = None;

    fn close(out: &mut [Tag]) {
        if let Some(last) = out.last_mut() {
            *last = match std::mem::replace(last, Tag::Outside) {
                Tag::Begin(t) => Tag::Single(t),
                Tag::Inside(t) => Tag::End(t),
                other => other,
            };
        }
    }

    for tag in tags {
        match tag {
            Tag::Outside => {
                if open.take().is_some() {
                    close(&mut out);
                }
                out.push(Tag::Outside);
            }
            Tag::Begin(t) => {
                if open.take().is_some() {
                    close(&mut out);
                }
                open = Some(t.clone());
                out.push(Tag::Begin(t.clone()));
            }
            Tag::Inside(t) => {
                if open.as_deref() == Some(t.as_str()) {
                    out.push(Tag::Inside(t.clone()));
                } else {
                    if open.take().is_some() {
                        close(&mut out);
                    }
                    open = Some(t.clone());
                    out.push(Tag::Begin(t.clone()));
                }
            }
            Tag::End(t) => {
                if open.as_deref() == Some(t.as_str()) {
                    open = None;
                    out.push(Tag::End(t.clone()));
                } else {
                    if open.take().is_some() {
                        close(&mut out);
                    }
                    out.push(Tag::Single(t.clone()));
                }
            }
            Tag::Single(t) => {
                if open.take().is_some() {
                    close(&mut out);
                }
                out.push(Tag::Single(t.clone()));
            }
        }
    }
    if open.is_some() {
        close(&mut out);
    }
    TagSequence {
        tags: out,
        scheme: Scheme::Bioes,
    }
}
