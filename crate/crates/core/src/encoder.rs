//! Token encoder shared by every stage: word vectors concatenated with
//! character-CNN features, a bidirectional LSTM on top, and self-attentive
//! pooling of hidden rows into a single vector.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, Tape, Var};
use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::params::ParamStore;

/// Parameter-group names.
pub mod names {
    pub const UNK_WORD: &str = "emb.unk";
    pub const CHAR_EMB: &str = "emb.char";
    pub const CHAR_CONV_W: &str = "emb.char_conv.w";
    pub const CHAR_CONV_B: &str = "emb.char_conv.b";
    pub const LSTM_FW_WX: &str = "lstm.fw.wx";
    pub const LSTM_FW_WH: &str = "lstm.fw.wh";
    pub const LSTM_FW_B: &str = "lstm.fw.b";
    pub const LSTM_BW_WX: &str = "lstm.bw.wx";
    pub const LSTM_BW_WH: &str = "lstm.bw.wh";
    pub const LSTM_BW_B: &str = "lstm.bw.b";
    pub const POOL_W1: &str = "pool.w1";
    pub const POOL_W2: &str = "pool.w2";

    /// Groups owned by the embedding layer and the BLSTM.
    pub const ENCODER: [&str; 10] = [
        UNK_WORD,
        CHAR_EMB,
        CHAR_CONV_W,
        CHAR_CONV_B,
        LSTM_FW_WX,
        LSTM_FW_WH,
        LSTM_FW_B,
        LSTM_BW_WX,
        LSTM_BW_WH,
        LSTM_BW_B,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownTokenPolicy {
    /// One trainable vector shared by every out-of-vocabulary word.
    Learned,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub word_dim: usize,
    pub char_dim: usize,
    pub char_conv_window: usize,
    pub char_conv_filters: usize,
    pub unknown_token_policy: UnknownTokenPolicy,
    pub dropout_rate: f64,
    /// Training-time chance of reading a known word as unknown, so the
    /// learned unknown vector sees gradient.
    pub unk_replacement_rate: f64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            word_dim: 100,
            char_dim: 30,
            char_conv_window: 3,
            char_conv_filters: 30,
            unknown_token_policy: UnknownTokenPolicy::Learned,
            dropout_rate: 0.5,
            unk_replacement_rate: 0.05,
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.word_dim == 0 || self.char_dim == 0 || self.char_conv_window == 0 || self.char_conv_filters == 0 {
            return Err(Error::InvalidArgument("embedding dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if !(0.0..1.0).contains(&self.unk_replacement_rate) {
            return Err(Error::InvalidArgument(format!(
                "unknown replacement rate {} outside [0, 1)",
                self.unk_replacement_rate
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.word_dim + self.char_conv_filters
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub embedding: EmbeddingConfig,
    /// BLSTM hidden size per direction.
    pub hidden_size: usize,
    /// Rows of the pooling matrix `W₁`.
    pub attention_hidden: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            embedding: EmbeddingConfig::default(),
            hidden_size: 100,
            attention_hidden: 100,
        }
    }
}

impl EncoderConfig {
    /// Width of a hidden row (both directions).
    pub fn hidden_width(&self) -> usize {
        2 * self.hidden_size
    }
}

/// Frozen external word vectors.
#[derive(Debug, Clone, Default)]
pub struct PretrainedVectors {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl PretrainedVectors {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
        }
    }

    /// Reads `word v₁ … v_d` lines. The first line fixes `d`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut out: Option<Self> = None;
        for (i, line) in text.lines().enumerate() {
            let mut fields = line.split(' ').filter(|f| !f.is_empty());
            let Some(word) = fields.next() else { continue };
            let v = fields
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    path: source.into(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
            let table = out.get_or_insert_with(|| Self::new(v.len()));
            if v.len() != table.dim || v.is_empty() {
                return Err(Error::Parse {
                    path: source.into(),
                    line: i + 1,
                    message: format!("expected {} values, found {}", table.dim, v.len()),
                });
            }
            table.vectors.insert(word.to_string(), v);
        }
        out.ok_or_else(|| Error::Parse {
            path: source.into(),
            line: 0,
            message: "no vectors".into(),
        })
    }

    pub fn insert(&mut self, word: impl Into<String>, v: Vec<f64>) {
        assert_eq!(v.len(), self.dim, "vector width");
        self.vectors.insert(word.into(), v);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Exact lookup, then lower-cased.
    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors
            .get(word)
            .or_else(|| self.vectors.get(&word.to_lowercase()))
            .map(Vec::as_slice)
    }

    /// Writes the table in the text format `load` reads, sorted by word.
    pub fn to_text(&self) -> String {
        let mut words: Vec<&String> = self.vectors.keys().collect();
        words.sort();
        let mut s = String::new();
        for w in words {
            s.push_str(w);
            for x in &self.vectors[w] {
                s.push(' ');
                s.push_str(&x.to_string());
            }
            s.push('\n');
        }
        s
    }
}

/// Character inventory built from the training split. Index 0 is reserved
/// for characters never seen in training.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CharVocab {
    chars: Vec<char>,
    #[serde(skip)]
    index: HashMap<char, usize>,
}

impl CharVocab {
    pub fn build<'a, I: IntoIterator<Item = &'a Sentence>>(sentences: I) -> Self {
        let set: BTreeSet<char> = sentences
            .into_iter()
            .flat_map(|s| s.tokens().iter().flat_map(|t| t.chars()))
            .collect();
        Self::from_chars(set.into_iter().collect())
    }

    pub fn from_chars(chars: Vec<char>) -> Self {
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i + 1)).collect();
        Self { chars, index }
    }

    /// Rebuilds the lookup after deserialisation.
    pub fn reindex(&mut self) {
        self.index = self.chars.iter().enumerate().map(|(i, &c)| (c, i + 1)).collect();
    }

    /// Number of rows in the character embedding table.
    pub fn size(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn id(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(0)
    }
}

/// Whether dropout is active.
pub enum Mode<'a> {
    Train(&'a mut ChaCha8Rng),
    Eval,
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Configuration plus vocabularies needed to run the encoder; parameters
/// live in a separate [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub chars: CharVocab,
    pub pretrained: Arc<PretrainedVectors>,
}

impl Encoder {
    pub fn new(config: EncoderConfig, chars: CharVocab, pretrained: Arc<PretrainedVectors>) -> Result<Self> {
        config.embedding.validate()?;
        if pretrained.dim() != config.embedding.word_dim {
            return Err(Error::Shape(format!(
                "pretrained vectors have width {}, configuration expects {}",
                pretrained.dim(),
                config.embedding.word_dim
            )));
        }
        Ok(Self {
            config,
            chars,
            pretrained,
        })
    }

    /// Initialises embedding and BLSTM groups (not the pooling matrices).
    pub fn init_params<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        use names::*;
        let e = &self.config.embedding;
        let h = self.config.hidden_size;
        let input = e.input_dim();
        store.init_uniform(UNK_WORD, 1, e.word_dim, rng);
        store.init_uniform(CHAR_EMB, self.chars.size(), e.char_dim, rng);
        store.init_uniform(CHAR_CONV_W, e.char_conv_window * e.char_dim, e.char_conv_filters, rng);
        store.init_zeros(CHAR_CONV_B, 1, e.char_conv_filters);
        for (wx, wh, b) in [(LSTM_FW_WX, LSTM_FW_WH, LSTM_FW_B), (LSTM_BW_WX, LSTM_BW_WH, LSTM_BW_B)] {
            store.init_uniform(wx, input, 4 * h, rng);
            store.init_uniform(wh, h, 4 * h, rng);
            let mut bias = Array2::zeros((1, 4 * h));
            // forget gate starts open
            bias.slice_mut(ndarray::s![0, h..2 * h]).fill(1.0);
            store.insert(b, bias);
        }
    }

    pub fn init_pool_params<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        store.init_uniform(names::POOL_W1, self.config.attention_hidden, self.config.hidden_width(), rng);
        store.init_uniform(names::POOL_W2, 1, self.config.attention_hidden, rng);
    }

    /// Per-token input rows `[word vector ‖ char-CNN features]`.
    pub fn embed(&self, tape: &mut Tape, store: &ParamStore, sentence: &Sentence, mode: &mut Mode<'_>) -> Var {
        let e = &self.config.embedding;
        let n = sentence.len();

        let mut known = Mat::zeros((n, e.word_dim));
        let mut unk_rows = Vec::with_capacity(n);
        let mut any_unknown = false;
        for (i, tok) in sentence.tokens().iter().enumerate() {
            let replace = match mode {
                Mode::Train(rng) if e.unk_replacement_rate > 0.0 => rng.random::<f64>() < e.unk_replacement_rate,
                _ => false,
            };
            match self.pretrained.get(tok).filter(|_| !replace) {
                Some(v) => {
                    known.row_mut(i).iter_mut().zip(v).for_each(|(d, s)| *d = *s);
                    unk_rows.push(None);
                }
                None => {
                    unk_rows.push(Some(0));
                    any_unknown = true;
                }
            }
        }
        let mut words = tape.constant(known);
        if any_unknown && e.unknown_token_policy == UnknownTokenPolicy::Learned {
            let unk = tape.param(store, names::UNK_WORD);
            let unk = tape.rows(unk, unk_rows);
            words = tape.add(words, unk);
        }

        let chars = self.char_features(tape, store, sentence);
        let mut x = tape.hcat(vec![words, chars]);

        if let Mode::Train(rng) = mode {
            let p = e.dropout_rate;
            if p > 0.0 {
                let (r, c) = tape.shape(x);
                let keep = 1.0 / (1.0 - p);
                let mask = Array2::from_shape_fn((r, c), |_| if rng.random::<f64>() < p { 0.0 } else { keep });
                x = tape.mul_const(x, mask);
            }
        }
        x
    }

    /// Max-pooled convolution over each word's characters, zero-padded so a
    /// word of length `L` yields `L` windows.
    fn char_features(&self, tape: &mut Tape, store: &ParamStore, sentence: &Sentence) -> Var {
        let w = self.config.embedding.char_conv_window;
        let left = (w - 1) / 2;
        let ids: Vec<Vec<usize>> = sentence
            .tokens()
            .iter()
            .map(|t| t.chars().map(|c| self.chars.id(c)).collect())
            .collect();
        let mut blocks: Vec<Vec<Option<usize>>> = vec![Vec::new(); w];
        let mut segments = Vec::with_capacity(ids.len());
        let mut offset = 0;
        for word in &ids {
            let len = word.len();
            for j in 0..len {
                for (k, block) in blocks.iter_mut().enumerate() {
                    let pos = (j + k) as isize - left as isize;
                    block.push((0..len as isize).contains(&pos).then(|| word[pos as usize]));
                }
            }
            segments.push((offset, len));
            offset += len;
        }
        let table = tape.param(store, names::CHAR_EMB);
        let parts: Vec<Var> = blocks.into_iter().map(|b| tape.rows(table, b)).collect();
        let windows = tape.hcat(parts);
        let cw = tape.param(store, names::CHAR_CONV_W);
        let cb = tape.param(store, names::CHAR_CONV_B);
        let conv = tape.matmul(windows, cw);
        let conv = tape.add_row(conv, cb);
        tape.segment_max(conv, &segments)
    }

    /// BLSTM over input rows; row `i` of the result is `[→hᵢ ‖ ←hᵢ]`.
    pub fn contextualize(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        use names::*;
        let n = tape.shape(x).0;
        let fw = self.run_direction(tape, store, x, (LSTM_FW_WX, LSTM_FW_WH, LSTM_FW_B), (0..n).collect());
        let mut bw = self.run_direction(tape, store, x, (LSTM_BW_WX, LSTM_BW_WH, LSTM_BW_B), (0..n).rev().collect());
        bw.reverse();
        let fw = tape.vcat(fw);
        let bw = tape.vcat(bw);
        tape.hcat(vec![fw, bw])
    }

    fn run_direction(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        (wx, wh, b): (&str, &str, &str),
        order: Vec<usize>,
    ) -> Vec<Var> {
        let h = self.config.hidden_size;
        let wx = tape.param(store, wx);
        let wh = tape.param(store, wh);
        let b = tape.param(store, b);
        let xw = tape.matmul(x, wx);
        let xw = tape.add_row(xw, b);
        let mut states = Vec::with_capacity(order.len());
        let mut prev: Option<(Var, Var)> = None;
        for t in order {
            let mut gates = tape.row(xw, t);
            if let Some((hp, _)) = prev {
                let rec = tape.matmul(hp, wh);
                gates = tape.add(gates, rec);
            }
            let out = tape.lstm_step(gates, prev.map(|(_, c)| c));
            let ht = tape.cols(out, 0, h);
            let ct = tape.cols(out, h, h);
            states.push(ht);
            prev = Some((ht, ct));
        }
        states
    }

    /// Hidden matrix `H` for a sentence.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, sentence: &Sentence, mode: &mut Mode<'_>) -> Var {
        let x = self.embed(tape, store, sentence, mode);
        self.contextualize(tape, store, x)
    }

    /// Eval-mode `H` as a plain matrix.
    pub fn hidden(&self, store: &ParamStore, sentence: &Sentence) -> Array2<f64> {
        let mut tape = Tape::new();
        let h = self.encode(&mut tape, store, sentence, &mut Mode::Eval);
        tape.value(h).clone()
    }
}

/// Result of self-attentive pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledVector {
    pub vector: Vec<f64>,
    pub weights: Vec<f64>,
}

/// `a = softmax(W₂ tanh(W₁ Mᵀ))`, `g = a M`. Returns `(g, a)` with `g` as a
/// `1 × d` row and `a` as an `n × 1` column. Used unchanged for sentences
/// (`M = H`) and triggers (`M = Z`).
pub fn attentive_pool(tape: &mut Tape, w1: Var, w2: Var, m: Var) -> (Var, Var) {
    let w1t = tape.transpose(w1);
    let proj = tape.matmul(m, w1t);
    let act = tape.tanh(proj);
    let w2t = tape.transpose(w2);
    let scores = tape.matmul(act, w2t);
    let weights = tape.softmax_col(scores);
    let wt = tape.transpose(weights);
    let g = tape.matmul(wt, m);
    (g, weights)
}

/// [`attentive_pool`] on plain matrices.
pub fn attentive_pool_values(m: &Array2<f64>, w1: &Array2<f64>, w2: &Array2<f64>) -> Result<PooledVector> {
    if m.nrows() == 0 {
        return Err(Error::InvalidArgument("cannot pool an empty matrix".into()));
    }
    if w1.ncols() != m.ncols() || w2.dim() != (1, w1.nrows()) {
        return Err(Error::Shape(format!(
            "pool params {:?}/{:?} do not fit rows of width {}",
            w1.dim(),
            w2.dim(),
            m.ncols()
        )));
    }
    let mut tape = Tape::new();
    let mv = tape.constant(m.clone());
    let a = tape.constant(w1.clone());
    let b = tape.constant(w2.clone());
    let (g, w) = attentive_pool(&mut tape, a, b, mv);
    Ok(PooledVector {
        vector: tape.value(g).iter().copied().collect(),
        weights: tape.value(w).iter().copied().collect(),
    })
}
