//! Token vocabulary, embedding lookup, and top-m object selection.
//!
//! One table serves both event tokens and object words, so an object word
//! that also appears in an event shares its vector. Multi-token object
//! words ("fire hydrant") encode as the mean of their token vectors.

use crate::dataset::{Dataset, Detection, Event, Split};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;
use thiserror::Error;

pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_TOKEN: &str = "<pad>";

/// Embedding rows are initialized uniformly in this symmetric range.
pub const INIT_RANGE: f64 = 0.1;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("event '{0}' has no tokens")]
    EmptyEvent(String),
    #[error("embedding file contains no vectors")]
    NoVectors,
    #[error("line {line}: vector has {got} entries, expected {expected}")]
    InconsistentWidth {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: cannot parse '{value}' as a number")]
    BadNumber { line: usize, value: String },
    #[error("line {line}: duplicate token '{token}'")]
    DuplicateToken { line: usize, token: String },
}

/// Token-to-index map with contiguous indices. `<unk>` and `<pad>` are
/// always present at indices 0 and 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const UNK: usize = 0;
    pub const PAD: usize = 1;

    pub fn new() -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        v.insert(UNK_TOKEN);
        v.insert(PAD_TOKEN);
        v
    }

    /// Rebuild from a serialized token list (which starts with the
    /// special tokens).
    pub fn from_token_list(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }

    /// Insert a token if new; returns its index either way.
    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        let i = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), i);
        i
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Index of a token, or the UNK index for out-of-vocabulary input.
    pub fn index_or_unk(&self, token: &str) -> usize {
        self.get(token).unwrap_or(Self::UNK)
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

/// Every event token and object-word token of the train split, indexed in
/// first-occurrence order after the special tokens.
pub fn build_vocabulary(dataset: &Dataset) -> Vocabulary {
    let mut vocab = Vocabulary::new();
    for video in dataset.split(Split::Train) {
        for pair in &video.pairs {
            for event in &pair.events {
                for token in event.tokens() {
                    vocab.insert(token);
                }
            }
            for det in &pair.detections {
                for token in det.word.split_whitespace() {
                    vocab.insert(&token.to_lowercase());
                }
            }
        }
    }
    vocab
}

/// `|V| x d` embedding matrix, trainable or frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<S> {
    weights: Tensor<S>,
    trainable: bool,
}

impl<S: Scalar> EmbeddingTable<S> {
    /// Trainable table, rows uniform in `[-INIT_RANGE, INIT_RANGE]`,
    /// reproducible from the seed (ChaCha8 stream).
    pub fn random(vocab_len: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..vocab_len * dim)
            .map(|_| {
                S::from_f64(rng.gen_range(-INIT_RANGE..INIT_RANGE)).expect("init value fits")
            })
            .collect();
        Self {
            weights: Tensor::matrix(vocab_len, dim, data),
            trainable: true,
        }
    }

    pub fn from_weights(weights: Tensor<S>, trainable: bool) -> Self {
        assert!(weights.is_matrix(), "embedding table must be a matrix");
        Self { weights, trainable }
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn vocab_len(&self) -> usize {
        self.weights.rows()
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn weights(&self) -> &Tensor<S> {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Tensor<S> {
        &mut self.weights
    }

    pub fn row(&self, index: usize) -> &[S] {
        self.weights.row(index)
    }
}

/// Token-vector matrix of an event: row i is token i's embedding
/// (UNK row for out-of-vocabulary tokens).
pub fn encode_event<S: Scalar>(
    event: &Event,
    vocab: &Vocabulary,
    table: &EmbeddingTable<S>,
) -> Result<Tensor<S>, EncoderError> {
    let rows: Vec<Vec<S>> = event
        .tokens()
        .map(|t| table.row(vocab.index_or_unk(t)).to_vec())
        .collect();
    if rows.is_empty() {
        return Err(EncoderError::EmptyEvent(event.event_id.clone()));
    }
    Ok(Tensor::from_rows(&rows))
}

/// Vector for an object word: the mean of its token embeddings when the
/// word splits into several tokens, the single embedding otherwise.
pub fn encode_object<S: Scalar>(
    word: &str,
    vocab: &Vocabulary,
    table: &EmbeddingTable<S>,
) -> Tensor<S> {
    let indices: Vec<usize> = word
        .split_whitespace()
        .map(|t| vocab.index_or_unk(&t.to_lowercase()))
        .collect();
    let d = table.dim();
    if indices.is_empty() {
        return Tensor::vector(table.row(Vocabulary::UNK).to_vec());
    }
    let mut acc = vec![S::zero(); d];
    for &idx in &indices {
        for (slot, &v) in acc.iter_mut().zip(table.row(idx)) {
            *slot = *slot + v;
        }
    }
    let n = S::from_usize(indices.len()).expect("token count fits");
    for slot in acc.iter_mut() {
        *slot = *slot / n;
    }
    Tensor::vector(acc)
}

/// Merge detections from both images, sort by confidence descending
/// (ties: image 1 first, then word), drop duplicate words keeping the
/// highest-confidence occurrence, and keep the top `m`.
pub fn select_objects(detections: &[Detection], m: usize) -> Vec<Detection> {
    let mut sorted: Vec<&Detection> = detections.iter().collect();
    sorted.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(a.source.cmp(&b.source))
            .then(a.word.cmp(&b.word))
    });
    let mut seen: Vec<&str> = Vec::new();
    let mut out = Vec::new();
    for det in sorted {
        if out.len() == m {
            break;
        }
        if seen.contains(&det.word.as_str()) {
            continue;
        }
        seen.push(&det.word);
        out.push(det.clone());
    }
    out
}

/// Frozen table from a text file of `token v1 v2 ... vd` lines. Tokens
/// absent from the file fall back to UNK, which is the zero vector.
pub fn load_embedding_file<S: Scalar>(
    path: impl AsRef<Path>,
) -> Result<(Vocabulary, EmbeddingTable<S>), EncoderError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| EncoderError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_embedding_reader(BufReader::new(file))
}

pub fn load_embedding_reader<S: Scalar>(
    reader: impl BufRead,
) -> Result<(Vocabulary, EmbeddingTable<S>), EncoderError> {
    let mut vocab = Vocabulary::new();
    let mut rows: Vec<Vec<S>> = Vec::new();
    let mut dim: Option<usize> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| EncoderError::Io {
            path: "<reader>".into(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let mut parts = line.split_whitespace();
        let token = parts.next().expect("non-empty line has a token");
        let values: Vec<S> = parts
            .map(|v| {
                S::from_decimal(v).ok_or_else(|| EncoderError::BadNumber {
                    line: line_no,
                    value: v.to_string(),
                })
            })
            .collect::<Result<_, _>>()?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(EncoderError::InconsistentWidth {
                    line: line_no,
                    expected: d,
                    got: values.len(),
                })
            }
            _ => {}
        }
        if vocab.get(token).is_some() {
            return Err(EncoderError::DuplicateToken {
                line: line_no,
                token: token.to_string(),
            });
        }
        vocab.insert(token);
        rows.push(values);
    }
    let dim = dim.ok_or(EncoderError::NoVectors)?;
    if dim == 0 {
        return Err(EncoderError::NoVectors);
    }
    // UNK and PAD occupy the first two rows as zero vectors.
    let mut all_rows = vec![vec![S::zero(); dim], vec![S::zero(); dim]];
    all_rows.extend(rows);
    let table = EmbeddingTable::from_weights(Tensor::from_rows(&all_rows), false);
    Ok((vocab, table))
}
