//! The visual-context causality scorer and its ablation variants.
//!
//! The full model scores a (cause event, effect event) pair against the
//! detected-object context of the cause's image pair:
//!
//! 1. context vector per event: attention over object vectors, queried by
//!    the event's mean token vector (`object_attention`, softmax-normalized);
//! 2. event vector: attention over the event's token vectors, queried by
//!    its context vector (`token_attention`, softmax-normalized);
//! 3. probability: sigmoid of a two-layer head over
//!    `[e1, e2, ctx(e1), ctx(e2)]`.
//!
//! Variants drop parts of this: `no-context` scores `[mean(e1), mean(e2)]`,
//! `no-attention` replaces both attentions with plain means, and
//! `feature-context` swaps the object context for a learned projection of
//! a precomputed image feature vector.

use crate::autodiff::{AutodiffError, GradientMap, Graph, NodeId, CLAMP_EPS};
use crate::encoders::{EmbeddingTable, Vocabulary};
use crate::dataset::Event;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

/// Default hidden width of the feed-forward blocks.
pub const DEFAULT_HIDDEN: usize = 200;
/// Default embedding width for trainable tables.
pub const DEFAULT_DIM: usize = 32;
/// Default number of selected objects per image pair.
pub const DEFAULT_OBJECTS: usize = 10;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("event '{0}' has no tokens")]
    EmptyEvent(String),
    #[error(
        "record has no image feature vector; train a no-context model for data without features"
    )]
    MissingImageFeature,
    #[error("image feature has width {got}, model projection expects {expected}")]
    FeatureWidthMismatch { expected: usize, got: usize },
    #[error("variant {variant} needs a head of input width {expected}, found {got}")]
    HeadWidthMismatch {
        variant: Variant,
        expected: usize,
        got: usize,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint line {line}: {message}")]
    Checkpoint { line: usize, message: String },
}

/// Which scorer architecture to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Vcc,
    NoContext,
    NoAttention,
    FeatureContext,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Vcc,
        Variant::NoContext,
        Variant::NoAttention,
        Variant::FeatureContext,
    ];

    /// Width of the prediction head's input for embedding width `d`.
    pub fn head_input_width(self, d: usize) -> usize {
        match self {
            Variant::NoContext => 2 * d,
            _ => 4 * d,
        }
    }

    pub fn uses_image_feature(self) -> bool {
        matches!(self, Variant::FeatureContext)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::Vcc => "vcc",
            Variant::NoContext => "no-context",
            Variant::NoAttention => "no-attention",
            Variant::FeatureContext => "feature-context",
        };
        write!(f, "{s}")
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vcc" => Ok(Variant::Vcc),
            "no-context" => Ok(Variant::NoContext),
            "no-attention" => Ok(Variant::NoAttention),
            "feature-context" => Ok(Variant::FeatureContext),
            other => Err(format!(
                "unknown variant '{other}' (expected vcc, no-context, no-attention, feature-context)"
            )),
        }
    }
}

/// Probability in the open interval (0,1); sigmoid outputs are clamped to
/// `[1e-12, 1 - 1e-12]` on construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CausalityScore(f64);

impl CausalityScore {
    pub fn from_probability(p: f64) -> Self {
        Self(p.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Two-layer feed-forward block: `w2 * relu(w1 x + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward<S> {
    pub w1: Tensor<S>,
    pub b1: Tensor<S>,
    pub w2: Tensor<S>,
    pub b2: Tensor<S>,
}

impl<S: Scalar> FeedForward<S> {
    fn random(input: usize, hidden: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        // Fan-scaled weights keep the two layers trainable at any width;
        // biases stay on the small uniform init.
        let s1 = (6.0 / (input + hidden) as f64).sqrt();
        let s2 = (6.0 / (hidden + output) as f64).sqrt();
        Self {
            w1: scaled_uniform_tensor(&[hidden, input], s1, rng),
            b1: uniform_tensor(&[hidden], rng),
            w2: scaled_uniform_tensor(&[output, hidden], s2, rng),
            b2: uniform_tensor(&[output], rng),
        }
    }

    pub fn input_width(&self) -> usize {
        self.w1.cols()
    }

    /// Zero the first-layer weights. The block then computes the same
    /// constant for every input, which turns attention uniform.
    pub fn zero_input_weights(&mut self) {
        for v in self.w1.data_mut() {
            *v = S::zero();
        }
    }

    /// Zero the output layer; a head in this state always scores 0.
    pub fn zero_output_layer(&mut self) {
        for v in self.w2.data_mut() {
            *v = S::zero();
        }
        for v in self.b2.data_mut() {
            *v = S::zero();
        }
    }
}

/// Trainable affine projection used by the `feature-context` variant.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureProjection<S> {
    pub w: Tensor<S>,
    pub b: Tensor<S>,
}

fn uniform_tensor<S: Scalar>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<S> {
    scaled_uniform_tensor(shape, crate::encoders::INIT_RANGE, rng)
}

fn scaled_uniform_tensor<S: Scalar>(
    shape: &[usize],
    scale: f64,
    rng: &mut ChaCha8Rng,
) -> Tensor<S> {
    let len: usize = shape.iter().product();
    let data: Vec<S> = (0..len)
        .map(|_| S::from_f64(rng.gen_range(-scale..scale)).expect("init value fits scalar"))
        .collect();
    match shape.len() {
        1 => Tensor::vector(data),
        2 => Tensor::matrix(shape[0], shape[1], data),
        _ => unreachable!("rank <= 2"),
    }
}

/// Object words (already selected, highest confidence first) plus the
/// optional precomputed image feature of an image pair.
#[derive(Debug, Clone, Default)]
pub struct SelectedContext {
    pub objects: Vec<String>,
    pub image_feature: Option<Vec<f64>>,
}

/// All trainable state of one scorer: the shared embedding table and the
/// three feed-forward blocks (plus the feature projection when needed).
#[derive(Debug, Clone, PartialEq)]
pub struct VccParameters<S> {
    pub variant: Variant,
    pub dim: usize,
    pub hidden: usize,
    pub vocab: Vocabulary,
    pub embedding: EmbeddingTable<S>,
    pub object_attention: FeedForward<S>,
    pub token_attention: FeedForward<S>,
    pub head: FeedForward<S>,
    pub feature_proj: Option<FeatureProjection<S>>,
}

impl<S: Scalar> VccParameters<S> {
    /// Fresh parameters, all uniform in `[-0.1, 0.1]`, reproducible from
    /// the seed. `feature_dim` is required by the feature-context variant.
    pub fn init(
        variant: Variant,
        vocab: Vocabulary,
        dim: usize,
        hidden: usize,
        feature_dim: Option<usize>,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embedding = EmbeddingTable::from_weights(
            uniform_tensor(&[vocab.len(), dim], &mut rng),
            true,
        );
        let object_attention = FeedForward::random(2 * dim, hidden, 1, &mut rng);
        let token_attention = FeedForward::random(2 * dim, hidden, 1, &mut rng);
        let head = FeedForward::random(variant.head_input_width(dim), hidden, 1, &mut rng);
        let feature_proj = if variant.uses_image_feature() {
            let f = feature_dim.expect("feature-context variant needs a feature width");
            Some(FeatureProjection {
                w: uniform_tensor(&[dim, f], &mut rng),
                b: uniform_tensor(&[dim], &mut rng),
            })
        } else {
            None
        };
        Self {
            variant,
            dim,
            hidden,
            vocab,
            embedding,
            object_attention,
            token_attention,
            head,
            feature_proj,
        }
    }

    /// Same parameters loaded behind a frozen table. Used with embedding
    /// files; only the feed-forward blocks train.
    pub fn init_with_table(
        variant: Variant,
        vocab: Vocabulary,
        table: EmbeddingTable<S>,
        hidden: usize,
        feature_dim: Option<usize>,
        seed: u64,
    ) -> Self {
        let dim = table.dim();
        let mut params = Self::init(variant, vocab, dim, hidden, feature_dim, seed);
        params.embedding = table;
        params
    }

    /// Switch between variants with the same head width (vcc,
    /// no-attention, feature-context without a projection swap).
    pub fn set_variant(&mut self, variant: Variant) -> Result<(), ModelError> {
        let expected = variant.head_input_width(self.dim);
        let got = self.head.input_width();
        if expected != got {
            return Err(ModelError::HeadWidthMismatch {
                variant,
                expected,
                got,
            });
        }
        self.variant = variant;
        Ok(())
    }

    /// Tensors in checkpoint order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out = vec![
            ("embedding".to_string(), self.embedding.weights()),
            ("object_attention.w1".to_string(), &self.object_attention.w1),
            ("object_attention.b1".to_string(), &self.object_attention.b1),
            ("object_attention.w2".to_string(), &self.object_attention.w2),
            ("object_attention.b2".to_string(), &self.object_attention.b2),
            ("token_attention.w1".to_string(), &self.token_attention.w1),
            ("token_attention.b1".to_string(), &self.token_attention.b1),
            ("token_attention.w2".to_string(), &self.token_attention.w2),
            ("token_attention.b2".to_string(), &self.token_attention.b2),
            ("head.w1".to_string(), &self.head.w1),
            ("head.b1".to_string(), &self.head.b1),
            ("head.w2".to_string(), &self.head.w2),
            ("head.b2".to_string(), &self.head.b2),
        ];
        if let Some(proj) = &self.feature_proj {
            out.push(("feature_proj.w".to_string(), &proj.w));
            out.push(("feature_proj.b".to_string(), &proj.b));
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut out = vec![
            ("embedding".to_string(), self.embedding.weights_mut()),
            ("object_attention.w1".to_string(), &mut self.object_attention.w1),
            ("object_attention.b1".to_string(), &mut self.object_attention.b1),
            ("object_attention.w2".to_string(), &mut self.object_attention.w2),
            ("object_attention.b2".to_string(), &mut self.object_attention.b2),
            ("token_attention.w1".to_string(), &mut self.token_attention.w1),
            ("token_attention.b1".to_string(), &mut self.token_attention.b1),
            ("token_attention.w2".to_string(), &mut self.token_attention.w2),
            ("token_attention.b2".to_string(), &mut self.token_attention.b2),
            ("head.w1".to_string(), &mut self.head.w1),
            ("head.b1".to_string(), &mut self.head.b1),
            ("head.w2".to_string(), &mut self.head.w2),
            ("head.b2".to_string(), &mut self.head.b2),
        ];
        if let Some(proj) = &mut self.feature_proj {
            out.push(("feature_proj.w".to_string(), &mut proj.w));
            out.push(("feature_proj.b".to_string(), &mut proj.b));
        }
        out
    }

    /// Register every parameter tensor as a graph leaf. A frozen embedding
    /// table becomes a plain input so no gradient work is spent on it.
    pub fn bind(&self, g: &mut Graph<S>) -> BoundParams {
        let table = if self.embedding.trainable() {
            g.parameter(self.embedding.weights().clone())
        } else {
            g.input(self.embedding.weights().clone())
        };
        let bind_ff = |g: &mut Graph<S>, ff: &FeedForward<S>| BoundFeedForward {
            w1: g.parameter(ff.w1.clone()),
            b1: g.parameter(ff.b1.clone()),
            w2: g.parameter(ff.w2.clone()),
            b2: g.parameter(ff.b2.clone()),
        };
        let object_attention = bind_ff(g, &self.object_attention);
        let token_attention = bind_ff(g, &self.token_attention);
        let head = bind_ff(g, &self.head);
        let feature_proj = self.feature_proj.as_ref().map(|p| BoundProjection {
            w: g.parameter(p.w.clone()),
            b: g.parameter(p.b.clone()),
        });
        BoundParams {
            table,
            object_attention,
            token_attention,
            head,
            feature_proj,
        }
    }

    /// One SGD step: `w <- w - lr * grad` for every trainable tensor that
    /// received a gradient.
    pub fn apply_sgd(&mut self, bound: &BoundParams, grads: &GradientMap<S>, lr: S) {
        let ids = bound.ordered_ids();
        let trainable_table = self.embedding.trainable();
        for ((name, tensor), id) in self.named_tensors_mut().into_iter().zip(ids) {
            if name == "embedding" && !trainable_table {
                continue;
            }
            if let Some(grad) = grads.get(id) {
                tensor.add_scaled(grad, -lr);
            }
        }
    }

    fn event_indices(&self, event: &Event) -> Result<Vec<usize>, ModelError> {
        let idx: Vec<usize> = event
            .tokens()
            .map(|t| self.vocab.index_or_unk(t))
            .collect();
        if idx.is_empty() {
            return Err(ModelError::EmptyEvent(event.event_id.clone()));
        }
        Ok(idx)
    }

    fn object_indices(&self, word: &str) -> Vec<usize> {
        let idx: Vec<usize> = word
            .split_whitespace()
            .map(|t| self.vocab.index_or_unk(&t.to_lowercase()))
            .collect();
        if idx.is_empty() {
            vec![Vocabulary::UNK]
        } else {
            idx
        }
    }

    fn apply_ff(
        &self,
        g: &mut Graph<S>,
        ff: &BoundFeedForward,
        input: NodeId,
    ) -> Result<NodeId, ModelError> {
        let hidden = g.affine(input, ff.w1, ff.b1)?;
        let hidden = g.relu(hidden)?;
        Ok(g.affine(hidden, ff.w2, ff.b2)?)
    }

    /// Object vectors as graph nodes (mean of token embeddings per word).
    fn object_vector_nodes(
        &self,
        g: &mut Graph<S>,
        bound: &BoundParams,
        objects: &[String],
    ) -> Result<Vec<NodeId>, ModelError> {
        objects
            .iter()
            .map(|word| {
                let rows = g.embed(bound.table, &self.object_indices(word))?;
                Ok(g.row_mean(rows)?)
            })
            .collect()
    }

    /// Attention-weighted context vector for one event: weights come from
    /// the object-attention block applied to `[mean(tokens), object]`,
    /// softmax-normalized over the object set. No objects means a zero
    /// context vector.
    pub fn context_node(
        &self,
        g: &mut Graph<S>,
        bound: &BoundParams,
        token_matrix: NodeId,
        object_vectors: &[NodeId],
    ) -> Result<NodeId, ModelError> {
        if object_vectors.is_empty() {
            return Ok(g.input(Tensor::zeros(&[self.dim])));
        }
        let query = g.row_mean(token_matrix)?;
        let mut scores = Vec::with_capacity(object_vectors.len());
        for &ov in object_vectors {
            let joined = g.concat(&[query, ov])?;
            scores.push(self.apply_ff(g, &bound.object_attention, joined)?);
        }
        let score_vec = g.concat(&scores)?;
        let weights = g.softmax(score_vec)?;
        let object_matrix = g.stack_rows(object_vectors)?;
        Ok(g.weighted_sum(weights, object_matrix)?)
    }

    /// Attention-weighted event vector: weights come from the
    /// token-attention block applied to `[context, token]`,
    /// softmax-normalized over the event's tokens.
    pub fn event_node(
        &self,
        g: &mut Graph<S>,
        bound: &BoundParams,
        context: NodeId,
        token_matrix: NodeId,
    ) -> Result<NodeId, ModelError> {
        let n = g.value(token_matrix).rows();
        let mut scores = Vec::with_capacity(n);
        for i in 0..n {
            let token = g.row(token_matrix, i)?;
            let joined = g.concat(&[context, token])?;
            scores.push(self.apply_ff(g, &bound.token_attention, joined)?);
        }
        let score_vec = g.concat(&scores)?;
        let weights = g.softmax(score_vec)?;
        Ok(g.weighted_sum(weights, token_matrix)?)
    }

    /// Probability node for `(e1 causes e2)` under this variant.
    pub fn score_node(
        &self,
        g: &mut Graph<S>,
        bound: &BoundParams,
        e1: &Event,
        e2: &Event,
        ctx: &SelectedContext,
    ) -> Result<NodeId, ModelError> {
        let e1_tokens = g.embed(bound.table, &self.event_indices(e1)?)?;
        let e2_tokens = g.embed(bound.table, &self.event_indices(e2)?)?;
        let head_input = match self.variant {
            Variant::Vcc => {
                let objects = self.object_vector_nodes(g, bound, &ctx.objects)?;
                let ctx1 = self.context_node(g, bound, e1_tokens, &objects)?;
                let ctx2 = self.context_node(g, bound, e2_tokens, &objects)?;
                let e1_rep = self.event_node(g, bound, ctx1, e1_tokens)?;
                let e2_rep = self.event_node(g, bound, ctx2, e2_tokens)?;
                g.concat(&[e1_rep, e2_rep, ctx1, ctx2])?
            }
            Variant::NoContext => {
                let m1 = g.row_mean(e1_tokens)?;
                let m2 = g.row_mean(e2_tokens)?;
                g.concat(&[m1, m2])?
            }
            Variant::NoAttention => {
                let objects = self.object_vector_nodes(g, bound, &ctx.objects)?;
                let context = if objects.is_empty() {
                    g.input(Tensor::zeros(&[self.dim]))
                } else {
                    let matrix = g.stack_rows(&objects)?;
                    g.row_mean(matrix)?
                };
                let m1 = g.row_mean(e1_tokens)?;
                let m2 = g.row_mean(e2_tokens)?;
                g.concat(&[m1, m2, context, context])?
            }
            Variant::FeatureContext => {
                let proj = bound
                    .feature_proj
                    .as_ref()
                    .ok_or(ModelError::MissingImageFeature)?;
                let feature = ctx
                    .image_feature
                    .as_ref()
                    .ok_or(ModelError::MissingImageFeature)?;
                let expected = g.value(proj.w).cols();
                if feature.len() != expected {
                    return Err(ModelError::FeatureWidthMismatch {
                        expected,
                        got: feature.len(),
                    });
                }
                let data: Vec<S> = feature
                    .iter()
                    .map(|&v| S::from_f64(v).expect("feature value fits scalar"))
                    .collect();
                let f = g.input(Tensor::vector(data));
                let projected = g.affine(f, proj.w, proj.b)?;
                let m1 = g.row_mean(e1_tokens)?;
                let m2 = g.row_mean(e2_tokens)?;
                g.concat(&[m1, m2, projected, projected])?
            }
        };
        let logit = self.apply_ff(g, &bound.head, head_input)?;
        Ok(g.sigmoid(logit)?)
    }

    /// Convenience forward pass on a throwaway graph.
    pub fn predict(
        &self,
        e1: &Event,
        e2: &Event,
        ctx: &SelectedContext,
    ) -> Result<CausalityScore, ModelError> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let node = self.score_node(&mut g, &bound, e1, e2, ctx)?;
        let p = g.value(node).item().to_f64().expect("score fits f64");
        Ok(CausalityScore::from_probability(p))
    }
}

/// Graph leaf ids of one bound parameter set.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub table: NodeId,
    pub object_attention: BoundFeedForward,
    pub token_attention: BoundFeedForward,
    pub head: BoundFeedForward,
    pub feature_proj: Option<BoundProjection>,
}

#[derive(Debug, Clone)]
pub struct BoundFeedForward {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
}

#[derive(Debug, Clone)]
pub struct BoundProjection {
    pub w: NodeId,
    pub b: NodeId,
}

impl BoundParams {
    /// Node ids in the same order as `VccParameters::named_tensors`.
    pub fn ordered_ids(&self) -> Vec<NodeId> {
        let mut ids = vec![self.table];
        for ff in [&self.object_attention, &self.token_attention, &self.head] {
            ids.extend([ff.w1, ff.b1, ff.w2, ff.b2]);
        }
        if let Some(p) = &self.feature_proj {
            ids.extend([p.w, p.b]);
        }
        ids
    }
}

// --- checkpoint serialization -------------------------------------------

const CHECKPOINT_HEADER: &str = "#vcc-checkpoint v1";

impl<S: Scalar> VccParameters<S> {
    /// Self-describing text checkpoint. Numbers are rendered with enough
    /// significant digits to round-trip bit-exactly.
    pub fn to_checkpoint_string(&self) -> String {
        let mut out = String::new();
        out.push_str(CHECKPOINT_HEADER);
        out.push('\n');
        out.push_str("format_version 1\n");
        out.push_str(&format!("variant {}\n", self.variant));
        out.push_str(&format!("d {}\n", self.dim));
        out.push_str(&format!("h {}\n", self.hidden));
        out.push_str(&format!(
            "embedding_trainable {}\n",
            self.embedding.trainable()
        ));
        if let Some(proj) = &self.feature_proj {
            out.push_str(&format!("feature_dim {}\n", proj.w.cols()));
        }
        out.push_str(&format!("vocab {}\n", self.vocab.len()));
        for token in self.vocab.tokens() {
            out.push_str(token);
            out.push('\n');
        }
        for (name, tensor) in self.named_tensors() {
            let shape = tensor.shape();
            let (rows, cols) = if shape.len() == 2 {
                (shape[0], shape[1])
            } else {
                (1, shape[0])
            };
            out.push_str(&format!("tensor {name} {} {rows} {cols}\n", shape.len()));
            for r in 0..rows {
                let line: Vec<String> = (0..cols)
                    .map(|c| tensor.at(r * cols + c).to_decimal())
                    .collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        let mut file = std::fs::File::create(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        file.write_all(self.to_checkpoint_string().as_bytes())
            .map_err(|source| ModelError::Io {
                path: path.display().to_string(),
                source,
            })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_checkpoint_reader(BufReader::new(file))
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self, ModelError> {
        Self::from_checkpoint_reader(std::io::Cursor::new(text.as_bytes()))
    }

    pub fn from_checkpoint_reader(reader: impl BufRead) -> Result<Self, ModelError> {
        let mut lines = reader.lines().enumerate();
        let mut next_line = || -> Result<(usize, String), ModelError> {
            match lines.next() {
                Some((i, Ok(line))) => Ok((i + 1, line)),
                Some((i, Err(e))) => Err(ModelError::Checkpoint {
                    line: i + 1,
                    message: e.to_string(),
                }),
                None => Err(ModelError::Checkpoint {
                    line: 0,
                    message: "unexpected end of checkpoint".into(),
                }),
            }
        };
        let fail = |line: usize, message: String| ModelError::Checkpoint { line, message };

        let (line_no, header) = next_line()?;
        if header != CHECKPOINT_HEADER {
            return Err(fail(line_no, format!("bad header '{header}'")));
        }
        let mut variant: Option<Variant> = None;
        let mut dim = 0usize;
        let mut hidden = 0usize;
        let mut trainable = true;
        let vocab_len: Option<usize>;
        loop {
            let (line_no, line) = next_line()?;
            let mut parts = line.splitn(2, ' ');
            let key = parts.next().unwrap_or_default();
            let value = parts.next().unwrap_or_default();
            match key {
                "format_version" => {
                    if value != "1" {
                        return Err(fail(line_no, format!("unsupported version '{value}'")));
                    }
                }
                "variant" => {
                    variant =
                        Some(Variant::from_str(value).map_err(|e| fail(line_no, e))?);
                }
                "d" => dim = value.parse().map_err(|_| fail(line_no, "bad d".into()))?,
                "h" => hidden = value.parse().map_err(|_| fail(line_no, "bad h".into()))?,
                "embedding_trainable" => {
                    trainable = value
                        .parse()
                        .map_err(|_| fail(line_no, "bad embedding_trainable".into()))?
                }
                "feature_dim" => { /* informational; the tensor carries the shape */ }
                "vocab" => {
                    vocab_len = Some(
                        value
                            .parse()
                            .map_err(|_| fail(line_no, "bad vocab size".into()))?,
                    );
                    break;
                }
                other => return Err(fail(line_no, format!("unexpected key '{other}'"))),
            }
        }
        let vocab_len = vocab_len.ok_or_else(|| fail(0, "missing vocab section".into()))?;
        let mut tokens = Vec::with_capacity(vocab_len);
        for _ in 0..vocab_len {
            let (_, token) = next_line()?;
            tokens.push(token);
        }
        let vocab = Vocabulary::from_token_list(tokens);

        let mut tensors: Vec<(String, Tensor<S>)> = Vec::new();
        loop {
            let (line_no, line) = next_line()?;
            if line == "end" {
                break;
            }
            let parts: Vec<&str> = line.split(' ').collect();
            if parts.len() != 5 || parts[0] != "tensor" {
                return Err(fail(line_no, format!("expected tensor header, got '{line}'")));
            }
            let name = parts[1].to_string();
            let rank: usize = parts[2]
                .parse()
                .map_err(|_| fail(line_no, "bad tensor rank".into()))?;
            let rows: usize = parts[3]
                .parse()
                .map_err(|_| fail(line_no, "bad tensor rows".into()))?;
            let cols: usize = parts[4]
                .parse()
                .map_err(|_| fail(line_no, "bad tensor cols".into()))?;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (row_line_no, row) = next_line()?;
                for value in row.split(' ') {
                    let parsed = S::from_decimal(value).ok_or_else(|| {
                        fail(row_line_no, format!("cannot parse number '{value}'"))
                    })?;
                    data.push(parsed);
                }
            }
            if data.len() != rows * cols {
                return Err(fail(
                    line_no,
                    format!(
                        "tensor '{name}': expected {} values, got {}",
                        rows * cols,
                        data.len()
                    ),
                ));
            }
            let tensor = if rank == 1 {
                Tensor::vector(data)
            } else {
                Tensor::matrix(rows, cols, data)
            };
            tensors.push((name, tensor));
        }

        let mut take = |name: &str| -> Result<Tensor<S>, ModelError> {
            tensors
                .iter()
                .position(|(n, _)| n == name)
                .map(|i| tensors.remove(i).1)
                .ok_or_else(|| fail(0, format!("missing tensor '{name}'")))
        };
        let variant = variant.ok_or_else(|| fail(0, "missing variant".into()))?;
        let embedding = EmbeddingTable::from_weights(take("embedding")?, trainable);
        let ff = |take: &mut dyn FnMut(&str) -> Result<Tensor<S>, ModelError>,
                  prefix: &str|
         -> Result<FeedForward<S>, ModelError> {
            Ok(FeedForward {
                w1: take(&format!("{prefix}.w1"))?,
                b1: take(&format!("{prefix}.b1"))?,
                w2: take(&format!("{prefix}.w2"))?,
                b2: take(&format!("{prefix}.b2"))?,
            })
        };
        let object_attention = ff(&mut take, "object_attention")?;
        let token_attention = ff(&mut take, "token_attention")?;
        let head = ff(&mut take, "head")?;
        let feature_proj = if variant.uses_image_feature() {
            Some(FeatureProjection {
                w: take("feature_proj.w")?,
                b: take("feature_proj.b")?,
            })
        } else {
            None
        };
        if let Some((name, _)) = tensors.first() {
            return Err(fail(0, format!("unexpected tensor '{name}'")));
        }
        Ok(Self {
            variant,
            dim,
            hidden,
            vocab,
            embedding,
            object_attention,
            token_attention,
            head,
            feature_proj,
        })
    }
}
