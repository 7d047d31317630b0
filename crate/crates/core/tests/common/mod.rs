//! Shared test support: an independent plain-f64 reference
//! implementation of every scorer variant, written with nested loops and
//! no computation graph, so the graph-built forward pass can be checked
//! against separate arithmetic.
#![allow(dead_code)]

use vis_causal::dataset::Event;
use vis_causal::encoders::Vocabulary;
use vis_causal::model::{FeedForward, SelectedContext, VccParameters, Variant};

pub fn ev(id: &str, text: &str) -> Event {
    Event::new(id, text)
}

/// Parameters over a vocabulary built from the given texts.
pub fn params_for(
    variant: Variant,
    texts: &[&str],
    dim: usize,
    hidden: usize,
    feature_dim: Option<usize>,
    seed: u64,
) -> VccParameters<f64> {
    let mut vocab = Vocabulary::new();
    for text in texts {
        for token in text.split_whitespace() {
            vocab.insert(&token.to_lowercase());
        }
    }
    VccParameters::init(variant, vocab, dim, hidden, feature_dim, seed)
}

// --- reference arithmetic ---------------------------------------------

pub struct RefFf {
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<Vec<f64>>,
    pub b2: Vec<f64>,
}

fn to_rows(t: &vis_causal::Tensor64) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn ref_ff(ff: &FeedForward<f64>) -> RefFf {
    RefFf {
        w1: to_rows(&ff.w1),
        b1: ff.b1.data().to_vec(),
        w2: to_rows(&ff.w2),
        b2: ff.b2.data().to_vec(),
    }
}

pub fn ref_affine(w: &[Vec<f64>], x: &[f64], b: &[f64]) -> Vec<f64> {
    w.iter()
        .zip(b)
        .map(|(row, bias)| {
            let mut acc = *bias;
            for (wij, xj) in row.iter().zip(x) {
                acc += wij * xj;
            }
            acc
        })
        .collect()
}

pub fn ref_ff_scalar(ff: &RefFf, x: &[f64]) -> f64 {
    let hidden: Vec<f64> = ref_affine(&ff.w1, x, &ff.b1)
        .into_iter()
        .map(|v| if v > 0.0 { v } else { 0.0 })
        .collect();
    ref_affine(&ff.w2, &hidden, &ff.b2)[0]
}

pub fn ref_softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn ref_mean(rows: &[Vec<f64>]) -> Vec<f64> {
    let d = rows[0].len();
    let mut out = vec![0.0; d];
    for row in rows {
        for (slot, v) in out.iter_mut().zip(row) {
            *slot += v;
        }
    }
    for slot in out.iter_mut() {
        *slot /= rows.len() as f64;
    }
    out
}

pub fn ref_weighted(weights: &[f64], rows: &[Vec<f64>]) -> Vec<f64> {
    let d = rows[0].len();
    let mut out = vec![0.0; d];
    for (w, row) in weights.iter().zip(rows) {
        for (slot, v) in out.iter_mut().zip(row) {
            *slot += w * v;
        }
    }
    out
}

pub fn ref_sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn cat(parts: &[&[f64]]) -> Vec<f64> {
    let mut out = Vec::new();
    for p in parts {
        out.extend_from_slice(p);
    }
    out
}

pub fn token_rows(params: &VccParameters<f64>, event: &Event) -> Vec<Vec<f64>> {
    event
        .tokens()
        .map(|t| {
            params
                .embedding
                .row(params.vocab.index_or_unk(t))
                .to_vec()
        })
        .collect()
}

pub fn object_rows(params: &VccParameters<f64>, objects: &[String]) -> Vec<Vec<f64>> {
    objects
        .iter()
        .map(|word| {
            let rows: Vec<Vec<f64>> = word
                .split_whitespace()
                .map(|t| {
                    params
                        .embedding
                        .row(params.vocab.index_or_unk(&t.to_lowercase()))
                        .to_vec()
                })
                .collect();
            ref_mean(&rows)
        })
        .collect()
}

/// Context vector: softmax attention over object vectors queried by the
/// event's mean token vector.
pub fn ref_context(
    attention: &RefFf,
    tokens: &[Vec<f64>],
    objects: &[Vec<f64>],
    dim: usize,
) -> Vec<f64> {
    if objects.is_empty() {
        return vec![0.0; dim];
    }
    let query = ref_mean(tokens);
    let scores: Vec<f64> = objects
        .iter()
        .map(|o| ref_ff_scalar(attention, &cat(&[&query, o])))
        .collect();
    ref_weighted(&ref_softmax(&scores), objects)
}

/// Event vector: softmax attention over token vectors queried by the
/// context vector.
pub fn ref_event_rep(attention: &RefFf, context: &[f64], tokens: &[Vec<f64>]) -> Vec<f64> {
    let scores: Vec<f64> = tokens
        .iter()
        .map(|t| ref_ff_scalar(attention, &cat(&[context, t])))
        .collect();
    ref_weighted(&ref_softmax(&scores), tokens)
}

/// Full reference forward pass for any variant.
pub fn ref_score(
    params: &VccParameters<f64>,
    e1: &Event,
    e2: &Event,
    ctx: &SelectedContext,
) -> f64 {
    let t1 = token_rows(params, e1);
    let t2 = token_rows(params, e2);
    let head = ref_ff(&params.head);
    let logit = match params.variant {
        Variant::Vcc => {
            let objects = object_rows(params, &ctx.objects);
            let attn_obj = ref_ff(&params.object_attention);
            let attn_tok = ref_ff(&params.token_attention);
            let c1 = ref_context(&attn_obj, &t1, &objects, params.dim);
            let c2 = ref_context(&attn_obj, &t2, &objects, params.dim);
            let e1r = ref_event_rep(&attn_tok, &c1, &t1);
            let e2r = ref_event_rep(&attn_tok, &c2, &t2);
            ref_ff_scalar(&head, &cat(&[&e1r, &e2r, &c1, &c2]))
        }
        Variant::NoContext => {
            ref_ff_scalar(&head, &cat(&[&ref_mean(&t1), &ref_mean(&t2)]))
        }
        Variant::NoAttention => {
            let objects = object_rows(params, &ctx.objects);
            let context = if objects.is_empty() {
                vec![0.0; params.dim]
            } else {
                ref_mean(&objects)
            };
            ref_ff_scalar(
                &head,
                &cat(&[&ref_mean(&t1), &ref_mean(&t2), &context, &context]),
            )
        }
        Variant::FeatureContext => {
            let proj = params.feature_proj.as_ref().expect("projection present");
            let feature = ctx.image_feature.as_ref().expect("feature present");
            let projected = ref_affine(&to_rows(&proj.w), feature, proj.b.data());
            ref_ff_scalar(
                &head,
                &cat(&[&ref_mean(&t1), &ref_mean(&t2), &projected, &projected]),
            )
        }
    };
    ref_sigmoid(logit)
}
