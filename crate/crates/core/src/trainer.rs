//! Negative-sampled SGD training with dev-based model selection.
//!
//! Each positive pair contributes one optimizer step per epoch: the
//! positive forward (label 1) plus one freshly sampled negative effect
//! from the same video (label 0), summed binary cross-entropy, one
//! backward pass, one update. The whole trajectory is a pure function of
//! (config, seed, data).

use crate::dataset::{Dataset, Event, Split, VideoRecord};
use crate::encoders::{build_vocabulary, select_objects};
use crate::evaluator::{build_queries, evaluate, EvalError, ModelScorer, RankingQuery};
use crate::model::{
    ModelError, SelectedContext, VccParameters, Variant, DEFAULT_DIM, DEFAULT_HIDDEN,
    DEFAULT_OBJECTS,
};
use crate::scalar::Scalar;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("dev split is empty; model selection needs dev queries")]
    EmptyDev,
    #[error("train split has no positive pairs")]
    NoPositives,
    #[error("non-finite loss at epoch {epoch}, example {example}")]
    NonFiniteLoss { epoch: usize, example: String },
    #[error("feature-context variant needs image features, none found in the data")]
    NoImageFeatures,
}

/// Everything that fixes a training run.
#[derive(Debug, Clone, Serialize)]
pub struct TrainConfig {
    pub variant: Variant,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub dim: usize,
    pub hidden: usize,
    /// Top-m object selection cutoff.
    pub max_objects: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Vcc,
            learning_rate: 1e-4,
            epochs: 10,
            seed: 0,
            dim: DEFAULT_DIM,
            hidden: DEFAULT_HIDDEN,
            max_objects: DEFAULT_OBJECTS,
        }
    }
}

/// One positive training example, resolved to canonical events.
#[derive(Debug, Clone)]
pub struct TrainExample<'a> {
    pub video: &'a VideoRecord,
    pub cause: &'a Event,
    pub effect: &'a Event,
    pub context: SelectedContext,
    /// `video/pair/cause/effect`, used in diagnostics.
    pub id: String,
}

/// All positive examples of the given videos, in record order.
pub fn collect_examples<'a>(
    videos: &[&'a VideoRecord],
    max_objects: usize,
) -> Vec<TrainExample<'a>> {
    let mut out = Vec::new();
    for video in videos {
        for pair in &video.pairs {
            for cand in &pair.candidates {
                if !cand.is_positive() {
                    continue;
                }
                let cause = video.resolve(&cand.cause).expect("validated cause");
                let effect = video.resolve(&cand.effect).expect("validated effect");
                let objects = select_objects(&pair.detections, max_objects)
                    .into_iter()
                    .map(|d| d.word)
                    .collect();
                out.push(TrainExample {
                    video,
                    cause,
                    effect,
                    context: SelectedContext {
                        objects,
                        image_feature: pair.image_feature.clone(),
                    },
                    id: format!(
                        "{}/{}/{}/{}",
                        video.video_id, pair.pair_id, cause.event_id, effect.event_id
                    ),
                });
            }
        }
    }
    out
}

/// Uniformly random event from the video pool minus the positive's cause
/// and effect. `None` when that pool is empty (the example is skipped).
pub fn sample_negative<'a>(
    cause: &Event,
    effect: &Event,
    video: &'a VideoRecord,
    rng: &mut ChaCha8Rng,
) -> Option<&'a Event> {
    let eligible: Vec<&Event> = video
        .event_pool()
        .iter()
        .filter(|e| e.text != cause.text && e.text != effect.text)
        .collect();
    if eligible.is_empty() {
        return None;
    }
    let idx = rng.gen_range(0..eligible.len());
    Some(eligible[idx])
}

/// Outcome of one pass over the positives.
#[derive(Debug, Clone, Copy)]
pub struct EpochOutcome {
    pub mean_loss: f64,
    pub examples: usize,
    /// Positives skipped because no negative could be sampled.
    pub skipped: usize,
}

/// One epoch of SGD over shuffled positives. Mutates `params` in place.
pub fn train_epoch<S: Scalar>(
    params: &mut VccParameters<S>,
    examples: &[TrainExample<'_>],
    config: &TrainConfig,
    epoch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EpochOutcome, TrainError> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(rng);
    let lr = S::from_f64(config.learning_rate).expect("learning rate fits scalar");
    let mut total_loss = 0.0f64;
    let mut seen = 0usize;
    let mut skipped = 0usize;
    for &i in &order {
        let ex = &examples[i];
        let Some(negative) = sample_negative(ex.cause, ex.effect, ex.video, rng) else {
            skipped += 1;
            continue;
        };
        let mut g = crate::autodiff::Graph::new();
        let bound = params.bind(&mut g);
        let p_pos = params.score_node(&mut g, &bound, ex.cause, ex.effect, &ex.context)?;
        let l_pos = g.bce_loss(p_pos, S::one()).map_err(ModelError::from)?;
        let p_neg = params.score_node(&mut g, &bound, ex.cause, negative, &ex.context)?;
        let l_neg = g.bce_loss(p_neg, S::zero()).map_err(ModelError::from)?;
        let loss = g.add(l_pos, l_neg).map_err(ModelError::from)?;
        let loss_value = g.value(loss).item().to_f64().expect("loss fits f64");
        if !loss_value.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                epoch,
                example: ex.id.clone(),
            });
        }
        let grads = g.backward(loss).map_err(ModelError::from)?;
        params.apply_sgd(&bound, &grads, lr);
        total_loss += loss_value;
        seen += 1;
    }
    Ok(EpochOutcome {
        mean_loss: if seen == 0 { 0.0 } else { total_loss / seen as f64 },
        examples: seen,
        skipped,
    })
}

/// Log record per epoch, emitted as one JSON line each.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_r1: f64,
    pub dev_r5: f64,
    pub dev_r10: f64,
}

pub struct FitOutcome<S> {
    pub best: VccParameters<S>,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

impl<S> FitOutcome<S> {
    pub fn log_jsonl(&self) -> String {
        let mut out = String::new();
        for entry in &self.log {
            out.push_str(&serde_json::to_string(entry).expect("log entry serializes"));
            out.push('\n');
        }
        out
    }
}

/// Width of the first image-feature vector found in the data, if any.
pub fn find_feature_dim(dataset: &Dataset) -> Option<usize> {
    dataset
        .videos
        .iter()
        .flat_map(|v| &v.pairs)
        .find_map(|p| p.image_feature.as_ref().map(|f| f.len()))
}

/// Fresh parameters sized for this config and dataset: vocabulary from
/// the train split, uniform random tensors from the run seed.
pub fn default_params<S: Scalar>(
    config: &TrainConfig,
    dataset: &Dataset,
) -> Result<VccParameters<S>, TrainError> {
    let vocab = build_vocabulary(dataset);
    let feature_dim = if config.variant.uses_image_feature() {
        Some(find_feature_dim(dataset).ok_or(TrainError::NoImageFeatures)?)
    } else {
        None
    };
    Ok(VccParameters::<S>::init(
        config.variant,
        vocab,
        config.dim,
        config.hidden,
        feature_dim,
        config.seed,
    ))
}

/// Train for up to `config.epochs` epochs, evaluating dev Recall after
/// each, and keep the checkpoint with the best dev R@5 (ties go to the
/// earlier epoch).
pub fn fit<S: Scalar>(config: &TrainConfig, dataset: &Dataset) -> Result<FitOutcome<S>, TrainError> {
    let params = default_params(config, dataset)?;
    fit_from(params, config, dataset)
}

/// `fit` starting from caller-provided parameters (for example a frozen
/// embedding table loaded from a vector file).
pub fn fit_from<S: Scalar>(
    mut params: VccParameters<S>,
    config: &TrainConfig,
    dataset: &Dataset,
) -> Result<FitOutcome<S>, TrainError> {
    let dev_queries = build_queries(dataset, Split::Dev)?;
    if dev_queries.is_empty() {
        return Err(TrainError::EmptyDev);
    }
    let train_videos = dataset.split(Split::Train);
    let examples = collect_examples(&train_videos, config.max_objects);
    if examples.is_empty() {
        return Err(TrainError::NoPositives);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, VccParameters<S>)> = None;
    for epoch in 1..=config.epochs {
        let outcome = train_epoch(&mut params, &examples, config, epoch, &mut rng)?;
        let metrics = dev_metrics(&params, &dev_queries, config.max_objects);
        log.push(EpochLog {
            epoch,
            train_loss: outcome.mean_loss,
            dev_r1: metrics.0,
            dev_r5: metrics.1,
            dev_r10: metrics.2,
        });
        let better = match &best {
            None => true,
            Some((best_r5, _, _)) => metrics.1 > *best_r5,
        };
        if better {
            best = Some((metrics.1, epoch, params.clone()));
        }
    }
    let (_, best_epoch, best_params) = best.expect("at least one epoch ran");
    Ok(FitOutcome {
        best: best_params,
        best_epoch,
        log,
    })
}

/// Overall dev (R@1, R@5, R@10) for the current parameters.
pub fn dev_metrics<S: Scalar>(
    params: &VccParameters<S>,
    dev_queries: &[RankingQuery],
    max_objects: usize,
) -> (f64, f64, f64) {
    let scorer = ModelScorer {
        params,
        max_objects,
    };
    let report = evaluate(&scorer, dev_queries, 1);
    (report.overall.r1, report.overall.r5, report.overall.r10)
}
