//! Planted-signal dataset generator.
//!
//! Causal rules come in cause-sharing groups. In a contextual group every
//! rule pairs the shared cause text with its own effect text and its own
//! required context object (the "gate"). Each rule instance plants:
//!
//! * the cause event in one image pair, with the gated rule's object in
//!   that pair's detections,
//! * every effect text of the group in the next pair (the following
//!   frame), so the ranking pool always contains the text-identical
//!   twins,
//! * a positive candidate for the gated effect (5/5 causal votes with
//!   context) and one contrast candidate for a partner effect whose gate
//!   is absent (0/5 causal with context) — one contrast per positive.
//!
//! Gated rules rotate within each group, so cause texts associate with
//! every effect of their group equally often across the dataset. A scorer
//! that ignores the detections therefore cannot tell which twin a given
//! instance gates: its best Recall@1 is 1/group-size, far below a scorer
//! that reads the gate object. Plain (context-free) groups have a single
//! always-causal rule and no contrast.

use crate::dataset::{
    CandidatePair, Dataset, Detection, Event, ImagePairRecord, Split, SplitStats, VideoRecord,
    VoteLabel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("contextual fraction must be in [0,1], got {0}")]
    BadFraction(f64),
    #[error("detection noise must be in [0,1], got {0}")]
    BadNoise(f64),
    #[error("{0} must be at least 1")]
    ZeroCount(&'static str),
    #[error("contextual groups need at least 2 rules, got {0}")]
    GroupTooSmall(usize),
    #[error(
        "rules exceed the object vocabulary: need {needed} gate objects plus {fillers} fillers, have {available}"
    )]
    RulesExceedVocabulary {
        needed: usize,
        fillers: usize,
        available: usize,
    },
    #[error("explicit rule group '{cause}' mixes gated and ungated rules")]
    MixedGroup { cause: String },
    #[error("explicit rule list repeats (cause, effect) pair '{0}'")]
    DuplicateRule(String),
}

/// One planted rule: the cause text, the effect text, and the context
/// object required for the relation to hold (none = always causal).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedRule {
    pub cause: String,
    pub effect: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<String>,
}

/// Generator configuration. With an empty `rules` list the rule set is
/// derived from the counts: `rule_groups` groups, of which
/// `round(contextual_fraction * rule_groups)` are contextual with
/// `group_size` gated effects each, the rest single always-causal rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub train_videos: usize,
    pub dev_videos: usize,
    pub test_videos: usize,
    /// Rule instances (positives) per video; pairs per video is this + 1.
    pub instances_per_video: usize,
    pub distractor_events_per_pair: usize,
    pub filler_objects_per_pair: usize,
    pub rule_groups: usize,
    pub group_size: usize,
    /// Fraction of rule groups that are context-gated.
    pub contextual_fraction: f64,
    pub object_vocab_size: usize,
    pub distractor_vocab_size: usize,
    /// Probability per image pair of one spurious random object.
    pub detection_noise: f64,
    pub seed: u64,
    /// Explicit rule set; overrides the derived one when non-empty.
    pub rules: Vec<PlantedRule>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            train_videos: 500,
            dev_videos: 50,
            test_videos: 50,
            instances_per_video: 4,
            distractor_events_per_pair: 2,
            filler_objects_per_pair: 2,
            rule_groups: 5,
            group_size: 8,
            contextual_fraction: 1.0,
            object_vocab_size: 64,
            distractor_vocab_size: 30,
            detection_noise: 0.0,
            seed: 7,
            rules: Vec::new(),
        }
    }
}

/// Rules sharing one cause text. `gates[i]` gates `effects[i]`; `None`
/// for plain groups (which always have exactly one effect).
#[derive(Debug, Clone, PartialEq)]
pub struct RuleGroup {
    pub cause: String,
    pub effects: Vec<String>,
    pub gates: Vec<Option<String>>,
}

impl RuleGroup {
    pub fn is_contextual(&self) -> bool {
        self.gates.iter().any(|g| g.is_some())
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(0.0..=1.0).contains(&self.contextual_fraction) {
            return Err(SynthError::BadFraction(self.contextual_fraction));
        }
        if !(0.0..=1.0).contains(&self.detection_noise) {
            return Err(SynthError::BadNoise(self.detection_noise));
        }
        if self.instances_per_video == 0 {
            return Err(SynthError::ZeroCount("instances_per_video"));
        }
        if self.rules.is_empty() {
            if self.rule_groups == 0 {
                return Err(SynthError::ZeroCount("rule_groups"));
            }
            if self.contextual_group_count() > 0 && self.group_size < 2 {
                return Err(SynthError::GroupTooSmall(self.group_size));
            }
        }
        let groups = self.rule_groups()?;
        let needed: usize = groups
            .iter()
            .map(|g| g.gates.iter().filter(|x| x.is_some()).count())
            .sum();
        let fillers = self.filler_objects_per_pair;
        if needed + fillers > self.object_vocab_size {
            return Err(SynthError::RulesExceedVocabulary {
                needed,
                fillers,
                available: self.object_vocab_size,
            });
        }
        Ok(())
    }

    fn contextual_group_count(&self) -> usize {
        (self.contextual_fraction * self.rule_groups as f64).round() as usize
    }

    /// The effective rule set, flattened.
    pub fn rules(&self) -> Result<Vec<PlantedRule>, SynthError> {
        Ok(self
            .rule_groups()?
            .into_iter()
            .flat_map(|g| {
                g.effects
                    .into_iter()
                    .zip(g.gates)
                    .map(move |(effect, gate)| PlantedRule {
                        cause: g.cause.clone(),
                        effect,
                        gate,
                    })
                    .collect::<Vec<_>>()
            })
            .collect())
    }

    /// The effective rule set, grouped by cause text.
    pub fn rule_groups(&self) -> Result<Vec<RuleGroup>, SynthError> {
        if !self.rules.is_empty() {
            return group_explicit_rules(&self.rules);
        }
        let contextual = self.contextual_group_count();
        let mut groups = Vec::with_capacity(self.rule_groups);
        for p in 0..self.rule_groups {
            if p < contextual {
                let effects = (0..self.group_size)
                    .map(|j| format!("outcome{p}x{j} follows"))
                    .collect();
                // The gate is a content word of its effect, like a
                // detected "leaves" object gating "the leaves blow
                // around". The shared embedding table ties them together.
                let gates = (0..self.group_size)
                    .map(|j| Some(format!("outcome{p}x{j}")))
                    .collect();
                groups.push(RuleGroup {
                    cause: format!("trigger{p} occurs"),
                    effects,
                    gates,
                });
            } else {
                groups.push(RuleGroup {
                    cause: format!("trigger{p} occurs"),
                    effects: vec![format!("outcome{p}x0 follows")],
                    gates: vec![None],
                });
            }
        }
        Ok(groups)
    }
}

fn group_explicit_rules(rules: &[PlantedRule]) -> Result<Vec<RuleGroup>, SynthError> {
    let mut groups: Vec<RuleGroup> = Vec::new();
    for rule in rules {
        let key = format!("{} -> {}", rule.cause, rule.effect);
        if groups.iter().any(|g| {
            g.cause == rule.cause && g.effects.iter().any(|e| e == &rule.effect)
        }) {
            return Err(SynthError::DuplicateRule(key));
        }
        match groups.iter_mut().find(|g| g.cause == rule.cause) {
            Some(group) => {
                group.effects.push(rule.effect.clone());
                group.gates.push(rule.gate.clone());
            }
            None => groups.push(RuleGroup {
                cause: rule.cause.clone(),
                effects: vec![rule.effect.clone()],
                gates: vec![rule.gate.clone()],
            }),
        }
    }
    for g in &groups {
        let gated = g.gates.iter().filter(|x| x.is_some()).count();
        if gated != 0 && gated != g.gates.len() {
            return Err(SynthError::MixedGroup {
                cause: g.cause.clone(),
            });
        }
        if gated > 0 && g.gates.len() < 2 {
            return Err(SynthError::GroupTooSmall(g.gates.len()));
        }
    }
    Ok(groups)
}

/// Deterministic votes per candidate role.
pub fn planted_votes(gated: bool, contextual: bool) -> (Vec<VoteLabel>, Vec<VoteLabel>) {
    use VoteLabel::*;
    if !contextual {
        // Always-causal rule: unanimous in both settings.
        return (vec![Causal; 5], vec![Causal; 5]);
    }
    // Without the images both twins look half-plausible, so the two
    // settings only disagree when the gate decides.
    let noctx = vec![Causal, Causal, Inference, None, None];
    if gated {
        (vec![Causal; 5], noctx)
    } else {
        (vec![None, Inference, Temporal, None, None], noctx)
    }
}

struct ObjectVocab {
    gates: Vec<String>,
    props: Vec<String>,
}

fn object_vocab(groups: &[RuleGroup], config: &SyntheticConfig) -> ObjectVocab {
    let gates: Vec<String> = groups
        .iter()
        .flat_map(|g| g.gates.iter().flatten().cloned())
        .collect();
    let props = (0..config.object_vocab_size.saturating_sub(gates.len()))
        .map(|r| format!("prop{r}"))
        .collect();
    ObjectVocab { gates, props }
}

/// Generate the dataset. Same config (and seed) always produces the same
/// records byte for byte.
pub fn generate(config: &SyntheticConfig) -> Result<Dataset, SynthError> {
    config.validate()?;
    let groups = config.rule_groups()?;
    let vocab = object_vocab(&groups, config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // Rotating counters keep gated rules balanced within each group.
    let mut group_cursor = 0usize;
    let mut gated_cursor = vec![0usize; groups.len()];

    let split_plan = [
        (Split::Train, config.train_videos),
        (Split::Dev, config.dev_videos),
        (Split::Test, config.test_videos),
    ];
    let categories = ["sports", "household", "eating", "socializing"];

    let mut videos = Vec::new();
    for (split, count) in split_plan {
        for v in 0..count {
            let video_id = format!("syn-{split}-{v:04}");
            let n_pairs = config.instances_per_video + 1;

            // One rule group per video, cycling across videos. Keeping a
            // video inside one group makes its event pool dense in that
            // group's twins, so sampled negatives exercise the contrast
            // that matters.
            let video_group = group_cursor % groups.len();
            group_cursor += 1;
            let instance_groups: Vec<usize> =
                vec![video_group; config.instances_per_video];

            // Pass 1: events. Pair j carries instance j's cause and
            // instance j-1's effect twins, plus distractors.
            let mut pairs: Vec<ImagePairRecord> = Vec::with_capacity(n_pairs);
            let mut event_counter = 0usize;
            let mut event_ids: Vec<Vec<(String, String)>> = Vec::new(); // per pair: (id, text)
            for j in 0..n_pairs {
                let mut events: Vec<(String, String)> = Vec::new();
                let mut push_event = |text: String, events: &mut Vec<(String, String)>| {
                    let id = format!("{video_id}-e{event_counter}");
                    event_counter += 1;
                    events.push((id, text));
                };
                if j < config.instances_per_video {
                    push_event(groups[instance_groups[j]].cause.clone(), &mut events);
                }
                if j > 0 {
                    for effect in &groups[instance_groups[j - 1]].effects {
                        push_event(effect.clone(), &mut events);
                    }
                }
                for _ in 0..config.distractor_events_per_pair {
                    let q = rng.gen_range(0..config.distractor_vocab_size.max(1));
                    push_event(format!("filler{q} appears"), &mut events);
                }
                event_ids.push(events);
            }

            // Pass 2: detections and candidates per pair.
            for j in 0..n_pairs {
                let mut detections = Vec::new();
                let mut candidates = Vec::new();
                if j < config.instances_per_video {
                    let group = &groups[instance_groups[j]];
                    let k = group.effects.len();
                    let gated_idx = gated_cursor[instance_groups[j]] % k;
                    gated_cursor[instance_groups[j]] += 1;

                    if let Some(gate) = &group.gates[gated_idx] {
                        detections.push(Detection {
                            word: gate.clone(),
                            confidence: round6(rng.gen_range(0.85..0.99)),
                            source: rng.gen_range(1..=2),
                        });
                    }
                    for _ in 0..config.filler_objects_per_pair {
                        let r = rng.gen_range(0..vocab.props.len().max(1));
                        detections.push(Detection {
                            word: vocab.props[r].clone(),
                            confidence: round6(rng.gen_range(0.1..0.7)),
                            source: rng.gen_range(1..=2),
                        });
                    }
                    if config.detection_noise > 0.0 && rng.gen::<f64>() < config.detection_noise
                    {
                        let all = vocab.gates.len() + vocab.props.len();
                        let pick = rng.gen_range(0..all.max(1));
                        let word = if pick < vocab.gates.len() {
                            vocab.gates[pick].clone()
                        } else {
                            vocab.props[pick - vocab.gates.len()].clone()
                        };
                        detections.push(Detection {
                            word,
                            confidence: round6(rng.gen_range(0.5..1.0)),
                            source: rng.gen_range(1..=2),
                        });
                    }

                    let cause_id = event_ids[j][0].0.clone();
                    let effect_id = |text: &str| -> String {
                        event_ids[j + 1]
                            .iter()
                            .find(|(_, t)| t == text)
                            .expect("effect event planted in next pair")
                            .0
                            .clone()
                    };
                    let contextual = group.is_contextual();
                    let (ctx, noctx) = planted_votes(true, contextual);
                    candidates.push(CandidatePair {
                        cause: cause_id.clone(),
                        effect: effect_id(&group.effects[gated_idx]),
                        votes_ctx: ctx,
                        votes_noctx: noctx,
                    });
                    if contextual {
                        let partner = (gated_idx + 1) % k;
                        let (ctx, noctx) = planted_votes(false, true);
                        candidates.push(CandidatePair {
                            cause: cause_id,
                            effect: effect_id(&group.effects[partner]),
                            votes_ctx: ctx,
                            votes_noctx: noctx,
                        });
                    }
                }
                pairs.push(ImagePairRecord {
                    pair_id: format!("{video_id}-p{j}"),
                    events: event_ids[j]
                        .iter()
                        .map(|(id, text)| Event::new(id.clone(), text.clone()))
                        .collect(),
                    detections,
                    image_feature: None,
                    candidates,
                });
            }

            videos.push(VideoRecord::new(
                video_id.clone(),
                categories[v % categories.len()],
                split,
                pairs,
            ));
        }
    }
    Ok(Dataset::from_videos(videos).expect("generated records satisfy the schema"))
}

/// Confidences rounded so their decimal rendering is short and stable.
fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Statistics of a dataset in the shape of the reference table.
pub fn describe(dataset: &Dataset) -> BTreeMap<Split, SplitStats> {
    dataset.statistics()
}
