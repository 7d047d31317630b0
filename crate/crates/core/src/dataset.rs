//! Data model and file format for video-derived causality records.
//!
//! A dataset file is UTF-8 text: a `#vis-causal-format v1` header line,
//! then one JSON video record per line. Records are validated on load;
//! every derived structure (the per-video event pool, id resolution)
//! is rebuilt at that point, so records are immutable afterwards and
//! safe to share across threads.
//!
//! Event identity within a video is the event *text* (lowercased,
//! whitespace-tokenized): the same description annotated in two image
//! pairs is one pool entry. The first occurrence is the canonical event.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

/// Required first line of a v1 dataset file.
pub const FORMAT_HEADER: &str = "#vis-causal-format v1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("missing or wrong header line: expected '{FORMAT_HEADER}'")]
    BadHeader,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("record '{record}': {message}")]
    Validation { record: String, message: String },
    #[error("unknown split name '{0}' (expected train, dev, or test)")]
    UnknownSplit(String),
    #[error("event '{event}' not found in video '{video}'")]
    UnknownEvent { video: String, event: String },
}

/// Dataset partition, fixed by the source corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Dev => write!(f, "dev"),
            Split::Test => write!(f, "test"),
        }
    }
}

impl FromStr for Split {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(DatasetError::UnknownSplit(other.to_string())),
        }
    }
}

/// The closed vote label set used by both annotation settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoteLabel {
    Causal,
    Inference,
    Temporal,
    None,
    Other,
}

/// A short natural-language description of something happening in an image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub event_id: String,
    pub text: String,
}

impl Event {
    pub fn new(event_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            event_id: event_id.into(),
            text: text.into(),
        }
    }

    /// Whitespace tokens of the (already lowercased) text.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.text.split_whitespace()
    }

    pub fn token_count(&self) -> usize {
        self.tokens().count()
    }
}

/// One detected object word with its detector confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub word: String,
    pub confidence: f64,
    /// 1 for the earlier image of the pair, 2 for the later one.
    pub source: u8,
}

/// An annotated candidate cause/effect event pair. Vote lists are either
/// empty (no annotation) or exactly five labels per setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePair {
    /// Event id of the cause; must appear among the pair's events.
    pub cause: String,
    /// Event id of the effect; must resolve somewhere in the video.
    pub effect: String,
    #[serde(default)]
    pub votes_ctx: Vec<VoteLabel>,
    #[serde(default)]
    pub votes_noctx: Vec<VoteLabel>,
}

impl CandidatePair {
    pub fn causal_votes_with_context(&self) -> usize {
        self.votes_ctx
            .iter()
            .filter(|v| **v == VoteLabel::Causal)
            .count()
    }

    pub fn causal_votes_without_context(&self) -> usize {
        self.votes_noctx
            .iter()
            .filter(|v| **v == VoteLabel::Causal)
            .count()
    }

    /// Positive rule: at least four of five with-context votes are causal.
    pub fn is_positive(&self) -> bool {
        self.causal_votes_with_context() >= 4
    }
}

/// Two time-consecutive images: events identified in the first image,
/// detections from both, and the annotated candidate pairs anchored here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePairRecord {
    pub pair_id: String,
    pub events: Vec<Event>,
    pub detections: Vec<Detection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_feature: Option<Vec<f64>>,
    pub candidates: Vec<CandidatePair>,
}

/// One video: its split, category label, ordered image pairs, and the
/// derived deduplicated event pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub video_id: String,
    pub category: String,
    pub split: Split,
    pub pairs: Vec<ImagePairRecord>,
    #[serde(skip)]
    pool: Vec<Event>,
    #[serde(skip)]
    id_to_pool: HashMap<String, usize>,
}

impl VideoRecord {
    pub fn new(
        video_id: impl Into<String>,
        category: impl Into<String>,
        split: Split,
        pairs: Vec<ImagePairRecord>,
    ) -> Self {
        Self {
            video_id: video_id.into(),
            category: category.into(),
            split,
            pairs,
            pool: Vec::new(),
            id_to_pool: HashMap::new(),
        }
    }

    /// Deduplicated union of every pair's events, in first-occurrence
    /// order. Populated by validation.
    pub fn event_pool(&self) -> &[Event] {
        &self.pool
    }

    /// Canonical event for an id, resolving duplicates by text.
    pub fn resolve(&self, event_id: &str) -> Option<&Event> {
        self.id_to_pool.get(event_id).map(|&i| &self.pool[i])
    }

    /// Normalize event texts, check every invariant, and build the pool.
    pub fn validate(&mut self) -> Result<(), DatasetError> {
        let fail = |message: String| -> DatasetError {
            DatasetError::Validation {
                record: String::new(),
                message,
            }
        };
        if self.pairs.is_empty() {
            return Err(fail("video has no image pairs".into()));
        }
        // Normalize: lowercase, single-space tokenization.
        for pair in &mut self.pairs {
            for event in &mut pair.events {
                let tokens: Vec<String> = event
                    .text
                    .split_whitespace()
                    .map(|t| t.to_lowercase())
                    .collect();
                if tokens.is_empty() {
                    return Err(fail(format!("event '{}' has empty text", event.event_id)));
                }
                event.text = tokens.join(" ");
            }
        }
        // Build the pool and the id resolution map.
        self.pool.clear();
        self.id_to_pool.clear();
        let mut text_to_pool: HashMap<String, usize> = HashMap::new();
        let mut id_text: HashMap<String, String> = HashMap::new();
        for pair in &self.pairs {
            for event in &pair.events {
                if let Some(prev) = id_text.get(&event.event_id) {
                    if prev != &event.text {
                        return Err(fail(format!(
                            "event id '{}' appears with two different texts",
                            event.event_id
                        )));
                    }
                } else {
                    id_text.insert(event.event_id.clone(), event.text.clone());
                }
                let idx = *text_to_pool.entry(event.text.clone()).or_insert_with(|| {
                    self.pool.push(event.clone());
                    self.pool.len() - 1
                });
                self.id_to_pool.insert(event.event_id.clone(), idx);
            }
        }
        // Per-pair checks.
        for pair in &self.pairs {
            for det in &pair.detections {
                if !(0.0..=1.0).contains(&det.confidence) {
                    return Err(fail(format!(
                        "pair '{}': detection '{}' confidence {} outside [0,1]",
                        pair.pair_id, det.word, det.confidence
                    )));
                }
                if det.source != 1 && det.source != 2 {
                    return Err(fail(format!(
                        "pair '{}': detection '{}' source {} is not 1 or 2",
                        pair.pair_id, det.word, det.source
                    )));
                }
            }
            let first_image_ids: Vec<&str> =
                pair.events.iter().map(|e| e.event_id.as_str()).collect();
            for cand in &pair.candidates {
                for votes in [&cand.votes_ctx, &cand.votes_noctx] {
                    if !votes.is_empty() && votes.len() != 5 {
                        return Err(fail(format!(
                            "pair '{}': candidate {} -> {} has {} votes (expected 0 or 5)",
                            pair.pair_id,
                            cand.cause,
                            cand.effect,
                            votes.len()
                        )));
                    }
                }
                if !first_image_ids.contains(&cand.cause.as_str()) {
                    return Err(fail(format!(
                        "pair '{}': candidate cause '{}' is not a first-image event of the pair",
                        pair.pair_id, cand.cause
                    )));
                }
                let cause = self
                    .id_to_pool
                    .get(&cand.cause)
                    .map(|&i| &self.pool[i])
                    .ok_or_else(|| fail(format!("unknown cause event id '{}'", cand.cause)))?;
                let effect = self
                    .id_to_pool
                    .get(&cand.effect)
                    .map(|&i| &self.pool[i])
                    .ok_or_else(|| fail(format!("unknown effect event id '{}'", cand.effect)))?;
                if cause.text == effect.text {
                    return Err(fail(format!(
                        "pair '{}': candidate cause and effect are the same event ('{}')",
                        pair.pair_id, cause.text
                    )));
                }
            }
        }
        Ok(())
    }

    /// Every (pair index, candidate index) whose candidate is positive.
    pub fn positive_candidates(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (pi, pair) in self.pairs.iter().enumerate() {
            for (ci, cand) in pair.candidates.iter().enumerate() {
                if cand.is_positive() {
                    out.push((pi, ci));
                }
            }
        }
        out
    }
}

/// Candidate pool for ranking: the video's deduplicated events minus the
/// query event, sorted by event id.
pub fn candidate_pool<'a>(
    video: &'a VideoRecord,
    query_event_id: &str,
) -> Result<Vec<&'a Event>, DatasetError> {
    let query = video
        .resolve(query_event_id)
        .ok_or_else(|| DatasetError::UnknownEvent {
            video: video.video_id.clone(),
            event: query_event_id.to_string(),
        })?;
    let query_text = query.text.clone();
    let mut pool: Vec<&Event> = video
        .event_pool()
        .iter()
        .filter(|e| e.text != query_text)
        .collect();
    pool.sort_by(|a, b| a.event_id.cmp(&b.event_id));
    Ok(pool)
}

/// Per-split counts in the shape of the usual dataset statistics table.
/// `images` counts one more image than pairs per video, since pairs chain
/// consecutive frames. `mean_candidates` is the mean over videos of
/// (pool size - 1), the candidate list length seen by any query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SplitStats {
    pub videos: usize,
    pub images: usize,
    pub pairs: usize,
    pub positives: usize,
    pub mean_candidates: f64,
}

impl SplitStats {
    fn from_videos(videos: &[&VideoRecord]) -> Self {
        let pairs: usize = videos.iter().map(|v| v.pairs.len()).sum();
        let images = pairs + videos.len();
        let positives = videos
            .iter()
            .map(|v| v.positive_candidates().len())
            .sum();
        let mean_candidates = if videos.is_empty() {
            0.0
        } else {
            let total: usize = videos
                .iter()
                .map(|v| v.event_pool().len().saturating_sub(1))
                .sum();
            total as f64 / videos.len() as f64
        };
        Self {
            videos: videos.len(),
            images,
            pairs,
            positives,
            mean_candidates,
        }
    }
}

/// A validated collection of video records.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub videos: Vec<VideoRecord>,
}

impl Dataset {
    /// Validate a set of records and build their derived structures.
    pub fn from_videos(mut videos: Vec<VideoRecord>) -> Result<Self, DatasetError> {
        for video in &mut videos {
            video.validate().map_err(|e| match e {
                DatasetError::Validation { message, .. } => DatasetError::Validation {
                    record: video.video_id.clone(),
                    message,
                },
                other => other,
            })?;
        }
        Ok(Self { videos })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_reader(BufReader::new(file))
    }

    pub fn from_reader(reader: impl BufRead) -> Result<Self, DatasetError> {
        let mut lines = reader.lines().enumerate();
        let header = match lines.next() {
            Some((_, Ok(line))) => line,
            Some((_, Err(e))) => {
                return Err(DatasetError::Io {
                    path: "<reader>".into(),
                    source: e,
                })
            }
            None => return Err(DatasetError::BadHeader),
        };
        if header.trim_end() != FORMAT_HEADER {
            return Err(DatasetError::BadHeader);
        }
        let mut videos = Vec::new();
        for (idx, line) in lines {
            let line = line.map_err(|e| DatasetError::Io {
                path: "<reader>".into(),
                source: e,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let mut video: VideoRecord =
                serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            video.validate().map_err(|e| match e {
                DatasetError::Validation { message, .. } => DatasetError::Validation {
                    record: video.video_id.clone(),
                    message,
                },
                other => other,
            })?;
            videos.push(video);
        }
        Ok(Self { videos })
    }

    pub fn parse_str(text: &str) -> Result<Self, DatasetError> {
        Self::from_reader(std::io::Cursor::new(text.as_bytes()))
    }

    /// Serialize to the v1 line format (header + one JSON record per line).
    pub fn to_v1_string(&self) -> String {
        let mut out = String::from(FORMAT_HEADER);
        out.push('\n');
        for video in &self.videos {
            out.push_str(&serde_json::to_string(video).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let path = path.as_ref();
        let mut file = std::fs::File::create(path).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        file.write_all(self.to_v1_string().as_bytes())
            .map_err(|source| DatasetError::Io {
                path: path.display().to_string(),
                source,
            })
    }

    /// Records of one split, order preserved.
    pub fn split(&self, split: Split) -> Vec<&VideoRecord> {
        self.videos.iter().filter(|v| v.split == split).collect()
    }

    /// Statistics per split; recomputation is a pure function of the records.
    pub fn statistics(&self) -> BTreeMap<Split, SplitStats> {
        Split::ALL
            .iter()
            .map(|&s| (s, SplitStats::from_videos(&self.split(s))))
            .collect()
    }
}
