//! Ranking evaluation: query construction, Recall@K, the random
//! lower-bound baseline, and the external score-file harness.
//!
//! One query is built per (cause event, gold effect) positive pair; its
//! candidate pool is every other deduplicated event of the same video.
//! Candidates are ranked by score descending with ties broken by event id,
//! so untrained or constant scorers still rank deterministically.

use crate::dataset::{candidate_pool, Dataset, DatasetError, Detection, Event, Split};
use crate::model::{ModelError, SelectedContext, VccParameters};
use crate::scalar::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("split {0} has no queries")]
    EmptySplit(Split),
    #[error("query '{query}': gold effect '{gold}' missing from the candidate pool")]
    GoldNotInPool { query: String, gold: String },
    #[error("cannot render a causal sentence: {0} text is empty")]
    EmptySentencePart(&'static str),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("score file line {line}: {message}")]
    ScoreFileParse { line: usize, message: String },
    #[error(
        "score file is missing {total} (query, candidate) entries; first gaps: {}",
        .sample.join(", ")
    )]
    ScoreFileCoverage { total: usize, sample: Vec<String> },
}

/// Detections and optional precomputed feature of the query's image pair.
#[derive(Debug, Clone, Default)]
pub struct PairContext {
    pub detections: Vec<Detection>,
    pub image_feature: Option<Vec<f64>>,
}

/// One ranking task: a cause event, its candidate pool, and the gold
/// effect this query is scored against.
#[derive(Debug, Clone)]
pub struct RankingQuery {
    /// Unique id: `video/pair/cause/gold` (canonical event ids).
    pub id: String,
    pub video_id: String,
    pub category: String,
    pub cause: Event,
    /// Candidate pool, sorted by event id.
    pub pool: Vec<Event>,
    /// Canonical id of the gold effect; always present in the pool.
    pub gold_id: String,
    pub context: PairContext,
}

/// One query per positive (cause, gold effect) pair of the split.
pub fn build_queries(dataset: &Dataset, split: Split) -> Result<Vec<RankingQuery>, EvalError> {
    let mut queries = Vec::new();
    for video in dataset.split(split) {
        for pair in &video.pairs {
            for cand in &pair.candidates {
                if !cand.is_positive() {
                    continue;
                }
                let cause = video
                    .resolve(&cand.cause)
                    .expect("validated candidate cause resolves")
                    .clone();
                let gold = video
                    .resolve(&cand.effect)
                    .expect("validated candidate effect resolves")
                    .clone();
                let pool: Vec<Event> = candidate_pool(video, &cause.event_id)?
                    .into_iter()
                    .cloned()
                    .collect();
                let id = format!(
                    "{}/{}/{}/{}",
                    video.video_id, pair.pair_id, cause.event_id, gold.event_id
                );
                if !pool.iter().any(|e| e.event_id == gold.event_id) {
                    return Err(EvalError::GoldNotInPool {
                        query: id,
                        gold: gold.event_id,
                    });
                }
                queries.push(RankingQuery {
                    id,
                    video_id: video.video_id.clone(),
                    category: video.category.clone(),
                    cause,
                    pool,
                    gold_id: gold.event_id.clone(),
                    context: PairContext {
                        detections: pair.detections.clone(),
                        image_feature: pair.image_feature.clone(),
                    },
                });
            }
        }
    }
    Ok(queries)
}

/// Anything that can score a query's whole candidate pool. Scores are
/// returned in pool order; an `Err` fails the query (it is excluded from
/// the report and counted).
pub trait QueryScorer: Sync {
    fn score_query(&self, query: &RankingQuery) -> Result<Vec<f64>, String>;
}

/// Scores candidates with a trained parameter set. All candidates of one
/// query share a graph, so the embedding table binds once per query.
pub struct ModelScorer<'a, S> {
    pub params: &'a VccParameters<S>,
    pub max_objects: usize,
}

impl<S: Scalar> ModelScorer<'_, S> {
    fn selected_context(&self, query: &RankingQuery) -> SelectedContext {
        let objects = crate::encoders::select_objects(&query.context.detections, self.max_objects)
            .into_iter()
            .map(|d| d.word)
            .collect();
        SelectedContext {
            objects,
            image_feature: query.context.image_feature.clone(),
        }
    }
}

impl<S: Scalar> QueryScorer for ModelScorer<'_, S> {
    fn score_query(&self, query: &RankingQuery) -> Result<Vec<f64>, String> {
        let ctx = self.selected_context(query);
        let mut g = crate::autodiff::Graph::new();
        let bound = self.params.bind(&mut g);
        let mut scores = Vec::with_capacity(query.pool.len());
        for candidate in &query.pool {
            let node = self
                .params
                .score_node(&mut g, &bound, &query.cause, candidate, &ctx)
                .map_err(|e| e.to_string())?;
            scores.push(g.value(node).item().to_f64().expect("score fits f64"));
        }
        Ok(scores)
    }
}

/// Pool indices in rank order (best first) plus the gold's rank.
#[derive(Debug, Clone)]
pub struct RankedQuery {
    pub order: Vec<usize>,
    pub gold_rank: usize,
}

/// Sort candidates by score descending, ties by event id ascending.
pub fn rank_candidates(query: &RankingQuery, scores: &[f64]) -> RankedQuery {
    assert_eq!(scores.len(), query.pool.len(), "one score per candidate");
    let mut order: Vec<usize> = (0..query.pool.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| query.pool[a].event_id.cmp(&query.pool[b].event_id))
    });
    let gold_rank = order
        .iter()
        .position(|&i| query.pool[i].event_id == query.gold_id)
        .expect("gold is in the pool");
    RankedQuery { order, gold_rank }
}

/// Fraction of queries whose gold effect ranks within the top `k`.
pub fn recall_at_k(ranked: &[RankedQuery], k: usize) -> f64 {
    if ranked.is_empty() {
        return 0.0;
    }
    let hits = ranked.iter().filter(|r| r.gold_rank < k).count();
    hits as f64 / ranked.len() as f64
}

/// Recall numbers for one group of queries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub queries: usize,
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
}

impl Metrics {
    fn from_hits(hits: &HitCounts) -> Self {
        let n = hits.weight.max(1.0);
        Metrics {
            queries: hits.queries,
            r1: hits.at1 / n,
            r5: hits.at5 / n,
            r10: hits.at10 / n,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct HitCounts {
    queries: usize,
    weight: f64,
    at1: f64,
    at5: f64,
    at10: f64,
}

impl HitCounts {
    fn add(&mut self, gold_rank: usize) {
        self.weight += 1.0;
        if gold_rank < 1 {
            self.at1 += 1.0;
        }
        if gold_rank < 5 {
            self.at5 += 1.0;
        }
        if gold_rank < 10 {
            self.at10 += 1.0;
        }
    }
}

/// Recall@K per category plus overall, and the count of queries whose
/// scorer failed (excluded from every number).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub categories: Vec<(String, Metrics)>,
    pub overall: Metrics,
    pub failed_queries: usize,
}

#[derive(Serialize)]
struct ReportRow<'a> {
    category: &'a str,
    queries: usize,
    r1: f64,
    r5: f64,
    r10: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    failed_queries: Option<usize>,
}

impl EvalReport {
    pub fn to_text_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<16} {:>8} {:>8} {:>8} {:>8}\n",
            "category", "queries", "R@1", "R@5", "R@10"
        ));
        for (name, m) in &self.categories {
            out.push_str(&format!(
                "{:<16} {:>8} {:>8.4} {:>8.4} {:>8.4}\n",
                name, m.queries, m.r1, m.r5, m.r10
            ));
        }
        let m = &self.overall;
        out.push_str(&format!(
            "{:<16} {:>8} {:>8.4} {:>8.4} {:>8.4}\n",
            "overall", m.queries, m.r1, m.r5, m.r10
        ));
        if self.failed_queries > 0 {
            out.push_str(&format!("failed queries: {}\n", self.failed_queries));
        }
        out
    }

    /// One JSON record per category, overall last.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (name, m) in &self.categories {
            let row = ReportRow {
                category: name,
                queries: m.queries,
                r1: m.r1,
                r5: m.r5,
                r10: m.r10,
                failed_queries: None,
            };
            out.push_str(&serde_json::to_string(&row).expect("row serializes"));
            out.push('\n');
        }
        let row = ReportRow {
            category: "overall",
            queries: self.overall.queries,
            r1: self.overall.r1,
            r5: self.overall.r5,
            r10: self.overall.r10,
            failed_queries: Some(self.failed_queries),
        };
        out.push_str(&serde_json::to_string(&row).expect("row serializes"));
        out.push('\n');
        out
    }
}

/// Score every query. Failed queries come back as `None` alongside their
/// error messages. With `jobs > 1`, queries are scored on that many
/// threads; output order is unchanged.
pub fn score_all(
    scorer: &dyn QueryScorer,
    queries: &[RankingQuery],
    jobs: usize,
) -> (Vec<Option<Vec<f64>>>, Vec<(usize, String)>) {
    let results: Vec<Result<Vec<f64>, String>> = if jobs <= 1 || queries.len() < 2 {
        queries.iter().map(|q| scorer.score_query(q)).collect()
    } else {
        let jobs = jobs.min(queries.len());
        let chunk = queries.len().div_ceil(jobs);
        let mut slots: Vec<Option<Result<Vec<f64>, String>>> = vec![None; queries.len()];
        std::thread::scope(|scope| {
            for (w, slot_chunk) in slots.chunks_mut(chunk).enumerate() {
                let start = w * chunk;
                scope.spawn(move || {
                    for (offset, slot) in slot_chunk.iter_mut().enumerate() {
                        *slot = Some(scorer.score_query(&queries[start + offset]));
                    }
                });
            }
        });
        slots.into_iter().map(|s| s.expect("slot filled")).collect()
    };
    let mut scores = Vec::with_capacity(queries.len());
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => scores.push(Some(s)),
            Err(message) => {
                scores.push(None);
                failures.push((i, message));
            }
        }
    }
    (scores, failures)
}

/// Aggregate scored queries into the per-category report. `None` entries
/// are excluded and counted as failed.
pub fn report_from_scores(queries: &[RankingQuery], scores: &[Option<Vec<f64>>]) -> EvalReport {
    assert_eq!(queries.len(), scores.len());
    let mut per_category: HashMap<&str, HitCounts> = HashMap::new();
    let mut overall = HitCounts::default();
    let mut failed = 0usize;
    for (query, entry) in queries.iter().zip(scores) {
        let Some(scores) = entry else {
            failed += 1;
            continue;
        };
        let ranked = rank_candidates(query, scores);
        per_category
            .entry(query.category.as_str())
            .or_default()
            .queries += 1;
        per_category
            .entry(query.category.as_str())
            .or_default()
            .add(ranked.gold_rank);
        overall.queries += 1;
        overall.add(ranked.gold_rank);
    }
    let mut categories: Vec<(String, Metrics)> = per_category
        .into_iter()
        .map(|(name, hits)| (name.to_string(), Metrics::from_hits(&hits)))
        .collect();
    categories.sort_by(|a, b| a.0.cmp(&b.0));
    EvalReport {
        categories,
        overall: Metrics::from_hits(&overall),
        failed_queries: failed,
    }
}

/// Score and aggregate in one step.
pub fn evaluate(
    scorer: &dyn QueryScorer,
    queries: &[RankingQuery],
    jobs: usize,
) -> EvalReport {
    let (scores, _failures) = score_all(scorer, queries, jobs);
    report_from_scores(queries, &scores)
}

/// One trial's random scores for every query, drawn from the shared rng.
fn random_trial(queries: &[RankingQuery], rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    queries
        .iter()
        .map(|q| (0..q.pool.len()).map(|_| rng.gen::<f64>()).collect())
        .collect()
}

/// Exactly the scores `random_baseline` uses for its first trial.
pub fn random_score_table(queries: &[RankingQuery], seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_trial(queries, &mut rng)
}

/// Performance lower bound: candidates in uniformly random order,
/// Recall@K averaged over `trials` drawings per query.
pub fn random_baseline(queries: &[RankingQuery], seed: u64, trials: usize) -> EvalReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_category: HashMap<&str, HitCounts> = HashMap::new();
    let mut overall = HitCounts::default();
    for q in queries {
        per_category.entry(q.category.as_str()).or_default().queries += 1;
        overall.queries += 1;
    }
    for _ in 0..trials.max(1) {
        let table = random_trial(queries, &mut rng);
        for (query, scores) in queries.iter().zip(&table) {
            let ranked = rank_candidates(query, scores);
            per_category
                .entry(query.category.as_str())
                .or_default()
                .add(ranked.gold_rank);
            overall.add(ranked.gold_rank);
        }
    }
    let mut categories: Vec<(String, Metrics)> = per_category
        .into_iter()
        .map(|(name, hits)| (name.to_string(), Metrics::from_hits(&hits)))
        .collect();
    categories.sort_by(|a, b| a.0.cmp(&b.0));
    EvalReport {
        categories,
        overall: Metrics::from_hits(&overall),
        failed_queries: 0,
    }
}

/// `"<cause>, so <effect>"` with the effect's first letter lowercased.
pub fn render_causal_sentence(cause: &str, effect: &str) -> Result<String, EvalError> {
    let cause = cause.trim();
    let effect = effect.trim();
    if cause.is_empty() {
        return Err(EvalError::EmptySentencePart("cause"));
    }
    if effect.is_empty() {
        return Err(EvalError::EmptySentencePart("effect"));
    }
    let mut chars = effect.chars();
    let first = chars.next().expect("non-empty effect");
    let rest: String = chars.collect();
    Ok(format!(
        "{cause}, so {}{rest}",
        first.to_lowercase()
    ))
}

// --- external score files -------------------------------------------------

/// Write `query_id <TAB> candidate_event_id <TAB> score` lines covering
/// every (query, candidate) pair. Scores round-trip bit-exactly.
pub fn write_score_lines(
    queries: &[RankingQuery],
    scores: &[Vec<f64>],
    mut out: impl Write,
) -> std::io::Result<()> {
    for (query, row) in queries.iter().zip(scores) {
        for (candidate, score) in query.pool.iter().zip(row) {
            writeln!(
                out,
                "{}\t{}\t{}",
                query.id,
                candidate.event_id,
                crate::scalar::Scalar::to_decimal(*score)
            )?;
        }
    }
    Ok(())
}

pub fn write_score_file(
    queries: &[RankingQuery],
    scores: &[Vec<f64>],
    path: impl AsRef<Path>,
) -> Result<(), EvalError> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    write_score_lines(queries, scores, std::io::BufWriter::new(file)).map_err(|source| {
        EvalError::Io {
            path: path.display().to_string(),
            source,
        }
    })
}

/// Rank every query from an externally produced score file and aggregate
/// exactly like the in-process path. Every (query, candidate) pair must be
/// covered; gaps are an error listing what is missing.
pub fn rank_from_score_reader(
    queries: &[RankingQuery],
    reader: impl BufRead,
) -> Result<EvalReport, EvalError> {
    let mut table: HashMap<(String, String), f64> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| EvalError::Io {
            path: "<reader>".into(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 {
            return Err(EvalError::ScoreFileParse {
                line: i + 1,
                message: format!("expected 3 tab-separated fields, got {}", parts.len()),
            });
        }
        let score: f64 = parts[2].parse().map_err(|_| EvalError::ScoreFileParse {
            line: i + 1,
            message: format!("cannot parse score '{}'", parts[2]),
        })?;
        table.insert((parts[0].to_string(), parts[1].to_string()), score);
    }
    let mut missing = Vec::new();
    let mut scores: Vec<Option<Vec<f64>>> = Vec::with_capacity(queries.len());
    for query in queries {
        let mut row = Vec::with_capacity(query.pool.len());
        for candidate in &query.pool {
            match table.get(&(query.id.clone(), candidate.event_id.clone())) {
                Some(&s) => row.push(s),
                None => missing.push(format!("{} / {}", query.id, candidate.event_id)),
            }
        }
        scores.push(Some(row));
    }
    if !missing.is_empty() {
        let total = missing.len();
        missing.truncate(5);
        return Err(EvalError::ScoreFileCoverage {
            total,
            sample: missing,
        });
    }
    Ok(report_from_scores(queries, &scores))
}

pub fn rank_from_score_file(
    queries: &[RankingQuery],
    path: impl AsRef<Path>,
) -> Result<EvalReport, EvalError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    rank_from_score_reader(queries, BufReader::new(file))
}
