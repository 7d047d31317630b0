//! Vote aggregation: plausibility scores, the positive-selection rule,
//! inter-annotator agreement, and the with/without-context distribution
//! comparison.
//!
//! Plausibility lives on the 0.2 grid (k causal votes out of five), so
//! everything here counts integers and only converts to fractions at the
//! reporting edge.

use crate::dataset::{VideoRecord, VoteLabel};
use serde::Serialize;
use std::collections::BTreeSet;
use std::collections::HashMap;
use std::hash::Hash;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("plausibility needs exactly 5 votes, got {0}")]
    WrongVoteCount(usize),
    #[error("inter-annotator agreement needs at least 2 annotators, got {0}")]
    FewAnnotators(usize),
    #[error("vote table is empty")]
    EmptyTable,
    #[error("vote table row {0} has a different annotator count")]
    RaggedTable(usize),
}

/// Fraction of the five annotators voting "causal".
pub fn plausibility(votes: &[VoteLabel]) -> Result<f64, AnalysisError> {
    if votes.len() != 5 {
        return Err(AnalysisError::WrongVoteCount(votes.len()));
    }
    let causal = votes.iter().filter(|v| **v == VoteLabel::Causal).count();
    Ok(causal as f64 / 5.0)
}

/// Ids (`video/pair/cause/effect`) of candidates whose with-context
/// plausibility reaches 0.8, i.e. at least four of five causal votes.
/// Without-context votes play no role in labeling.
pub fn select_positives(videos: &[&VideoRecord]) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for video in videos {
        for pair in &video.pairs {
            for cand in &pair.candidates {
                if cand.is_positive() {
                    out.insert(format!(
                        "{}/{}/{}/{}",
                        video.video_id, pair.pair_id, cand.cause, cand.effect
                    ));
                }
            }
        }
    }
    out
}

/// Average agreement of each annotator with the majority of the others.
///
/// For annotator `a` on item `i`: 1 if `a`'s label equals the unique
/// majority label of the other annotators, 0.5 if their majority is tied,
/// 0 otherwise. The result is the mean over all (annotator, item) cells.
pub fn iaa<T: Eq + Hash>(table: &[Vec<T>]) -> Result<f64, AnalysisError> {
    if table.is_empty() {
        return Err(AnalysisError::EmptyTable);
    }
    let annotators = table[0].len();
    if annotators < 2 {
        return Err(AnalysisError::FewAnnotators(annotators));
    }
    for (i, row) in table.iter().enumerate() {
        if row.len() != annotators {
            return Err(AnalysisError::RaggedTable(i));
        }
    }
    let mut total = 0.0f64;
    for row in table {
        for a in 0..annotators {
            let mut counts: HashMap<&T, usize> = HashMap::new();
            for (j, label) in row.iter().enumerate() {
                if j != a {
                    *counts.entry(label).or_default() += 1;
                }
            }
            let max = counts.values().copied().max().expect("others non-empty");
            let at_max = counts.values().filter(|&&c| c == max).count();
            total += if at_max > 1 {
                0.5
            } else if counts.get(&row[a]) == Some(&max) {
                1.0
            } else {
                0.0
            };
        }
    }
    Ok(total / (table.len() * annotators) as f64)
}

/// One candidate's plausibility under both settings, on the integer grid
/// (causal vote counts out of five).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlausibilityRecord {
    pub candidate_id: String,
    /// Causal votes with context, 0..=5.
    pub with_votes: usize,
    /// Causal votes without context, 0..=5.
    pub without_votes: usize,
}

impl PlausibilityRecord {
    pub fn with_context(&self) -> f64 {
        self.with_votes as f64 / 5.0
    }

    pub fn without_context(&self) -> f64 {
        self.without_votes as f64 / 5.0
    }

    /// (with - without) on the grid, in -5..=5.
    pub fn difference_steps(&self) -> i64 {
        self.with_votes as i64 - self.without_votes as i64
    }

    pub fn difference(&self) -> f64 {
        self.difference_steps() as f64 / 5.0
    }
}

/// Records for every candidate annotated under both settings.
pub fn plausibility_records(videos: &[&VideoRecord]) -> Vec<PlausibilityRecord> {
    let mut out = Vec::new();
    for video in videos {
        for pair in &video.pairs {
            for cand in &pair.candidates {
                if cand.votes_ctx.len() != 5 || cand.votes_noctx.len() != 5 {
                    continue;
                }
                out.push(PlausibilityRecord {
                    candidate_id: format!(
                        "{}/{}/{}/{}",
                        video.video_id, pair.pair_id, cand.cause, cand.effect
                    ),
                    with_votes: cand.causal_votes_with_context(),
                    without_votes: cand.causal_votes_without_context(),
                });
            }
        }
    }
    out
}

/// Binned counts over the 0.2 grid: six bins per setting, eleven bins for
/// the difference over [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlausibilityHistograms {
    pub with_context: [usize; 6],
    pub without_context: [usize; 6],
    pub difference: [usize; 11],
}

impl PlausibilityHistograms {
    pub fn total(&self) -> usize {
        self.with_context.iter().sum()
    }

    fn csv(bins: impl Iterator<Item = (f64, usize)>) -> String {
        let mut out = String::from("bin,count\n");
        for (bin, count) in bins {
            out.push_str(&format!("{bin},{count}\n"));
        }
        out
    }

    pub fn with_context_csv(&self) -> String {
        Self::csv(
            self.with_context
                .iter()
                .enumerate()
                .map(|(k, &c)| (k as f64 / 5.0, c)),
        )
    }

    pub fn without_context_csv(&self) -> String {
        Self::csv(
            self.without_context
                .iter()
                .enumerate()
                .map(|(k, &c)| (k as f64 / 5.0, c)),
        )
    }

    pub fn difference_csv(&self) -> String {
        Self::csv(
            self.difference
                .iter()
                .enumerate()
                .map(|(k, &c)| ((k as i64 - 5) as f64 / 5.0, c)),
        )
    }
}

pub fn plausibility_histograms(records: &[PlausibilityRecord]) -> PlausibilityHistograms {
    let mut h = PlausibilityHistograms {
        with_context: [0; 6],
        without_context: [0; 6],
        difference: [0; 11],
    };
    for r in records {
        h.with_context[r.with_votes] += 1;
        h.without_context[r.without_votes] += 1;
        h.difference[(r.difference_steps() + 5) as usize] += 1;
    }
    h
}

/// Full analysis output for one set of records.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    /// Candidates annotated under both settings.
    pub candidates: usize,
    pub positives: usize,
    pub iaa_with: f64,
    pub iaa_without: f64,
    pub histograms: PlausibilityHistograms,
    /// Fraction with difference <= -0.4 (strictly more plausible without
    /// the context).
    pub stronger_without_fraction: f64,
    /// Fraction with difference >= +0.4 (context makes the relation).
    pub stronger_with_fraction: f64,
}

impl AnalysisReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("annotated candidates : {}\n", self.candidates));
        out.push_str(&format!("positives (>= 0.8)   : {}\n", self.positives));
        out.push_str(&format!("IAA with context     : {:.4}\n", self.iaa_with));
        out.push_str(&format!("IAA without context  : {:.4}\n", self.iaa_without));
        out.push_str(&format!(
            "diff <= -0.4         : {:.4}\n",
            self.stronger_without_fraction
        ));
        out.push_str(&format!(
            "diff >= +0.4         : {:.4}\n",
            self.stronger_with_fraction
        ));
        out
    }
}

/// Analyze every double-annotated candidate of the given records.
pub fn analyze(videos: &[&VideoRecord]) -> Result<AnalysisReport, AnalysisError> {
    let records = plausibility_records(videos);
    let histograms = plausibility_histograms(&records);
    let mut with_table = Vec::with_capacity(records.len());
    let mut without_table = Vec::with_capacity(records.len());
    for video in videos {
        for pair in &video.pairs {
            for cand in &pair.candidates {
                if cand.votes_ctx.len() == 5 && cand.votes_noctx.len() == 5 {
                    with_table.push(cand.votes_ctx.clone());
                    without_table.push(cand.votes_noctx.clone());
                }
            }
        }
    }
    let (iaa_with, iaa_without) = if records.is_empty() {
        (0.0, 0.0)
    } else {
        (iaa(&with_table)?, iaa(&without_table)?)
    };
    let n = records.len().max(1) as f64;
    let stronger_without = records
        .iter()
        .filter(|r| r.difference_steps() <= -2)
        .count() as f64
        / n;
    let stronger_with = records
        .iter()
        .filter(|r| r.difference_steps() >= 2)
        .count() as f64
        / n;
    Ok(AnalysisReport {
        candidates: records.len(),
        positives: select_positives(videos).len(),
        iaa_with,
        iaa_without,
        histograms,
        stronger_without_fraction: stronger_without,
        stronger_with_fraction: stronger_with,
    })
}
