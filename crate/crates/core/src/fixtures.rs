//! Deterministic in-memory datasets for tests and demos.
//!
//! `table_one_shaped` mirrors the split statistics of the real corpus
//! (800/100/100 videos, 4 pairs per video, 2599/329/282 positives, mean
//! candidate-list lengths 31.8/32.1/32.2) without any of its content, so
//! statistics and analysis code can be checked against known totals.

use crate::dataset::{
    CandidatePair, Dataset, Detection, Event, ImagePairRecord, Split, VideoRecord, VoteLabel,
};

/// Five votes: `causal` causal labels padded with `none`.
pub fn votes(causal: usize) -> Vec<VoteLabel> {
    assert!(causal <= 5);
    let mut v = vec![VoteLabel::Causal; causal];
    v.resize(5, VoteLabel::None);
    v
}

const CATEGORIES: [&str; 5] = [
    "sports",
    "socializing",
    "household",
    "personal care",
    "eating",
];

struct SplitPlan {
    split: Split,
    videos: usize,
    /// (videos with the larger event count, larger count, smaller count)
    events: (usize, usize, usize),
    /// (videos with the larger positive count, larger count, smaller count)
    positives: (usize, usize, usize),
}

fn build_video(split: Split, index: usize, n_events: usize, n_positives: usize) -> VideoRecord {
    let video_id = format!("v-{split}-{index:04}");
    let event_text = |i: usize| format!("event {i} happens");
    let mut pairs: Vec<ImagePairRecord> = (0..4)
        .map(|p| ImagePairRecord {
            pair_id: format!("{video_id}-p{p}"),
            events: (0..n_events)
                .filter(|i| i % 4 == p)
                .map(|i| Event::new(format!("{video_id}-e{i}"), event_text(i)))
                .collect(),
            detections: vec![Detection {
                word: "thing".into(),
                confidence: 0.9,
                source: 1,
            }],
            image_feature: None,
            candidates: Vec::new(),
        })
        .collect();
    for k in 0..n_positives {
        let p = k % 4;
        let cause = p; // first event of pair p has index p
        let effect = (p + 1 + 4 * k) % n_events;
        pairs[p].candidates.push(CandidatePair {
            cause: format!("{video_id}-e{cause}"),
            effect: format!("{video_id}-e{effect}"),
            votes_ctx: votes(4),
            votes_noctx: votes(3),
        });
    }
    // One annotated negative per video for texture.
    pairs[0].candidates.push(CandidatePair {
        cause: format!("{video_id}-e0"),
        effect: format!("{video_id}-e2"),
        votes_ctx: votes(1),
        votes_noctx: votes(2),
    });
    VideoRecord::new(
        video_id,
        CATEGORIES[index % CATEGORIES.len()],
        split,
        pairs,
    )
}

/// Dataset whose per-split statistics reproduce the reference table:
/// videos 800/100/100, images 4000/500/500, pairs 3200/400/400,
/// positives 2599/329/282, mean candidate list 31.8/32.1/32.2.
pub fn table_one_shaped() -> Dataset {
    let plans = [
        SplitPlan {
            split: Split::Train,
            videos: 800,
            events: (640, 33, 32),
            positives: (199, 4, 3),
        },
        SplitPlan {
            split: Split::Dev,
            videos: 100,
            events: (10, 34, 33),
            positives: (29, 4, 3),
        },
        SplitPlan {
            split: Split::Test,
            videos: 100,
            events: (20, 34, 33),
            positives: (82, 3, 2),
        },
    ];
    let mut videos = Vec::new();
    for plan in &plans {
        for i in 0..plan.videos {
            let n_events = if i < plan.events.0 {
                plan.events.1
            } else {
                plan.events.2
            };
            let n_pos = if i < plan.positives.0 {
                plan.positives.1
            } else {
                plan.positives.2
            };
            videos.push(build_video(plan.split, i, n_events, n_pos));
        }
    }
    Dataset::from_videos(videos).expect("fixture is valid by construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_one_statistics_match_reference() {
        let ds = table_one_shaped();
        let stats = ds.statistics();
        let train = &stats[&Split::Train];
        assert_eq!(
            (train.videos, train.images, train.pairs, train.positives),
            (800, 4000, 3200, 2599)
        );
        assert!((train.mean_candidates - 31.8).abs() < 1e-9);
        let dev = &stats[&Split::Dev];
        assert_eq!(
            (dev.videos, dev.images, dev.pairs, dev.positives),
            (100, 500, 400, 329)
        );
        assert!((dev.mean_candidates - 32.1).abs() < 1e-9);
        let test = &stats[&Split::Test];
        assert_eq!(
            (test.videos, test.images, test.pairs, test.positives),
            (100, 500, 400, 282)
        );
        assert!((test.mean_candidates - 32.2).abs() < 1e-9);
    }
}
