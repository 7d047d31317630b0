//! Acceptance suite: one test per release criterion, each printing its
//! pass line (visible with `--nocapture`). Every tolerance is pinned in
//! the assertions.

use std::time::Instant;
use vis_causal::analysis::{iaa, plausibility, select_positives};
use vis_causal::autodiff::Graph;
use vis_causal::dataset::{Dataset, Event, Split};
use vis_causal::encoders::Vocabulary;
use vis_causal::evaluator::{
    build_queries, evaluate, random_baseline, rank_from_score_reader, report_from_scores,
    score_all, write_score_lines, ModelScorer,
};
use vis_causal::fixtures;
use vis_causal::gradcheck::{max_relative_error, numerical_gradient};
use vis_causal::model::{SelectedContext, VccParameters, Variant};
use vis_causal::synthetic::{generate, SyntheticConfig};
use vis_causal::trainer::{fit, TrainConfig};
use vis_causal::Tensor64;

const TOKEN_POOL: [&str; 8] = [
    "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta",
];

fn pool_vocab() -> Vocabulary {
    let mut vocab = Vocabulary::new();
    for t in TOKEN_POOL {
        vocab.insert(t);
    }
    vocab
}

fn pool_text(start: usize, len: usize) -> String {
    (0..len)
        .map(|k| TOKEN_POOL[(start + k) % TOKEN_POOL.len()])
        .collect::<Vec<_>>()
        .join(" ")
}

fn instance_case(i: usize) -> (Event, Event, Event, SelectedContext) {
    let cause = Event::new("c", pool_text(i, i % 3 + 1));
    let pos = Event::new("p", pool_text(i + 2, (i / 3) % 3 + 1));
    let neg = Event::new("n", pool_text(i + 5, (i / 9) % 2 + 1));
    let objects = (0..i % 4)
        .map(|k| TOKEN_POOL[(i + k) % TOKEN_POOL.len()].to_string())
        .collect();
    let ctx = SelectedContext {
        objects,
        image_feature: Some(vec![
            (i as f64 * 0.37).sin(),
            (i as f64 * 0.11).cos(),
            0.25 - (i % 7) as f64 * 0.1,
        ]),
    };
    (cause, pos, neg, ctx)
}

fn training_loss(
    base: &VccParameters<f64>,
    tensors: &[Tensor64],
    cause: &Event,
    pos: &Event,
    neg: &Event,
    ctx: &SelectedContext,
) -> f64 {
    let mut params = base.clone();
    for ((_, slot), t) in params.named_tensors_mut().into_iter().zip(tensors) {
        *slot = t.clone();
    }
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let p_pos = params.score_node(&mut g, &bound, cause, pos, ctx).unwrap();
    let l_pos = g.bce_loss(p_pos, 1.0).unwrap();
    let p_neg = params.score_node(&mut g, &bound, cause, neg, ctx).unwrap();
    let l_neg = g.bce_loss(p_neg, 0.0).unwrap();
    let total = g.add(l_pos, l_neg).unwrap();
    g.value(total).item()
}

#[test]
fn criterion_1_gradient_fidelity() {
    let started = Instant::now();
    let mut worst = 0.0f64;
    for variant in Variant::ALL {
        for i in 0..100usize {
            let (cause, pos, neg, ctx) = instance_case(i);
            let feature_dim = variant.uses_image_feature().then_some(3);
            let params = VccParameters::<f64>::init(
                variant,
                pool_vocab(),
                2,
                2,
                feature_dim,
                9000 + i as u64,
            );
            let tensors: Vec<Tensor64> = params
                .named_tensors()
                .into_iter()
                .map(|(_, t)| t.clone())
                .collect();

            let mut g = Graph::new();
            let bound = params.bind(&mut g);
            let p_pos = params.score_node(&mut g, &bound, &cause, &pos, &ctx).unwrap();
            let l_pos = g.bce_loss(p_pos, 1.0).unwrap();
            let p_neg = params.score_node(&mut g, &bound, &cause, &neg, &ctx).unwrap();
            let l_neg = g.bce_loss(p_neg, 0.0).unwrap();
            let total = g.add(l_pos, l_neg).unwrap();
            let grads = g.backward(total).unwrap();

            let numeric = numerical_gradient(
                |ts| training_loss(&params, ts, &cause, &pos, &neg, &ctx),
                &tensors,
                1e-5,
            );
            for (id, num) in bound.ordered_ids().iter().zip(&numeric) {
                let analytic = grads
                    .get(*id)
                    .cloned()
                    .unwrap_or_else(|| Tensor64::zeros_like(num));
                let err = max_relative_error(&analytic, num);
                assert!(
                    err < 1e-4,
                    "{variant} instance {i}: relative error {err}"
                );
                worst = worst.max(err);
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "gradient fidelity took {elapsed:.1}s");
    println!(
        "criterion 1 (gradient fidelity): PASS — 4 variants x 100 instances, max rel err {worst:.2e}, {elapsed:.1}s"
    );
}

#[test]
fn criterion_2_random_baseline_expectation() {
    let started = Instant::now();
    // Eight videos with 33 distinct events and one positive each: every
    // query ranks a pool of exactly 32 with a unique gold.
    let mut videos = Vec::new();
    for v in 0..8 {
        let id = format!("rb{v}");
        let events: Vec<Event> = (0..33)
            .map(|i| Event::new(format!("{id}-e{i:02}"), format!("event {i} happens")))
            .collect();
        let pairs = vec![
            vis_causal::dataset::ImagePairRecord {
                pair_id: format!("{id}-p0"),
                events: events[..17].to_vec(),
                detections: vec![],
                image_feature: None,
                candidates: vec![vis_causal::dataset::CandidatePair {
                    cause: format!("{id}-e00"),
                    effect: format!("{id}-e20"),
                    votes_ctx: fixtures::votes(5),
                    votes_noctx: fixtures::votes(3),
                }],
            },
            vis_causal::dataset::ImagePairRecord {
                pair_id: format!("{id}-p1"),
                events: events[17..].to_vec(),
                detections: vec![],
                image_feature: None,
                candidates: vec![],
            },
        ];
        videos.push(vis_causal::dataset::VideoRecord::new(
            id,
            "sports",
            Split::Test,
            pairs,
        ));
    }
    let ds = Dataset::from_videos(videos).unwrap();
    let queries = build_queries(&ds, Split::Test).unwrap();
    assert_eq!(queries.len(), 8);
    assert!(queries.iter().all(|q| q.pool.len() == 32));

    let report = random_baseline(&queries, 202, 10_000);
    let (r1, r5, r10) = (report.overall.r1, report.overall.r5, report.overall.r10);
    assert!((r1 - 1.0 / 32.0).abs() <= 0.005, "R@1 {r1}");
    assert!((r5 - 5.0 / 32.0).abs() <= 0.01, "R@5 {r5}");
    assert!((r10 - 10.0 / 32.0).abs() <= 0.01, "R@10 {r10}");
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "random baseline took {elapsed:.1}s");
    println!(
        "criterion 2 (random baseline expectation): PASS — R@1 {r1:.4} (1/32 = {:.4}), R@5 {r5:.4} (5/32 = {:.4}), R@10 {r10:.4} (10/32 = {:.4}), {elapsed:.1}s",
        1.0 / 32.0,
        5.0 / 32.0,
        10.0 / 32.0
    );
}

/// The planted-signal dataset and trainer settings used by criteria 3
/// and 4. Context-gated twin rules with a fraction of 1 and no detection
/// noise; 500/50/50 videos x 4 positives = 2000/200/200 queries.
fn separation_dataset() -> Dataset {
    generate(&SyntheticConfig::default()).expect("default config is valid")
}

fn separation_train_config(variant: Variant, seed: u64) -> TrainConfig {
    TrainConfig {
        variant,
        learning_rate: 0.1,
        epochs: 10,
        seed,
        dim: 8,
        hidden: 128,
        max_objects: 10,
    }
}

fn test_metrics(data: &Dataset, variant: Variant, seed: u64) -> (f64, f64, f64) {
    let config = separation_train_config(variant, seed);
    let outcome = fit::<f64>(&config, data).expect("training succeeds");
    let queries = build_queries(data, Split::Test).unwrap();
    let scorer = ModelScorer {
        params: &outcome.best,
        max_objects: config.max_objects,
    };
    let report = evaluate(&scorer, &queries, 1);
    (report.overall.r1, report.overall.r5, report.overall.r10)
}

#[test]
fn criterion_3_contextual_separation() {
    let started = Instant::now();
    let data = separation_dataset();
    assert_eq!(build_queries(&data, Split::Train).unwrap().len(), 2000);
    assert_eq!(build_queries(&data, Split::Dev).unwrap().len(), 200);
    assert_eq!(build_queries(&data, Split::Test).unwrap().len(), 200);

    let (vcc_r1, _, _) = test_metrics(&data, Variant::Vcc, 1);
    let (blind_r1, _, _) = test_metrics(&data, Variant::NoContext, 1);
    let elapsed = started.elapsed().as_secs_f64();

    assert!(vcc_r1 >= 0.85, "context-aware test R@1 {vcc_r1}");
    assert!(blind_r1 <= 0.60, "context-blind test R@1 {blind_r1}");
    assert!(elapsed < 300.0, "separation run took {elapsed:.1}s");
    println!(
        "criterion 3 (contextual separation): PASS — vcc R@1 {vcc_r1:.3} >= 0.85, no-context R@1 {blind_r1:.3} <= 0.60, {elapsed:.1}s"
    );
}

#[test]
fn criterion_4_ablation_ordering() {
    let data = separation_dataset();
    let mut held = 0;
    let mut rows = Vec::new();
    for seed in 1..=5u64 {
        let (_, vcc_r5, _) = test_metrics(&data, Variant::Vcc, seed);
        let (_, flat_r5, _) = test_metrics(&data, Variant::NoAttention, seed);
        let (_, blind_r5, _) = test_metrics(&data, Variant::NoContext, seed);
        let ok = vcc_r5 >= flat_r5 && flat_r5 >= blind_r5;
        if ok {
            held += 1;
        }
        rows.push(format!(
            "seed {seed}: vcc {vcc_r5:.3} / no-attention {flat_r5:.3} / no-context {blind_r5:.3} ({})",
            if ok { "ordered" } else { "violated" }
        ));
    }
    assert!(held >= 4, "ordering held on {held}/5 seeds:\n{}", rows.join("\n"));
    println!(
        "criterion 4 (ablation ordering on R@5): PASS — held on {held}/5 seeds\n  {}",
        rows.join("\n  ")
    );
}

#[test]
fn criterion_5_uniform_attention_reduction() {
    let mut worst = 0.0f64;
    for i in 0..1000usize {
        let (cause, pos, _, mut ctx) = instance_case(i);
        ctx.image_feature = None;
        let mut params =
            VccParameters::<f64>::init(Variant::Vcc, pool_vocab(), 3, 4, None, 40_000 + i as u64);
        params.object_attention.zero_input_weights();
        params.token_attention.zero_input_weights();
        let attended = params.predict(&cause, &pos, &ctx).unwrap().value();
        params.set_variant(Variant::NoAttention).unwrap();
        let flat = params.predict(&cause, &pos, &ctx).unwrap().value();
        let diff = (attended - flat).abs();
        assert!(diff < 1e-10, "instance {i}: |{attended} - {flat}| = {diff}");
        worst = worst.max(diff);
    }
    println!(
        "criterion 5 (uniform-attention reduction): PASS — 1000 instances, max |diff| {worst:.2e}"
    );
}

#[test]
fn criterion_6_voting_and_positive_selection() {
    assert_eq!(plausibility(&fixtures::votes(4)).unwrap(), 0.8);
    assert_eq!(plausibility(&fixtures::votes(0)).unwrap(), 0.0);
    assert_eq!(plausibility(&fixtures::votes(5)).unwrap(), 1.0);

    let ds = fixtures::table_one_shaped();
    let train = select_positives(&ds.split(Split::Train)).len();
    let dev = select_positives(&ds.split(Split::Dev)).len();
    let test = select_positives(&ds.split(Split::Test)).len();
    assert_eq!((train, dev, test), (2599, 329, 282));
    println!(
        "criterion 6 (voting and positive selection): PASS — plausibility grid exact, positives {train}/{dev}/{test}"
    );
}

#[test]
fn criterion_7_iaa_fixtures() {
    let unanimous: Vec<Vec<u8>> = (0..6).map(|_| vec![3; 5]).collect();
    assert_eq!(iaa(&unanimous).unwrap(), 1.0);

    let deviant: Vec<Vec<&str>> = (0..4).map(|_| vec!["a", "a", "a", "a", "b"]).collect();
    assert_eq!(iaa(&deviant).unwrap(), 0.8);

    let disagree = vec![vec!["a", "b"], vec!["b", "a"], vec!["a", "b"]];
    assert_eq!(iaa(&disagree).unwrap(), 0.0);
    println!("criterion 7 (IAA fixtures): PASS — 1.0 / 0.8 / 0.0 exact");
}

#[test]
fn criterion_8_cli_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("synth.toml");
    std::fs::write(
        &config_path,
        "train_videos = 8\ndev_videos = 2\ntest_videos = 2\ninstances_per_video = 2\nrule_groups = 2\ngroup_size = 3\nobject_vocab_size = 16\ndistractor_vocab_size = 8\nseed = 5\n",
    )
    .unwrap();
    let data = dir.path().join("data.jsonl");
    let bin = env!("CARGO_BIN_EXE_vis-causal");
    let run = |args: &[&str]| {
        let out = std::process::Command::new(bin)
            .args(args)
            .output()
            .expect("binary runs");
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    run(&[
        "synth",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);

    let mut checkpoints = Vec::new();
    for name in ["t1", "t2"] {
        let out_dir = dir.path().join(name);
        run(&[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--seed",
            "11",
            "--lr",
            "0.05",
            "--epochs",
            "2",
            "--dim",
            "4",
            "--hidden",
            "8",
            "--out-dir",
            out_dir.to_str().unwrap(),
        ]);
        checkpoints.push(std::fs::read(out_dir.join("checkpoint.txt")).unwrap());
    }
    assert_eq!(checkpoints[0], checkpoints[1], "checkpoints differ");

    let mut reports = Vec::new();
    for name in ["e1", "e2"] {
        let out_dir = dir.path().join(name);
        run(&[
            "eval",
            "--data",
            data.to_str().unwrap(),
            "--checkpoint",
            dir.path().join("t1/checkpoint.txt").to_str().unwrap(),
            "--out-dir",
            out_dir.to_str().unwrap(),
        ]);
        reports.push((
            std::fs::read(out_dir.join("report.txt")).unwrap(),
            std::fs::read(out_dir.join("report.jsonl")).unwrap(),
        ));
    }
    assert_eq!(reports[0], reports[1], "reports differ");
    println!(
        "criterion 8 (determinism): PASS — byte-identical checkpoints and reports across reruns"
    );
}

#[test]
fn criterion_9_score_file_equivalence() {
    // A briefly trained scorer, so scores are non-trivial.
    let data = generate(&SyntheticConfig {
        train_videos: 10,
        dev_videos: 3,
        test_videos: 4,
        instances_per_video: 2,
        rule_groups: 2,
        group_size: 3,
        object_vocab_size: 16,
        distractor_vocab_size: 8,
        seed: 5,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let config = TrainConfig {
        variant: Variant::Vcc,
        learning_rate: 0.05,
        epochs: 2,
        seed: 2,
        dim: 4,
        hidden: 8,
        max_objects: 10,
    };
    let outcome = fit::<f64>(&config, &data).unwrap();
    let queries = build_queries(&data, Split::Test).unwrap();
    let scorer = ModelScorer {
        params: &outcome.best,
        max_objects: config.max_objects,
    };
    let (scores, failures) = score_all(&scorer, &queries, 1);
    assert!(failures.is_empty());
    let direct = report_from_scores(&queries, &scores);

    let rows: Vec<Vec<f64>> = scores.into_iter().map(|s| s.unwrap()).collect();
    let mut buffer = Vec::new();
    write_score_lines(&queries, &rows, &mut buffer).unwrap();
    let round_tripped = rank_from_score_reader(&queries, std::io::Cursor::new(buffer)).unwrap();
    assert_eq!(direct, round_tripped);
    println!(
        "criterion 9 (score-file equivalence): PASS — direct and re-ranked reports identical (overall R@1 {:.3})",
        direct.overall.r1
    );
}
