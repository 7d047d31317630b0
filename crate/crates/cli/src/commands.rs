//! Command implementations behind the CLI surface.

use crate::manifest::{input_digest, InputDigest, RunManifest};
use crate::{AnalyzeArgs, AppError, EvalArgs, StatsArgs, SynthArgs, TrainArgs};
use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;
use vis_causal::analysis;
use vis_causal::dataset::{Dataset, DatasetError, Split, SplitStats};
use vis_causal::encoders::load_embedding_file;
use vis_causal::evaluator::{
    build_queries, random_baseline, random_score_table, rank_from_score_file,
    render_causal_sentence, report_from_scores, score_all, write_score_file, EvalError,
    EvalReport, ModelScorer, RankingQuery,
};
use vis_causal::model::{ModelError, VccParameters};
use vis_causal::synthetic::{describe, generate, SyntheticConfig};
use vis_causal::trainer::{default_params, fit_from, TrainConfig, TrainError};

fn io_code(err: &std::io::Error) -> i32 {
    if err.kind() == std::io::ErrorKind::NotFound {
        2
    } else {
        3
    }
}

impl From<DatasetError> for AppError {
    fn from(err: DatasetError) -> Self {
        let code = match &err {
            DatasetError::Io { source, .. } => io_code(source),
            _ => 3,
        };
        AppError::new(code, err.to_string())
    }
}

impl From<ModelError> for AppError {
    fn from(err: ModelError) -> Self {
        let code = match &err {
            ModelError::Io { source, .. } => io_code(source),
            _ => 3,
        };
        AppError::new(code, err.to_string())
    }
}

impl From<EvalError> for AppError {
    fn from(err: EvalError) -> Self {
        let code = match &err {
            EvalError::Io { source, .. } => io_code(source),
            EvalError::Dataset(DatasetError::Io { source, .. }) => io_code(source),
            EvalError::Model(ModelError::Io { source, .. }) => io_code(source),
            _ => 3,
        };
        AppError::new(code, err.to_string())
    }
}

impl From<TrainError> for AppError {
    fn from(err: TrainError) -> Self {
        match err {
            TrainError::NonFiniteLoss { .. } => AppError::new(4, err.to_string()),
            TrainError::Model(e) => e.into(),
            TrainError::Eval(e) => e.into(),
            _ => AppError::new(3, err.to_string()),
        }
    }
}

fn write_output(path: &Path, text: &str) -> Result<(), AppError> {
    std::fs::write(path, text)
        .map_err(|e| AppError::new(3, format!("cannot write {}: {e}", path.display())))
}

fn ensure_out_dir(dir: &Path) -> Result<(), AppError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| AppError::new(2, format!("cannot create {}: {e}", dir.display())))
}

/// Read an input file, returning its content and digest. A missing file
/// is a usage error.
fn read_input(path: &Path) -> Result<(String, InputDigest), AppError> {
    let bytes = std::fs::read(path)
        .map_err(|e| AppError::new(io_code(&e), format!("cannot read {}: {e}", path.display())))?;
    let text = String::from_utf8(bytes)
        .map_err(|_| AppError::new(3, format!("{} is not UTF-8", path.display())))?;
    let digest = input_digest(path, text.as_bytes());
    Ok((text, digest))
}

fn load_dataset(path: &Path) -> Result<(Dataset, InputDigest), AppError> {
    let (text, digest) = read_input(path)?;
    let dataset = Dataset::parse_str(&text)?;
    Ok((dataset, digest))
}

fn stats_table(stats: &BTreeMap<Split, SplitStats>) -> String {
    let mut out = format!(
        "{:<7} {:>7} {:>7} {:>7} {:>10} {:>10}\n",
        "split", "videos", "images", "pairs", "positives", "mean_cand"
    );
    for (split, s) in stats {
        out.push_str(&format!(
            "{:<7} {:>7} {:>7} {:>7} {:>10} {:>10.2}\n",
            split.to_string(),
            s.videos,
            s.images,
            s.pairs,
            s.positives,
            s.mean_candidates
        ));
    }
    out
}

pub fn cmd_train(args: &TrainArgs) -> Result<(), AppError> {
    if args.lr <= 0.0 {
        return Err(AppError::new(2, "--lr must be positive".into()));
    }
    if args.epochs == 0 {
        return Err(AppError::new(2, "--epochs must be at least 1".into()));
    }
    let started = Instant::now();
    ensure_out_dir(&args.out_dir)?;
    let (dataset, data_digest) = load_dataset(&args.data)?;
    let mut inputs = vec![data_digest];

    let config = TrainConfig {
        variant: args.variant,
        learning_rate: args.lr,
        epochs: args.epochs,
        seed: args.seed,
        dim: args.dim,
        hidden: args.hidden,
        max_objects: args.objects,
    };
    let params = match &args.embeddings {
        Some(path) => {
            let (_, digest) = read_input(path)?;
            inputs.push(digest);
            let (vocab, table) = load_embedding_file::<f64>(path).map_err(|e| {
                AppError::new(3, format!("embedding file {}: {e}", path.display()))
            })?;
            let feature_dim = if config.variant.uses_image_feature() {
                Some(
                    vis_causal::trainer::find_feature_dim(&dataset)
                        .ok_or_else(|| AppError::from(TrainError::NoImageFeatures))?,
                )
            } else {
                None
            };
            VccParameters::init_with_table(
                config.variant,
                vocab,
                table,
                config.hidden,
                feature_dim,
                config.seed,
            )
        }
        None => default_params(&config, &dataset)?,
    };

    let outcome = fit_from::<f64>(params, &config, &dataset)?;

    let checkpoint_path = args.out_dir.join("checkpoint.txt");
    outcome
        .best
        .save(&checkpoint_path)
        .map_err(AppError::from)?;
    let log_path = args.out_dir.join("train_log.jsonl");
    write_output(&log_path, &outcome.log_jsonl())?;

    let best = outcome.log[outcome.best_epoch - 1];
    println!(
        "trained {} for {} epochs; kept epoch {} (dev R@1 {:.4} R@5 {:.4} R@10 {:.4})",
        config.variant, args.epochs, outcome.best_epoch, best.dev_r1, best.dev_r5, best.dev_r10
    );
    println!("checkpoint: {}", checkpoint_path.display());

    RunManifest {
        command: "train".into(),
        config: serde_json::to_value(&config).expect("config serializes"),
        seed: args.seed,
        inputs,
        outputs: vec![
            checkpoint_path.display().to_string(),
            log_path.display().to_string(),
        ],
        wall_clock_secs: started.elapsed().as_secs_f64(),
    }
    .write(&args.out_dir)
    .map_err(|e| AppError::new(3, format!("cannot write manifest: {e}")))
}

fn export_sentences(path: &Path, queries: &[RankingQuery]) -> Result<(), AppError> {
    let mut out = String::new();
    for query in queries {
        for candidate in &query.pool {
            let sentence = render_causal_sentence(&query.cause.text, &candidate.text)?;
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                query.id, candidate.event_id, sentence
            ));
        }
    }
    write_output(path, &out)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(), AppError> {
    let sources =
        usize::from(args.checkpoint.is_some()) + usize::from(args.random) + usize::from(args.scores.is_some());
    if sources != 1 {
        return Err(AppError::new(
            2,
            "choose exactly one of --checkpoint, --random, --scores".into(),
        ));
    }
    let started = Instant::now();
    ensure_out_dir(&args.out_dir)?;
    let (dataset, data_digest) = load_dataset(&args.data)?;
    let mut inputs = vec![data_digest];

    let queries = build_queries(&dataset, args.split)?;
    if queries.is_empty() {
        return Err(AppError::from(EvalError::EmptySplit(args.split)));
    }

    if let Some(path) = &args.export_sentences {
        export_sentences(path, &queries)?;
    }

    let report: EvalReport = if let Some(path) = &args.checkpoint {
        let (_, digest) = read_input(path)?;
        inputs.push(digest);
        let params = VccParameters::<f64>::load(path)?;
        let scorer = ModelScorer {
            params: &params,
            max_objects: args.objects,
        };
        let (scores, failures) = score_all(&scorer, &queries, args.jobs);
        for (i, message) in &failures {
            eprintln!("query {} failed: {message}", queries[*i].id);
        }
        if let Some(path) = &args.export_scores {
            let rows: Vec<Vec<f64>> = scores
                .iter()
                .zip(&queries)
                .map(|(s, q)| s.clone().unwrap_or_else(|| vec![f64::NAN; q.pool.len()]))
                .collect();
            write_score_file(&queries, &rows, path)?;
        }
        report_from_scores(&queries, &scores)
    } else if args.random {
        if let Some(path) = &args.export_scores {
            // The export reproduces the baseline's first trial.
            let rows = random_score_table(&queries, args.seed);
            write_score_file(&queries, &rows, path)?;
        }
        random_baseline(&queries, args.seed, args.trials)
    } else {
        let path = args.scores.as_ref().expect("checked above");
        let (_, digest) = read_input(path)?;
        inputs.push(digest);
        rank_from_score_file(&queries, path)?
    };

    let text = report.to_text_table();
    print!("{text}");
    let report_txt = args.out_dir.join("report.txt");
    write_output(&report_txt, &text)?;
    let report_jsonl = args.out_dir.join("report.jsonl");
    write_output(&report_jsonl, &report.to_jsonl())?;

    let mut outputs = vec![
        report_txt.display().to_string(),
        report_jsonl.display().to_string(),
    ];
    if let Some(p) = &args.export_scores {
        outputs.push(p.display().to_string());
    }
    if let Some(p) = &args.export_sentences {
        outputs.push(p.display().to_string());
    }
    RunManifest {
        command: "eval".into(),
        config: serde_json::json!({
            "split": args.split.to_string(),
            "checkpoint": args.checkpoint.as_ref().map(|p| p.display().to_string()),
            "random": args.random,
            "scores": args.scores.as_ref().map(|p| p.display().to_string()),
            "trials": args.trials,
            "objects": args.objects,
            "jobs": args.jobs,
        }),
        seed: args.seed,
        inputs,
        outputs,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    }
    .write(&args.out_dir)
    .map_err(|e| AppError::new(3, format!("cannot write manifest: {e}")))
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<(), AppError> {
    let started = Instant::now();
    ensure_out_dir(&args.out_dir)?;
    let (dataset, digest) = load_dataset(&args.data)?;
    let videos: Vec<&vis_causal::dataset::VideoRecord> = match args.split.as_deref() {
        None | Some("all") => dataset.videos.iter().collect(),
        Some(name) => {
            let split: Split = name.parse()?;
            dataset.split(split)
        }
    };
    let report = analysis::analyze(&videos)
        .map_err(|e| AppError::new(3, e.to_string()))?;

    let text = report.to_text();
    print!("{text}");
    let analysis_txt = args.out_dir.join("analysis.txt");
    write_output(&analysis_txt, &text)?;
    let analysis_json = args.out_dir.join("analysis.json");
    write_output(
        &analysis_json,
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    let hist_with = args.out_dir.join("hist_with.csv");
    write_output(&hist_with, &report.histograms.with_context_csv())?;
    let hist_without = args.out_dir.join("hist_without.csv");
    write_output(&hist_without, &report.histograms.without_context_csv())?;
    let hist_diff = args.out_dir.join("hist_diff.csv");
    write_output(&hist_diff, &report.histograms.difference_csv())?;

    RunManifest {
        command: "analyze".into(),
        config: serde_json::json!({
            "split": args.split.clone().unwrap_or_else(|| "all".into()),
        }),
        seed: 0,
        inputs: vec![digest],
        outputs: [&analysis_txt, &analysis_json, &hist_with, &hist_without, &hist_diff]
            .iter()
            .map(|p| p.display().to_string())
            .collect(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    }
    .write(&args.out_dir)
    .map_err(|e| AppError::new(3, format!("cannot write manifest: {e}")))
}

pub fn cmd_synth(args: &SynthArgs) -> Result<(), AppError> {
    let started = Instant::now();
    ensure_out_dir(&args.out_dir)?;
    let mut inputs = Vec::new();
    let mut config = match &args.config {
        Some(path) => {
            let (text, digest) = read_input(path)?;
            inputs.push(digest);
            toml::from_str::<SyntheticConfig>(&text)
                .map_err(|e| AppError::new(2, format!("config {}: {e}", path.display())))?
        }
        None => SyntheticConfig::default(),
    };
    if let Some(rho) = args.rho {
        config.contextual_fraction = rho;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(noise) = args.noise {
        config.detection_noise = noise;
    }

    let dataset = generate(&config).map_err(|e| AppError::new(2, e.to_string()))?;
    dataset.save(&args.out)?;
    print!("{}", stats_table(&describe(&dataset)));
    println!("wrote {}", args.out.display());

    RunManifest {
        command: "synth".into(),
        config: serde_json::to_value(&config).expect("config serializes"),
        seed: config.seed,
        inputs,
        outputs: vec![args.out.display().to_string()],
        wall_clock_secs: started.elapsed().as_secs_f64(),
    }
    .write(&args.out_dir)
    .map_err(|e| AppError::new(3, format!("cannot write manifest: {e}")))
}

pub fn cmd_stats(args: &StatsArgs) -> Result<(), AppError> {
    let started = Instant::now();
    ensure_out_dir(&args.out_dir)?;
    let (dataset, digest) = load_dataset(&args.data)?;
    let stats = dataset.statistics();
    print!("{}", stats_table(&stats));
    let stats_json = args.out_dir.join("stats.json");
    let by_name: BTreeMap<String, SplitStats> = stats
        .iter()
        .map(|(split, s)| (split.to_string(), *s))
        .collect();
    write_output(
        &stats_json,
        &serde_json::to_string_pretty(&by_name).expect("stats serialize"),
    )?;

    RunManifest {
        command: "stats".into(),
        config: serde_json::json!({}),
        seed: 0,
        inputs: vec![digest],
        outputs: vec![stats_json.display().to_string()],
        wall_clock_secs: started.elapsed().as_secs_f64(),
    }
    .write(&args.out_dir)
    .map_err(|e| AppError::new(3, format!("cannot write manifest: {e}")))
}
