//! CLI subcommands.
//!
//! Exit codes: 0 success, 2 success with skipped/unscorable items, 1
//! fatal error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use benchleak_core::dataset::{Dataset, McqItem};
use benchleak_core::detect::{
    detect_batch, BatchConfig, BatchOutcome, DeltaPolicy, IForestConfig, Scenario, ScenarioChoice,
};
use benchleak_core::experiment::{run_experiment, ExperimentConfig, ExperimentRow, ShuffleMode};
use benchleak_core::leaderboard::{build_leaderboard, build_profile};
use benchleak_core::metrics::Metrics;
use benchleak_core::ngram::{NGramModel, TokenMode};
use benchleak_core::permute::{derive_all, LabelStyle, RenderTemplate};
use benchleak_core::rng::{derive_seed, SplitMix64};
use benchleak_core::scoring::{HashScorer, NoCache, ScoreCache, ScoringBackend, SequentialScorer};

use crate::cache::JsonlCache;
use crate::http::{HttpBackend, HttpConfig};
use crate::loader::{self, DatasetFormat};
use crate::manifest::{
    parse_format, parse_label_style, parse_length_norm, parse_mode, parse_scenario,
    parse_token_mode, Manifest, PartialRunConfig, RunConfig,
};
use crate::parallel::ParallelScorer;
use crate::report;

/// Audit multiple-choice benchmarks for training-data leakage by probing
/// a model's log probabilities over option permutations.
#[derive(Debug, Parser)]
#[command(name = "benchleak", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the leakage detectors over a dataset with some backend.
    Detect(Box<DetectArgs>),
    /// Run a seeded contamination experiment against the n-gram oracle.
    Experiment(ExperimentArgs),
    /// Aggregate audit summaries into a leakage leaderboard.
    Leaderboard(LeaderboardArgs),
    /// Train the n-gram scoring model on a corpus or dataset.
    TrainNgram(TrainNgramArgs),
    /// Render one item's permutation profile as SVG.
    Profile(ProfileArgs),
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Dataset file (.jsonl or .csv).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Dataset format: jsonl | mmlu-csv (default: inferred from extension).
    #[arg(long)]
    pub format: Option<String>,
    /// Backend spec: ngram:MODEL.json | http:URL | null:SEED.
    #[arg(long)]
    pub backend: Option<String>,
    /// Model name for http backends.
    #[arg(long)]
    pub model: Option<String>,
    /// Which decision rules to run: a | b | both.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Outlier threshold for scenario b (default: -0.20 for items with up
    /// to 4 options, -0.25 for 5-option items).
    #[arg(long, allow_hyphen_values = true)]
    pub delta: Option<f64>,
    /// Isolation forest size.
    #[arg(long)]
    pub trees: Option<usize>,
    /// Isolation forest subsample (default: all points, capped at 256).
    #[arg(long)]
    pub subsample: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// whole-sequence | options-only.
    #[arg(long)]
    pub mode: Option<String>,
    /// sum | mean-per-token.
    #[arg(long)]
    pub length_norm: Option<String>,
    #[arg(long)]
    pub option_separator: Option<String>,
    /// colon | dot | paren.
    #[arg(long)]
    pub label_style: Option<String>,
    /// Append "Answer: X" to each rendering (items with a gold answer).
    #[arg(long)]
    pub include_answer: bool,
    /// Score cache journal path.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Maximum concurrent backend calls (http backends).
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Output directory for verdicts.jsonl, summary.json, manifest.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON config file; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    #[arg(long)]
    pub max_attempts: Option<u32>,
    #[arg(long)]
    pub backoff_ms: Option<u64>,
    /// Environment variable holding the API key for http backends.
    #[arg(long)]
    pub api_key_env: Option<String>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Experiment manifest (JSON).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory (default: manifest "out" key, else ".").
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LeaderboardArgs {
    /// summary.json files from detect runs over the same dataset.
    #[arg(required = true)]
    pub summaries: Vec<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainNgramArgs {
    /// Plain-text corpus, one text per line.
    #[arg(long, conflicts_with = "dataset")]
    pub corpus: Option<PathBuf>,
    /// Train on a dataset's identity renderings instead.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub format: Option<String>,
    /// Repetition weight applied to every text.
    #[arg(long, default_value_t = 1)]
    pub repetitions: u32,
    #[arg(short, long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// byte | word.
    #[arg(long, default_value = "byte")]
    pub token_mode: String,
    #[arg(long)]
    pub option_separator: Option<String>,
    #[arg(long)]
    pub label_style: Option<String>,
    #[arg(long)]
    pub include_answer: bool,
    /// Where to write the model JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    /// A detect output directory (verdicts.jsonl + summary.json).
    #[arg(long, conflicts_with = "verdicts")]
    pub run: Option<PathBuf>,
    /// Or a verdicts.jsonl directly.
    #[arg(long)]
    pub verdicts: Option<PathBuf>,
    /// Item id to plot.
    #[arg(long)]
    pub item: String,
    /// Prefer a verdict from this scenario: a | b (default: b, then a).
    #[arg(long)]
    pub scenario: Option<String>,
    /// Output SVG path (default: `profile-<item>-<scenario>.svg`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Detect(args) => cmd_detect(*args),
        Command::Experiment(args) => cmd_experiment(args),
        Command::Leaderboard(args) => cmd_leaderboard(args),
        Command::TrainNgram(args) => cmd_train_ngram(args),
        Command::Profile(args) => cmd_profile(args),
    }
}

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

fn detect_args_to_partial(args: &DetectArgs) -> Result<PartialRunConfig> {
    Ok(PartialRunConfig {
        dataset: args.dataset.as_ref().map(|p| path_str(p)),
        format: args.format.as_deref().map(parse_format).transpose()?,
        backend: args.backend.clone(),
        model: args.model.clone(),
        scenario: args.scenario.as_deref().map(parse_scenario).transpose()?,
        delta: args.delta,
        trees: args.trees,
        subsample: args.subsample,
        seed: args.seed,
        mode: args.mode.as_deref().map(parse_mode).transpose()?,
        length_norm: args
            .length_norm
            .as_deref()
            .map(parse_length_norm)
            .transpose()?,
        option_separator: args.option_separator.clone(),
        label_style: args
            .label_style
            .as_deref()
            .map(parse_label_style)
            .transpose()?,
        include_answer: if args.include_answer {
            Some(true)
        } else {
            None
        },
        cache: args.cache.as_ref().map(|p| path_str(p)),
        concurrency: args.concurrency,
        out: args.out.as_ref().map(|p| path_str(p)),
        timeout_secs: args.timeout_secs,
        max_attempts: args.max_attempts,
        backoff_ms: args.backoff_ms,
        api_key_env: args.api_key_env.clone(),
    })
}

enum Backend {
    Ngram(Box<NGramModel>),
    Null(HashScorer),
    Http(HttpBackend),
}

impl Backend {
    fn from_config(cfg: &RunConfig) -> Result<Self> {
        let spec = cfg.backend.as_str();
        if let Some(path) = spec.strip_prefix("ngram:") {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read n-gram model {path}"))?;
            let model: NGramModel = serde_json::from_str(&text)
                .with_context(|| format!("cannot parse n-gram model {path}"))?;
            Ok(Backend::Ngram(Box::new(model)))
        } else if let Some(seed) = spec.strip_prefix("null:") {
            let seed: u64 = seed
                .parse()
                .map_err(|_| anyhow!("null backend seed must be an integer, got {seed:?}"))?;
            Ok(Backend::Null(HashScorer::new(seed)))
        } else if spec.starts_with("http:") || spec.starts_with("https://") {
            // "http:URL" where URL itself may be http(s)://...
            let endpoint = spec
                .strip_prefix("http:")
                .filter(|rest| rest.starts_with("http://") || rest.starts_with("https://"))
                .unwrap_or(spec)
                .to_string();
            let model = cfg
                .model
                .clone()
                .ok_or_else(|| anyhow!("http backend requires --model"))?;
            Ok(Backend::Http(HttpBackend::new(HttpConfig {
                endpoint,
                model,
                api_key_env: cfg.api_key_env.clone(),
                timeout_secs: cfg.timeout_secs,
                max_attempts: cfg.max_attempts,
                backoff_ms: cfg.backoff_ms,
            })))
        } else {
            bail!("unknown backend spec {spec:?} (expected ngram:PATH, http:URL or null:SEED)")
        }
    }

    fn model_id(&self) -> &str {
        match self {
            Backend::Ngram(m) => m.model_id(),
            Backend::Null(s) => s.model_id(),
            Backend::Http(h) => h.model_id(),
        }
    }
}

fn load_dataset(path: &Path, format: Option<DatasetFormat>) -> Result<Dataset> {
    let format = match format {
        Some(f) => f,
        None => loader::infer_format(path)?,
    };
    Ok(loader::load(path, format)?)
}

fn cmd_detect(args: DetectArgs) -> Result<i32> {
    let mut partial = detect_args_to_partial(&args)?;
    if let Some(config_path) = &args.config {
        partial = partial.overlay(PartialRunConfig::from_file(config_path)?);
    }
    let cfg = RunConfig::resolve(partial)?;

    let dataset = load_dataset(Path::new(&cfg.dataset), cfg.format)?;
    let backend = Backend::from_config(&cfg)?;
    let batch = BatchConfig {
        scenario: cfg.scenario,
        delta: match cfg.delta {
            Some(delta) => DeltaPolicy::Fixed(delta),
            None => DeltaPolicy::ByOptionCount,
        },
        iforest: IForestConfig {
            n_trees: cfg.trees,
            subsample: cfg.subsample,
        },
        seed: cfg.seed,
        template: cfg.template(),
        score: cfg.score_options(),
    };

    let mut disk_cache: Option<JsonlCache> = match &cfg.cache {
        Some(path) => Some(JsonlCache::open(Path::new(path))?),
        None => None,
    };

    let outcome: BatchOutcome = match &backend {
        Backend::Http(http) => match disk_cache.as_mut() {
            Some(cache) => {
                let mut scorer = ParallelScorer::new(http, cache, cfg.concurrency);
                detect_batch(&dataset, &mut scorer, &batch)?
            }
            None => {
                let mut cache = NoCache;
                let mut scorer = ParallelScorer::new(http, &mut cache, cfg.concurrency);
                detect_batch(&dataset, &mut scorer, &batch)?
            }
        },
        _ => {
            let scoring: &dyn ScoringBackend = match &backend {
                Backend::Ngram(m) => m.as_ref(),
                Backend::Null(s) => s,
                Backend::Http(_) => unreachable!("handled above"),
            };
            let cache: &mut dyn ScoreCache = match disk_cache.as_mut() {
                Some(cache) => cache,
                None => &mut NoCache,
            };
            let mut scorer = SequentialScorer {
                backend: scoring,
                cache,
            };
            detect_batch(&dataset, &mut scorer, &batch)?
        }
    };

    let manifest = Manifest::new(
        cfg.clone(),
        dataset.fingerprint().to_string(),
        backend.model_id().to_string(),
    );
    let manifest_hash = manifest.hash();
    let mut summary = outcome.summary;
    summary.manifest_hash = Some(manifest_hash.clone());

    let out_dir = PathBuf::from(&cfg.out);
    fs::create_dir_all(&out_dir)
        .with_context(|| format!("cannot create output directory {}", out_dir.display()))?;
    report::write_verdicts_jsonl(&out_dir.join("verdicts.jsonl"), &outcome.verdicts)?;
    report::write_summary_json(&out_dir.join("summary.json"), &summary)?;
    fs::write(out_dir.join("manifest.json"), manifest.to_pretty_json())?;

    println!(
        "dataset {} ({} items, fingerprint {})",
        summary.dataset,
        summary.n_items,
        &summary.dataset_fingerprint[..12]
    );
    println!("model   {}", summary.model_id);
    if let Some(stats) = summary.scenario_a {
        println!(
            "scenario a: {}/{} leaked ({:.3})",
            stats.leaked, stats.evaluated, stats.pct_leaked
        );
    }
    if let Some(stats) = summary.scenario_b {
        println!(
            "scenario b: {}/{} leaked ({:.3}) [delta {}]",
            stats.leaked, stats.evaluated, stats.pct_leaked, summary.delta_policy
        );
    }
    if summary.has_skips() {
        println!(
            "skipped: {} unscored item(s), {} scenario skip(s)",
            summary.n_items_unscored,
            summary.skipped.len()
        );
    }
    println!("manifest {manifest_hash}");
    println!("wrote {}", out_dir.join("verdicts.jsonl").display());

    Ok(if summary.has_skips() { 2 } else { 0 })
}

/// Experiment manifest file schema; unset keys take the defaults below.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentManifest {
    pub dataset: String,
    pub format: Option<DatasetFormat>,
    /// Number of items audited (seeded subsample); null means
    /// min(dataset size, 200).
    pub items: Option<usize>,
    pub sample_seed: u64,
    pub fraction: f64,
    pub repetitions: Vec<u32>,
    pub shuffle_mode: ShuffleMode,
    pub scenarios: ScenarioChoice,
    pub deltas: Vec<f64>,
    pub k: usize,
    pub alpha: f64,
    pub token_mode: TokenMode,
    pub seeds: Vec<u64>,
    pub trees: usize,
    pub subsample: Option<usize>,
    pub option_separator: String,
    pub label_style: LabelStyle,
    pub include_answer: bool,
    pub out: Option<String>,
}

impl Default for ExperimentManifest {
    fn default() -> Self {
        Self {
            dataset: String::new(),
            format: None,
            items: None,
            sample_seed: 0,
            fraction: 0.5,
            repetitions: vec![1, 2, 3, 5, 10],
            shuffle_mode: ShuffleMode::None,
            scenarios: ScenarioChoice::A,
            deltas: vec![-0.20],
            k: 5,
            alpha: 0.1,
            token_mode: TokenMode::Byte,
            seeds: vec![0],
            trees: 100,
            subsample: None,
            option_separator: " ".to_string(),
            label_style: LabelStyle::LetterColon,
            include_answer: false,
            out: None,
        }
    }
}

/// Seeded subsample preserving dataset order.
fn sample_items(dataset: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    let total = dataset.len();
    let n = n.min(total);
    if n == total {
        return Ok(dataset.clone());
    }
    let mut indices: Vec<usize> = (0..total).collect();
    let mut rng = SplitMix64::new(derive_seed(seed, b"experiment-sample", 0));
    for i in 0..n {
        let j = i + rng.next_below((total - i) as u64) as usize;
        indices.swap(i, j);
    }
    let mut chosen: Vec<usize> = indices[..n].to_vec();
    chosen.sort_unstable();
    let items: Vec<McqItem> = chosen.iter().map(|&i| dataset.items()[i].clone()).collect();
    Ok(Dataset::new(
        format!("{}-sample{n}", dataset.name()),
        items,
    )?)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn experiment_csvs(
    rows_per_seed: &[(u64, Vec<ExperimentRow>)],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();

    let mut a_seed_lines = String::from("seed,epoch,accuracy,precision,recall,f1\n");
    let mut b_seed_lines = String::from("seed,delta,epoch,accuracy,precision,recall,f1\n");
    let mut has_a = false;
    let mut has_b = false;
    // (delta_bits, repetitions) -> per-seed metrics, insertion ordered.
    let mut a_groups: Vec<(u32, Vec<Metrics>)> = Vec::new();
    let mut b_groups: Vec<((u64, u32), Vec<Metrics>)> = Vec::new();

    for (seed, rows) in rows_per_seed {
        for row in rows {
            match row.scenario {
                Scenario::A => {
                    has_a = true;
                    let m = row.metrics;
                    let _ = writeln!(
                        a_seed_lines,
                        "{seed},{},{},{},{},{}",
                        row.repetitions, m.accuracy, m.precision, m.recall, m.f1
                    );
                    match a_groups.iter_mut().find(|(r, _)| *r == row.repetitions) {
                        Some((_, list)) => list.push(m),
                        None => a_groups.push((row.repetitions, vec![m])),
                    }
                }
                Scenario::B => {
                    has_b = true;
                    let delta = row.delta.expect("scenario b rows carry delta");
                    let m = row.metrics;
                    let _ = writeln!(
                        b_seed_lines,
                        "{seed},{delta},{},{},{},{},{}",
                        row.repetitions, m.accuracy, m.precision, m.recall, m.f1
                    );
                    let key = (delta.to_bits(), row.repetitions);
                    match b_groups.iter_mut().find(|(k, _)| *k == key) {
                        Some((_, list)) => list.push(m),
                        None => b_groups.push((key, vec![m])),
                    }
                }
            }
        }
    }

    if has_a {
        let mut lines = String::from("epoch,accuracy,precision,recall,f1\n");
        for (reps, metrics) in &a_groups {
            let _ = writeln!(
                lines,
                "{reps},{:.3},{:.3},{:.3},{:.3}",
                mean(&metrics.iter().map(|m| m.accuracy).collect::<Vec<_>>()),
                mean(&metrics.iter().map(|m| m.precision).collect::<Vec<_>>()),
                mean(&metrics.iter().map(|m| m.recall).collect::<Vec<_>>()),
                mean(&metrics.iter().map(|m| m.f1).collect::<Vec<_>>()),
            );
        }
        let path = out_dir.join("scenario_a.csv");
        fs::write(&path, lines)?;
        written.push(path);
        let path = out_dir.join("scenario_a_seeds.csv");
        fs::write(&path, a_seed_lines)?;
        written.push(path);
    }
    if has_b {
        let mut lines = String::from("delta,epoch,accuracy,precision,recall,f1\n");
        for ((delta_bits, reps), metrics) in &b_groups {
            let _ = writeln!(
                lines,
                "{},{reps},{:.3},{:.3},{:.3},{:.3}",
                f64::from_bits(*delta_bits),
                mean(&metrics.iter().map(|m| m.accuracy).collect::<Vec<_>>()),
                mean(&metrics.iter().map(|m| m.precision).collect::<Vec<_>>()),
                mean(&metrics.iter().map(|m| m.recall).collect::<Vec<_>>()),
                mean(&metrics.iter().map(|m| m.f1).collect::<Vec<_>>()),
            );
        }
        let path = out_dir.join("scenario_b.csv");
        fs::write(&path, lines)?;
        written.push(path);
        let path = out_dir.join("scenario_b_seeds.csv");
        fs::write(&path, b_seed_lines)?;
        written.push(path);
    }
    Ok(written)
}

fn cmd_experiment(args: ExperimentArgs) -> Result<i32> {
    let text = fs::read_to_string(&args.manifest)
        .with_context(|| format!("cannot read manifest {}", args.manifest.display()))?;
    let manifest: ExperimentManifest = serde_json::from_str(&text)
        .with_context(|| format!("cannot parse manifest {}", args.manifest.display()))?;
    if manifest.dataset.is_empty() {
        bail!("manifest must set \"dataset\"");
    }
    if manifest.seeds.is_empty() {
        bail!("manifest must list at least one seed");
    }

    let full = load_dataset(Path::new(&manifest.dataset), manifest.format)?;
    let n_items = manifest.items.unwrap_or(200).max(1);
    let dataset = sample_items(&full, n_items, manifest.sample_seed)?;

    let template = RenderTemplate {
        option_separator: manifest.option_separator.clone(),
        label_style: manifest.label_style,
        include_answer: manifest.include_answer,
    };

    let mut rows_per_seed = Vec::new();
    for &seed in &manifest.seeds {
        let cfg = ExperimentConfig {
            fraction: manifest.fraction,
            repetitions_grid: manifest.repetitions.clone(),
            shuffle: manifest.shuffle_mode,
            scenario: manifest.scenarios,
            deltas: manifest.deltas.clone(),
            k: manifest.k,
            alpha: manifest.alpha,
            token_mode: manifest.token_mode,
            template: template.clone(),
            score: Default::default(),
            iforest: IForestConfig {
                n_trees: manifest.trees,
                subsample: manifest.subsample,
            },
            seed,
        };
        let rows = run_experiment(&dataset, &cfg)?;
        rows_per_seed.push((seed, rows));
    }

    let out_dir = args
        .out
        .or_else(|| manifest.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out_dir)?;
    let written = experiment_csvs(&rows_per_seed, &out_dir)?;

    #[derive(Serialize)]
    struct ResolvedExperiment<'a> {
        tool: &'static str,
        version: &'static str,
        manifest: &'a ExperimentManifest,
        dataset_fingerprint: &'a str,
        items_used: usize,
    }
    let resolved = ResolvedExperiment {
        tool: crate::manifest::TOOL_NAME,
        version: crate::manifest::TOOL_VERSION,
        manifest: &manifest,
        dataset_fingerprint: dataset.fingerprint(),
        items_used: dataset.len(),
    };
    let mut resolved_text = serde_json::to_string_pretty(&resolved)?;
    resolved_text.push('\n');
    fs::write(out_dir.join("experiment_manifest.json"), resolved_text)?;

    println!(
        "experiment over {} items, seeds {:?}, repetitions {:?}",
        dataset.len(),
        manifest.seeds,
        manifest.repetitions
    );
    for path in &written {
        println!("wrote {}", path.display());
    }
    Ok(0)
}

fn cmd_leaderboard(args: LeaderboardArgs) -> Result<i32> {
    let mut summaries = Vec::new();
    for path in &args.summaries {
        summaries.push(report::read_summary_json(path)?);
    }
    let rows = build_leaderboard(&summaries)?;
    report::emit_leaderboard(&rows, &args.out)?;
    print!("{}", report::leaderboard_markdown(&rows));
    println!(
        "wrote {}",
        args.out.join("leaderboard.{csv,json,md,svg}").display()
    );
    Ok(0)
}

fn cmd_train_ngram(args: TrainNgramArgs) -> Result<i32> {
    let token_mode = parse_token_mode(&args.token_mode)?;
    let texts: Vec<String> = if let Some(corpus) = &args.corpus {
        fs::read_to_string(corpus)
            .with_context(|| format!("cannot read corpus {}", corpus.display()))?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(str::to_string)
            .collect()
    } else if let Some(dataset_path) = &args.dataset {
        let format = args.format.as_deref().map(parse_format).transpose()?;
        let dataset = load_dataset(dataset_path, format)?;
        let template = RenderTemplate {
            option_separator: args
                .option_separator
                .clone()
                .unwrap_or_else(|| " ".to_string()),
            label_style: args
                .label_style
                .as_deref()
                .map(parse_label_style)
                .transpose()?
                .unwrap_or(LabelStyle::LetterColon),
            include_answer: args.include_answer,
        };
        let mut texts = Vec::with_capacity(dataset.len());
        for item in dataset.items() {
            let derived = derive_all(item, &template)?;
            texts.push(derived[0].rendered.clone());
        }
        texts
    } else {
        bail!("train-ngram needs --corpus or --dataset");
    };

    let weighted: Vec<(&str, u32)> = texts
        .iter()
        .map(|t| (t.as_str(), args.repetitions))
        .collect();
    let model = NGramModel::train(&weighted, args.k, args.alpha, token_mode)?;
    let mut json = serde_json::to_string(&model)?;
    json.push('\n');
    fs::write(&args.out, json)
        .with_context(|| format!("cannot write model {}", args.out.display()))?;
    println!(
        "trained {} on {} texts (k={}, alpha={}, {:?})",
        model.model_id(),
        texts.len(),
        args.k,
        args.alpha,
        token_mode
    );
    println!("wrote {}", args.out.display());
    Ok(0)
}

fn cmd_profile(args: ProfileArgs) -> Result<i32> {
    let (verdicts_path, summary_path) = match (&args.run, &args.verdicts) {
        (Some(run), None) => (run.join("verdicts.jsonl"), Some(run.join("summary.json"))),
        (None, Some(path)) => (path.clone(), None),
        _ => bail!("profile needs exactly one of --run or --verdicts"),
    };
    let verdicts = report::read_verdicts_jsonl(&verdicts_path)?;
    let want_scenario = args
        .scenario
        .as_deref()
        .map(parse_scenario)
        .transpose()?
        .map(|choice| match choice {
            ScenarioChoice::A => Scenario::A,
            _ => Scenario::B,
        });

    let of_item: Vec<_> = verdicts.iter().filter(|v| v.item_id == args.item).collect();
    if of_item.is_empty() {
        bail!(
            "no verdict for item {:?} in {} ({} verdicts present)",
            args.item,
            verdicts_path.display(),
            verdicts.len()
        );
    }
    let verdict = match want_scenario {
        Some(scenario) => of_item
            .iter()
            .find(|v| v.scenario == scenario)
            .ok_or_else(|| anyhow!("item {:?} has no scenario {scenario:?} verdict", args.item))?,
        None => of_item
            .iter()
            .find(|v| v.scenario == Scenario::B)
            .unwrap_or(&of_item[0]),
    };

    let manifest_hash = summary_path
        .as_ref()
        .and_then(|p| report::read_summary_json(p).ok())
        .and_then(|s| s.manifest_hash);

    let profile = build_profile(verdict);
    let scenario_tag = match profile.scenario {
        Scenario::A => "a",
        Scenario::B => "b",
    };
    let out = args.out.clone().unwrap_or_else(|| {
        let name = format!("profile-{}-{scenario_tag}.svg", sanitize(&args.item));
        match &args.run {
            Some(run) => run.join(name),
            None => PathBuf::from(name),
        }
    });
    fs::write(
        &out,
        report::profile_svg(&profile, manifest_hash.as_deref()),
    )?;
    println!("wrote {}", out.display());
    Ok(0)
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Predictions keyed by item id for one scenario, used by tests and
/// downstream tools working from verdict files.
pub fn predictions_by_scenario(
    verdicts: &[benchleak_core::detect::Verdict],
    scenario: Scenario,
) -> BTreeMap<String, bool> {
    verdicts
        .iter()
        .filter(|v| v.scenario == scenario)
        .map(|v| (v.item_id.clone(), v.label.is_leaked()))
        .collect()
}
