//! Command-line front end for the constraint-aware adaptation pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/validation error,
//! 3 network/auth error.

use std::path::{Path, PathBuf};

use actlogic::cooccur::{
    load_annotations, render_heatmap, CooccurrenceMatrix, ValidityMask, Vocabulary,
};
use actlogic::ensemble::{aggregate, AggregationMode, EnsembleConfig, PredictionFile};
use actlogic::formula::{ConstraintMode, ConstraintSet};
use actlogic::oracle::{
    load_cache, ChatClient, HttpChatClient, MockChatClient, MockRule, OracleConfig, OracleError,
};
use actlogic::parser;
use actlogic::trainer::{
    compute_metrics, epoch_csv, gen_synthetic, parse_report_csv, report_csv, report_markdown,
    train, Metrics, ScoredSample, SyntheticConfig, TrainConfig,
};
use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Network(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Network(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Network(m) => m,
        }
    }
}

macro_rules! data_error_from {
    ($($ty:ty),*) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Data(e.to_string())
            }
        })*
    };
}

data_error_from!(
    actlogic::cooccur::CooccurError,
    actlogic::formula::LogicError,
    actlogic::parser::ParseError,
    actlogic::trainer::TrainError,
    actlogic::model::ModelError,
    actlogic::diffgraph::GraphError,
    actlogic::ensemble::EnsembleError,
    std::io::Error
);

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::Auth(_) | OracleError::Network { .. } => CliError::Network(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "actlogic",
    version,
    about = "Verb-noun co-occurrence logic for domain-adapted action recognition"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count verb-noun pairs from an annotations CSV into a co-occurrence
    /// matrix and its validity mask.
    BuildMatrix(BuildMatrixArgs),
    /// Convert a validity mask into constraint formulas.
    GenConstraints(GenConstraintsArgs),
    /// Train on the synthetic benchmark and write checkpoint, metrics,
    /// predictions, and reports.
    Train(TrainArgs),
    /// Build a validity mask by querying a chat-completions LLM per pair.
    LlmMatrix(LlmMatrixArgs),
    /// Combine prediction files into final action probabilities.
    Ensemble(EnsembleArgs),
    /// Score a prediction file against ground-truth labels.
    Eval(EvalArgs),
    /// Render a matrix selection as a PGM heatmap.
    Heatmap(HeatmapArgs),
}

#[derive(Args)]
struct BuildMatrixArgs {
    /// Annotations CSV with header uid,verb_id,noun_id
    #[arg(long)]
    annotations: PathBuf,
    /// Vocabulary JSON {"verbs": [...], "nouns": [...]}
    #[arg(long)]
    vocab: PathBuf,
    /// Output matrix CSV; the mask goes to <out>.mask.csv
    #[arg(long)]
    out: PathBuf,
    /// Minimum count for a pair to be valid
    #[arg(long, default_value_t = 1)]
    min_count: u64,
}

#[derive(Args)]
struct GenConstraintsArgs {
    /// Validity mask CSV
    #[arg(long)]
    mask: PathBuf,
    /// invalid: one negation per invalid pair; valid: one disjunction over
    /// valid pairs
    #[arg(long, value_parser = ["invalid", "valid"])]
    mode: String,
    /// Output constraint DSL file
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment JSON {"synthetic": {...}, "train": {...}}
    #[arg(long)]
    config: PathBuf,
    /// Constraint DSL file, or the literal `none`
    #[arg(long)]
    constraints: String,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LlmMatrixArgs {
    /// Vocabulary JSON with class names
    #[arg(long)]
    vocab: PathBuf,
    /// Oracle config JSON (endpoint, model, cache path, ...)
    #[arg(long)]
    config: PathBuf,
    /// Output validity mask CSV
    #[arg(long)]
    out: PathBuf,
    /// Answer from a mock rule file instead of the network
    #[arg(long)]
    mock: Option<PathBuf>,
    /// Union the result with another mask CSV (e.g. the data-derived one)
    #[arg(long)]
    union: Option<PathBuf>,
}

#[derive(Args)]
struct EnsembleArgs {
    /// Prediction files (JSON-lines)
    #[arg(long, num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    /// One non-negative weight per input
    #[arg(long, num_args = 1.., required = true)]
    weights: Vec<f64>,
    /// Optional validity mask applied before averaging
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Output prediction file
    #[arg(long)]
    out: PathBuf,
    /// Weighted geometric mean instead of arithmetic
    #[arg(long)]
    geometric: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Prediction file (JSON-lines)
    #[arg(long)]
    pred: PathBuf,
    /// Labels CSV with header uid,verb_id,noun_id
    #[arg(long)]
    labels: PathBuf,
    /// Validity mask: refines action scores and judges the invalid rate
    #[arg(long)]
    mask: Option<PathBuf>,
}

#[derive(Args)]
struct HeatmapArgs {
    /// Co-occurrence matrix CSV
    #[arg(long)]
    matrix: PathBuf,
    /// Verb ids, comma-separated, ranges allowed (e.g. 0-19)
    #[arg(long)]
    verbs: String,
    /// Noun ids, comma-separated, ranges allowed
    #[arg(long)]
    nouns: String,
    /// Output PGM (P5) file
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version exit 0; real usage errors exit 1
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {}", e.message());
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::BuildMatrix(args) => build_matrix(args),
        Command::GenConstraints(args) => gen_constraints(args),
        Command::Train(args) => train_cmd(args),
        Command::LlmMatrix(args) => llm_matrix(args),
        Command::Ensemble(args) => ensemble_cmd(args),
        Command::Eval(args) => eval_cmd(args),
        Command::Heatmap(args) => heatmap_cmd(args),
    }
}

fn build_matrix(args: BuildMatrixArgs) -> Result<(), CliError> {
    let vocab = Vocabulary::load_json(&args.vocab)?;
    let records = load_annotations(&args.annotations)?;
    let pairs: Vec<(usize, usize)> = records.iter().map(|r| (r.verb_id, r.noun_id)).collect();
    let matrix = CooccurrenceMatrix::build_from_annotations(
        &pairs,
        vocab.verbs.len(),
        vocab.nouns.len(),
    )?;
    let mask = matrix.binarize(args.min_count)?;
    matrix.save_csv(&args.out)?;
    let mask_path = mask_sibling(&args.out);
    mask.save_csv(&mask_path)?;
    println!(
        "wrote {} ({} pairs counted) and {} ({} valid)",
        args.out.display(),
        matrix.total(),
        mask_path.display(),
        mask.num_valid()
    );
    Ok(())
}

fn mask_sibling(matrix_path: &Path) -> PathBuf {
    let mut name = matrix_path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "matrix".to_string());
    name.push_str(".mask.csv");
    matrix_path.with_file_name(name)
}

fn gen_constraints(args: GenConstraintsArgs) -> Result<(), CliError> {
    let mask = ValidityMask::load_csv(&args.mask)?;
    let mode = match args.mode.as_str() {
        "invalid" => ConstraintMode::InvalidNegations,
        _ => ConstraintMode::ValidDisjunction,
    };
    let set = mask.to_constraints(mode)?;
    let text = parser::render(&set)?;
    std::fs::write(&args.out, &text).map_err(CliError::from)?;
    println!("wrote {} ({} formulas)", args.out.display(), set.len());
    Ok(())
}

#[derive(serde::Deserialize)]
struct ExperimentConfig {
    synthetic: SyntheticConfig,
    train: TrainConfig,
}

fn read_json_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("bad JSON in {}: {e}", path.display())))
}

fn train_cmd(args: TrainArgs) -> Result<(), CliError> {
    let cfg: ExperimentConfig = read_json_config(&args.config)?;
    let constraints: Option<ConstraintSet> = if args.constraints == "none" {
        None
    } else {
        let text = std::fs::read_to_string(Path::new(&args.constraints))?;
        let set = parser::parse(&text)?;
        for f in &set.formulas {
            f.check_bounds(cfg.train.model.verbs, cfg.train.model.nouns)?;
        }
        Some(set)
    };

    let world = gen_synthetic(&cfg.synthetic)?;
    std::fs::create_dir_all(&args.out)?;

    let result = train(
        &cfg.train,
        &world.source,
        &world.target,
        constraints.as_ref(),
        Some(&world.truth_mask),
    )?;

    result.model.params.save_json(&args.out.join("checkpoint.json"))?;
    std::fs::write(args.out.join("metrics.csv"), epoch_csv(&result.epochs))?;
    let rows = vec![("final".to_string(), result.final_metrics)];
    std::fs::write(args.out.join("report.csv"), report_csv(&rows))?;
    std::fs::write(args.out.join("report.md"), report_markdown(&rows))?;

    // per-sample target predictions + labels, for ensembling and eval
    let mut predictions = PredictionFile::new(
        "actlogic".to_string(),
        cfg.train.model.verbs,
        cfg.train.model.nouns,
    );
    let mut labels = String::from("uid,verb_id,noun_id\n");
    for sample in &world.target.samples {
        let probs = result.model.infer(&sample.frames)?;
        predictions.push_branch(sample.uid.clone(), probs.verb_probs, probs.noun_probs);
        labels.push_str(&format!("{},{},{}\n", sample.uid, sample.verb, sample.noun));
    }
    predictions.save(&args.out.join("predictions.jsonl"))?;
    std::fs::write(args.out.join("target_labels.csv"), labels)?;
    world
        .source
        .observed_mask(cfg.synthetic.verbs, cfg.synthetic.nouns)?
        .save_csv(&args.out.join("source_mask.csv"))?;
    world.truth_mask.save_csv(&args.out.join("truth_mask.csv"))?;

    let m = result.final_metrics;
    println!(
        "target: verb@1 {:.4} noun@1 {:.4} action@1 {:.4} action@5 {:.4} invalid {}",
        m.verb_top1,
        m.noun_top1,
        m.action_top1,
        m.action_top5,
        m.invalid_rate.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
    );
    println!("artifacts in {}", args.out.display());
    Ok(())
}

/// Never contacted; stands in when the cache already covers every pair.
struct UnreachableClient;

impl ChatClient for UnreachableClient {
    fn complete(&self, _prompt: &str) -> Result<String, OracleError> {
        Err(OracleError::Network {
            attempts: 0,
            message: "no client configured (cache was expected to be complete)".into(),
        })
    }
}

fn llm_matrix(args: LlmMatrixArgs) -> Result<(), CliError> {
    let vocab = Vocabulary::load_json(&args.vocab)?;
    let cfg: OracleConfig = read_json_config(&args.config)?;
    cfg.validate()?;

    let cached = load_cache(&cfg.cache_path)?;
    let all_cached = (0..vocab.verbs.len())
        .all(|v| (0..vocab.nouns.len()).all(|n| cached.contains_key(&(v, n))));

    let client: Box<dyn ChatClient> = match &args.mock {
        Some(rule_path) => Box::new(MockChatClient::new(MockRule::load_json(rule_path)?, vocab.clone())),
        None if all_cached => Box::new(UnreachableClient),
        None => Box::new(HttpChatClient::from_config(&cfg)?),
    };

    let (mask, unknowns) = actlogic::oracle::query_matrix(&vocab, &cfg, client.as_ref())?;
    let mask = match &args.union {
        Some(other) => mask.union(&ValidityMask::load_csv(other)?)?,
        None => mask,
    };
    mask.save_csv(&args.out)?;
    println!(
        "wrote {} ({} of {} pairs valid, {} unknown)",
        args.out.display(),
        mask.num_valid(),
        vocab.verbs.len() * vocab.nouns.len(),
        unknowns.len()
    );
    Ok(())
}

fn ensemble_cmd(args: EnsembleArgs) -> Result<(), CliError> {
    if args.inputs.len() != args.weights.len() {
        return Err(CliError::Usage(format!(
            "{} inputs but {} weights",
            args.inputs.len(),
            args.weights.len()
        )));
    }
    let mut files = Vec::with_capacity(args.inputs.len());
    for path in &args.inputs {
        files.push(PredictionFile::load(path)?);
    }
    let mask = match &args.mask {
        Some(path) => Some(ValidityMask::load_csv(path)?),
        None => None,
    };
    let cfg = EnsembleConfig {
        weights: args.weights.clone(),
        mask,
        mode: if args.geometric {
            AggregationMode::GeometricMean
        } else {
            AggregationMode::ArithmeticMean
        },
    };
    let out = aggregate(&files, &cfg)?;
    out.save(&args.out)?;
    println!("wrote {} ({} samples)", args.out.display(), out.records.len());
    Ok(())
}

fn eval_cmd(args: EvalArgs) -> Result<(), CliError> {
    let pred = PredictionFile::load(&args.pred)?;
    let records = load_annotations(&args.labels)?;
    let labels: std::collections::BTreeMap<&str, (usize, usize)> = records
        .iter()
        .map(|r| (r.uid.as_str(), (r.verb_id, r.noun_id)))
        .collect();
    let mask = match &args.mask {
        Some(path) => Some(ValidityMask::load_csv(path)?),
        None => None,
    };

    let mut scored = Vec::with_capacity(pred.records.len());
    for record in &pred.records {
        let uid = record.uid();
        let label = labels
            .get(uid)
            .copied()
            .ok_or_else(|| CliError::Data(format!("no labels for uid `{uid}`")))?;
        let scores =
            actlogic::ensemble::compose_action_scores(record, pred.verbs, pred.nouns, None)?;
        let (verb_probs, noun_probs) = match record {
            actlogic::ensemble::PredictionRecord::Branch { verb_probs, noun_probs, .. } => {
                (verb_probs.clone(), noun_probs.clone())
            }
            actlogic::ensemble::PredictionRecord::Action { .. } => marginals(&scores),
        };
        scored.push(ScoredSample {
            verb_probs,
            noun_probs,
            action_scores: Some(scores),
            labels: label,
        });
    }
    let metrics: Metrics = compute_metrics(&scored, mask.as_ref(), mask.as_ref())?;
    let rows = vec![(pred.model.clone(), metrics)];
    print!("{}", report_markdown(&rows));
    // machine-readable line under the table
    print!("{}", report_csv(&rows));
    let _ = parse_report_csv(&report_csv(&rows)).expect("own report parses");
    Ok(())
}

fn marginals(scores: &actlogic::cooccur::ScoreMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let mut verb = vec![0.0; scores.verbs()];
    let mut noun = vec![0.0; scores.nouns()];
    for i in 0..scores.verbs() {
        for j in 0..scores.nouns() {
            verb[i] += scores.at(i, j);
            noun[j] += scores.at(i, j);
        }
    }
    (verb, noun)
}

fn parse_id_list(text: &str) -> Result<Vec<usize>, CliError> {
    let mut ids = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        match part.split_once('-') {
            Some((lo, hi)) => {
                let lo: usize = lo
                    .trim()
                    .parse()
                    .map_err(|_| CliError::Usage(format!("bad id `{part}`")))?;
                let hi: usize = hi
                    .trim()
                    .parse()
                    .map_err(|_| CliError::Usage(format!("bad id `{part}`")))?;
                if hi < lo {
                    return Err(CliError::Usage(format!("empty range `{part}`")));
                }
                ids.extend(lo..=hi);
            }
            None => ids.push(
                part.parse()
                    .map_err(|_| CliError::Usage(format!("bad id `{part}`")))?,
            ),
        }
    }
    if ids.is_empty() {
        return Err(CliError::Usage("id list is empty".into()));
    }
    Ok(ids)
}

fn heatmap_cmd(args: HeatmapArgs) -> Result<(), CliError> {
    let matrix = CooccurrenceMatrix::load_csv(&args.matrix)?;
    let verbs = parse_id_list(&args.verbs)?;
    let nouns = parse_id_list(&args.nouns)?;
    let image = render_heatmap(&matrix, &verbs, &nouns, 10)?;
    std::fs::write(&args.out, image)?;
    println!(
        "wrote {} ({}x{} cells)",
        args.out.display(),
        verbs.len(),
        nouns.len()
    );
    Ok(())
}
