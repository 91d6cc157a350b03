//! `patchcorr` command-line interface.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use patchcorr::combine::{self, Strategy};
use patchcorr::config::{FeatureSelection, RunConfig};
use patchcorr::corpus::{self, Corpus, IngestMode, Label};
use patchcorr::embed::{self, EmbedError, EmbeddingPair, ParagraphVectorModel};
use patchcorr::eval::{self, Averaging};
use patchcorr::explain::{self, ExplainError, Explainer};
use patchcorr::featureio::{self, FeatureIoError, FeatureTable};
use patchcorr::filter::{self, ScoredPatch, SimilarityStats, ThresholdPolicy, ThresholdStatistic};
use patchcorr::learn::{self, LearnerKind, TrainedModel};
use patchcorr::synth::{self, SynthMode};
use patchcorr::{diffparse, engineered, rng, Error};

/// Prints a summary line; a closed stdout (e.g. piped into `head`) is not an error.
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}

#[derive(Parser)]
#[command(
    name = "patchcorr",
    version,
    about = "Predict whether automatically generated repair patches are correct",
    propagate_version = true
)]
struct Cli {
    /// Run-configuration JSON file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Directory for every artifact (default: `out`).
    #[arg(long, global = true, env = "PATCHCORR_OUT_DIR", value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Master seed for folds, learners and sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Corpus JSONL to read (default: <out-dir>/corpus.jsonl).
    #[arg(long, global = true, value_name = "FILE")]
    corpus: Option<PathBuf>,
    /// Embedding JSONL to read (default: <out-dir>/embeddings.jsonl).
    #[arg(long, global = true, value_name = "FILE")]
    embeddings: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a JSONL corpus, drop duplicates and store it as corpus.jsonl.
    Ingest(IngestArgs),
    /// Write a seeded synthetic corpus plus matching synthetic embeddings.
    GenSynthetic(SynthArgs),
    /// Write the buggy/patched fragment text of every patch (fragments.jsonl).
    Fragments,
    /// Train the paragraph-vector embedder on all fragments (embedder.json).
    TrainEmbedder(EmbedderArgs),
    /// Infer buggy/patched embeddings with a trained embedder (embeddings.jsonl).
    Embed(EmbedArgs),
    /// Validate externally computed embeddings and store them as embeddings.jsonl.
    ImportEmbeddings(ImportArgs),
    /// Build learned and engineered feature tables.
    Features(FeaturesArgs),
    /// Similarity statistics over correct patches (stats.json).
    Stats,
    /// Filter patches by a similarity threshold (filter.json, verdicts.csv).
    Filter(FilterArgs),
    /// Keep the most similar patch of every bug (top1.json, top1.csv).
    Top1,
    /// Train one learner on a whole feature table.
    Train(ModelArgs),
    /// Bug-disjoint k-fold cross-validation of one learner.
    Crossval(CrossvalArgs),
    /// Cross-validate a combination of learned and engineered features.
    Combine(CombineArgs),
    /// Shapley explanations of a tree or linear model.
    Explain(ExplainArgs),
    /// Overlap of the patches two prediction files get right.
    Compare(CompareArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Input JSONL corpus.
    input: PathBuf,
    /// Accept records labeled "unlabeled" (prediction-only corpora).
    #[arg(long)]
    allow_unlabeled: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Where the label signal lives.
    #[arg(long, value_enum)]
    mode: Option<SynthMode>,
    #[arg(long)]
    patches: Option<usize>,
    #[arg(long)]
    bugs: Option<usize>,
    /// Dimension of the synthetic embeddings.
    #[arg(long)]
    dim: Option<usize>,
    /// Standard deviation of embedding noise.
    #[arg(long)]
    noise: Option<f64>,
    /// Probability that each hidden bit is set.
    #[arg(long)]
    bit_rate: Option<f64>,
    /// Seed for the generator (independent of --seed).
    #[arg(long)]
    synth_seed: Option<u64>,
}

#[derive(Args)]
struct EmbedderArgs {
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    negative_samples: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    min_token_count: Option<usize>,
    /// Seed for embedder initialization and sampling.
    #[arg(long)]
    embedder_seed: Option<u64>,
}

#[derive(Args)]
struct EmbedArgs {
    /// Trained embedder (default: <out-dir>/embedder.json).
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct ImportArgs {
    /// JSONL with {patch_id, buggy_vec, patched_vec} per line.
    input: PathBuf,
    /// Name recorded as the embedding provider.
    #[arg(long, default_value = "external")]
    provider: String,
}

#[derive(Args)]
struct FeaturesArgs {
    /// Skip the learned table (no embeddings needed).
    #[arg(long)]
    engineered_only: bool,
}

#[derive(Args)]
struct FilterArgs {
    /// Threshold statistic.
    #[arg(long, value_enum)]
    policy: Option<ThresholdStatistic>,
    /// Threshold for `--policy fixed`.
    #[arg(long, allow_hyphen_values = true)]
    value: Option<f64>,
    /// Take the statistic from an earlier `stats` run (e.g. on a training
    /// corpus) instead of this corpus.
    #[arg(long, value_name = "FILE")]
    stats: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_enum)]
    features: Option<FeatureSelection>,
    #[arg(long, value_enum)]
    learner: Option<LearnerKind>,
}

#[derive(Args)]
struct CrossvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Number of bug-disjoint folds.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum)]
    averaging: Option<Averaging>,
    /// Probability at or above which a patch is predicted correct.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct CombineArgs {
    #[arg(long, value_enum)]
    strategy: Option<Strategy>,
    #[arg(long, value_enum)]
    learner: Option<LearnerKind>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum)]
    averaging: Option<Averaging>,
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct ExplainArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Explain this saved model instead of training one on the full table.
    #[arg(long, value_name = "FILE")]
    model_file: Option<PathBuf>,
    /// Also compute pairwise interaction values for two features, e.g.
    /// `singleLine,B-3`.
    #[arg(long, value_name = "A,B")]
    interaction: Option<String>,
    /// Features included in the plot-data file, by importance.
    #[arg(long, default_value_t = 20)]
    plot_top: usize,
    /// Cap on background rows.
    #[arg(long)]
    background_cap: Option<usize>,
}

#[derive(Args)]
struct CompareArgs {
    /// First out-of-fold prediction CSV.
    a: PathBuf,
    /// Second out-of-fold prediction CSV.
    b: PathBuf,
    #[arg(long)]
    threshold: Option<f64>,
}

enum CliError {
    Lib(Error),
    Input {
        module: &'static str,
        message: String,
        hint: &'static str,
    },
}

impl<E: Into<Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Lib(e.into())
    }
}

const EXIT_USAGE: u8 = 2;
const EXIT_INPUT: u8 = 3;
const EXIT_MODEL: u8 = 4;
const EXIT_IO: u8 = 5;

impl CliError {
    fn report(&self) -> (u8, String, String, &'static str) {
        match self {
            CliError::Input {
                module,
                message,
                hint,
            } => (EXIT_INPUT, module.to_string(), message.clone(), hint),
            CliError::Lib(e) => {
                let module = e.module().to_string();
                let message = match e {
                    Error::Corpus(x) => x.to_string(),
                    Error::Diff(x) => x.to_string(),
                    Error::Embed(x) => x.to_string(),
                    Error::Filter(x) => x.to_string(),
                    Error::Learn(x) => x.to_string(),
                    Error::Combine(x) => x.to_string(),
                    Error::Eval(x) => x.to_string(),
                    Error::Explain(x) => x.to_string(),
                    Error::FeatureIo(x) => x.to_string(),
                    Error::Io(x) => x.to_string(),
                    Error::Json(x) => x.to_string(),
                };
                let (code, hint) = classify(e);
                (code, module, message, hint)
            }
        }
    }
}

fn classify(e: &Error) -> (u8, &'static str) {
    match e {
        Error::Corpus(corpus::CorpusError::TooFewBugs { .. }) => {
            (EXIT_INPUT, "lower --k or add patches from more bugs")
        }
        Error::Corpus(_) => (
            EXIT_INPUT,
            "each line needs patch_id, bug_id, project, tool, label and a single-file diff_text; run `ingest` first",
        ),
        Error::Diff(_) => (EXIT_INPUT, "diff_text must be a unified diff of one file with at least one hunk"),
        Error::Embed(EmbedError::Io(_) | EmbedError::Parse { .. } | EmbedError::InvalidPair { .. } | EmbedError::NoEmbeddings(_) | EmbedError::Json(_)) => (
            EXIT_INPUT,
            "run `embed` or `import-embeddings` first, or pass --embeddings with {patch_id, buggy_vec, patched_vec} lines",
        ),
        Error::Embed(_) => (EXIT_MODEL, "adjust the embedder settings (dim, learning_rate, min_token_count)"),
        Error::FeatureIo(FeatureIoError::MissingEmbedding(_)) => {
            (EXIT_INPUT, "the embedding file must cover every corpus patch; re-run `embed`")
        }
        Error::FeatureIo(FeatureIoError::Io(_)) => (EXIT_INPUT, "run `features` first so the feature tables exist"),
        Error::FeatureIo(_) => (EXIT_INPUT, "regenerate the feature tables with `features`"),
        Error::Filter(_) => (EXIT_MODEL, "filtering needs labeled patches and a finite threshold"),
        Error::Learn(_) => (EXIT_MODEL, "check that both classes are present and adjust the learner settings in the config"),
        Error::Combine(_) => (EXIT_MODEL, "learned and engineered tables must cover the same patches; re-run `features`"),
        Error::Eval(_) => (EXIT_MODEL, "every fold needs both classes; try another --seed or a smaller --k"),
        Error::Explain(ExplainError::Unsupported(_)) => (EXIT_MODEL, "exact explanations exist for lr, dt, rf and gbt"),
        Error::Explain(_) => (EXIT_MODEL, "check the feature names and the model's feature count"),
        Error::Io(_) => (EXIT_IO, "check that the path exists and the output directory is writable"),
        Error::Json(_) => (EXIT_INPUT, "the file is not valid JSON for this command"),
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, module, message, hint) = e.report();
            eprintln!("error[{module}]: {message}");
            eprintln!("  hint: {hint}");
            ExitCode::from(code)
        }
    }
}

fn base_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| CliError::Input {
            module: "config",
            message: format!("{}: {}", p.display(), e),
            hint: "fix the config file; unknown fields are rejected",
        })?,
        None => RunConfig::default(),
    };
    if let Some(d) = &cli.out_dir {
        cfg.paths.output_dir = d.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(p) = &cli.corpus {
        cfg.paths.corpus = Some(p.clone());
    }
    if let Some(p) = &cli.embeddings {
        cfg.paths.embeddings = Some(p.clone());
    }
    Ok(cfg)
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = base_config(&cli)?;
    std::fs::create_dir_all(&cfg.paths.output_dir).map_err(Error::from)?;
    match cli.command {
        Command::Ingest(a) => ingest(&cfg, &a),
        Command::GenSynthetic(a) => {
            set(&mut cfg.synth.mode, a.mode);
            set(&mut cfg.synth.patches, a.patches);
            set(&mut cfg.synth.bugs, a.bugs);
            set(&mut cfg.synth.dim, a.dim);
            set(&mut cfg.synth.noise, a.noise);
            set(&mut cfg.synth.bit_rate, a.bit_rate);
            set(&mut cfg.synth.seed, a.synth_seed);
            gen_synthetic(&cfg)
        }
        Command::Fragments => fragments(&cfg),
        Command::TrainEmbedder(a) => {
            set(&mut cfg.embedder.dim, a.dim);
            set(&mut cfg.embedder.epochs, a.epochs);
            set(&mut cfg.embedder.negative_samples, a.negative_samples);
            set(&mut cfg.embedder.learning_rate, a.learning_rate);
            set(&mut cfg.embedder.min_token_count, a.min_token_count);
            set(&mut cfg.embedder.seed, a.embedder_seed);
            train_embedder(&cfg)
        }
        Command::Embed(a) => embed_corpus(&cfg, a.model),
        Command::ImportEmbeddings(a) => import_embeddings(&cfg, &a),
        Command::Features(a) => features(&cfg, a.engineered_only),
        Command::Stats => stats(&cfg),
        Command::Filter(a) => {
            set(&mut cfg.threshold.statistic, a.policy);
            if a.value.is_some() {
                cfg.threshold.value = a.value;
            }
            filter_cmd(&cfg, a.stats.as_deref())
        }
        Command::Top1 => top1(&cfg),
        Command::Train(a) => {
            apply_model(&mut cfg, &a);
            train(&cfg)
        }
        Command::Crossval(a) => {
            apply_model(&mut cfg, &a.model);
            set(&mut cfg.k, a.k);
            set(&mut cfg.averaging, a.averaging);
            set(&mut cfg.decision_threshold, a.threshold);
            crossval(&cfg)
        }
        Command::Combine(a) => {
            set(&mut cfg.strategy, a.strategy);
            set(&mut cfg.learner, a.learner);
            set(&mut cfg.k, a.k);
            set(&mut cfg.averaging, a.averaging);
            set(&mut cfg.decision_threshold, a.threshold);
            combine_cmd(&cfg)
        }
        Command::Explain(a) => {
            apply_model(&mut cfg, &a.model);
            set(&mut cfg.background_cap, a.background_cap);
            explain_cmd(&cfg, &a)
        }
        Command::Compare(a) => {
            set(&mut cfg.decision_threshold, a.threshold);
            compare(&cfg, &a)
        }
    }
}

fn apply_model(cfg: &mut RunConfig, a: &ModelArgs) {
    set(&mut cfg.features, a.features);
    set(&mut cfg.learner, a.learner);
}

fn features_name(f: FeatureSelection) -> &'static str {
    match f {
        FeatureSelection::Learned => "learned",
        FeatureSelection::Engineered => "engineered",
        FeatureSelection::Concat => "concat",
    }
}

/// Pretty JSON with the effective configuration under `run_config`.
fn write_artifact(cfg: &RunConfig, path: &Path, body: impl Serialize) -> CliResult<()> {
    let mut value = serde_json::to_value(body).map_err(Error::from)?;
    match value.as_object_mut() {
        Some(obj) => {
            obj.insert("run_config".into(), cfg.to_json());
        }
        None => value = json!({ "data": value, "run_config": cfg.to_json() }),
    }
    featureio::write_json(path, &value)?;
    Ok(())
}

fn write_sidecar(cfg: &RunConfig, csv_path: &Path, extra: Value) -> CliResult<()> {
    let mut meta = json!({ "artifact": file_name(csv_path) });
    if let (Some(m), Some(e)) = (meta.as_object_mut(), extra.as_object()) {
        m.extend(e.clone());
    }
    write_artifact(cfg, &featureio::meta_path(csv_path), meta)
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn load_corpus(cfg: &RunConfig) -> CliResult<Corpus> {
    let (c, _) = corpus::ingest(&cfg.paths.corpus(), IngestMode::Prediction)?;
    Ok(c)
}

fn load_embeddings(cfg: &RunConfig) -> CliResult<Vec<EmbeddingPair>> {
    let path = cfg.paths.embeddings();
    Ok(embed::import_embeddings(
        &path,
        &path.display().to_string(),
    )?)
}

fn ingest(cfg: &RunConfig, a: &IngestArgs) -> CliResult<()> {
    let mode = if a.allow_unlabeled {
        IngestMode::Prediction
    } else {
        IngestMode::Training
    };
    let (c, report) = corpus::ingest(&a.input, mode)?;
    let out = cfg.paths.out("corpus.jsonl");
    c.persist(&out).map_err(Error::from)?;
    write_artifact(
        cfg,
        &cfg.paths.out("ingest_report.json"),
        json!({ "source": a.input, "report": report, "distinct_bugs": c.distinct_bugs().len() }),
    )?;
    say!(
        "ingested {} patches from {} bugs ({} duplicates, {} rejected) -> {}",
        report.ingested,
        c.distinct_bugs().len(),
        report.duplicates,
        report.rejected.len(),
        out.display()
    );
    for r in report.rejected.iter().take(10) {
        say!("  rejected line {}: {}", r.line, r.reason);
    }
    Ok(())
}

fn gen_synthetic(cfg: &RunConfig) -> CliResult<()> {
    let s = synth::generate(&cfg.synth);
    let corpus_path = cfg.paths.out("corpus.jsonl");
    let emb_path = cfg.paths.out("synthetic_embeddings.jsonl");
    s.corpus.persist(&corpus_path).map_err(Error::from)?;
    embed::export_embeddings(&emb_path, &s.embeddings)?;
    let correct = s
        .corpus
        .records
        .iter()
        .filter(|r| r.label == Label::Correct)
        .count();
    write_artifact(
        cfg,
        &cfg.paths.out("gen_synthetic.json"),
        json!({
            "patches": s.corpus.len(),
            "bugs": s.corpus.distinct_bugs().len(),
            "correct": correct,
            "corpus": file_name(&corpus_path),
            "embeddings": file_name(&emb_path),
        }),
    )?;
    say!(
        "generated {} patches ({} correct) over {} bugs, mode {:?} -> {}, {}",
        s.corpus.len(),
        correct,
        s.corpus.distinct_bugs().len(),
        cfg.synth.mode,
        corpus_path.display(),
        emb_path.display()
    );
    Ok(())
}

fn corpus_fragments(c: &Corpus) -> CliResult<Vec<diffparse::FragmentPair>> {
    Ok(c.records
        .par_iter()
        .map(|r| diffparse::fragments_from_diff(&r.diff_text))
        .collect::<Result<Vec<_>, _>>()?)
}

fn fragments(cfg: &RunConfig) -> CliResult<()> {
    let c = load_corpus(cfg)?;
    let frags = corpus_fragments(&c)?;
    let path = cfg.paths.out("fragments.jsonl");
    let mut text = String::new();
    for (r, f) in c.records.iter().zip(&frags) {
        let line = json!({ "patch_id": r.patch_id, "buggy_text": f.buggy_text, "patched_text": f.patched_text });
        text += &serde_json::to_string(&line).map_err(Error::from)?;
        text.push('\n');
    }
    std::fs::write(&path, text).map_err(Error::from)?;
    say!(
        "wrote fragments for {} patches -> {}",
        frags.len(),
        path.display()
    );
    Ok(())
}

fn train_embedder(cfg: &RunConfig) -> CliResult<()> {
    let c = load_corpus(cfg)?;
    let frags = corpus_fragments(&c)?;
    let docs: Vec<Vec<String>> = frags
        .into_iter()
        .flat_map(|f| [f.buggy_tokens, f.patched_tokens])
        .collect();
    let model = embed::train_embedder(&docs, &cfg.embedder)?;
    let path = cfg.paths.out("embedder.json");
    model.save(&path)?;
    write_artifact(
        cfg,
        &cfg.paths.out("embedder_report.json"),
        json!({
            "documents": docs.len(),
            "vocabulary": model.vocabulary.len(),
            "dim": model.dim(),
            "initial_loss": model.initial_loss,
            "final_loss": model.final_loss,
        }),
    )?;
    say!(
        "trained {}-dim embedder on {} fragments, {} tokens; loss {:.4} -> {:.4} -> {}",
        model.dim(),
        docs.len(),
        model.vocabulary.len(),
        model.initial_loss,
        model.final_loss,
        path.display()
    );
    Ok(())
}

fn embed_corpus(cfg: &RunConfig, model: Option<PathBuf>) -> CliResult<()> {
    let model_path = model.unwrap_or_else(|| cfg.paths.out("embedder.json"));
    let model = ParagraphVectorModel::load(&model_path)?;
    let c = load_corpus(cfg)?;
    let frags = corpus_fragments(&c)?;
    let inferred: Vec<(EmbeddingPair, bool)> = c
        .records
        .par_iter()
        .zip(&frags)
        .map(|(r, f)| {
            let b = model.infer_vector(&f.buggy_tokens);
            let p = model.infer_vector(&f.patched_tokens);
            let pair =
                EmbeddingPair::new(r.patch_id.clone(), b.vector, p.vector, "paragraph-vector")?;
            Ok((pair, b.all_oov || p.all_oov))
        })
        .collect::<Result<_, EmbedError>>()?;
    let oov = inferred.iter().filter(|(_, o)| *o).count();
    let pairs: Vec<EmbeddingPair> = inferred.into_iter().map(|(p, _)| p).collect();
    let path = cfg.paths.embeddings();
    embed::export_embeddings(&path, &pairs)?;
    say!(
        "embedded {} patches ({}-dim, {} with an out-of-vocabulary fragment) -> {}",
        pairs.len(),
        model.dim(),
        oov,
        path.display()
    );
    Ok(())
}

fn import_embeddings(cfg: &RunConfig, a: &ImportArgs) -> CliResult<()> {
    let pairs = embed::import_embeddings(&a.input, &a.provider)?;
    let path = cfg.paths.embeddings();
    embed::export_embeddings(&path, &pairs)?;
    say!(
        "imported {} {}-dim embedding pairs from {} -> {}",
        pairs.len(),
        pairs[0].dim(),
        a.input.display(),
        path.display()
    );
    Ok(())
}

fn features(cfg: &RunConfig, engineered_only: bool) -> CliResult<()> {
    let c = load_corpus(cfg)?;
    let eng = featureio::engineered_table(&c)?;
    let eng_path = cfg.paths.out("features_engineered.csv");
    eng.write_csv(&eng_path)?;
    write_sidecar(
        cfg,
        &eng_path,
        json!({ "registry": engineered::REGISTRY_VERSION, "rows": eng.len(), "width": eng.width() }),
    )?;
    let mut learned_names = Vec::new();
    if !engineered_only {
        let pairs = load_embeddings(cfg)?;
        let learned = featureio::learned_table(&c, &pairs)?;
        let path = cfg.paths.out("features_learned.csv");
        learned.write_csv(&path)?;
        write_sidecar(
            cfg,
            &path,
            json!({
                "embedding_source": cfg.paths.embeddings(),
                "provider": pairs[0].provider,
                "rows": learned.len(),
                "width": learned.width(),
            }),
        )?;
        say!(
            "learned features: {} x {} -> {}",
            learned.len(),
            learned.width(),
            path.display()
        );
        learned_names = learned.names;
    }
    write_artifact(
        cfg,
        &cfg.paths.out("feature_registry.json"),
        json!({
            "engineered_registry": engineered::REGISTRY_VERSION,
            "engineered": engineered::registry(),
            "learned": learned_names,
            "learned_layout": "[sub (n) | mul (n) | cosine | euclidean similarity], named B-0..B-(2n+1)",
        }),
    )?;
    say!(
        "engineered features: {} x {} -> {}",
        eng.len(),
        eng.width(),
        eng_path.display()
    );
    Ok(())
}

/// Similarity score of every corpus patch, joined with its bug and label.
fn scored_patches(cfg: &RunConfig) -> CliResult<Vec<ScoredPatch>> {
    let c = load_corpus(cfg)?;
    let pairs = load_embeddings(cfg)?;
    let index: BTreeMap<&str, &EmbeddingPair> =
        pairs.iter().map(|p| (p.patch_id.as_str(), p)).collect();
    let mut ordered = Vec::with_capacity(c.len());
    for r in &c.records {
        let p = index
            .get(r.patch_id.as_str())
            .ok_or_else(|| FeatureIoError::MissingEmbedding(r.patch_id.clone()))?;
        ordered.push((*p).clone());
    }
    let scores = filter::score_corpus(&ordered)?;
    Ok(c.records
        .iter()
        .zip(scores)
        .map(|(r, s)| ScoredPatch {
            patch_id: r.patch_id.clone(),
            bug_id: r.bug_id.clone(),
            score: s.score,
            label: r.label,
        })
        .collect())
}

fn correct_stats(scored: &[ScoredPatch]) -> CliResult<SimilarityStats> {
    let correct: Vec<f64> = scored
        .iter()
        .filter(|s| s.label == Label::Correct)
        .map(|s| s.score)
        .collect();
    Ok(filter::stats(&correct)?)
}

fn stats(cfg: &RunConfig) -> CliResult<()> {
    let scored = scored_patches(cfg)?;
    let st = correct_stats(&scored)?;
    let all: Vec<f64> = scored.iter().map(|s| s.score).collect();
    write_artifact(
        cfg,
        &cfg.paths.out("stats.json"),
        json!({ "stats": st, "scope": "correct patches", "all_patches": filter::stats(&all)? }),
    )?;
    say!(
        "cosine over {} correct patches: min {:.4} q1 {:.4} median {:.4} q3 {:.4} max {:.4} mean {:.4}",
        st.count, st.min, st.q1, st.median, st.q3, st.max, st.mean
    );
    Ok(())
}

fn filter_cmd(cfg: &RunConfig, stats_file: Option<&Path>) -> CliResult<()> {
    let scored = scored_patches(cfg)?;
    let st = match stats_file {
        Some(p) => {
            let v: Value = serde_json::from_str(&std::fs::read_to_string(p).map_err(Error::from)?)
                .map_err(Error::from)?;
            serde_json::from_value(v.get("stats").cloned().unwrap_or(Value::Null))
                .map_err(Error::from)?
        }
        None => correct_stats(&scored)?,
    };
    let policy = ThresholdPolicy::resolve(cfg.threshold.statistic, &st, cfg.threshold.value)?;
    let rows: Vec<(String, f64, Label)> = scored
        .iter()
        .filter(|s| s.label != Label::Unlabeled)
        .map(|s| (s.patch_id.clone(), s.score, s.label))
        .collect();
    let outcome = filter::filter_by_threshold(&rows, &policy)?;
    let csv_path = cfg.paths.out("verdicts.csv");
    write_verdicts(&csv_path, &outcome.verdicts)?;
    write_sidecar(cfg, &csv_path, json!({ "policy": policy }))?;
    write_artifact(
        cfg,
        &cfg.paths.out("filter.json"),
        json!({
            "stats": st,
            "stats_source": stats_file,
            "policy": policy,
            "+CP": outcome.plus_cp,
            "-IP": outcome.minus_ip,
            "+Recall": outcome.plus_recall,
            "-Recall": outcome.minus_recall,
            "confusion": outcome.confusion,
        }),
    )?;
    say!(
        "threshold {:?} = {:.4}: +CP {} (+Recall {:.1}%), -IP {} (-Recall {:.1}%) -> {}",
        policy.statistic,
        policy.value,
        outcome.plus_cp,
        100.0 * outcome.plus_recall,
        outcome.minus_ip,
        100.0 * outcome.minus_recall,
        csv_path.display()
    );
    Ok(())
}

fn write_verdicts(path: &Path, verdicts: &[filter::Verdict]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(FeatureIoError::from)?;
    for v in verdicts {
        w.serialize(v).map_err(FeatureIoError::from)?;
    }
    w.flush().map_err(Error::from)?;
    Ok(())
}

fn top1(cfg: &RunConfig) -> CliResult<()> {
    let scored = scored_patches(cfg)?;
    let outcome = filter::top1_per_bug(&scored)?;
    let csv_path = cfg.paths.out("top1.csv");
    write_verdicts(&csv_path, &outcome.verdicts)?;
    write_sidecar(
        cfg,
        &csv_path,
        json!({ "rule": "highest cosine per bug; ties to smallest patch_id" }),
    )?;
    write_artifact(cfg, &cfg.paths.out("top1.json"), &outcome)?;
    say!(
        "selected one patch for each of {} bugs; {:.1}% of selections are correct -> {}",
        outcome.selections.len(),
        100.0 * outcome.fraction_correct,
        csv_path.display()
    );
    Ok(())
}

fn read_table(cfg: &RunConfig, which: &str) -> CliResult<FeatureTable> {
    Ok(FeatureTable::read_csv(
        &cfg.paths.out(&format!("features_{which}.csv")),
    )?)
}

fn load_table(cfg: &RunConfig, f: FeatureSelection) -> CliResult<FeatureTable> {
    match f {
        FeatureSelection::Learned => read_table(cfg, "learned"),
        FeatureSelection::Engineered => read_table(cfg, "engineered"),
        FeatureSelection::Concat => {
            let l = read_table(cfg, "learned")?;
            let e = read_table(cfg, "engineered")?;
            Ok(combine::concat_tables(&l, &e)?)
        }
    }
}

fn model_json(cfg: &RunConfig, model: &TrainedModel, names: &[String]) -> CliResult<Value> {
    let mut v = serde_json::to_value(model).map_err(Error::from)?;
    if let Some(o) = v.as_object_mut() {
        o.insert("feature_names".into(), json!(names));
        o.insert("run_config".into(), cfg.to_json());
    }
    Ok(v)
}

fn train(cfg: &RunConfig) -> CliResult<()> {
    let table = load_table(cfg, cfg.features)?;
    let model = learn::train_matrix(
        cfg.learner,
        &table.matrix(),
        &table.labels(),
        &cfg.learn,
        cfg.seed,
    )?;
    let path = cfg.paths.out(&format!(
        "model_{}_{}.json",
        features_name(cfg.features),
        cfg.learner
    ));
    featureio::write_json(&path, &model_json(cfg, &model, &table.names)?)?;
    let x = table.matrix();
    let preds: Vec<(f64, u8)> = x
        .iter()
        .zip(table.labels())
        .map(|(r, y)| model.predict_proba(r).map(|p| (p, y)))
        .collect::<Result<_, _>>()?;
    let m = eval::confusion_metrics(&preds, cfg.decision_threshold);
    say!(
        "trained {} on {} {} rows x {} features (training accuracy {:.3}) -> {}",
        cfg.learner,
        table.len(),
        features_name(cfg.features),
        table.width(),
        m.accuracy,
        path.display()
    );
    Ok(())
}

fn print_metrics(label: &str, r: &eval::MetricsReport) {
    say!(
        "{label}: k={} {:?}  AUC {:.3}  accuracy {:.3}  precision {:.3}  +Recall {:.3}  -Recall {:.3}  F1 {:.3}",
        r.k, r.averaging, r.auc, r.accuracy, r.precision, r.plus_recall, r.minus_recall, r.f1
    );
    for (metric, folds) in &r.excluded_folds {
        if !folds.is_empty() {
            say!("  {metric}: undefined in folds {folds:?}, left out of the mean");
        }
    }
}

fn write_oof(cfg: &RunConfig, stem: &str, out: &eval::CrossvalOutcome) -> CliResult<PathBuf> {
    let json_path = cfg.paths.out(&format!("{stem}.json"));
    featureio::write_json(&json_path, &out.report)?;
    let csv_path = cfg.paths.out(&format!("oof_{stem}.csv"));
    eval::write_predictions(&csv_path, &out.predictions)?;
    write_sidecar(
        cfg,
        &csv_path,
        json!({ "method": out.report.method, "rows": out.predictions.len() }),
    )?;
    Ok(json_path)
}

fn crossval(cfg: &RunConfig) -> CliResult<()> {
    let table = load_table(cfg, cfg.features)?;
    let out = eval::crossval(
        &table,
        cfg.learner,
        &cfg.learn,
        &cfg.crossval_spec(),
        cfg.to_json(),
    )?;
    let stem = format!("crossval_{}_{}", features_name(cfg.features), cfg.learner);
    let path = write_oof(cfg, &stem, &out)?;
    print_metrics(
        &format!(
            "{} on {} features",
            cfg.learner,
            features_name(cfg.features)
        ),
        &out.report,
    );
    say!("  -> {}", path.display());
    Ok(())
}

fn combine_cmd(cfg: &RunConfig) -> CliResult<()> {
    let l = read_table(cfg, "learned")?;
    let e = read_table(cfg, "engineered")?;
    let out = combine::crossval_combined(
        &l,
        &e,
        cfg.strategy,
        cfg.learner,
        &cfg.learn,
        &cfg.fusion,
        &cfg.crossval_spec(),
        cfg.to_json(),
    )?;
    let stem = match cfg.strategy {
        Strategy::Fusion => "combine_fusion".to_string(),
        s => format!("combine_{}_{}", s.name(), cfg.learner),
    };
    let path = write_oof(cfg, &stem, &out)?;
    print_metrics(&format!("{} strategy", out.report.method), &out.report);
    say!("  -> {}", path.display());
    Ok(())
}

fn feature_index(names: &[String], name: &str) -> CliResult<usize> {
    names
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| ExplainError::UnknownFeature(name.to_string()).into())
}

fn explain_cmd(cfg: &RunConfig, a: &ExplainArgs) -> CliResult<()> {
    let table = load_table(cfg, cfg.features)?;
    let x = table.matrix();
    let model = match &a.model_file {
        Some(p) => TrainedModel::load(p)?,
        None => {
            if !matches!(
                cfg.learner,
                LearnerKind::LogisticRegression
                    | LearnerKind::DecisionTree
                    | LearnerKind::RandomForest
                    | LearnerKind::GradientBoostedTrees
            ) {
                return Err(ExplainError::Unsupported(cfg.learner).into());
            }
            learn::train_matrix(cfg.learner, &x, &table.labels(), &cfg.learn, cfg.seed)?
        }
    };
    if model.feature_count != table.width() {
        return Err(ExplainError::FeatureCount {
            expected: model.feature_count,
            got: table.width(),
        }
        .into());
    }
    let background =
        explain::background_sample(&x, cfg.background_cap, rng::derive(cfg.seed, 0xB6));
    let explainer = Explainer::new(&model, &background)?;
    let ids: Vec<String> = table.rows.iter().map(|r| r.patch_id.clone()).collect();
    let exps = explainer.explain_all(&ids, &x)?;
    let space = explainer.space();
    let stem = format!("{}_{}", features_name(cfg.features), model.kind());

    let csv_path = cfg.paths.out(&format!("explain_{stem}.csv"));
    let mut w = csv::Writer::from_path(&csv_path).map_err(FeatureIoError::from)?;
    w.write_record(["patch_id", "feature_name", "contribution"])
        .map_err(FeatureIoError::from)?;
    for e in &exps {
        for (name, c) in table.names.iter().zip(&e.contributions) {
            w.write_record([e.patch_id.as_str(), name, &c.to_string()])
                .map_err(FeatureIoError::from)?;
        }
    }
    w.flush().map_err(Error::from)?;
    let max_gap = exps.iter().map(|e| e.additivity_gap()).fold(0.0, f64::max);
    write_sidecar(
        cfg,
        &csv_path,
        json!({ "space": space, "instances": exps.len() }),
    )?;

    let global = explain::global_importance(&table.names, &exps, space);
    let base_value = exps.first().map_or(0.0, |e| e.base_value);
    write_artifact(
        cfg,
        &cfg.paths.out(&format!("importance_{stem}.json")),
        json!({
            "learner": model.kind(),
            "space": space,
            "base_value": base_value,
            "background_rows": background.len(),
            "max_additivity_gap": max_gap,
            "importance": global,
        }),
    )?;

    let mut plot = Vec::new();
    for rf in global.ranked.iter().take(a.plot_top) {
        let j = feature_index(&table.names, &rf.feature)?;
        let points: Vec<Value> = exps
            .iter()
            .zip(&x)
            .map(|(e, row)| json!({ "patch_id": e.patch_id, "value": row[j], "contribution": e.contributions[j] }))
            .collect();
        plot.push(json!({ "feature": rf.feature, "points": points }));
    }
    write_artifact(
        cfg,
        &cfg.paths.out(&format!("plot_{stem}.json")),
        json!({ "space": space, "features": plot }),
    )?;

    say!(
        "explained {} patches with {} ({:?} space, base {:.4}, max additivity gap {:.2e})",
        exps.len(),
        model.kind(),
        space,
        base_value,
        max_gap
    );
    for (i, rf) in global.ranked.iter().take(5).enumerate() {
        say!(
            "  {}. {} {:.4}",
            i + 1,
            rf.feature,
            rf.mean_abs_contribution
        );
    }

    if let Some(pair) = &a.interaction {
        let (fa, fb) = pair.split_once(',').ok_or_else(|| CliError::Input {
            module: "explain",
            message: format!(
                "--interaction expects two comma-separated feature names, got `{pair}`"
            ),
            hint: "feature names are listed in feature_registry.json",
        })?;
        let (ia, ib) = (
            feature_index(&table.names, fa.trim())?,
            feature_index(&table.names, fb.trim())?,
        );
        let values: Vec<f64> = x
            .par_iter()
            .map(|row| explain::interaction_pairs(&model, row, ia, ib, &background))
            .collect::<Result<_, _>>()?;
        let mean_abs = values.iter().map(|v| v.abs()).sum::<f64>() / values.len().max(1) as f64;
        let per_patch: Vec<Value> = ids
            .iter()
            .zip(&values)
            .zip(&x)
            .map(|((id, v), row)| json!({ "patch_id": id, "value_a": row[ia], "value_b": row[ib], "interaction": v }))
            .collect();
        let path = cfg.paths.out(&format!("interaction_{stem}.json"));
        write_artifact(
            cfg,
            &path,
            json!({ "feature_a": fa.trim(), "feature_b": fb.trim(), "space": space, "mean_abs_interaction": mean_abs, "per_patch": per_patch }),
        )?;
        say!(
            "  interaction {} x {}: mean |value| {:.4} -> {}",
            fa.trim(),
            fb.trim(),
            mean_abs,
            path.display()
        );
    }
    Ok(())
}

fn compare(cfg: &RunConfig, a: &CompareArgs) -> CliResult<()> {
    let pa = eval::read_predictions(&a.a)?;
    let pb = eval::read_predictions(&a.b)?;
    let report = eval::compare(&pa, &pb, cfg.decision_threshold);
    let path = cfg.paths.out("compare.json");
    write_artifact(
        cfg,
        &path,
        json!({ "a": a.a, "b": a.b, "comparison": report }),
    )?;
    let c = &report.correct_identified;
    let i = &report.incorrect_filtered;
    say!(
        "{} shared patches. correct identified: both {} / only A {} / only B {} / neither {}",
        report.shared_patches,
        c.both,
        c.only_a,
        c.only_b,
        c.neither
    );
    say!(
        "incorrect filtered: both {} / only A {} / only B {} / neither {} -> {}",
        i.both,
        i.only_a,
        i.only_b,
        i.neither,
        path.display()
    );
    Ok(())
}
