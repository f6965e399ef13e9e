use std::collections::BTreeSet;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use vulngraph::corpus::{self, CorpusError, CorpusFormat, CorpusSplit, RawSample};
use vulngraph::graphs::{self, GraphBundle, GraphError};
use vulngraph::model::{gradcheck, ModelError, TrainConfig};
use vulngraph::pipeline::{self, Embeddings, PipelineError, RunOptions};
use vulngraph::pls::{EmbeddingFile, PlsError};

#[derive(Parser)]
#[command(name = "vulngraph", version, about = "Graph-and-attention vulnerability classifier for C-like functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the token stream of a source file as JSON.
    Tokenize {
        #[arg(long)]
        source: PathBuf,
    },
    /// Build AST/CFG/DFG graphs for one file or a whole corpus.
    Extract(ExtractArgs),
    /// Train a model; writes the checkpoint, its split manifest and a loss CSV.
    Train(TrainArgs),
    /// Score a trained model on a corpus or on the test part of a split.
    Evaluate(EvaluateArgs),
    /// Vulnerability probability of one function.
    Predict(PredictArgs),
    /// Train the full model and one variant per disabled representation.
    AblateSuite(AblateArgs),
    /// Compare analytic and finite-difference gradients on random tiny models.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long, conflicts_with = "corpus", required_unless_present = "corpus")]
    source: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Parse tree to use instead of the built-in parser (single file only).
    #[arg(long, requires = "source")]
    parse_tree: Option<PathBuf>,
    /// Output file, or output directory with `--corpus`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// JSON file with any subset of the training configuration fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Precomputed embedding container; omit to train an embedding table.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Existing split manifest; otherwise a split is drawn.
    #[arg(long, conflicts_with_all = ["split_seed", "ratios", "stratify"])]
    split: Option<PathBuf>,
    #[arg(long)]
    split_seed: Option<u64>,
    /// Train, validation and test fractions.
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
    #[arg(long)]
    stratify: bool,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    no_cache: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Checkpoint path; `<stem>.split.json` and `<stem>.loss.csv` go beside it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Score only the test ids of this manifest.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    no_cache: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    source: PathBuf,
    /// Sample id; defaults to the file stem. Used to find precomputed rows.
    #[arg(long)]
    id: Option<String>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Part {
    Train,
    Validation,
    Test,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Split part to score; an empty test part falls back to train.
    #[arg(long, value_enum, default_value_t = Part::Test)]
    eval: Part,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    instances: u64,
    #[arg(long, default_value_t = 8)]
    l_max: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

enum Failure {
    /// Bad flags, files or data; exit 1.
    Input(String),
    /// A numerical or internal check failed; exit 2.
    Internal(String),
}

fn input(e: impl Display) -> Failure {
    Failure::Input(e.to_string())
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        input(e)
    }
}

impl From<GraphError> for Failure {
    fn from(e: GraphError) -> Self {
        input(e)
    }
}

impl From<PlsError> for Failure {
    fn from(e: PlsError) -> Self {
        input(e)
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Grsa(_) | ModelError::Numerics(_) | ModelError::NonFiniteLoss { .. } | ModelError::LengthMismatch { .. } => {
                Failure::Internal(e.to_string())
            }
            _ => input(e),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Model(m) => m.into(),
            _ => input(e),
        }
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    corpus::write_atomic(path, bytes).map_err(input)
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("output serialises"));
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into());
    path.with_file_name(format!("{stem}{suffix}"))
}

fn load_config(args: &DataArgs) -> Result<TrainConfig, Failure> {
    let mut config = match &args.config {
        Some(p) => serde_json::from_str(&read_text(p)?).map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?,
        None => TrainConfig::default(),
    };
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(e) = args.epochs {
        config.epochs = e;
    }
    config.validate()?;
    Ok(config)
}

fn open_embeddings(path: Option<&Path>) -> Result<Option<EmbeddingFile>, Failure> {
    Ok(path.map(EmbeddingFile::open).transpose()?)
}

fn cache_dir(explicit: Option<&Path>, default: Option<PathBuf>, disabled: bool) -> Option<PathBuf> {
    if disabled {
        None
    } else {
        explicit.map(Path::to_path_buf).or(default)
    }
}

fn resolve_split(args: &DataArgs, raws: &[RawSample]) -> Result<CorpusSplit, Failure> {
    if let Some(p) = &args.split {
        let split = CorpusSplit::load(p)?;
        let known: BTreeSet<&str> = raws.iter().map(|r| r.id.as_str()).collect();
        if let Some(id) = split.train.iter().chain(&split.validation).chain(&split.test).find(|id| !known.contains(id.as_str())) {
            return Err(Failure::Input(format!("{}: unknown sample `{id}`", p.display())));
        }
        return Ok(split);
    }
    let ratios = match args.ratios.as_deref() {
        Some(&[a, b, c]) => [a, b, c],
        Some(_) => return Err(Failure::Input("--ratios takes three values".into())),
        None => [0.8, 0.1, 0.1],
    };
    Ok(corpus::split_corpus(raws, ratios, args.split_seed.unwrap_or(0), args.stratify)?)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Tokenize { source } => {
            println!("{}", pipeline::tokens_json(&read_text(&source)?).map_err(input)?);
        }
        Command::Extract(args) => extract(args)?,
        Command::Train(args) => {
            let config = load_config(&args.data)?;
            let raws = corpus::load_corpus(&args.data.corpus, CorpusFormat::Jsonl)?;
            let split = resolve_split(&args.data, &raws)?;
            let file = open_embeddings(args.data.embeddings.as_deref())?;
            let embeddings = file.as_ref().map_or(Embeddings::Trainable, Embeddings::Precomputed);
            let opts = RunOptions {
                cache_dir: cache_dir(args.data.cache_dir.as_deref(), Some(sibling(&args.out, ".cache")), args.data.no_cache),
                jobs: 1,
            };
            let ck = pipeline::fit(&raws, &split, &config, embeddings, &opts)?;
            if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Failure::Input(format!("{}: {e}", dir.display())))?;
            }
            corpus::save_checkpoint(&ck, &args.out)?;
            split.save(&sibling(&args.out, ".split.json"))?;
            write_file(&sibling(&args.out, ".loss.csv"), pipeline::loss_csv(&ck.metrics_history).as_bytes())?;
            let last = ck.metrics_history.last();
            print_json(&json!({
                "model": args.out,
                "epochs": ck.metrics_history.len(),
                "best_epoch": ck.best_epoch,
                "final_train_loss": last.map(|r| r.train_loss),
                "final_val_accuracy": last.and_then(|r| r.val_accuracy),
                "parameters": ck.params.parameter_count(),
                "split_sizes": split.sizes(),
            }));
        }
        Command::Evaluate(args) => {
            let ck = corpus::load_checkpoint(&args.model)?;
            let raws = corpus::load_corpus(&args.corpus, CorpusFormat::Jsonl)?;
            let ids: Vec<String> = match &args.split {
                Some(p) => CorpusSplit::load(p)?.test,
                None => raws.iter().map(|r| r.id.clone()).collect(),
            };
            let file = open_embeddings(args.embeddings.as_deref())?;
            let opts = RunOptions { cache_dir: cache_dir(args.cache_dir.as_deref(), None, args.no_cache), jobs: args.jobs };
            let prepared = pipeline::prepare(&raws, &ck.config, &opts)?;
            let report = pipeline::evaluate_ids(&ck, &prepared, &ids, file.as_ref(), args.jobs)?;
            match args.format {
                Format::Json => print_json(&report),
                Format::Table => print!("{}", pipeline::metrics_table(&[("model".into(), report.metrics)])),
            }
        }
        Command::Predict(args) => {
            let ck = corpus::load_checkpoint(&args.model)?;
            let source = read_text(&args.source)?;
            let id = args
                .id
                .unwrap_or_else(|| args.source.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
            let file = open_embeddings(args.embeddings.as_deref())?;
            let p = pipeline::predict_source(&ck, &id, &source, file.as_ref())?;
            print_json(&json!({ "id": id, "probability": p, "label": vulngraph::model::predict_label(p) }));
        }
        Command::AblateSuite(args) => {
            let config = load_config(&args.data)?;
            let raws = corpus::load_corpus(&args.data.corpus, CorpusFormat::Jsonl)?;
            let split = resolve_split(&args.data, &raws)?;
            let ids = match args.eval {
                Part::Train => &split.train,
                Part::Validation => &split.validation,
                Part::Test if split.test.is_empty() => &split.train,
                Part::Test => &split.test,
            };
            let file = open_embeddings(args.data.embeddings.as_deref())?;
            let embeddings = file.as_ref().map_or(Embeddings::Trainable, Embeddings::Precomputed);
            let opts =
                RunOptions { cache_dir: cache_dir(args.data.cache_dir.as_deref(), None, args.data.no_cache), jobs: args.jobs };
            let rows = pipeline::ablation_suite(&raws, &split, ids, &config, embeddings, &opts)?;
            match args.format {
                Format::Json => print_json(&rows),
                Format::Table => {
                    let table: Vec<_> = rows.into_iter().map(|r| (r.model, r.metrics)).collect();
                    print!("{}", pipeline::metrics_table(&table));
                }
            }
        }
        Command::Gradcheck(args) => {
            let min = gradcheck::tiny_config(0).conv_width;
            if args.l_max < min {
                return Err(Failure::Input(format!("--l-max must be at least {min}")));
            }
            let errors = (0..args.instances)
                .map(|i| gradcheck::random_instance(args.seed.wrapping_add(i), args.l_max))
                .collect::<Result<Vec<f64>, _>>()?;
            let worst = errors.iter().copied().fold(0.0, f64::max);
            let passed = worst < args.tolerance;
            print_json(&json!({
                "instances": args.instances,
                "max_relative_error": worst,
                "tolerance": args.tolerance,
                "passed": passed,
                "errors": errors,
            }));
            if !passed {
                return Err(Failure::Internal(format!("gradient check failed: {worst:e} >= {:e}", args.tolerance)));
            }
        }
    }
    Ok(())
}

fn file_name_for(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' }).collect()
}

fn extract(args: ExtractArgs) -> Result<(), Failure> {
    if let Some(source) = &args.source {
        let text = read_text(source)?;
        let bundle: GraphBundle = match &args.parse_tree {
            Some(tree) => graphs::build_bundle(vulngraph::lexer::tokenize(&text).map_err(input)?, graphs::import_parse_tree(tree)?)?,
            None => graphs::extract(&text)?,
        };
        write_file(&args.out, graphs::bundle_to_json(&bundle).as_bytes())?;
        print_json(&summary(&source.to_string_lossy(), &bundle));
        return Ok(());
    }
    let corpus_path = args.corpus.as_ref().expect("clap requires --source or --corpus");
    let raws = corpus::load_corpus(corpus_path, CorpusFormat::Jsonl)?;
    let mut names = BTreeSet::new();
    for r in &raws {
        if !names.insert(file_name_for(&r.id)) {
            return Err(Failure::Input(format!("sample ids collide after file-name sanitising: `{}`", r.id)));
        }
    }
    std::fs::create_dir_all(&args.out).map_err(|e| Failure::Input(format!("{}: {e}", args.out.display())))?;
    let jobs = args.jobs.clamp(1, raws.len().max(1));
    let chunk = raws.len().div_ceil(jobs).max(1);
    let parts: Vec<Result<Vec<serde_json::Value>, Failure>> = std::thread::scope(|s| {
        let handles: Vec<_> = raws
            .chunks(chunk)
            .map(|c| {
                let out = &args.out;
                s.spawn(move || {
                    c.iter()
                        .map(|r| {
                            let bundle = graphs::extract(&r.source).map_err(|e| Failure::Input(format!("sample `{}`: {e}", r.id)))?;
                            write_file(&out.join(format!("{}.json", file_name_for(&r.id))), graphs::bundle_to_json(&bundle).as_bytes())?;
                            Ok(summary(&r.id, &bundle))
                        })
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("extraction thread panicked")).collect()
    });
    let mut rows = Vec::with_capacity(raws.len());
    for p in parts {
        rows.extend(p?);
    }
    print_json(&rows);
    Ok(())
}

fn summary(id: &str, b: &GraphBundle) -> serde_json::Value {
    json!({
        "id": id,
        "tokens": b.tokens.len(),
        "nodes": b.nodes.len(),
        "ast_edges": b.ast.edge_count(),
        "cfg_edges": b.cfg.edge_count(),
        "dfg_edges": b.dfg.edge_count(),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(2)
        }
    }
}
