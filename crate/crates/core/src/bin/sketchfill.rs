use std::collections::BTreeSet;
use std::io::Read;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sketchfill::checkpoint::Checkpoint;
use sketchfill::corpus::synthetic::{self, SyntheticConfig};
use sketchfill::corpus::{
    build_vocabulary, detokenize, load_dataset, tokenize, write_jsonl, DatasetFormat, DialogueExample,
    PersonaTrait, StopWordSet,
};
use sketchfill::embeddings::PretrainedVectors;
use sketchfill::eval::{corpus_perplexity, novelty_stats, question_rate, EvalReport};
use sketchfill::inference::{export_attention, generate_response, FillMode, GenerationConfig};
use sketchfill::lm::{train_lm, CandidateScorer, LanguageModel, LmConfig};
use sketchfill::model::{ModelConfig, SketchModel, Variant};
use sketchfill::service::{self, AppState, LoadedModel, ServiceConfig};
use sketchfill::trainer::{train, TrainConfig, TrainOptions};

type CliResult<T = ()> = Result<T, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(name = "sketchfill", version, about = "Persona-grounded sketch-and-fill dialogue generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a dataset to JSONL and write its vocabulary.
    Preprocess(PreprocessArgs),
    /// Train a sketch model.
    Train(TrainArgs),
    /// Train the reranking language model on responses.
    LmTrain(LmTrainArgs),
    /// Report perplexity, novelty and question statistics.
    Evaluate(EvaluateArgs),
    /// Generate one reply for a context read from stdin.
    Generate(GenerateArgs),
    /// Start the HTTP chat service.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum InputFormat {
    Jsonl,
    Parlai,
}

impl From<InputFormat> for DatasetFormat {
    fn from(f: InputFormat) -> Self {
        match f {
            InputFormat::Jsonl => DatasetFormat::Jsonl,
            InputFormat::Parlai => DatasetFormat::ParlaiText,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FillArg {
    Rerank,
    Pointer,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
    Table,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Source dataset; omit with --synthetic.
    #[arg(long, required_unless_present = "synthetic")]
    input: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "parlai")]
    format: InputFormat,
    /// Generate this many synthetic dialogues instead of reading --input.
    #[arg(long, conflicts_with = "input")]
    synthetic: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    /// Vocabulary JSON output.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    min_count: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "SF-A-R")]
    variant: Variant,
    #[arg(long, default_value_t = 300)]
    d_emb: usize,
    #[arg(long, default_value_t = 300)]
    d_hid: usize,
    #[arg(long, default_value_t = 0.4)]
    dropout: f64,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 50)]
    max_epochs: usize,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long, default_value_t = 3)]
    patience: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    min_count: usize,
    /// Plain-text word vectors for initialization.
    #[arg(long)]
    vectors: Option<PathBuf>,
    /// Per-epoch JSONL metrics output.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct LmTrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 20)]
    max_epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    min_count: usize,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Language-model checkpoint for reranking.
    #[arg(long)]
    lm: Option<PathBuf>,
    /// Override the variant's fill mode.
    #[arg(long, value_enum)]
    fill: Option<FillArg>,
    #[arg(long, default_value_t = 30)]
    max_len: usize,
    #[arg(long, default_value_t = 10)]
    max_turns: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    data: PathBuf,
    /// Training data whose responses define novelty.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Examples to generate replies for (novelty and question rate).
    #[arg(long, default_value_t = 100)]
    generate: usize,
    #[arg(long, default_value_t = 7)]
    beam: usize,
    #[arg(long, value_enum, default_value = "json")]
    report: ReportFormat,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 7)]
    beam: usize,
    /// Print the debug record as JSON.
    #[arg(long)]
    debug: bool,
    /// Write attention weights to this JSON file.
    #[arg(long)]
    attention: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    /// Without a checkpoint the service answers 503 to chat requests.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    lm: Option<PathBuf>,
    #[arg(long, value_enum)]
    fill: Option<FillArg>,
    #[arg(long, default_value_t = 10)]
    beam: usize,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Directory with the built chat UI.
    #[arg(long)]
    static_dir: Option<PathBuf>,
    /// JSONL dataset whose persona sets are sampled for new sessions.
    #[arg(long)]
    personas: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Preprocess(a) => preprocess(a),
        Command::Train(a) => run_train(a),
        Command::LmTrain(a) => lm_train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Generate(a) => generate(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load_jsonl(path: &Path) -> CliResult<Vec<DialogueExample>> {
    Ok(load_dataset(path, DatasetFormat::Jsonl)?)
}

fn preprocess(a: PreprocessArgs) -> CliResult {
    let examples = match (a.synthetic, &a.input) {
        (Some(n), _) => synthetic::generate(&SyntheticConfig { dialogues: n, seed: a.seed, ..Default::default() }),
        (None, Some(input)) => load_dataset(input, a.format.into())?,
        (None, None) => return Err("either --input or --synthetic is required".into()),
    };
    write_jsonl(&a.output, &examples)?;
    if let Some(path) = &a.vocab {
        let vocab = build_vocabulary(&examples, a.min_count)?;
        std::fs::write(path, serde_json::to_string(&vocab)?)?;
        log::info!("vocabulary of {} words written to {}", vocab.len(), path.display());
    }
    log::info!("{} examples written to {}", examples.len(), a.output.display());
    Ok(())
}

fn run_train(a: TrainArgs) -> CliResult {
    let train_set = load_jsonl(&a.train)?;
    let val_set = load_jsonl(&a.val)?;
    let config = TrainConfig {
        model: ModelConfig {
            variant: a.variant,
            d_emb: a.d_emb,
            d_hid: a.d_hid,
            dropout: a.dropout,
            ..ModelConfig::default()
        },
        lr: a.lr,
        batch_size: a.batch_size,
        max_epochs: a.max_epochs,
        max_steps: a.max_steps,
        patience: a.patience,
        seed: a.seed,
        min_count: a.min_count,
        ..TrainConfig::default()
    };
    let pretrained = match &a.vectors {
        Some(path) => {
            let words: BTreeSet<String> = train_set
                .iter()
                .flat_map(|ex| ex.history_tokens(None).into_iter().chain(ex.response.clone()))
                .chain(train_set.iter().flat_map(|ex| ex.trait_tokens().concat()))
                .collect();
            Some(PretrainedVectors::load(path, Some(a.d_emb), |w| words.contains(w))?)
        }
        None => None,
    };
    let options = TrainOptions {
        checkpoint_path: Some(a.out.clone()),
        metrics_path: a.metrics.clone(),
        vocab: None,
        pretrained,
    };
    let outcome = train(&train_set, &val_set, &config, &options)?;
    outcome.checkpoint.save(&a.out)?;
    println!(
        "{}",
        serde_json::json!({
            "checkpoint": a.out,
            "best_val_ppl": outcome.best_val_ppl,
            "epochs": outcome.history.len(),
            "steps": outcome.step_losses.len(),
        })
    );
    Ok(())
}

fn lm_train(a: LmTrainArgs) -> CliResult {
    let data = load_jsonl(&a.data)?;
    let vocab = build_vocabulary(&data, a.min_count)?;
    let responses: Vec<Vec<String>> = data.iter().map(|ex| ex.response.clone()).collect();
    let config = LmConfig {
        dim: a.dim,
        lr: a.lr,
        batch_size: a.batch_size,
        max_epochs: a.max_epochs,
        seed: a.seed,
        ..LmConfig::default()
    };
    let trained = train_lm(&responses, &vocab, &config)?;
    let mut ck = Checkpoint::from_lm(&trained.model, config);
    for epoch in &trained.history {
        ck.metrics.push(serde_json::to_value(epoch)?);
    }
    ck.save(&a.out)?;
    let best = trained.history.iter().map(|e| e.heldout_ppl).fold(f64::INFINITY, f64::min);
    println!("{}", serde_json::json!({ "checkpoint": a.out, "heldout_ppl": best, "epochs": trained.history.len() }));
    Ok(())
}

struct Loaded {
    model: SketchModel,
    lm: Option<LanguageModel>,
}

fn load_models(checkpoint: &Path, lm: Option<&Path>) -> CliResult<Loaded> {
    let model = Checkpoint::load(checkpoint)?.to_model()?;
    let lm = lm.map(|p| Checkpoint::load(p).and_then(|c| c.to_lm())).transpose()?;
    Ok(Loaded { model, lm })
}

fn generation_config(
    variant: Variant,
    fill: Option<FillArg>,
    has_lm: bool,
    beam: usize,
    max_len: usize,
    max_turns: usize,
) -> CliResult<GenerationConfig> {
    let fill_mode = match fill {
        Some(FillArg::Rerank) => FillMode::Rerank,
        Some(FillArg::Pointer) => FillMode::Pointer,
        None => FillMode::for_variant(variant),
    };
    if fill_mode == FillMode::Rerank && !has_lm {
        return Err(format!("variant {variant} fills by reranking; pass --lm or --fill pointer").into());
    }
    let config = GenerationConfig {
        beam_size: beam,
        max_len,
        max_turns: Some(max_turns),
        fill_mode,
        candidate_cap: GenerationConfig::default().candidate_cap.max(beam),
        ..GenerationConfig::default()
    };
    config.validate()?;
    Ok(config)
}

fn scorer(lm: &Option<LanguageModel>) -> Option<&dyn CandidateScorer> {
    lm.as_ref().map(|m| m as &dyn CandidateScorer)
}

fn evaluate(a: EvaluateArgs) -> CliResult {
    let m = &a.model;
    let loaded = load_models(&m.checkpoint, m.lm.as_deref())?;
    let data = load_jsonl(&a.data)?;
    let mut report = EvalReport {
        perplexity: Some(corpus_perplexity(&loaded.model, &data, Some(m.max_turns))?),
        ..EvalReport::default()
    };
    if a.generate > 0 {
        let config = generation_config(
            loaded.model.config.variant,
            m.fill,
            loaded.lm.is_some(),
            a.beam,
            m.max_len,
            m.max_turns,
        )?;
        let mut generated = Vec::new();
        for ex in data.iter().take(a.generate) {
            let g = generate_response(&loaded.model, scorer(&loaded.lm), &ex.personas, &ex.turns, &config)?;
            generated.push(g.response);
        }
        report.composition = Some(question_rate(&generated));
        match &a.train {
            Some(path) => {
                let training: Vec<Vec<String>> = load_jsonl(path)?.into_iter().map(|ex| ex.unsketch()).collect();
                report.novelty = Some(novelty_stats(&generated, &training)?);
            }
            None => log::warn!("novelty needs --train; skipped"),
        }
    }
    match a.report {
        ReportFormat::Json => println!("{}", report.to_json()?),
        ReportFormat::Table => print!("{}", report.to_table()),
    }
    Ok(())
}

/// Lines starting with `persona:` are traits; every other non-empty line
/// is a conversation turn, oldest first.
fn parse_context(text: &str) -> (Vec<PersonaTrait>, Vec<Vec<String>>) {
    let stop = StopWordSet::default();
    let mut personas = Vec::new();
    let mut turns = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        match line.strip_prefix("persona:") {
            Some(t) => personas.push(PersonaTrait::new(t.trim(), &stop)),
            None => turns.push(tokenize(line)),
        }
    }
    (personas, turns)
}

fn generate(a: GenerateArgs) -> CliResult {
    let m = &a.model;
    let loaded = load_models(&m.checkpoint, m.lm.as_deref())?;
    let config = generation_config(loaded.model.config.variant, m.fill, loaded.lm.is_some(), a.beam, m.max_len, m.max_turns)?;
    let mut input = String::new();
    std::io::stdin().read_to_string(&mut input)?;
    let (personas, turns) = parse_context(&input);
    if turns.is_empty() {
        return Err("stdin holds no conversation turns".into());
    }
    let g = generate_response(&loaded.model, scorer(&loaded.lm), &personas, &turns, &config)?;
    if let Some(path) = &a.attention {
        export_attention(&g.debug, path)?;
    }
    let reply = detokenize(&g.response);
    if a.debug {
        println!("{}", serde_json::to_string_pretty(&serde_json::json!({ "reply": reply, "debug": g.debug }))?);
    } else {
        println!("{reply}");
    }
    Ok(())
}

fn persona_pool(path: Option<&Path>) -> CliResult<Vec<Vec<String>>> {
    let examples = match path {
        Some(p) => load_jsonl(p)?,
        None => synthetic::generate(&SyntheticConfig { dialogues: 200, ..Default::default() }),
    };
    let pool: BTreeSet<Vec<String>> = examples
        .iter()
        .map(|ex| ex.personas.iter().map(|p| p.text.clone()).collect::<Vec<_>>())
        .filter(|p| !p.is_empty())
        .collect();
    if pool.is_empty() {
        return Err("no persona sets found".into());
    }
    Ok(pool.into_iter().collect())
}

fn serve(a: ServeArgs) -> CliResult {
    let model = match &a.checkpoint {
        Some(path) => {
            let loaded = load_models(path, a.lm.as_deref())?;
            let generation = generation_config(loaded.model.config.variant, a.fill, loaded.lm.is_some(), a.beam, 30, 10)?;
            let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
            Some((
                LoadedModel { name, model: loaded.model, lm: loaded.lm, persona_pool: persona_pool(a.personas.as_deref())? },
                generation,
            ))
        }
        None => {
            log::warn!("no checkpoint given; chat requests will fail with 503");
            None
        }
    };
    let generation = model.as_ref().map_or_else(
        || GenerationConfig { beam_size: a.beam, candidate_cap: a.beam.max(50), ..GenerationConfig::default() },
        |(_, g)| g.clone(),
    );
    let config = ServiceConfig { generation, static_dir: a.static_dir, seed: a.seed };
    let state = AppState::new(model.map(|(m, _)| m), config);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(service::serve(a.addr, state))?;
    Ok(())
}
