//! Command-line front end. Every failure ends with exit code 1 and a single
//! line `error: <kind>: <message>` on stderr.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use longembed::checkpoint::{load_checkpoint, load_checkpoint_tokenizer, save_checkpoint};
use longembed::config::RunConfig;
use longembed::data::{
    apply_prefix, consistency_filter_threshold, consistency_filter_topk, mine_hard_negatives,
    pack_documents, read_jsonl, read_pairs, write_jsonl, FilterStats, PackedChunk, PairTask,
    TaskKind, TextPair, Tokenizer,
};
use longembed::eval::{
    extrapolation_sweep, retrieval_eval, IdText, ProbeTask, RetrievalTask, TextEncoder,
};
use longembed::rope::DEFAULT_DYNAMIC_ALPHA;
use longembed::trainer::{run_stage, Stage, StageData};
use longembed::{Encoder, RopeKind, RopePolicy};

#[derive(Parser)]
#[command(
    name = "longembed",
    version,
    about = "Train and evaluate long-context text embedding models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a word vocabulary from pair and text files.
    BuildVocab(BuildVocabArgs),
    /// Tokenize documents and pack them into fixed-length chunks for MLM.
    Pack(PackArgs),
    /// Drop pairs whose query does not retrieve its own document.
    Filter(FilterArgs),
    /// Attach hard negatives mined from a corpus.
    Mine(MineArgs),
    /// Run one training stage and write a checkpoint.
    Train(TrainArgs),
    /// Embed texts with a checkpoint.
    Embed(EmbedArgs),
    /// NDCG@k of a checkpoint on a retrieval task.
    EvalRetrieval(EvalArgs),
    /// Score a retrieval task at several input lengths under several
    /// position-extrapolation policies.
    SweepExtrapolation(SweepArgs),
}

#[derive(Args)]
struct BuildVocabArgs {
    /// Pair files (JSON lines); queries and documents both count.
    #[arg(long = "pairs")]
    pairs: Vec<PathBuf>,
    /// Plain text files, one document per line.
    #[arg(long = "text")]
    text: Vec<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 30000)]
    max_vocab: usize,
    #[arg(long, default_value_t = 1)]
    min_count: usize,
}

#[derive(Args)]
struct PackArgs {
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long = "pairs")]
    pairs: Vec<PathBuf>,
    #[arg(long = "text")]
    text: Vec<PathBuf>,
    /// Tokens per chunk.
    #[arg(long, default_value_t = 128)]
    chunk: usize,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum FilterMode {
    Topk,
    Threshold,
}

#[derive(Args)]
struct ModelArgs {
    /// Checkpoint directory.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Vocabulary file, when the checkpoint does not carry one.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Truncation length in tokens, special tokens included. Defaults to
    /// the trained context.
    #[arg(long)]
    max_tokens: Option<usize>,
}

#[derive(Args)]
struct FilterArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum)]
    mode: FilterMode,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Keep a pair when its document ranks in the top k of its pool.
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Pool size for top-k mode; capped at the number of pairs.
    #[arg(long, default_value_t = 10000)]
    sample_size: usize,
    /// Minimum query-document cosine for threshold mode.
    #[arg(long, allow_negative_numbers = true)]
    threshold: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Stats file; defaults to `<output>.stats.json`.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args)]
struct MineArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    input: PathBuf,
    /// Corpus as `{"id", "text"}` lines; defaults to the input's documents.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    top: usize,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_parser = parse_stage)]
    stage: Stage,
    /// Packed chunks for mlm, pairs otherwise.
    #[arg(long)]
    data: PathBuf,
    /// Starting checkpoint; a fresh model is initialized when absent.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Vocabulary; taken from `--init` when absent.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config override `section.key=value`; repeatable.
    #[arg(long = "set")]
    overrides: Vec<String>,
    #[arg(long)]
    output: PathBuf,
    /// Append-only JSON-lines step log.
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PolicyArgs {
    /// none, pi, ntk or dynamic.
    #[arg(long, default_value = "none")]
    policy: String,
    #[arg(long, default_value_t = DEFAULT_DYNAMIC_ALPHA)]
    alpha: f64,
    /// Context the policy stretches to; defaults to the longest input.
    #[arg(long)]
    target_context: Option<usize>,
}

#[derive(Args)]
struct EmbedArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    policy: PolicyArgs,
    /// search_query, search_document, classification or clustering.
    #[arg(long)]
    task: String,
    /// Texts as `{"id", "text"}` lines.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct TaskFiles {
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    policy: PolicyArgs,
    #[command(flatten)]
    task: TaskFiles,
    /// Per-query report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    task: TaskFiles,
    /// Comma-separated input lengths, ascending.
    #[arg(long, value_delimiter = ',', required = true)]
    lengths: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "none,pi,ntk,dynamic")]
    policies: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_DYNAMIC_ALPHA)]
    alpha: f64,
    /// JSON-lines table; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn parse_stage(s: &str) -> std::result::Result<Stage, String> {
    s.parse().map_err(|e: longembed::Error| e.to_string())
}

fn build_policy(kind: &str, alpha: f64, target: usize) -> Result<RopePolicy> {
    let kind: RopeKind = kind.parse()?;
    Ok(match kind {
        RopeKind::None => RopePolicy::none(),
        RopeKind::PositionInterpolation => RopePolicy::position_interpolation(target),
        RopeKind::NtkAware => RopePolicy::ntk_aware(target),
        RopeKind::DynamicNtk => RopePolicy::dynamic_ntk(alpha, target),
    })
}

struct Loaded {
    encoder: Encoder,
    tokenizer: Tokenizer,
    max_tokens: usize,
}

fn load_model(args: &ModelArgs) -> Result<Loaded> {
    let encoder = load_checkpoint(&args.checkpoint)?;
    let tokenizer = match &args.vocab {
        Some(v) => Tokenizer::load(v)?,
        None => load_checkpoint_tokenizer(&args.checkpoint)?.ok_or_else(|| {
            anyhow!(longembed::Error::InvalidArgument(
                "checkpoint has no vocabulary; pass --vocab".into()
            ))
        })?,
    };
    let max_tokens = args.max_tokens.unwrap_or(encoder.config.trained_context);
    Ok(Loaded {
        encoder,
        tokenizer,
        max_tokens,
    })
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect())
}

fn default_sidecar(output: &Path, explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| {
        let mut s = output.as_os_str().to_owned();
        s.push(".stats.json");
        PathBuf::from(s)
    })
}

fn build_vocab(a: BuildVocabArgs) -> Result<()> {
    if a.pairs.is_empty() && a.text.is_empty() {
        bail!(longembed::Error::Empty("no --pairs or --text inputs"));
    }
    let mut texts = Vec::new();
    for p in &a.pairs {
        for pair in read_pairs(p)? {
            texts.push(pair.query);
            texts.push(pair.document);
            texts.extend(pair.hard_negatives.unwrap_or_default());
        }
    }
    for t in &a.text {
        texts.extend(read_lines(t)?);
    }
    // Prefix tags must survive any min_count cut.
    for kind in TaskKind::ALL {
        for _ in 0..a.min_count {
            texts.push(apply_prefix(kind, ""));
        }
    }
    let tok = Tokenizer::build(texts.iter().map(String::as_str), a.max_vocab, a.min_count)?;
    tok.save(&a.output)?;
    println!(
        "{}",
        serde_json::json!({ "vocab_size": tok.raw_vocab_size(), "output": a.output })
    );
    Ok(())
}

fn pack(a: PackArgs) -> Result<()> {
    let tok = Tokenizer::load(&a.vocab)?;
    let mut docs = Vec::new();
    for p in &a.pairs {
        for pair in read_pairs(p)? {
            docs.push(tok.encode_for_model(&pair.query, usize::MAX));
            docs.push(tok.encode_for_model(&pair.document, usize::MAX));
        }
    }
    for t in &a.text {
        docs.extend(
            read_lines(t)?
                .iter()
                .map(|l| tok.encode_for_model(l, usize::MAX)),
        );
    }
    if docs.is_empty() {
        bail!(longembed::Error::Empty("no documents to pack"));
    }
    let chunks = pack_documents(&docs, a.chunk)?;
    write_jsonl(&a.output, &chunks)?;
    let tokens: usize = chunks.iter().map(PackedChunk::real_len).sum();
    println!(
        "{}",
        serde_json::json!({ "documents": docs.len(), "chunks": chunks.len(), "tokens": tokens })
    );
    Ok(())
}

fn filter(a: FilterArgs) -> Result<()> {
    let m = load_model(&a.model)?;
    let pairs = read_pairs(&a.input)?;
    let emb = TextEncoder::new(&m.encoder, &m.tokenizer, m.max_tokens, RopePolicy::none());
    let outcome = match a.mode {
        FilterMode::Topk => {
            consistency_filter_topk(&pairs, &emb, a.k, a.sample_size.min(pairs.len()), a.seed)?
        }
        FilterMode::Threshold => {
            let t = a.threshold.ok_or_else(|| {
                anyhow!(longembed::Error::InvalidArgument(
                    "threshold mode needs --threshold".into()
                ))
            })?;
            consistency_filter_threshold(&pairs, &emb, t)?
        }
    };
    write_jsonl(&a.output, &outcome.kept)?;
    let stats = FilterStats::from_decisions(&pairs, &outcome.decisions);
    stats.write(&default_sidecar(&a.output, &a.stats))?;
    println!(
        "{}",
        serde_json::json!({ "input": pairs.len(), "kept": outcome.kept.len() })
    );
    Ok(())
}

fn mine(a: MineArgs) -> Result<()> {
    let m = load_model(&a.model)?;
    let pairs = read_pairs(&a.input)?;
    let corpus: Vec<String> = match &a.corpus {
        Some(p) => read_jsonl::<IdText>(p)?
            .into_iter()
            .map(|d| d.text)
            .collect(),
        None => {
            let mut seen = std::collections::HashSet::new();
            pairs
                .iter()
                .filter(|p| seen.insert(p.document.clone()))
                .map(|p| p.document.clone())
                .collect()
        }
    };
    let emb = TextEncoder::new(&m.encoder, &m.tokenizer, m.max_tokens, RopePolicy::none());
    let mined = mine_hard_negatives(&pairs, &corpus, &emb, a.top)?;
    // Pairs left without any negative are of no use to finetuning.
    let keep: Vec<bool> = mined.iter().map(|p| !p.negatives().is_empty()).collect();
    let kept: Vec<TextPair> = mined
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(p, _)| p.clone())
        .collect();
    write_jsonl(&a.output, &kept)?;
    FilterStats::from_decisions(&mined, &keep).write(&default_sidecar(&a.output, &a.stats))?;
    println!(
        "{}",
        serde_json::json!({ "input": pairs.len(), "kept": kept.len(), "corpus": corpus.len() })
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = RunConfig::load(a.config.as_deref(), &a.overrides)?;
    let plan = cfg.plan(a.stage).clone();
    let seed = a.seed.unwrap_or(cfg.seed);
    let tokenizer = match (&a.vocab, &a.init) {
        (Some(v), _) => Tokenizer::load(v)?,
        (None, Some(init)) => load_checkpoint_tokenizer(init)?.ok_or_else(|| {
            anyhow!(longembed::Error::InvalidArgument(
                "--init checkpoint has no vocabulary; pass --vocab".into()
            ))
        })?,
        (None, None) => bail!(longembed::Error::InvalidArgument(
            "pass --vocab or --init".into()
        )),
    };
    let mut encoder = match &a.init {
        Some(dir) => load_checkpoint(dir)?,
        None => Encoder::new(
            cfg.model.encoder_config(tokenizer.padded_vocab_size()),
            seed,
        )?,
    };

    let mut log = match &a.metrics {
        Some(p) => Some(BufWriter::new(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .with_context(|| format!("opening {}", p.display()))?,
        )),
        None => None,
    };
    let mut log_err: Option<std::io::Error> = None;
    let mut on_step = |r: &longembed::trainer::StepRecord| {
        if let (Some(w), None) = (log.as_mut(), log_err.as_ref()) {
            let line = serde_json::to_string(r).expect("step records serialize");
            if let Err(e) = writeln!(w, "{line}").and_then(|_| w.flush()) {
                log_err = Some(e);
            }
        }
        log::info!(
            "{} step {} loss {:.5} lr {:.3e}",
            r.stage,
            r.step,
            r.loss,
            r.lr
        );
    };

    let report = if a.stage == Stage::Mlm {
        let chunks: Vec<PackedChunk> = read_jsonl(&a.data)?;
        run_stage(
            &plan,
            &mut encoder,
            &tokenizer,
            StageData::Chunks(&chunks),
            seed,
            &mut on_step,
        )
    } else {
        let pairs = read_pairs(&a.data)?;
        run_stage(
            &plan,
            &mut encoder,
            &tokenizer,
            StageData::Pairs(&pairs),
            seed,
            &mut on_step,
        )
    };
    if let Some(e) = log_err {
        return Err(e).context("writing metrics log");
    }
    let report = report?;
    save_checkpoint(&a.output, &encoder, Some(&tokenizer))?;
    println!(
        "{}",
        serde_json::json!({
            "stage": a.stage.as_str(),
            "steps": report.total_steps,
            "first_loss": report.first_loss(),
            "last_loss": report.last_loss(),
            "checkpoint": a.output,
        })
    );
    Ok(())
}

fn embed(a: EmbedArgs) -> Result<()> {
    let m = load_model(&a.model)?;
    let task: TaskKind = a.task.parse()?;
    let items: Vec<IdText> = read_jsonl(&a.input)?;
    let texts: Vec<String> = items.iter().map(|i| i.text.clone()).collect();
    let target = a.policy.target_context.unwrap_or(m.max_tokens);
    let policy = build_policy(&a.policy.policy, a.policy.alpha, target)?;
    let enc = TextEncoder::new(&m.encoder, &m.tokenizer, m.max_tokens, policy);
    let run = enc.embed_task(&texts, task)?;
    let mut out = BufWriter::new(
        File::create(&a.output).with_context(|| format!("creating {}", a.output.display()))?,
    );
    for (item, row) in items
        .iter()
        .zip(run.embeddings.data().chunks(m.encoder.config.hidden_dim))
    {
        writeln!(
            out,
            "{}",
            serde_json::json!({ "id": item.id, "embedding": row })
        )?;
    }
    out.flush()?;
    println!(
        "{}",
        serde_json::json!({ "embedded": items.len(), "policy": run.policy.label(), "rope_bases": run.bases })
    );
    Ok(())
}

fn eval_retrieval(a: EvalArgs) -> Result<()> {
    let m = load_model(&a.model)?;
    let task = RetrievalTask::load(&a.task.queries, &a.task.corpus, &a.task.qrels)?;
    let target = a.policy.target_context.unwrap_or(m.max_tokens);
    let policy = build_policy(&a.policy.policy, a.policy.alpha, target)?;
    let enc = TextEncoder::new(&m.encoder, &m.tokenizer, m.max_tokens, policy);
    let report = retrieval_eval(&enc, &task, a.task.k, PairTask::Retrieval)?;
    if let Some(path) = &a.report {
        let text = serde_json::to_string_pretty(&report)?;
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    println!(
        "{}",
        serde_json::json!({
            "metric": format!("ndcg@{}", report.k),
            "value": report.mean_ndcg,
            "queries": report.evaluated,
            "max_tokens": m.max_tokens,
            "policy": policy.label(),
        })
    );
    Ok(())
}

/// A fixed task; longer lengths only change how much of each document the
/// encoder sees.
struct FixedTask(RetrievalTask);

impl ProbeTask for FixedTask {
    fn task_at(&self, _length: usize) -> longembed::Result<RetrievalTask> {
        Ok(self.0.clone())
    }
}

fn sweep(a: SweepArgs) -> Result<()> {
    let m = load_model(&a.model)?;
    let task = RetrievalTask::load(&a.task.queries, &a.task.corpus, &a.task.qrels)?;
    let longest = a.lengths.iter().copied().max().unwrap_or(0);
    let policies = a
        .policies
        .iter()
        .map(|p| build_policy(p, a.alpha, longest.max(m.encoder.config.trained_context)))
        .collect::<Result<Vec<_>>>()?;
    let rows = extrapolation_sweep(
        &m.encoder,
        &m.tokenizer,
        &a.lengths,
        &policies,
        &FixedTask(task),
        a.task.k,
    )?;
    match &a.output {
        Some(path) => write_jsonl(path, &rows)?,
        None => {
            for r in &rows {
                println!("{}", serde_json::to_string(r)?);
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BuildVocab(a) => build_vocab(a),
        Command::Pack(a) => pack(a),
        Command::Filter(a) => filter(a),
        Command::Mine(a) => mine(a),
        Command::Train(a) => train(a),
        Command::Embed(a) => embed(a),
        Command::EvalRetrieval(a) => eval_retrieval(a),
        Command::SweepExtrapolation(a) => sweep(a),
    }
}

/// Stable error kind: the library's own tag when there is one.
fn error_kind(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if let Some(le) = cause.downcast_ref::<longembed::Error>() {
            return le.kind();
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return "serialization";
        }
    }
    "internal"
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("error: usage: {}", one_line(first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", error_kind(&e), one_line(&format!("{e:#}")));
            ExitCode::FAILURE
        }
    }
}
