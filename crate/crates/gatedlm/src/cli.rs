//! Command-line interface: one binary exposing the full pipeline.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::corpus::{self, DomainSpec};
use crate::dataset::{pack, PackedDataset};
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport, Norm, Scorer};
use crate::model::{ExecMode, LanguageModel, ModelConfig, Preset};
use crate::tokenizer::{train_bpe, BpeVocab, Tokenize};
use crate::train::{
    self, lr_sweep, DistillConfig, SweepMetric, TrainConfig, DEFAULT_LR_GRID,
};
use crate::checkpoint;

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "GATEDLM_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "gatedlm",
    about = "Desk-scale gated linear-RNN language modeling pipeline",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Subsample a domain-stratified corpus to a word budget.
    Sample(SampleArgs),
    /// Train a byte-level BPE vocabulary from a corpus.
    Tokenize(TokenizeArgs),
    /// Tokenize, concatenate, and chunk a corpus into a packed dataset.
    Pack(PackArgs),
    /// Train a model with cross-entropy.
    Train(TrainArgs),
    /// Train a student against a frozen teacher checkpoint.
    Distill(DistillArgs),
    /// Grid-search learning rates with a shared seed.
    Sweep(SweepArgs),
    /// Zero-shot evaluation: minimal pairs, choices, perplexity.
    Eval(EvalArgs),
    /// Print checkpoint parameter counts and per-layer gate lower bounds.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct SampleArgs {
    /// JSON file: [{"domain": ..., "ratio": ..., "source": ...}, ...]
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    total_words: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TokenizeArgs {
    /// Line-delimited JSON corpus ({"text": ..., "domain": ...}).
    #[arg(long)]
    corpus: PathBuf,
    /// Desk-scale default; pass 16000 for the full-scale vocabulary.
    #[arg(long, default_value_t = 2000)]
    vocab_size: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PackArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, default_value_t = 512)]
    chunk_len: u32,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "hgrn2")]
    arch: ArchArg,
    /// Named preset (hgrn2-360m, hgrn2-1.2b, lstm-baseline) instead of
    /// individual dimension flags.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    hidden_size: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    expand_ratio: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    hidden_ratio: Option<usize>,
    #[arg(long)]
    embed_size: Option<usize>,
    #[arg(long)]
    dropout: Option<f32>,
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum ArchArg {
    Hgrn2,
    Lstm,
}

#[derive(Args, Clone)]
struct TrainHyperArgs {
    /// JSON or key=value config file; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    max_grad_norm: Option<f64>,
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    val: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    hyper: TrainHyperArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DistillArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    val: Option<PathBuf>,
    /// Frozen teacher checkpoint.
    #[arg(long)]
    teacher: PathBuf,
    /// Blend weight: 0 is pure CE, 1 is pure KD.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Student architecture; defaults to the teacher's configuration.
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    student_like_teacher: Option<bool>,
    #[command(flatten)]
    hyper: TrainHyperArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    val: Option<PathBuf>,
    /// Comma-separated rates; defaults to 1e-3,1e-4,1e-5,1e-6.
    #[arg(long)]
    rates: Option<String>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    hyper: TrainHyperArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Minimal-pair task file (line-delimited JSON).
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Multiple-choice task file (line-delimited JSON).
    #[arg(long)]
    choices: Option<PathBuf>,
    /// Packed dataset to compute perplexity over.
    #[arg(long)]
    perplexity: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "raw")]
    norm: NormArg,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Use the chunkwise scan path with this block size.
    #[arg(long)]
    scan_block: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum NormArg {
    Raw,
    PerToken,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// List the reference configurations instead.
    #[arg(long, default_value_t = false)]
    presets: bool,
}

fn out_root() -> PathBuf {
    std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out"))
}

fn resolve_out(arg: Option<PathBuf>, default_name: &str) -> PathBuf {
    arg.unwrap_or_else(|| out_root().join(default_name))
}

fn write_resolved(dir: &Path, value: &serde_json::Value) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("resolved-config.json"), serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn build_model_config(args: &ModelArgs, vocab_size: usize) -> Result<ModelConfig> {
    if let Some(name) = &args.preset {
        let preset = Preset::ALL
            .iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown preset {name:?}")))?;
        return preset.model_config(vocab_size);
    }
    let mut cfg = match args.arch {
        ArchArg::Hgrn2 => ModelConfig::desk_hgrn2(vocab_size),
        ArchArg::Lstm => ModelConfig::desk_lstm(vocab_size),
    };
    if let Some(v) = args.hidden_size {
        cfg.hidden_size = v;
    }
    if let Some(v) = args.layers {
        cfg.num_layers = v;
    }
    if let Some(v) = args.expand_ratio {
        cfg.expand_ratio = v;
    }
    if let Some(v) = args.heads {
        cfg.num_heads = v;
    }
    if let Some(v) = args.hidden_ratio {
        cfg.hidden_ratio = v;
    }
    if let Some(v) = args.embed_size {
        cfg.embed_size = Some(v);
    }
    if let Some(v) = args.dropout {
        cfg.dropout = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn build_train_config(args: &TrainHyperArgs, dataset: &PackedDataset) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => train::load_train_config(path)?,
        None => TrainConfig::default(),
    };
    // The dataset's chunk length wins unless the user pinned one explicitly.
    cfg.sequence_length = dataset.chunk_len as usize;
    if let Some(v) = args.seq_len {
        cfg.sequence_length = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.max_grad_norm {
        cfg.max_grad_norm = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.workers {
        cfg.workers = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_plan(path: &Path) -> Result<Vec<DomainSpec>> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| Error::Ingestion(format!("cannot read plan {path:?}: {e}")))?;
    let plan: Vec<DomainSpec> =
        serde_json::from_str(&raw).map_err(|e| Error::Config(format!("bad plan file: {e}")))?;
    Ok(plan)
}

fn cmd_sample(args: SampleArgs) -> Result<()> {
    let plan = load_plan(&args.plan)?;
    if plan.is_empty() {
        return Err(Error::Usage("sampling plan is empty".into()));
    }
    let out_dir = resolve_out(args.out, "sample");
    std::fs::create_dir_all(&out_dir)?;
    let (docs, manifest) = corpus::sample_corpus(&plan, args.total_words, args.seed)?;
    corpus::write_documents(&docs, &out_dir.join("corpus.jsonl"))?;
    std::fs::write(out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    write_resolved(
        &out_dir,
        &serde_json::json!({
            "command": "sample",
            "plan": plan,
            "total_words": args.total_words,
            "seed": args.seed,
        }),
    )?;

    println!("{:<24} {:>12} {:>10}", "Dataset", "Count", "Ratio (%)");
    for d in &manifest.domains {
        let marker = if d.exhausted { " (exhausted)" } else { "" };
        println!(
            "{:<24} {:>12} {:>10.2}{marker}",
            d.domain,
            d.sampled_words,
            100.0 * d.achieved_ratio
        );
    }
    println!("{:<24} {:>12}", "Total", manifest.total_words);
    println!("wrote {}", out_dir.display());
    Ok(())
}

fn cmd_tokenize(args: TokenizeArgs) -> Result<()> {
    let docs = corpus::read_documents(&args.corpus)?;
    let outcome = train_bpe(docs.iter().map(|d| d.text.as_str()), args.vocab_size)?;
    if outcome.achieved_vocab < outcome.requested_vocab {
        println!(
            "corpus exhausted at vocab {} (requested {})",
            outcome.achieved_vocab, outcome.requested_vocab
        );
    }
    let out = resolve_out(args.out, "vocab.json");
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    outcome.vocab.save(&out)?;
    println!("vocab size {} -> {}", outcome.vocab.vocab_size(), out.display());
    Ok(())
}

fn cmd_pack(args: PackArgs) -> Result<()> {
    let docs = corpus::read_documents(&args.corpus)?;
    let vocab = BpeVocab::load(&args.vocab)?;
    let texts: Vec<String> = docs.into_iter().map(|d| d.text).collect();
    let (ds, stats) = pack(&texts, &vocab, args.chunk_len)?;
    let out = resolve_out(args.out, "data.pkds");
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    ds.save(&out)?;
    println!(
        "{} tokens -> {} chunks of {} ({} dropped) -> {}",
        stats.total_tokens,
        stats.chunk_count,
        args.chunk_len,
        stats.dropped_tokens,
        out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let dataset = PackedDataset::load(&args.data)?;
    let val = args.val.as_deref().map(PackedDataset::load).transpose()?;
    let cfg = build_train_config(&args.hyper, &dataset)?;
    let mcfg = build_model_config(&args.model, dataset.vocab_size as usize)?;
    let out_dir = resolve_out(args.out, "train");
    write_resolved(
        &out_dir,
        &serde_json::json!({"command": "train", "train": cfg, "model": mcfg}),
    )?;
    let mut model = LanguageModel::new(mcfg, cfg.seed)?;
    let report = train::train(&mut model, &dataset, &cfg, None, val.as_ref(), Some(&out_dir))?;
    println!(
        "trained {} steps; final epoch CE {:.4} nats (ppl {:.2}); checkpoints in {}",
        report.steps,
        report.epoch_mean_ce.last().unwrap(),
        report.epoch_perplexity.last().unwrap(),
        out_dir.display()
    );
    Ok(())
}

fn cmd_distill(args: DistillArgs) -> Result<()> {
    let dataset = PackedDataset::load(&args.data)?;
    let val = args.val.as_deref().map(PackedDataset::load).transpose()?;
    let cfg = build_train_config(&args.hyper, &dataset)?;
    let teacher = checkpoint::load(&args.teacher)?;
    let dcfg = DistillConfig {
        alpha: args.alpha,
        temperature: args.temperature,
        teacher: args.teacher.clone(),
    };
    dcfg.validate()?;
    let student_cfg = if args.student_like_teacher.unwrap_or(true) && args.model.preset.is_none()
    {
        teacher.config.clone()
    } else {
        build_model_config(&args.model, dataset.vocab_size as usize)?
    };
    let out_dir = resolve_out(args.out, "distill");
    write_resolved(
        &out_dir,
        &serde_json::json!({
            "command": "distill", "train": cfg, "student": student_cfg, "distill": dcfg,
        }),
    )?;
    let (_, report) = train::distill_pipeline(
        &teacher,
        student_cfg,
        &dataset,
        &cfg,
        args.alpha,
        args.temperature,
        val.as_ref(),
        Some(&out_dir),
    )?;
    println!(
        "distilled {} steps; final blended loss {:.4}, CE {:.4}; outputs in {}",
        report.steps,
        report.step_losses.last().unwrap(),
        report.step_ce.last().unwrap(),
        out_dir.display()
    );
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let dataset = PackedDataset::load(&args.data)?;
    let val = args.val.as_deref().map(PackedDataset::load).transpose()?;
    let cfg = build_train_config(&args.hyper, &dataset)?;
    let mcfg = build_model_config(&args.model, dataset.vocab_size as usize)?;
    let rates: Vec<f64> = match &args.rates {
        Some(spec) => spec
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad learning rate {s:?}")))
            })
            .collect::<Result<_>>()?,
        None => DEFAULT_LR_GRID.to_vec(),
    };
    let metric = if val.is_some() { SweepMetric::ValCe } else { SweepMetric::TrainCe };
    let out_dir = resolve_out(args.out, "sweep");
    write_resolved(
        &out_dir,
        &serde_json::json!({
            "command": "sweep", "train": cfg, "model": mcfg, "rates": rates, "metric": metric,
        }),
    )?;
    let seed = cfg.seed;
    let factory = move || LanguageModel::new(mcfg.clone(), seed);
    let report = lr_sweep(&factory, &dataset, val.as_ref(), &rates, metric, &cfg)?;
    std::fs::write(out_dir.join("sweep.json"), serde_json::to_string_pretty(&report)?)?;
    println!("{:<12} {:>12} {}", "rate", "metric (CE)", "status");
    for run in &report.runs {
        match (run.metric, &run.error) {
            (Some(m), _) => println!("{:<12} {:>12.4} ok", run.rate, m),
            (None, Some(e)) => println!("{:<12} {:>12} failed: {e}", run.rate, "-"),
            _ => {}
        }
    }
    match report.winner {
        Some(rate) => println!("winner: {rate}"),
        None => println!("no run completed"),
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let model = checkpoint::load(&args.checkpoint)?;
    let vocab = BpeVocab::load(&args.vocab)?;
    let exec = match args.scan_block {
        Some(b) => ExecMode::Scan { block: b },
        None => ExecMode::Sequential,
    };
    let norm = match args.norm {
        NormArg::Raw => Norm::Raw,
        NormArg::PerToken => Norm::PerToken,
    };
    let scorer = Scorer::new(&model, &vocab, exec)?;
    let mut tasks = Vec::new();
    if let Some(path) = &args.pairs {
        let pairs = eval::load_pairs(path)?;
        let mut score = eval::eval_minimal_pairs(&scorer, &pairs, norm, args.workers)?;
        score.name = "pairs".into();
        tasks.push(score);
    }
    if let Some(path) = &args.choices {
        let instances = eval::load_choices(path)?;
        let mut score = eval::eval_choice(&scorer, &instances, norm, args.workers)?;
        score.name = "choices".into();
        tasks.push(score);
    }
    let ppl = args
        .perplexity
        .as_deref()
        .map(|p| -> Result<_> { eval::perplexity(&model, &PackedDataset::load(p)?, exec) })
        .transpose()?;
    if tasks.is_empty() && ppl.is_none() {
        return Err(Error::Usage(
            "nothing to evaluate: pass --pairs, --choices, or --perplexity".into(),
        ));
    }
    let report =
        EvalReport::assemble(format!("{}", args.checkpoint.display()), tasks, ppl)?;
    print!("{}", report.text_table());
    let out = resolve_out(args.out, "eval-report.json");
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&out, serde_json::to_string_pretty(&report)?)?;
    println!("report -> {}", out.display());
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> Result<()> {
    if args.presets {
        println!("{:<18} {}", "preset", "configuration");
        for p in Preset::ALL {
            println!("{:<18} {}", p.name(), p.describe());
        }
        return Ok(());
    }
    let Some(path) = args.checkpoint else {
        return Err(Error::Usage("pass --checkpoint or --presets".into()));
    };
    let model = checkpoint::load(&path)?;
    println!("architecture: {:?}", model.config.arch);
    println!("{:<20} {:>12}", "module", "parameters");
    let mut per_layer: std::collections::BTreeMap<String, usize> = Default::default();
    for (name, t) in model.visit_params() {
        let module = match name.split('.').next().unwrap() {
            "layers" => {
                let mut parts = name.split('.');
                parts.next();
                format!("layers.{}", parts.next().unwrap())
            }
            other => other.to_string(),
        };
        *per_layer.entry(module).or_default() += t.numel();
    }
    for (module, count) in &per_layer {
        println!("{:<20} {:>12}", module, count);
    }
    println!("{:<20} {:>12}", "total", model.param_count());

    if let crate::model::ArchParams::Hgrn2(layers) = &model.layers {
        let gammas: Vec<Vec<f32>> = layers.iter().map(|l| l.gamma.data.clone()).collect();
        let bounds = crate::model::lower_bounds(&gammas);
        println!("\nper-layer forget-gate lower bounds (min / mean / max):");
        for (l, b) in bounds.iter().enumerate() {
            let min = b.iter().cloned().fold(f32::INFINITY, f32::min);
            let max = b.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let mean = b.iter().sum::<f32>() / b.len() as f32;
            println!("  layer {l}: {min:.4} / {mean:.4} / {max:.4}");
        }
        let monotone = bounds.windows(2).all(|w| {
            w[0].iter().zip(w[1].iter()).all(|(a, b)| a <= b)
        });
        println!("monotone non-decreasing: {monotone}");
    }
    Ok(())
}

/// Entry point; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sample(args) => cmd_sample(args),
        Command::Tokenize(args) => cmd_tokenize(args),
        Command::Pack(args) => cmd_pack(args),
        Command::Train(args) => cmd_train(args),
        Command::Distill(args) => cmd_distill(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Inspect(args) => cmd_inspect(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
