//! Optimization: Adam with per-step linear LR decay to zero, global
//! gradient-norm clipping, epoch-shuffled chunk order, per-epoch checkpoints,
//! optional knowledge distillation, and the learning-rate sweep.

pub mod adam;
pub mod loss;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::dataset::PackedDataset;
use crate::error::{Error, Result};
use crate::eval;
use crate::model::{ExecMode, LanguageModel};
use crate::tensor::Tape;

pub use adam::{clip_global_norm, linear_lr, Adam};
pub use loss::{ce_loss, kd_loss, total_loss};

/// The grid searched by default: {1e-3, 1e-4, 1e-5, 1e-6}.
pub const DEFAULT_LR_GRID: [f64; 4] = [1e-3, 1e-4, 1e-5, 1e-6];

fn default_epochs() -> usize {
    3
}
fn default_batch() -> usize {
    64
}
fn default_lr() -> f64 {
    1e-3
}
fn default_seq_len() -> usize {
    512
}
fn default_clip() -> f64 {
    1.0
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_workers() -> usize {
    1
}

/// Pretraining hyperparameters. Defaults: 3 epochs, batch 64, sequence
/// length 512, Adam, max grad norm 1.0, linear LR schedule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_seq_len")]
    pub sequence_length: usize,
    #[serde(default = "default_clip")]
    pub max_grad_norm: f64,
    #[serde(default)]
    pub seed: u64,
    /// Batch-element parallelism. Gradients reduce in sequence order, so any
    /// worker count produces identical results.
    #[serde(default = "default_workers")]
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.max_grad_norm <= 0.0 {
            return Err(Error::Config("max_grad_norm must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if self.sequence_length < 2 {
            return Err(Error::Config("sequence_length must be at least 2".into()));
        }
        Ok(())
    }
}

/// Distillation hyperparameters: the blend weight, softmax temperature, and
/// the frozen teacher checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistillConfig {
    pub alpha: f64,
    #[serde(default = "default_tau")]
    pub temperature: f64,
    pub teacher: PathBuf,
}

fn default_tau() -> f64 {
    1.0
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must be in [0, 1], got {}", self.alpha)));
        }
        if self.temperature <= 0.0 {
            return Err(Error::Config("temperature must be positive".into()));
        }
        Ok(())
    }
}

/// In-memory teacher handle for the blended objective.
pub struct Distillation<'a> {
    pub teacher: &'a LanguageModel,
    pub alpha: f32,
    pub temperature: f32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    /// Optimized loss per step (equals the CE curve when not distilling).
    pub step_losses: Vec<f64>,
    /// CE component per step.
    pub step_ce: Vec<f64>,
    /// KD component per step; empty without distillation.
    pub step_kd: Vec<f64>,
    pub epoch_mean_ce: Vec<f64>,
    pub epoch_perplexity: Vec<f64>,
    /// Validation CE per epoch when a validation set was supplied.
    pub val_ce: Vec<f64>,
    pub steps: usize,
    pub wall_seconds: f64,
    pub checkpoints: Vec<PathBuf>,
    pub final_checkpoint: Option<PathBuf>,
}

struct SequenceResult {
    grads: Vec<Vec<f32>>,
    ce: f64,
    kd: Option<f64>,
    total: f64,
}

/// Forward + backward for one sequence on its own tape.
fn sequence_pass(
    model: &LanguageModel,
    distill: Option<&Distillation>,
    chunk: &[u32],
    dropout_seed: u64,
) -> Result<SequenceResult> {
    let input = &chunk[..chunk.len() - 1];
    let targets = &chunk[1..];

    let mut tape = Tape::new();
    let bound = model.bind(&mut tape)?;
    let mut state = model.fresh_state();
    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let dropout_rng =
        if model.config.dropout > 0.0 { Some(&mut rng) } else { None };
    let logits =
        model.forward_with(&bound, &mut tape, input, &mut state, ExecMode::Sequential, dropout_rng)?;
    let ce = ce_loss(&mut tape, logits, targets)?;

    let (objective, kd_value) = match distill {
        Some(d) => {
            let mut t_state = d.teacher.fresh_state();
            let t_logits = d.teacher.logits_host(input, &mut t_state, ExecMode::Sequential)?;
            let kd = kd_loss(&mut tape, &t_logits, logits, d.temperature)?;
            let kd_value = f64::from(tape.data(kd)[0]);
            (total_loss(&mut tape, ce, kd, d.alpha)?, Some(kd_value))
        }
        None => (ce, None),
    };

    let total = f64::from(tape.data(objective)[0]);
    if !total.is_finite() {
        return Err(Error::Numeric("non-finite loss".into()));
    }
    tape.backward(objective)?;
    let grads: Vec<Vec<f32>> = bound
        .ids
        .iter()
        .map(|&id| {
            tape.grad(id)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; tape.data(id).len()])
        })
        .collect();
    Ok(SequenceResult { grads, ce: f64::from(tape.data(ce)[0]), kd: kd_value, total })
}

/// Runs a batch of sequences, possibly across worker threads, reducing
/// gradients in sequence order so the result is scheduling-independent.
fn batch_pass(
    model: &LanguageModel,
    distill: Option<&Distillation>,
    dataset: &PackedDataset,
    batch: &[usize],
    step: u64,
    cfg: &TrainConfig,
) -> Result<(Vec<Vec<f32>>, f64, f64, Option<f64>)> {
    let drop_seed = |pos: usize| {
        cfg.seed ^ (step.wrapping_mul(0x9E37_79B9_7F4A_7C15)).wrapping_add(pos as u64)
    };
    let workers = cfg.workers.max(1).min(batch.len());
    let results: Vec<Result<SequenceResult>> = if workers <= 1 {
        batch
            .iter()
            .enumerate()
            .map(|(pos, &idx)| sequence_pass(model, distill, dataset.chunk(idx), drop_seed(pos)))
            .collect()
    } else {
        let per = batch.len().div_ceil(workers);
        let parts: Vec<Result<Vec<SequenceResult>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = batch
                .chunks(per)
                .enumerate()
                .map(|(w, part)| {
                    scope.spawn(move || {
                        part.iter()
                            .enumerate()
                            .map(|(j, &idx)| {
                                sequence_pass(
                                    model,
                                    distill,
                                    dataset.chunk(idx),
                                    drop_seed(w * per + j),
                                )
                            })
                            .collect()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("trainer worker panicked")).collect()
        });
        let mut flat = Vec::with_capacity(batch.len());
        for part in parts {
            match part {
                Ok(rs) => flat.extend(rs.into_iter().map(Ok)),
                Err(e) => return Err(e),
            }
        }
        flat
    };

    let inv = 1.0 / batch.len() as f32;
    let mut grads: Option<Vec<Vec<f32>>> = None;
    let mut ce_sum = 0.0f64;
    let mut total_sum = 0.0f64;
    let mut kd_sum: Option<f64> = None;
    for r in results {
        let r = r?;
        ce_sum += r.ce;
        total_sum += r.total;
        if let Some(kd) = r.kd {
            *kd_sum.get_or_insert(0.0) += kd;
        }
        match &mut grads {
            None => grads = Some(r.grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(r.grads.iter()) {
                    for (x, &y) in a.iter_mut().zip(g.iter()) {
                        *x += y;
                    }
                }
            }
        }
    }
    let mut grads = grads.expect("non-empty batch");
    for g in &mut grads {
        for v in g.iter_mut() {
            *v *= inv;
        }
    }
    let n = batch.len() as f64;
    Ok((grads, total_sum / n, ce_sum / n, kd_sum.map(|k| k / n)))
}

/// Full training run. Writes a resolved-config snapshot, an append-only
/// metrics log, and per-epoch checkpoints when `out_dir` is given.
pub fn train(
    model: &mut LanguageModel,
    dataset: &PackedDataset,
    cfg: &TrainConfig,
    distill: Option<&Distillation>,
    val: Option<&PackedDataset>,
    out_dir: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if dataset.chunk_count() == 0 {
        return Err(Error::Plan("training dataset has no chunks".into()));
    }
    if dataset.chunk_len as usize != cfg.sequence_length {
        return Err(Error::Config(format!(
            "dataset chunk length {} does not match configured sequence length {}",
            dataset.chunk_len, cfg.sequence_length
        )));
    }
    if model.config.vocab_size != dataset.vocab_size as usize {
        return Err(Error::Config(format!(
            "model vocab {} does not match dataset vocab {}",
            model.config.vocab_size, dataset.vocab_size
        )));
    }
    if let Some(d) = distill {
        if d.teacher.config.vocab_size != model.config.vocab_size {
            return Err(Error::Config(format!(
                "teacher vocab {} does not match student vocab {}",
                d.teacher.config.vocab_size, model.config.vocab_size
            )));
        }
        if !(0.0..=1.0).contains(&d.alpha) {
            return Err(Error::Config(format!("alpha must be in [0, 1], got {}", d.alpha)));
        }
    }

    let mut metrics = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let resolved = serde_json::json!({
                "train": cfg,
                "model": model.config,
                "distill": distill.map(|d| serde_json::json!({
                    "alpha": d.alpha, "temperature": d.temperature,
                })),
            });
            std::fs::write(dir.join("train-config.json"), serde_json::to_string_pretty(&resolved)?)?;
            Some(std::io::BufWriter::new(std::fs::File::create(dir.join("metrics.jsonl"))?))
        }
        None => None,
    };

    let n_chunks = dataset.chunk_count();
    let steps_per_epoch = n_chunks.div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * steps_per_epoch) as u64;

    let sizes: Vec<usize> = model.visit_params().iter().map(|(_, t)| t.numel()).collect();
    let mut optimizer = Adam::new(
        &sizes,
        cfg.beta1 as f32,
        cfg.beta2 as f32,
        cfg.eps as f32,
    );

    let mut report = TrainReport {
        step_losses: Vec::new(),
        step_ce: Vec::new(),
        step_kd: Vec::new(),
        epoch_mean_ce: Vec::new(),
        epoch_perplexity: Vec::new(),
        val_ce: Vec::new(),
        steps: 0,
        wall_seconds: 0.0,
        checkpoints: Vec::new(),
        final_checkpoint: None,
    };
    let start = Instant::now();
    let mut global_step = 0u64;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n_chunks).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(
            cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1),
        );
        order.shuffle(&mut shuffle_rng);

        let mut epoch_ce_sum = 0.0f64;
        let mut epoch_sequences = 0usize;

        for batch in order.chunks(cfg.batch_size) {
            let step_start = Instant::now();
            let (mut grads, total, ce, kd) =
                batch_pass(model, distill, dataset, batch, global_step, cfg).map_err(|e| {
                    match e {
                        Error::Numeric(msg) => {
                            Error::Numeric(format!("{msg} (step {global_step})"))
                        }
                        other => other,
                    }
                })?;
            let grad_norm = clip_global_norm(&mut grads, cfg.max_grad_norm as f32);
            let lr = linear_lr(cfg.learning_rate as f32, global_step, total_steps);
            {
                let mut params: Vec<&mut crate::model::HostTensor> =
                    model.visit_params_mut().into_iter().map(|(_, t)| t).collect();
                optimizer.step(&mut params, &grads, lr);
            }

            epoch_ce_sum += ce * batch.len() as f64;
            epoch_sequences += batch.len();
            report.step_losses.push(total);
            report.step_ce.push(ce);
            if let Some(kd) = kd {
                report.step_kd.push(kd);
            }
            if let Some(w) = metrics.as_mut() {
                let elapsed = step_start.elapsed().as_secs_f64();
                let tokens = batch.len() * cfg.sequence_length;
                let line = serde_json::json!({
                    "step": global_step,
                    "lr": lr,
                    "loss": total,
                    "ce": ce,
                    "kd": kd,
                    "grad_norm": grad_norm,
                    "tokens_per_sec": tokens as f64 / elapsed.max(1e-9),
                });
                writeln!(w, "{line}")?;
            }
            global_step += 1;
        }

        let mean_ce = epoch_ce_sum / epoch_sequences as f64;
        report.epoch_mean_ce.push(mean_ce);
        report.epoch_perplexity.push(mean_ce.exp());
        if let Some(v) = val {
            report.val_ce.push(eval::perplexity(model, v, ExecMode::Sequential)?.mean_ce_nats);
        }
        if let Some(dir) = out_dir {
            let path = dir.join(format!("epoch-{:03}.ckpt", epoch + 1));
            checkpoint::save(model, &path)?;
            report.checkpoints.push(path);
        }
    }

    if let Some(w) = metrics.as_mut() {
        w.flush()?;
    }
    report.steps = global_step as usize;
    report.wall_seconds = start.elapsed().as_secs_f64();
    report.final_checkpoint = report.checkpoints.last().cloned();
    if let Some(dir) = out_dir {
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    }
    Ok(report)
}

/// Teacher-student pipeline: the teacher is frozen (inference mode) and the
/// student optimizes the blended objective. The report carries both the CE
/// curve and the blended curve.
pub fn distill_pipeline(
    teacher: &LanguageModel,
    student_cfg: crate::model::ModelConfig,
    dataset: &PackedDataset,
    cfg: &TrainConfig,
    alpha: f64,
    temperature: f64,
    val: Option<&PackedDataset>,
    out_dir: Option<&Path>,
) -> Result<(LanguageModel, TrainReport)> {
    let mut student = LanguageModel::new(student_cfg, cfg.seed)?;
    let distill = Distillation {
        teacher,
        alpha: alpha as f32,
        temperature: temperature as f32,
    };
    let report = train(&mut student, dataset, cfg, Some(&distill), val, out_dir)?;
    Ok((student, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepMetric {
    /// Final-epoch training CE.
    TrainCe,
    /// Final-epoch validation CE (requires a validation set).
    ValCe,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRun {
    pub rate: f64,
    pub metric: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub metric: SweepMetric,
    pub runs: Vec<SweepRun>,
    pub winner: Option<f64>,
}

/// Trains one run per rate with a shared seed and ranks by the metric
/// (lower is better); exact ties break toward the larger rate. Failed runs
/// are recorded and the sweep continues.
pub fn lr_sweep(
    factory: &dyn Fn() -> Result<LanguageModel>,
    dataset: &PackedDataset,
    val: Option<&PackedDataset>,
    grid: &[f64],
    metric: SweepMetric,
    base_cfg: &TrainConfig,
) -> Result<SweepReport> {
    if grid.is_empty() {
        return Err(Error::Usage("learning-rate grid is empty".into()));
    }
    if metric == SweepMetric::ValCe && val.is_none() {
        return Err(Error::Usage("val-ce metric requires a validation set".into()));
    }
    let mut runs = Vec::with_capacity(grid.len());
    for &rate in grid {
        let mut cfg = base_cfg.clone();
        cfg.learning_rate = rate;
        let outcome = factory().and_then(|mut model| {
            let report = train(&mut model, dataset, &cfg, None, val, None)?;
            Ok(match metric {
                SweepMetric::TrainCe => *report.epoch_mean_ce.last().unwrap(),
                SweepMetric::ValCe => *report.val_ce.last().unwrap(),
            })
        });
        match outcome {
            Ok(m) => runs.push(SweepRun { rate, metric: Some(m), error: None }),
            Err(e) => runs.push(SweepRun { rate, metric: None, error: Some(e.to_string()) }),
        }
    }
    let mut winner: Option<(f64, f64)> = None; // (metric, rate)
    for run in &runs {
        if let Some(m) = run.metric {
            let better = match winner {
                None => true,
                Some((bm, br)) => m < bm || (m == bm && run.rate > br),
            };
            if better {
                winner = Some((m, run.rate));
            }
        }
    }
    Ok(SweepReport { metric, runs, winner: winner.map(|(_, r)| r) })
}

/// Reads a training config from JSON (`{...}`) or `key=value` lines.
pub fn load_train_config(path: &Path) -> Result<TrainConfig> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| Error::Ingestion(format!("cannot read config {path:?}: {e}")))?;
    parse_train_config(&raw)
}

pub fn parse_train_config(raw: &str) -> Result<TrainConfig> {
    let trimmed = raw.trim();
    let value = if trimmed.starts_with('{') {
        serde_json::from_str::<serde_json::Value>(trimmed)?
    } else {
        let mut map = serde_json::Map::new();
        for (lineno, line) in trimmed.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, val)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "config line {} is not key=value: {line:?}",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            let val = val.trim();
            let json_val = if let Ok(n) = val.parse::<u64>() {
                serde_json::json!(n)
            } else if let Ok(f) = val.parse::<f64>() {
                serde_json::json!(f)
            } else if let Ok(b) = val.parse::<bool>() {
                serde_json::json!(b)
            } else {
                serde_json::json!(val)
            };
            map.insert(key, json_val);
        }
        serde_json::Value::Object(map)
    };
    let cfg: TrainConfig = serde_json::from_value(value)
        .map_err(|e| Error::Config(format!("bad training config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}
