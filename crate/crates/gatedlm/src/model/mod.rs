//! Sequence-mixing architectures assembled into causal language models.
//!
//! Two architectures are implemented: the HGRN2-style gated linear RNN
//! (hierarchical forget-gate lower bounds, outer-product state expansion,
//! sequential and chunkwise-scan execution) and a vanilla stacked LSTM
//! baseline. Assembly is shared: embedding, L mixing layers, a final RMS
//! norm, and an output projection.

pub mod hgrn2;
pub mod lstm;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, TensorId};

pub use hgrn2::{lower_bounds, Hgrn2LayerParams, Hgrn2State};
pub use lstm::{LstmLayerParams, LstmState};

/// Named dense parameter living outside any tape.
#[derive(Debug, Clone)]
pub struct HostTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl HostTensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        HostTensor { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn ones(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        HostTensor { shape: shape.to_vec(), data: vec![1.0; n] }
    }

    /// Scaled-uniform init with std 1/sqrt(fan_in).
    pub fn uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Self {
        let n: usize = shape.iter().product();
        let bound = (3.0f64 / fan_in as f64).sqrt() as f32;
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        HostTensor { shape: shape.to_vec(), data }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Hgrn2,
    Lstm,
}

/// Execution path for the recurrence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    /// Chunkwise associative scan over blocks of the given size. Inference
    /// only: block sizes above 1 bypass the tape inside the recurrence.
    Scan { block: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Architecture,
    pub vocab_size: usize,
    /// Model width d (the LSTM hidden size for `arch = lstm`).
    pub hidden_size: usize,
    pub num_layers: usize,
    /// State expansion factor: per-head gates/queries live in `expand_ratio`
    /// coordinates and the recurrent state is expand_ratio x (d / heads).
    pub expand_ratio: usize,
    /// Channel-mixing width multiplier.
    pub hidden_ratio: usize,
    pub num_heads: usize,
    /// Default block size for the scan path.
    pub scan_block: usize,
    /// Embedding width; None means the model width. Only the LSTM supports a
    /// width different from hidden_size.
    #[serde(default)]
    pub embed_size: Option<usize>,
    /// Dropout between stacked LSTM layers.
    #[serde(default)]
    pub dropout: f32,
}

impl ModelConfig {
    /// Desk-scale HGRN2 defaults.
    pub fn desk_hgrn2(vocab_size: usize) -> Self {
        ModelConfig {
            arch: Architecture::Hgrn2,
            vocab_size,
            hidden_size: 64,
            num_layers: 4,
            expand_ratio: 8,
            hidden_ratio: 4,
            num_heads: 2,
            scan_block: 64,
            embed_size: None,
            dropout: 0.0,
        }
    }

    pub fn desk_lstm(vocab_size: usize) -> Self {
        ModelConfig {
            arch: Architecture::Lstm,
            vocab_size,
            hidden_size: 64,
            num_layers: 2,
            expand_ratio: 1,
            hidden_ratio: 1,
            num_heads: 1,
            scan_block: 1,
            embed_size: Some(32),
            dropout: 0.1,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_size.unwrap_or(self.hidden_size)
    }

    pub fn head_value_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::Config("vocab_size must be at least 2".into()));
        }
        if self.num_layers < 1 {
            return Err(Error::Config("num_layers must be at least 1".into()));
        }
        if self.hidden_size == 0 || self.num_heads == 0 {
            return Err(Error::Config("hidden_size and num_heads must be positive".into()));
        }
        if self.hidden_size % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_size {} not divisible by num_heads {}",
                self.hidden_size, self.num_heads
            )));
        }
        match self.arch {
            Architecture::Hgrn2 => {
                if self.expand_ratio < 1 {
                    return Err(Error::Config("expand_ratio must be at least 1".into()));
                }
                let dv = self.head_value_dim();
                let e = self.expand_ratio;
                if !(dv % e == 0 || e % dv == 0) {
                    return Err(Error::Config(format!(
                        "expand_ratio {e} incompatible with head value dim {dv}: one must divide the other"
                    )));
                }
                if self.hidden_ratio < 1 {
                    return Err(Error::Config("hidden_ratio must be at least 1".into()));
                }
                if let Some(e) = self.embed_size {
                    if e != self.hidden_size {
                        return Err(Error::Config(
                            "hgrn2 requires embed_size == hidden_size".into(),
                        ));
                    }
                }
                if self.scan_block == 0 {
                    return Err(Error::Config("scan_block must be positive".into()));
                }
            }
            Architecture::Lstm => {
                if !(0.0..1.0).contains(&self.dropout) {
                    return Err(Error::Config("dropout must be in [0, 1)".into()));
                }
            }
        }
        Ok(())
    }
}

/// Reference configurations. The HGRN2 and LSTM rows instantiate; the other
/// architectures are documented for comparison only and cannot be built here.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Hgrn2_360m,
    Hgrn2_1_2b,
    LstmBaseline,
    Transformer410m,
    Mamba350m,
    Xlstm340m,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::Hgrn2_360m,
        Preset::Hgrn2_1_2b,
        Preset::LstmBaseline,
        Preset::Transformer410m,
        Preset::Mamba350m,
        Preset::Xlstm340m,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Hgrn2_360m => "hgrn2-360m",
            Preset::Hgrn2_1_2b => "hgrn2-1.2b",
            Preset::LstmBaseline => "lstm-baseline",
            Preset::Transformer410m => "transformer-410m",
            Preset::Mamba350m => "mamba-350m",
            Preset::Xlstm340m => "xlstm-340m",
        }
    }

    pub fn describe(&self) -> &'static str {
        match self {
            Preset::Hgrn2_360m => "hidden 1024, 26 layers, hidden ratio 4, expand ratio 128",
            Preset::Hgrn2_1_2b => "hidden 2048, 18 layers, hidden ratio 4, expand ratio 128",
            Preset::LstmBaseline => "hidden 9120, embedding 512, 2 layers, dropout 0.1",
            Preset::Transformer410m => {
                "hidden 1024, intermediate 4096, 22 layers, 32 heads (reference only)"
            }
            Preset::Mamba350m => {
                "hidden 1024, intermediate 2048, 48 layers, state size 8 (reference only)"
            }
            Preset::Xlstm340m => "embedding 1024, 48 blocks, 4 mLSTM heads (reference only)",
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> Result<ModelConfig> {
        match self {
            Preset::Hgrn2_360m => Ok(ModelConfig {
                arch: Architecture::Hgrn2,
                vocab_size,
                hidden_size: 1024,
                num_layers: 26,
                expand_ratio: 128,
                hidden_ratio: 4,
                num_heads: 8,
                scan_block: 64,
                embed_size: None,
                dropout: 0.0,
            }),
            Preset::Hgrn2_1_2b => Ok(ModelConfig {
                arch: Architecture::Hgrn2,
                vocab_size,
                hidden_size: 2048,
                num_layers: 18,
                expand_ratio: 128,
                hidden_ratio: 4,
                num_heads: 16,
                scan_block: 64,
                embed_size: None,
                dropout: 0.0,
            }),
            Preset::LstmBaseline => Ok(ModelConfig {
                arch: Architecture::Lstm,
                vocab_size,
                hidden_size: 9120,
                num_layers: 2,
                expand_ratio: 1,
                hidden_ratio: 1,
                num_heads: 1,
                scan_block: 1,
                embed_size: Some(512),
                dropout: 0.1,
            }),
            Preset::Transformer410m | Preset::Mamba350m | Preset::Xlstm340m => {
                Err(Error::Config(format!(
                    "{} is a reference configuration; this toolkit implements hgrn2 and lstm only",
                    self.name()
                )))
            }
        }
    }
}

/// Architecture-specific parameter sets.
#[derive(Debug, Clone)]
pub enum ArchParams {
    Hgrn2(Vec<Hgrn2LayerParams>),
    Lstm(Vec<LstmLayerParams>),
}

/// A causal language model: config plus named parameters.
#[derive(Debug, Clone)]
pub struct LanguageModel {
    pub config: ModelConfig,
    pub embedding: HostTensor,
    pub layers: ArchParams,
    pub final_norm: HostTensor,
    pub output: HostTensor,
}

/// Per-layer recurrent state.
#[derive(Debug, Clone)]
pub enum StateKind {
    Hgrn2(Vec<Hgrn2State>),
    Lstm(Vec<LstmState>),
}

#[derive(Debug, Clone)]
pub struct ModelState {
    pub kind: StateKind,
    /// Number of positions consumed since the last reset.
    pub pos: usize,
}

impl ModelState {
    pub fn reset(&mut self) {
        self.pos = 0;
        match &mut self.kind {
            StateKind::Hgrn2(layers) => layers.iter_mut().for_each(|s| s.reset()),
            StateKind::Lstm(layers) => layers.iter_mut().for_each(|s| s.reset()),
        }
    }
}

/// Tape ids of the registered parameters, in `visit_params` order.
pub struct Bound {
    pub ids: Vec<TensorId>,
}

impl LanguageModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.hidden_size;
        let e_dim = config.embed_dim();
        let embedding = HostTensor::uniform(&[config.vocab_size, e_dim], e_dim, &mut rng);
        let layers = match config.arch {
            Architecture::Hgrn2 => ArchParams::Hgrn2(
                (0..config.num_layers).map(|_| Hgrn2LayerParams::init(&config, &mut rng)).collect(),
            ),
            Architecture::Lstm => ArchParams::Lstm(
                (0..config.num_layers)
                    .map(|l| {
                        let input = if l == 0 { e_dim } else { d };
                        LstmLayerParams::init(input, d, &mut rng)
                    })
                    .collect(),
            ),
        };
        let final_norm = HostTensor::ones(&[d]);
        let output = HostTensor::uniform(&[d, config.vocab_size], d, &mut rng);
        Ok(LanguageModel { config, embedding, layers, final_norm, output })
    }

    pub fn fresh_state(&self) -> ModelState {
        let kind = match (&self.layers, &self.config) {
            (ArchParams::Hgrn2(layers), cfg) => StateKind::Hgrn2(
                layers.iter().map(|_| Hgrn2State::zeros(cfg)).collect::<Vec<_>>(),
            ),
            (ArchParams::Lstm(layers), cfg) => StateKind::Lstm(
                layers.iter().map(|_| LstmState::zeros(cfg.hidden_size)).collect::<Vec<_>>(),
            ),
        };
        ModelState { kind, pos: 0 }
    }

    /// Deterministic (name, tensor) walk over every parameter.
    pub fn visit_params(&self) -> Vec<(String, &HostTensor)> {
        let mut out: Vec<(String, &HostTensor)> = vec![("embedding".into(), &self.embedding)];
        match &self.layers {
            ArchParams::Hgrn2(layers) => {
                for (l, p) in layers.iter().enumerate() {
                    for (suffix, t) in p.named() {
                        out.push((format!("layers.{l}.{suffix}"), t));
                    }
                }
            }
            ArchParams::Lstm(layers) => {
                for (l, p) in layers.iter().enumerate() {
                    for (suffix, t) in p.named() {
                        out.push((format!("layers.{l}.{suffix}"), t));
                    }
                }
            }
        }
        out.push(("final_norm".into(), &self.final_norm));
        out.push(("output".into(), &self.output));
        out
    }

    pub fn visit_params_mut(&mut self) -> Vec<(String, &mut HostTensor)> {
        let mut out: Vec<(String, &mut HostTensor)> =
            vec![("embedding".into(), &mut self.embedding)];
        match &mut self.layers {
            ArchParams::Hgrn2(layers) => {
                for (l, p) in layers.iter_mut().enumerate() {
                    for (suffix, t) in p.named_mut() {
                        out.push((format!("layers.{l}.{suffix}"), t));
                    }
                }
            }
            ArchParams::Lstm(layers) => {
                for (l, p) in layers.iter_mut().enumerate() {
                    for (suffix, t) in p.named_mut() {
                        out.push((format!("layers.{l}.{suffix}"), t));
                    }
                }
            }
        }
        out.push(("final_norm".into(), &mut self.final_norm));
        out.push(("output".into(), &mut self.output));
        out
    }

    pub fn param_count(&self) -> usize {
        self.visit_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Registers every parameter on the tape (trainable when the tape records).
    pub fn bind(&self, tape: &mut Tape) -> Result<Bound> {
        let mut ids = Vec::new();
        for (_, t) in self.visit_params() {
            ids.push(tape.param(&t.shape, t.data.clone())?);
        }
        Ok(Bound { ids })
    }

    /// Causal LM forward: embedding, L mixed layers, final norm, output
    /// projection. Returns logits [T, vocab]. `state` is advanced in place.
    pub fn forward_with(
        &self,
        bound: &Bound,
        tape: &mut Tape,
        tokens: &[u32],
        state: &mut ModelState,
        exec: ExecMode,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<TensorId> {
        if tokens.is_empty() {
            return Err(Error::Data("forward on an empty token sequence".into()));
        }
        if let ExecMode::Scan { block } = exec {
            if block == 0 {
                return Err(Error::Usage("scan block size must be positive".into()));
            }
            if block > 1 && tape.is_recording() {
                return Err(Error::Usage(
                    "the scan path is inference-only; use ExecMode::Sequential for training".into(),
                ));
            }
        }

        let mut idx = 0usize;
        let mut next = || {
            let id = bound.ids[idx];
            idx += 1;
            id
        };

        let emb_id = next();
        let mut x = tape.embedding(emb_id, tokens)?;

        match (&self.layers, &mut state.kind) {
            (ArchParams::Hgrn2(layers), StateKind::Hgrn2(states)) => {
                // Collect per-layer ids first; the bound walk is flat.
                let mut layer_ids = Vec::with_capacity(layers.len());
                for p in layers {
                    let n = p.named().len();
                    let ids: Vec<TensorId> = (0..n).map(|_| next()).collect();
                    layer_ids.push(ids);
                }
                let gamma_ids: Vec<TensorId> =
                    layer_ids.iter().map(|ids| ids[Hgrn2LayerParams::GAMMA_SLOT]).collect();
                let betas = hgrn2::bounds_on_tape(tape, &gamma_ids, self.config.hidden_size)?;
                for (l, p) in layers.iter().enumerate() {
                    x = p.forward(
                        tape,
                        &layer_ids[l],
                        x,
                        betas[l],
                        &mut states[l],
                        exec,
                        &self.config,
                    )?;
                }
            }
            (ArchParams::Lstm(layers), StateKind::Lstm(states)) => {
                let n_layers = layers.len();
                for (l, p) in layers.iter().enumerate() {
                    let n = p.named().len();
                    let ids: Vec<TensorId> = (0..n).map(|_| next()).collect();
                    x = p.forward(tape, &ids, x, &mut states[l])?;
                    let between_layers = l + 1 < n_layers;
                    if between_layers && self.config.dropout > 0.0 {
                        if let Some(rng) = dropout_rng.as_deref_mut() {
                            x = lstm::dropout(tape, x, self.config.dropout, rng)?;
                        }
                    }
                }
            }
            _ => return Err(Error::Usage("state does not match model architecture".into())),
        }

        // Final RMS norm, then the output projection.
        let norm_id = next();
        let y = rms_norm(tape, x, norm_id)?;
        let out_id = next();
        let logits = tape.matmul(y, out_id)?;
        state.pos += tokens.len();
        Ok(logits)
    }

    /// Bind-and-forward convenience for single-shot calls.
    pub fn forward(
        &self,
        tape: &mut Tape,
        tokens: &[u32],
        state: &mut ModelState,
        exec: ExecMode,
    ) -> Result<TensorId> {
        let bound = self.bind(tape)?;
        self.forward_with(&bound, tape, tokens, state, exec, None)
    }

    /// Inference logits on a fresh tape, as host data.
    pub fn logits_host(
        &self,
        tokens: &[u32],
        state: &mut ModelState,
        exec: ExecMode,
    ) -> Result<Vec<f32>> {
        let mut tape = Tape::inference();
        let logits = self.forward(&mut tape, tokens, state, exec)?;
        Ok(tape.data(logits).to_vec())
    }
}

const RMS_EPS: f32 = 1e-6;

/// Pre-norm RMS scaling: x / sqrt(mean(x^2) + eps) * weight, per row.
pub fn rms_norm(tape: &mut Tape, x: TensorId, weight: TensorId) -> Result<TensorId> {
    let sq = tape.mul(x, x)?;
    let ms = tape.row_mean(sq)?;
    let shifted = tape.add_scalar(ms, RMS_EPS)?;
    let inv = tape.rsqrt(shifted)?;
    let normed = tape.diag_scale(inv, x)?;
    tape.col_scale(normed, weight)
}
