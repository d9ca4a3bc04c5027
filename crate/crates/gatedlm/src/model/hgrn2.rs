//! HGRN2-style gated linear recurrence with hierarchical forget-gate lower
//! bounds and outer-product state expansion.
//!
//! Per head at step t, with per-layer bound vector beta:
//!
//! ```text
//! f_t = beta + (1 - beta) * sigmoid(Wf x_t)     forget gate, in [beta, 1)
//! k_t = 1 - f_t                                  tied input key
//! S_t = diag(f_t) S_{t-1} + outer(k_t, v_t)      expanded matrix state
//! o_t = S_t^T q_t                                query readout
//! ```
//!
//! All projections are d x d, so the parameter count is independent of the
//! expand ratio. The per-head gate/query coordinates (expand_ratio of them)
//! come from a parameter-free pooling of the per-head projection slice:
//! group-averaged when expand_ratio <= d/heads, repeated when larger, and the
//! identity when equal (the coupling the published configurations use).
//!
//! The layer runs either step-by-step on the tape (the normative path,
//! differentiable) or as a chunkwise scan over blocks (inference-only,
//! mathematically identical; decay ratios are formed in log space so long
//! blocks cannot overflow).

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{rms_norm, HostTensor, ModelConfig};
use crate::tensor::{Tape, TensorId};

#[derive(Debug, Clone)]
pub struct Hgrn2LayerParams {
    pub norm1: HostTensor,
    pub wq: HostTensor,
    pub wf: HostTensor,
    pub wv: HostTensor,
    pub wo: HostTensor,
    /// Per-coordinate logits feeding the cross-layer bound construction.
    pub gamma: HostTensor,
    pub norm2: HostTensor,
    pub wg: HostTensor,
    pub wu: HostTensor,
    pub wd: HostTensor,
}

impl Hgrn2LayerParams {
    /// Index of `gamma` in [`Self::named`] order.
    pub const GAMMA_SLOT: usize = 5;

    pub fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.hidden_size;
        let ff = cfg.hidden_ratio * d;
        Hgrn2LayerParams {
            norm1: HostTensor::ones(&[d]),
            wq: HostTensor::uniform(&[d, d], d, rng),
            wf: HostTensor::uniform(&[d, d], d, rng),
            wv: HostTensor::uniform(&[d, d], d, rng),
            wo: HostTensor::uniform(&[d, d], d, rng),
            gamma: HostTensor::zeros(&[d]),
            norm2: HostTensor::ones(&[d]),
            wg: HostTensor::uniform(&[d, ff], d, rng),
            wu: HostTensor::uniform(&[d, ff], d, rng),
            wd: HostTensor::uniform(&[ff, d], ff, rng),
        }
    }

    pub fn named(&self) -> Vec<(&'static str, &HostTensor)> {
        vec![
            ("norm1", &self.norm1),
            ("wq", &self.wq),
            ("wf", &self.wf),
            ("wv", &self.wv),
            ("wo", &self.wo),
            ("gamma", &self.gamma),
            ("norm2", &self.norm2),
            ("wg", &self.wg),
            ("wu", &self.wu),
            ("wd", &self.wd),
        ]
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut HostTensor)> {
        vec![
            ("norm1", &mut self.norm1),
            ("wq", &mut self.wq),
            ("wf", &mut self.wf),
            ("wv", &mut self.wv),
            ("wo", &mut self.wo),
            ("gamma", &mut self.gamma),
            ("norm2", &mut self.norm2),
            ("wg", &mut self.wg),
            ("wu", &mut self.wu),
            ("wd", &mut self.wd),
        ]
    }

    /// Registers this layer's tensors on a tape, in `named` order.
    pub fn bind(&self, tape: &mut Tape) -> Result<Vec<TensorId>> {
        self.named()
            .into_iter()
            .map(|(_, t)| tape.param(&t.shape, t.data.clone()))
            .collect()
    }

    /// Full layer: pre-norm token mixing with residual, then pre-norm gated
    /// channel mixing with residual. Strictly causal.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        tape: &mut Tape,
        ids: &[TensorId],
        x: TensorId,
        beta: TensorId,
        state: &mut Hgrn2State,
        exec: super::ExecMode,
        cfg: &ModelConfig,
    ) -> Result<TensorId> {
        let [norm1, wq, wf, wv, wo, _gamma, norm2, wg, wu, wd] = ids else {
            return Err(Error::Usage("hgrn2 layer expects 10 parameter ids".into()));
        };
        let d = cfg.hidden_size;
        let heads = cfg.num_heads;
        let dv = cfg.head_value_dim();
        let e = cfg.expand_ratio;
        let t_len = tape.shape(x)[0];

        let block = match exec {
            super::ExecMode::Sequential => 1,
            super::ExecMode::Scan { block } => {
                if block > 1 && tape.is_recording() {
                    return Err(Error::Usage(
                        "the scan path is inference-only; use ExecMode::Sequential for training"
                            .into(),
                    ));
                }
                block
            }
        };

        let xn = rms_norm(tape, x, *norm1)?;
        let q_all = tape.matmul(xn, *wq)?;
        let f_all = tape.matmul(xn, *wf)?;
        let v_all = tape.matmul(xn, *wv)?;
        let pool = tape.constant(&[dv, e], pool_matrix(dv, e))?;
        let beta_row = tape.reshape(beta, &[1, d])?;

        let mut head_outputs = Vec::with_capacity(heads);
        for h in 0..heads {
            let off = h * dv;
            let q_h = tape.slice(q_all, 1, off, dv)?;
            let q_pool = tape.matmul(q_h, pool)?; // [T, e]
            let f_h = tape.slice(f_all, 1, off, dv)?;
            let f_pool = tape.matmul(f_h, pool)?;
            let v_h = tape.slice(v_all, 1, off, dv)?; // [T, dv]

            let beta_slice = tape.slice(beta_row, 1, off, dv)?;
            let beta_pool = tape.matmul(beta_slice, pool)?; // [1, e]
            let beta_vec = tape.reshape(beta_pool, &[e])?;
            let open = tape.one_minus(beta_vec)?; // 1 - beta, the gate's free range

            let sig = tape.sigmoid(f_pool)?;
            let scaled = tape.col_scale(sig, open)?;
            let f_gate = tape.add_bias(scaled, beta_vec)?; // [T, e], each coord in [beta, 1)
            let k_gate = tape.one_minus(f_gate)?;

            let o_h = if block > 1 {
                let (o_data, new_state) = scan_head(
                    tape.data(f_gate),
                    tape.data(k_gate),
                    tape.data(q_pool),
                    tape.data(v_h),
                    &state.s[h],
                    t_len,
                    e,
                    dv,
                    block,
                );
                state.s[h] = new_state;
                tape.constant(&[t_len, dv], o_data)?
            } else {
                let mut s = tape.constant(&[e, dv], state.s[h].clone())?;
                let mut rows = Vec::with_capacity(t_len);
                for t in 0..t_len {
                    let f_row = tape.slice(f_gate, 0, t, 1)?;
                    let f_t = tape.reshape(f_row, &[e])?;
                    let k_row = tape.slice(k_gate, 0, t, 1)?;
                    let k_t = tape.reshape(k_row, &[e])?;
                    let v_row = tape.slice(v_h, 0, t, 1)?;
                    let v_t = tape.reshape(v_row, &[dv])?;
                    let decayed = tape.diag_scale(f_t, s)?;
                    let written = tape.outer(k_t, v_t)?;
                    s = tape.add(decayed, written)?;
                    let q_t = tape.slice(q_pool, 0, t, 1)?; // [1, e]
                    rows.push(tape.matmul(q_t, s)?); // q_t^T S_t = (S_t^T q_t)^T
                }
                state.s[h] = tape.data(s).to_vec();
                tape.concat(&rows, 0)?
            };
            head_outputs.push(o_h);
        }

        let o = tape.concat(&head_outputs, 1)?; // [T, d]
        let mixed = tape.matmul(o, *wo)?;
        let h1 = tape.add(x, mixed)?;

        let hn = rms_norm(tape, h1, *norm2)?;
        let gate = tape.matmul(hn, *wg)?;
        let gate = tape.sigmoid(gate)?;
        let up = tape.matmul(hn, *wu)?;
        let gated = tape.mul(gate, up)?;
        let down = tape.matmul(gated, *wd)?;
        tape.add(h1, down)
    }
}

/// Per-head expanded state matrices, each expand_ratio x head_value_dim.
#[derive(Debug, Clone)]
pub struct Hgrn2State {
    pub s: Vec<Vec<f32>>,
}

impl Hgrn2State {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let per_head = cfg.expand_ratio * cfg.head_value_dim();
        Hgrn2State { s: vec![vec![0.0; per_head]; cfg.num_heads] }
    }

    pub fn reset(&mut self) {
        for s in &mut self.s {
            s.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Parameter-free pooling from the per-head projection slice (dv wide) to the
/// gate/query width e: group means when e <= dv, coordinate repetition when
/// e > dv, identity when equal.
pub fn pool_matrix(dv: usize, e: usize) -> Vec<f32> {
    let mut m = vec![0.0f32; dv * e];
    if e <= dv {
        let group = dv / e;
        let w = 1.0 / group as f32;
        for i in 0..dv {
            m[i * e + i / group] = w;
        }
    } else {
        let rep = e / dv;
        for j in 0..e {
            m[(j / rep) * e + j] = 1.0;
        }
    }
    m
}

/// Host-side lower-bound construction: per coordinate, a softmax over the
/// layer axis followed by an exclusive prefix sum, so bounds grow
/// monotonically from the bottom layer and stay below 1. The bottom layer's
/// bound is exactly 0 (and a single-layer model keeps the full gate range).
pub fn lower_bounds(gammas: &[Vec<f32>]) -> Vec<Vec<f32>> {
    let layers = gammas.len();
    if layers == 0 {
        return Vec::new();
    }
    let d = gammas[0].len();
    let mut out = vec![vec![0.0f32; d]; layers];
    for c in 0..d {
        let logits: Vec<f64> = gammas.iter().map(|g| f64::from(g[c])).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
        let total: f64 = exps.iter().sum();
        let mut acc = 0.0f64;
        for l in 0..layers {
            out[l][c] = (acc / total) as f32;
            acc += exps[l];
        }
    }
    out
}

/// Tape version of [`lower_bounds`]: differentiable in the gamma parameters.
/// Returns one [d] bound vector per layer.
pub fn bounds_on_tape(
    tape: &mut Tape,
    gamma_ids: &[TensorId],
    d: usize,
) -> Result<Vec<TensorId>> {
    let layers = gamma_ids.len();
    let mut cols = Vec::with_capacity(layers);
    for &g in gamma_ids {
        cols.push(tape.reshape(g, &[d, 1])?);
    }
    let stacked = tape.concat(&cols, 1)?; // [d, L]
    let probs = tape.softmax(stacked)?;
    // Strictly-lower-triangular accumulator: column l sums masses of layers < l.
    let mut tri = vec![0.0f32; layers * layers];
    for m in 0..layers {
        for l in (m + 1)..layers {
            tri[m * layers + l] = 1.0;
        }
    }
    let tri = tape.constant(&[layers, layers], tri)?;
    let bounds = tape.matmul(probs, tri)?; // [d, L]
    let mut per_layer = Vec::with_capacity(layers);
    for l in 0..layers {
        let col = tape.slice(bounds, 1, l, 1)?;
        per_layer.push(tape.reshape(col, &[d])?);
    }
    Ok(per_layer)
}

/// Chunkwise scan for one head. Within a block, decay products are kept as
/// cumulative log sums so the ratio exp(L_t - L_s), s <= t, never exceeds 1.
/// Intra-block interactions and the state carry are evaluated in f64.
#[allow(clippy::too_many_arguments)]
fn scan_head(
    f: &[f32],
    k: &[f32],
    q: &[f32],
    v: &[f32],
    s0: &[f32],
    t_len: usize,
    e: usize,
    dv: usize,
    block: usize,
) -> (Vec<f32>, Vec<f32>) {
    let mut out = vec![0.0f32; t_len * dv];
    let mut state: Vec<f64> = s0.iter().map(|&x| f64::from(x)).collect();

    let mut start = 0usize;
    while start < t_len {
        let len = block.min(t_len - start);
        // lcum[t][c] = sum of ln f over block steps start..=start+t (inclusive).
        let mut lcum = vec![0.0f64; len * e];
        for t in 0..len {
            for c in 0..e {
                let lf = f64::from(f[(start + t) * e + c]).max(1e-30).ln();
                lcum[t * e + c] = if t == 0 { lf } else { lcum[(t - 1) * e + c] + lf };
            }
        }
        for t in 0..len {
            let orow = &mut out[(start + t) * dv..(start + t + 1) * dv];
            let mut acc = vec![0.0f64; dv];
            // Contribution of the carried state: S_0^T (q_t (*) exp(L_t)).
            for c in 0..e {
                let w = f64::from(q[(start + t) * e + c]) * lcum[t * e + c].exp();
                if w == 0.0 {
                    continue;
                }
                let srow = &state[c * dv..(c + 1) * dv];
                for (a, &sv) in acc.iter_mut().zip(srow.iter()) {
                    *a += w * sv;
                }
            }
            // Intra-block attention-like term over s <= t.
            for s in 0..=t {
                let mut a_ts = 0.0f64;
                for c in 0..e {
                    a_ts += f64::from(q[(start + t) * e + c])
                        * f64::from(k[(start + s) * e + c])
                        * (lcum[t * e + c] - lcum[s * e + c]).exp();
                }
                if a_ts == 0.0 {
                    continue;
                }
                let vrow = &v[(start + s) * dv..(start + s + 1) * dv];
                for (a, &vv) in acc.iter_mut().zip(vrow.iter()) {
                    *a += a_ts * f64::from(vv);
                }
            }
            for (o, &a) in orow.iter_mut().zip(acc.iter()) {
                *o = a as f32;
            }
        }
        // Carry the state across the block boundary.
        let last = len - 1;
        let mut new_state = vec![0.0f64; e * dv];
        for c in 0..e {
            let decay = lcum[last * e + c].exp();
            for j in 0..dv {
                new_state[c * dv + j] = decay * state[c * dv + j];
            }
            for s in 0..len {
                let w = f64::from(k[(start + s) * e + c])
                    * (lcum[last * e + c] - lcum[s * e + c]).exp();
                if w == 0.0 {
                    continue;
                }
                let vrow = &v[(start + s) * dv..(start + s + 1) * dv];
                for j in 0..dv {
                    new_state[c * dv + j] += w * f64::from(vrow[j]);
                }
            }
        }
        state = new_state;
        start += len;
    }
    (out, state.iter().map(|&x| x as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ExecMode, LanguageModel, ModelConfig};
    use crate::tensor::Tape;
    use rand::SeedableRng;

    #[test]
    fn uniform_gammas_give_fractional_ladder() {
        // L=3, all-equal gammas: beta = (0, 1/3, 2/3) per coordinate.
        let gammas = vec![vec![0.5; 4], vec![0.5; 4], vec![0.5; 4]];
        let bounds = lower_bounds(&gammas);
        for c in 0..4 {
            assert!((bounds[0][c] - 0.0).abs() < 1e-7);
            assert!((bounds[1][c] - 1.0 / 3.0).abs() < 1e-6);
            assert!((bounds[2][c] - 2.0 / 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn single_layer_bound_is_zero() {
        let bounds = lower_bounds(&[vec![1.7, -0.3, 0.0]]);
        assert_eq!(bounds[0], vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn random_gammas_are_monotone_and_below_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        use rand::Rng;
        for layers in 1..=8 {
            let gammas: Vec<Vec<f32>> =
                (0..layers).map(|_| (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
            let bounds = lower_bounds(&gammas);
            for c in 0..6 {
                for l in 0..layers {
                    assert!(bounds[l][c] >= 0.0 && bounds[l][c] < 1.0);
                    if l > 0 {
                        assert!(bounds[l][c] >= bounds[l - 1][c]);
                    }
                }
            }
        }
    }

    #[test]
    fn tape_bounds_match_host_construction() {
        let gammas = vec![vec![0.3f32, -1.0, 2.0], vec![0.0, 0.5, -0.5], vec![1.0, 1.0, 1.0]];
        let host = lower_bounds(&gammas);
        let mut tape = Tape::new();
        let ids: Vec<_> =
            gammas.iter().map(|g| tape.param(&[3], g.clone()).unwrap()).collect();
        let betas = bounds_on_tape(&mut tape, &ids, 3).unwrap();
        for (l, &b) in betas.iter().enumerate() {
            for c in 0..3 {
                assert!(
                    (tape.data(b)[c] - host[l][c]).abs() < 1e-6,
                    "layer {l} coord {c}: tape {} vs host {}",
                    tape.data(b)[c],
                    host[l][c]
                );
            }
        }
    }

    #[test]
    fn pool_matrix_identity_when_dims_match() {
        let m = pool_matrix(4, 4);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(m[i * 4 + j], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn pool_matrix_groups_and_repeats() {
        // Downsample 4 -> 2: halves averaged.
        let m = pool_matrix(4, 2);
        assert_eq!(m, vec![0.5, 0.0, 0.5, 0.0, 0.0, 0.5, 0.0, 0.5]);
        // Upsample 2 -> 4: coordinates repeated.
        let m = pool_matrix(2, 4);
        assert_eq!(m, vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn recurrence_fixed_point_under_full_memory() {
        // f == 1, k == 0: the state update leaves S exactly unchanged.
        let mut tape = Tape::new();
        let s0 = tape.constant(&[2, 3], vec![0.5, -1.0, 2.0, 0.25, 0.0, -0.75]).unwrap();
        let f = tape.constant(&[2], vec![1.0, 1.0]).unwrap();
        let k = tape.constant(&[2], vec![0.0, 0.0]).unwrap();
        let v = tape.constant(&[3], vec![3.0, -2.0, 1.0]).unwrap();
        let decayed = tape.diag_scale(f, s0).unwrap();
        let written = tape.outer(k, v).unwrap();
        let s1 = tape.add(decayed, written).unwrap();
        assert_eq!(tape.data(s1), tape.data(s0));
    }

    #[test]
    fn zero_input_zero_state_gives_zero_layer_output() {
        let cfg = ModelConfig::desk_hgrn2(10);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = Hgrn2LayerParams::init(&cfg, &mut rng);
        let mut tape = Tape::inference();
        let ids = params.bind(&mut tape).unwrap();
        let x = tape.constant(&[3, cfg.hidden_size], vec![0.0; 3 * cfg.hidden_size]).unwrap();
        let beta = tape.constant(&[cfg.hidden_size], vec![0.0; cfg.hidden_size]).unwrap();
        let mut state = Hgrn2State::zeros(&cfg);
        let y = params
            .forward(&mut tape, &ids, x, beta, &mut state, ExecMode::Sequential, &cfg)
            .unwrap();
        assert!(tape.data(y).iter().all(|&v| v == 0.0));
        assert!(state.s.iter().all(|s| s.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn scan_single_block_matches_sequential() {
        let cfg = ModelConfig::desk_hgrn2(10);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = Hgrn2LayerParams::init(&cfg, &mut rng);
        use rand::Rng;
        let t_len = 12;
        let x_data: Vec<f32> =
            (0..t_len * cfg.hidden_size).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let run = |exec: ExecMode| {
            let mut tape = Tape::inference();
            let ids = params.bind(&mut tape).unwrap();
            let x = tape.constant(&[t_len, cfg.hidden_size], x_data.clone()).unwrap();
            let beta =
                tape.constant(&[cfg.hidden_size], vec![0.2; cfg.hidden_size]).unwrap();
            let mut state = Hgrn2State::zeros(&cfg);
            let y = params.forward(&mut tape, &ids, x, beta, &mut state, exec, &cfg).unwrap();
            (tape.data(y).to_vec(), state)
        };
        let (seq, seq_state) = run(ExecMode::Sequential);
        let (scan, scan_state) = run(ExecMode::Scan { block: t_len });
        let max_gap = seq
            .iter()
            .zip(scan.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_gap <= 1e-5, "output gap {max_gap}");
        for (a, b) in seq_state.s.iter().zip(scan_state.s.iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn scan_block_one_is_bit_exact_sequential() {
        let cfg = ModelConfig::desk_hgrn2(16);
        let model = LanguageModel::new(cfg, 2).unwrap();
        let tokens: Vec<u32> = vec![3, 7, 1, 9, 4];
        let mut s1 = model.fresh_state();
        let mut s2 = model.fresh_state();
        let a = model.logits_host(&tokens, &mut s1, ExecMode::Sequential).unwrap();
        let b = model.logits_host(&tokens, &mut s2, ExecMode::Scan { block: 1 }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gate_range_holds_for_random_bounds() {
        // f = beta + (1 - beta) * sigmoid(pre) stays in [beta, 1) away from
        // f32 sigmoid saturation (|pre| <= 10).
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        use rand::Rng;
        let mut tape = Tape::new();
        for _ in 0..200 {
            let beta_v: f32 = rng.gen_range(0.0..1.0);
            let pre: f32 = rng.gen_range(-10.0..10.0);
            let beta = tape.constant(&[1], vec![beta_v]).unwrap();
            let x = tape.constant(&[1, 1], vec![pre]).unwrap();
            let open = tape.one_minus(beta).unwrap();
            let sig = tape.sigmoid(x).unwrap();
            let scaled = tape.col_scale(sig, open).unwrap();
            let f = tape.add_bias(scaled, beta).unwrap();
            let fv = tape.data(f)[0];
            assert!(fv >= beta_v && fv < 1.0, "gate {fv} outside [{beta_v}, 1)");
        }
    }

    #[test]
    fn scan_rejected_on_recording_tape() {
        let cfg = ModelConfig::desk_hgrn2(16);
        let model = LanguageModel::new(cfg, 2).unwrap();
        let mut state = model.fresh_state();
        let mut tape = Tape::new();
        let res = model.forward(&mut tape, &[1, 2, 3], &mut state, ExecMode::Scan { block: 4 });
        assert!(matches!(res, Err(crate::error::Error::Usage(_))));
    }
}
