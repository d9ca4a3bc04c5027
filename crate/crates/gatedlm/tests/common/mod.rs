//! Shared test oracles: an independent f64 re-implementation of both model
//! forwards (straight loops, no tape) and a central finite-difference
//! gradient harness built on it.
//!
//! The reference deliberately re-derives every formula from its definition:
//! pooling as explicit group means / repeats, bounds as softmax + exclusive
//! prefix sum, the recurrence as a literal step loop. Agreement between this
//! and the tape path checks both implementations.

#![allow(dead_code)]

pub mod ops;

use std::collections::BTreeMap;

use gatedlm::model::{Architecture, LanguageModel, ModelConfig};

pub const FD_STEP: f64 = 1e-3;

/// Relative error with a magnitude floor. Gradients below the floor are
/// compared at absolute scale `floor * tolerance` (1e-5 at the 1e-3 tier),
/// the usual atol/rtol gradcheck convention: a pure ratio is undefined near
/// zero, and f32 analytic gradients carry ~1e-6 of accumulated rounding that
/// says nothing about the correctness of a backward rule.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-2)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// f64 mirror of a model's parameters, keyed by the checkpoint names.
#[derive(Clone)]
pub struct RefModel {
    pub config: ModelConfig,
    pub params: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
}

impl RefModel {
    pub fn from_model(model: &LanguageModel) -> Self {
        let params = model
            .visit_params()
            .into_iter()
            .map(|(name, t)| {
                (name, (t.shape.clone(), t.data.iter().map(|&v| f64::from(v)).collect()))
            })
            .collect();
        RefModel { config: model.config.clone(), params }
    }

    fn p(&self, name: &str) -> &Vec<f64> {
        &self.params.get(name).unwrap_or_else(|| panic!("missing param {name}")).1
    }

    pub fn nudge(&mut self, name: &str, idx: usize, delta: f64) {
        self.params.get_mut(name).unwrap().1[idx] += delta;
    }

    fn rms_norm(x: &mut [Vec<f64>], weight: &[f64]) {
        for row in x.iter_mut() {
            let ms = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
            let inv = 1.0 / (ms + 1e-6_f32 as f64).sqrt();
            for (v, w) in row.iter_mut().zip(weight.iter()) {
                *v = *v * inv * w;
            }
        }
    }

    fn matvec(row: &[f64], w: &[f64], out_dim: usize) -> Vec<f64> {
        let in_dim = row.len();
        let mut out = vec![0.0; out_dim];
        for (k, &r) in row.iter().enumerate() {
            if r == 0.0 {
                continue;
            }
            for j in 0..out_dim {
                out[j] += r * w[k * out_dim + j];
            }
        }
        debug_assert_eq!(w.len(), in_dim * out_dim);
        out
    }

    /// Group-mean (e <= dv) or repeat (e > dv) pooling, from the definition.
    fn pool(slice: &[f64], e: usize) -> Vec<f64> {
        let dv = slice.len();
        if e <= dv {
            let group = dv / e;
            (0..e)
                .map(|j| slice[j * group..(j + 1) * group].iter().sum::<f64>() / group as f64)
                .collect()
        } else {
            let rep = e / dv;
            (0..e).map(|j| slice[j / rep]).collect()
        }
    }

    /// Per-layer bound vectors: softmax over the layer axis, exclusive cumsum.
    fn bounds(&self) -> Vec<Vec<f64>> {
        let l_count = self.config.num_layers;
        let d = self.config.hidden_size;
        let gammas: Vec<&Vec<f64>> =
            (0..l_count).map(|l| self.p(&format!("layers.{l}.gamma"))).collect();
        let mut out = vec![vec![0.0; d]; l_count];
        for c in 0..d {
            let m = gammas.iter().map(|g| g[c]).fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = gammas.iter().map(|g| (g[c] - m).exp()).collect();
            let total: f64 = exps.iter().sum();
            let mut acc = 0.0;
            for l in 0..l_count {
                out[l][c] = acc / total;
                acc += exps[l];
            }
        }
        out
    }

    /// Full forward to logits [T, V], flattened row-major.
    pub fn logits(&self, tokens: &[u32]) -> Vec<Vec<f64>> {
        match self.config.arch {
            Architecture::Hgrn2 => self.logits_hgrn2(tokens),
            Architecture::Lstm => self.logits_lstm(tokens),
        }
    }

    fn logits_hgrn2(&self, tokens: &[u32]) -> Vec<Vec<f64>> {
        let d = self.config.hidden_size;
        let heads = self.config.num_heads;
        let dv = d / heads;
        let e = self.config.expand_ratio;
        let emb = self.p("embedding");
        let mut x: Vec<Vec<f64>> =
            tokens.iter().map(|&t| emb[t as usize * d..(t as usize + 1) * d].to_vec()).collect();
        let t_len = x.len();
        let bounds = self.bounds();

        for l in 0..self.config.num_layers {
            let name = |s: &str| format!("layers.{l}.{s}");
            let mut xn = x.clone();
            Self::rms_norm(&mut xn, self.p(&name("norm1")));
            let q: Vec<Vec<f64>> =
                xn.iter().map(|r| Self::matvec(r, self.p(&name("wq")), d)).collect();
            let f_pre: Vec<Vec<f64>> =
                xn.iter().map(|r| Self::matvec(r, self.p(&name("wf")), d)).collect();
            let v: Vec<Vec<f64>> =
                xn.iter().map(|r| Self::matvec(r, self.p(&name("wv")), d)).collect();

            let mut mixed = vec![vec![0.0; d]; t_len];
            for h in 0..heads {
                let off = h * dv;
                let beta_h = Self::pool(&bounds[l][off..off + dv], e);
                let mut s = vec![0.0f64; e * dv];
                for t in 0..t_len {
                    let q_t = Self::pool(&q[t][off..off + dv], e);
                    let fp_t = Self::pool(&f_pre[t][off..off + dv], e);
                    let f_t: Vec<f64> = fp_t
                        .iter()
                        .zip(beta_h.iter())
                        .map(|(&p, &b)| b + (1.0 - b) * sigmoid(p))
                        .collect();
                    let v_t = &v[t][off..off + dv];
                    for c in 0..e {
                        let k_c = 1.0 - f_t[c];
                        for j in 0..dv {
                            s[c * dv + j] = f_t[c] * s[c * dv + j] + k_c * v_t[j];
                        }
                    }
                    for j in 0..dv {
                        let mut acc = 0.0;
                        for c in 0..e {
                            acc += s[c * dv + j] * q_t[c];
                        }
                        mixed[t][off + j] = acc;
                    }
                }
            }
            let mut h1 = vec![vec![0.0; d]; t_len];
            for t in 0..t_len {
                let m = Self::matvec(&mixed[t], self.p(&name("wo")), d);
                for j in 0..d {
                    h1[t][j] = x[t][j] + m[j];
                }
            }
            let mut hn = h1.clone();
            Self::rms_norm(&mut hn, self.p(&name("norm2")));
            let ff = self.config.hidden_ratio * d;
            for t in 0..t_len {
                let gate = Self::matvec(&hn[t], self.p(&name("wg")), ff);
                let up = Self::matvec(&hn[t], self.p(&name("wu")), ff);
                let gated: Vec<f64> =
                    gate.iter().zip(up.iter()).map(|(&g, &u)| sigmoid(g) * u).collect();
                let down = Self::matvec(&gated, self.p(&name("wd")), d);
                for j in 0..d {
                    x[t][j] = h1[t][j] + down[j];
                }
            }
        }
        self.head(x)
    }

    fn logits_lstm(&self, tokens: &[u32]) -> Vec<Vec<f64>> {
        let hidden = self.config.hidden_size;
        let e_dim = self.config.embed_dim();
        let emb = self.p("embedding");
        let mut x: Vec<Vec<f64>> = tokens
            .iter()
            .map(|&t| emb[t as usize * e_dim..(t as usize + 1) * e_dim].to_vec())
            .collect();
        for l in 0..self.config.num_layers {
            let name = |s: &str| format!("layers.{l}.{s}");
            let wx = self.p(&name("wx"));
            let wh = self.p(&name("wh"));
            let bias = self.p(&name("bias"));
            let mut h = vec![0.0f64; hidden];
            let mut c = vec![0.0f64; hidden];
            let mut out = Vec::with_capacity(x.len());
            for row in &x {
                let mut z = Self::matvec(row, wx, 4 * hidden);
                let hz = Self::matvec(&h, wh, 4 * hidden);
                for (zv, (hv, bv)) in z.iter_mut().zip(hz.iter().zip(bias.iter())) {
                    *zv += hv + bv;
                }
                for j in 0..hidden {
                    let i_g = sigmoid(z[j]);
                    let f_g = sigmoid(z[hidden + j]);
                    let g_c = z[2 * hidden + j].tanh();
                    let o_g = sigmoid(z[3 * hidden + j]);
                    c[j] = f_g * c[j] + i_g * g_c;
                    h[j] = o_g * c[j].tanh();
                }
                out.push(h.clone());
            }
            x = out;
        }
        self.head(x)
    }

    fn head(&self, mut x: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
        let v = self.config.vocab_size;
        Self::rms_norm(&mut x, self.p("final_norm"));
        x.iter().map(|r| Self::matvec(r, self.p("output"), v)).collect()
    }

    /// Mean next-token cross-entropy in nats.
    pub fn ce_loss(&self, input: &[u32], targets: &[u32]) -> f64 {
        let logits = self.logits(input);
        let mut total = 0.0;
        for (row, &tgt) in logits.iter().zip(targets.iter()) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln() + m;
            total -= row[tgt as usize] - lse;
        }
        total / targets.len() as f64
    }
}

/// Central finite differences of the reference CE loss for one parameter.
pub fn fd_param_grad(
    reference: &RefModel,
    name: &str,
    input: &[u32],
    targets: &[u32],
) -> Vec<f64> {
    let n = reference.params[name].1.len();
    let mut grads = Vec::with_capacity(n);
    for i in 0..n {
        let mut plus = reference.clone();
        plus.nudge(name, i, FD_STEP);
        let mut minus = reference.clone();
        minus.nudge(name, i, -FD_STEP);
        grads.push((plus.ce_loss(input, targets) - minus.ce_loss(input, targets)) / (2.0 * FD_STEP));
    }
    grads
}
