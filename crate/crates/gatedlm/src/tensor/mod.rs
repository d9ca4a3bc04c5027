//! Dense f32 tensors with reverse-mode gradient accumulation.
//!
//! All computation flows through a [`Tape`]: an arena of [`Tensor`] nodes plus
//! an ordered record of the ops that produced them. `backward()` replays the
//! records in strict reverse creation order and accumulates gradients into
//! every reachable `requires_grad` ancestor. Repeated backward calls without
//! zeroing accumulate additively.
//!
//! Storage is f32; reductions (`sum`, `mean`, norms, softmax interiors)
//! accumulate in f64. Every op validates that its output is finite and
//! reports a numeric error instead of silently propagating NaN/Inf.
//!
//! Broadcast support is deliberately narrow: `add_bias` (row vector added to
//! every row) and `col_scale` / `diag_scale` (per-column / per-row scaling)
//! are the only non-same-shape binary ops.

pub mod kernels;

use crate::error::{Error, Result};

pub type TensorId = usize;

/// Sentinel index for masked positions in [`Tape::take_per_row`].
pub const MASK_IGNORE: u32 = u32::MAX;

/// Dense n-dimensional array with an optional gradient slot.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub grad: Option<Vec<f32>>,
    pub requires_grad: bool,
    /// True when a gradient must flow through this node (leaf flag or any
    /// ancestor has it). Nodes without it are skipped during backward.
    needs_grad: bool,
}

impl Tensor {
    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

#[derive(Debug, Clone)]
enum Record {
    Matmul { a: TensorId, b: TensorId, out: TensorId, m: usize, k: usize, n: usize },
    Add { a: TensorId, b: TensorId, out: TensorId },
    Sub { a: TensorId, b: TensorId, out: TensorId },
    Mul { a: TensorId, b: TensorId, out: TensorId },
    Scale { x: TensorId, factor: f32, out: TensorId },
    AddScalar { x: TensorId, out: TensorId },
    Sigmoid { x: TensorId, out: TensorId },
    Tanh { x: TensorId, out: TensorId },
    Exp { x: TensorId, out: TensorId },
    Log { x: TensorId, out: TensorId },
    Rsqrt { x: TensorId, out: TensorId },
    Outer { a: TensorId, b: TensorId, out: TensorId },
    DiagScale { f: TensorId, s: TensorId, out: TensorId },
    ColScale { x: TensorId, v: TensorId, out: TensorId },
    AddBias { x: TensorId, v: TensorId, out: TensorId },
    Slice { x: TensorId, out: TensorId, axis: usize, start: usize },
    Concat { xs: Vec<TensorId>, out: TensorId, axis: usize },
    Reshape { x: TensorId, out: TensorId },
    Sum { x: TensorId, out: TensorId },
    Mean { x: TensorId, out: TensorId },
    RowSum { x: TensorId, out: TensorId },
    RowMean { x: TensorId, out: TensorId },
    Softmax { x: TensorId, out: TensorId },
    LogSoftmax { x: TensorId, out: TensorId },
    Embedding { table: TensorId, ids: Vec<u32>, out: TensorId },
    TakePerRow { x: TensorId, ids: Vec<u32>, out: TensorId },
}

/// Arena of tensors plus the op records needed for reverse-mode AD.
pub struct Tape {
    nodes: Vec<Tensor>,
    records: Vec<Record>,
    recording: bool,
}

impl Tape {
    /// Tape that records ops for backward.
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), records: Vec::new(), recording: true }
    }

    /// Inference-only tape: parameters register without gradients and no op
    /// records are kept, so memory stays proportional to live activations.
    pub fn inference() -> Self {
        Tape { nodes: Vec::new(), records: Vec::new(), recording: false }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn record_count(&self) -> usize {
        self.records.len()
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id].shape
    }

    pub fn data(&self, id: TensorId) -> &[f32] {
        &self.nodes[id].data
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f32]> {
        self.nodes[id].grad.as_deref()
    }

    pub fn tensor(&self, id: TensorId) -> &Tensor {
        &self.nodes[id]
    }

    // ── Node creation ────────────────────────────────────────────────

    fn push(&mut self, shape: Vec<usize>, data: Vec<f32>, needs_grad: bool) -> TensorId {
        debug_assert_eq!(numel_of(&shape), data.len());
        let id = self.nodes.len();
        self.nodes.push(Tensor {
            shape,
            data,
            grad: None,
            requires_grad: false,
            needs_grad: needs_grad && self.recording,
        });
        id
    }

    /// Register a gradient-free input (data, masks, teacher outputs, ...).
    pub fn constant(&mut self, shape: &[usize], data: Vec<f32>) -> Result<TensorId> {
        if numel_of(shape) != data.len() {
            return Err(Error::Dimension(format!(
                "constant: shape {:?} implies {} elements, got {}",
                shape,
                numel_of(shape),
                data.len()
            )));
        }
        Ok(self.push(shape.to_vec(), data, false))
    }

    /// Register a trainable leaf. On an inference tape this degrades to a constant.
    pub fn param(&mut self, shape: &[usize], data: Vec<f32>) -> Result<TensorId> {
        if numel_of(shape) != data.len() {
            return Err(Error::Dimension(format!(
                "param: shape {:?} implies {} elements, got {}",
                shape,
                numel_of(shape),
                data.len()
            )));
        }
        let id = self.push(shape.to_vec(), data, true);
        self.nodes[id].requires_grad = self.recording;
        Ok(id)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> TensorId {
        self.push(shape.to_vec(), vec![0.0; numel_of(shape)], false)
    }

    pub fn scalar(&mut self, v: f32) -> TensorId {
        self.push(vec![1], vec![v], false)
    }

    fn needs(&self, id: TensorId) -> bool {
        self.nodes[id].needs_grad
    }

    fn finite_check(&self, op: &str, data: &[f32]) -> Result<()> {
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "{op} produced a non-finite value at flat index {pos}"
            )));
        }
        Ok(())
    }

    fn emit(
        &mut self,
        op: &str,
        shape: Vec<usize>,
        data: Vec<f32>,
        needs: bool,
        record: impl FnOnce(TensorId) -> Record,
    ) -> Result<TensorId> {
        self.finite_check(op, &data)?;
        let needs = needs && self.recording;
        let out = self.push(shape, data, needs);
        if needs {
            let rec = record(out);
            self.records.push(rec);
        }
        Ok(out)
    }

    // ── Shape helpers ────────────────────────────────────────────────

    fn dims2(&self, id: TensorId, op: &str) -> Result<(usize, usize)> {
        let s = &self.nodes[id].shape;
        if s.len() != 2 {
            return Err(Error::Dimension(format!("{op}: expected a 2-d tensor, got {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    fn dims1(&self, id: TensorId, op: &str) -> Result<usize> {
        let s = &self.nodes[id].shape;
        if s.len() != 1 {
            return Err(Error::Dimension(format!("{op}: expected a 1-d tensor, got {s:?}")));
        }
        Ok(s[0])
    }

    fn same_shape(&self, a: TensorId, b: TensorId, op: &str) -> Result<()> {
        if self.nodes[a].shape != self.nodes[b].shape {
            return Err(Error::Dimension(format!(
                "{op}: shape mismatch {:?} vs {:?}",
                self.nodes[a].shape, self.nodes[b].shape
            )));
        }
        Ok(())
    }

    /// Rows/cols view of a 1-d ([1, n]) or 2-d tensor.
    fn rows_cols(&self, id: TensorId, op: &str) -> Result<(usize, usize)> {
        let s = &self.nodes[id].shape;
        match s.len() {
            1 => Ok((1, s[0])),
            2 => Ok((s[0], s[1])),
            _ => Err(Error::Dimension(format!("{op}: expected 1-d or 2-d tensor, got {s:?}"))),
        }
    }

    // ── Forward ops ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, ka) = self.dims2(a, "matmul")?;
        let (kb, n) = self.dims2(b, "matmul")?;
        if ka != kb {
            return Err(Error::Dimension(format!(
                "matmul: inner extents differ ({m}x{ka} vs {kb}x{n})"
            )));
        }
        let mut out = vec![0.0f32; m * n];
        kernels::matmul(&self.nodes[a].data, &self.nodes[b].data, &mut out, m, ka, n);
        let needs = self.needs(a) || self.needs(b);
        self.emit("matmul", vec![m, n], out, needs, |o| Record::Matmul {
            a,
            b,
            out: o,
            m,
            k: ka,
            n,
        })
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape(a, b, "add")?;
        let data: Vec<f32> = self.nodes[a]
            .data
            .iter()
            .zip(self.nodes[b].data.iter())
            .map(|(&x, &y)| x + y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        let shape = self.nodes[a].shape.clone();
        self.emit("add", shape, data, needs, |o| Record::Add { a, b, out: o })
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape(a, b, "sub")?;
        let data: Vec<f32> = self.nodes[a]
            .data
            .iter()
            .zip(self.nodes[b].data.iter())
            .map(|(&x, &y)| x - y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        let shape = self.nodes[a].shape.clone();
        self.emit("sub", shape, data, needs, |o| Record::Sub { a, b, out: o })
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape(a, b, "mul")?;
        let data: Vec<f32> = self.nodes[a]
            .data
            .iter()
            .zip(self.nodes[b].data.iter())
            .map(|(&x, &y)| x * y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        let shape = self.nodes[a].shape.clone();
        self.emit("mul", shape, data, needs, |o| Record::Mul { a, b, out: o })
    }

    pub fn scale(&mut self, x: TensorId, factor: f32) -> Result<TensorId> {
        let data: Vec<f32> = self.nodes[x].data.iter().map(|&v| v * factor).collect();
        let needs = self.needs(x);
        let shape = self.nodes[x].shape.clone();
        self.emit("scale", shape, data, needs, |o| Record::Scale { x, factor, out: o })
    }

    pub fn add_scalar(&mut self, x: TensorId, c: f32) -> Result<TensorId> {
        let data: Vec<f32> = self.nodes[x].data.iter().map(|&v| v + c).collect();
        let needs = self.needs(x);
        let shape = self.nodes[x].shape.clone();
        self.emit("add_scalar", shape, data, needs, |o| Record::AddScalar { x, out: o })
    }

    /// 1 - x, the gate complement.
    pub fn one_minus(&mut self, x: TensorId) -> Result<TensorId> {
        let neg = self.scale(x, -1.0)?;
        self.add_scalar(neg, 1.0)
    }

    pub fn sigmoid(&mut self, x: TensorId) -> Result<TensorId> {
        let data: Vec<f32> = self.nodes[x].data.iter().map(|&v| kernels::sigmoid(v)).collect();
        let needs = self.needs(x);
        let shape = self.nodes[x].shape.clone();
        self.emit("sigmoid", shape, data, needs, |o| Record::Sigmoid { x, out: o })
    }

    pub fn tanh(&mut self, x: TensorId) -> Result<TensorId> {
        let data: Vec<f32> = self.nodes[x].data.iter().map(|&v| v.tanh()).collect();
        let needs = self.needs(x);
        let shape = self.nodes[x].shape.clone();
        self.emit("tanh", shape, data, needs, |o| Record::Tanh { x, out: o })
    }

    pub fn exp(&mut self, x: TensorId) -> Result<TensorId> {
        let data: Vec<f32> = self.nodes[x].data.iter().map(|&v| v.exp()).collect();
        let needs = self.needs(x);
        let shape = self.nodes[x].shape.clone();
        self.emit("exp", shape, data, needs, |o| Record::Exp { x, out: o })
    }

    pub fn log(&mut self, x: TensorId) -> Result<TensorId> {
        let data: Vec<f32> = self.nodes[x].data.iter().map(|&v| v.ln()).collect();
        let needs = self.needs(x);
        let shape = self.nodes[x].shape.clone();
        self.emit("log", shape, data, needs, |o| Record::Log { x, out: o })
    }

    /// x^(-1/2); domain x > 0.
    pub fn rsqrt(&mut self, x: TensorId) -> Result<TensorId> {
        let data: Vec<f32> = self.nodes[x].data.iter().map(|&v| 1.0 / v.sqrt()).collect();
        let needs = self.needs(x);
        let shape = self.nodes[x].shape.clone();
        self.emit("rsqrt", shape, data, needs, |o| Record::Rsqrt { x, out: o })
    }

    /// Outer product of two 1-d tensors: out[i,j] = a[i] * b[j].
    pub fn outer(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let m = self.dims1(a, "outer")?;
        let n = self.dims1(b, "outer")?;
        let mut data = vec![0.0f32; m * n];
        for i in 0..m {
            let av = self.nodes[a].data[i];
            for j in 0..n {
                data[i * n + j] = av * self.nodes[b].data[j];
            }
        }
        let needs = self.needs(a) || self.needs(b);
        self.emit("outer", vec![m, n], data, needs, |o| Record::Outer { a, b, out: o })
    }

    /// diag(f) . s — scales row i of s by f[i].
    pub fn diag_scale(&mut self, f: TensorId, s: TensorId) -> Result<TensorId> {
        let m = self.dims1(f, "diag_scale")?;
        let (rows, cols) = self.dims2(s, "diag_scale")?;
        if rows != m {
            return Err(Error::Dimension(format!(
                "diag_scale: diagonal has {m} entries but matrix has {rows} rows"
            )));
        }
        let mut data = vec![0.0f32; rows * cols];
        for i in 0..rows {
            let fv = self.nodes[f].data[i];
            let src = &self.nodes[s].data[i * cols..(i + 1) * cols];
            for (d, &sv) in data[i * cols..(i + 1) * cols].iter_mut().zip(src.iter()) {
                *d = fv * sv;
            }
        }
        let needs = self.needs(f) || self.needs(s);
        self.emit("diag_scale", vec![rows, cols], data, needs, |o| Record::DiagScale {
            f,
            s,
            out: o,
        })
    }

    /// Scales column j of x by v[j].
    pub fn col_scale(&mut self, x: TensorId, v: TensorId) -> Result<TensorId> {
        let (rows, cols) = self.dims2(x, "col_scale")?;
        let vn = self.dims1(v, "col_scale")?;
        if vn != cols {
            return Err(Error::Dimension(format!(
                "col_scale: vector has {vn} entries but matrix has {cols} columns"
            )));
        }
        let mut data = vec![0.0f32; rows * cols];
        for i in 0..rows {
            let src = &self.nodes[x].data[i * cols..(i + 1) * cols];
            for j in 0..cols {
                data[i * cols + j] = src[j] * self.nodes[v].data[j];
            }
        }
        let needs = self.needs(x) || self.needs(v);
        self.emit("col_scale", vec![rows, cols], data, needs, |o| Record::ColScale {
            x,
            v,
            out: o,
        })
    }

    /// Adds the row vector v to every row of x.
    pub fn add_bias(&mut self, x: TensorId, v: TensorId) -> Result<TensorId> {
        let (rows, cols) = self.dims2(x, "add_bias")?;
        let vn = self.dims1(v, "add_bias")?;
        if vn != cols {
            return Err(Error::Dimension(format!(
                "add_bias: bias has {vn} entries but matrix has {cols} columns"
            )));
        }
        let mut data = vec![0.0f32; rows * cols];
        for i in 0..rows {
            let src = &self.nodes[x].data[i * cols..(i + 1) * cols];
            for j in 0..cols {
                data[i * cols + j] = src[j] + self.nodes[v].data[j];
            }
        }
        let needs = self.needs(x) || self.needs(v);
        self.emit("add_bias", vec![rows, cols], data, needs, |o| Record::AddBias {
            x,
            v,
            out: o,
        })
    }

    /// Contiguous slice along `axis` (0 for both 1-d and 2-d, 1 for 2-d).
    pub fn slice(&mut self, x: TensorId, axis: usize, start: usize, len: usize) -> Result<TensorId> {
        let shape = self.nodes[x].shape.clone();
        if axis >= shape.len() {
            return Err(Error::Dimension(format!(
                "slice: axis {axis} out of range for shape {shape:?}"
            )));
        }
        if start + len > shape[axis] {
            return Err(Error::Dimension(format!(
                "slice: range {start}..{} exceeds extent {} on axis {axis}",
                start + len,
                shape[axis]
            )));
        }
        let (out_shape, data) = match shape.len() {
            1 => (vec![len], self.nodes[x].data[start..start + len].to_vec()),
            2 => {
                let (rows, cols) = (shape[0], shape[1]);
                if axis == 0 {
                    (vec![len, cols], self.nodes[x].data[start * cols..(start + len) * cols].to_vec())
                } else {
                    let mut d = Vec::with_capacity(rows * len);
                    for i in 0..rows {
                        d.extend_from_slice(&self.nodes[x].data[i * cols + start..i * cols + start + len]);
                    }
                    (vec![rows, len], d)
                }
            }
            _ => {
                return Err(Error::Dimension(format!(
                    "slice: only 1-d and 2-d tensors supported, got {shape:?}"
                )))
            }
        };
        let needs = self.needs(x);
        self.emit("slice", out_shape, data, needs, |o| Record::Slice { x, out: o, axis, start })
    }

    /// Concatenation of 1-d or 2-d tensors along `axis`.
    pub fn concat(&mut self, xs: &[TensorId], axis: usize) -> Result<TensorId> {
        if xs.is_empty() {
            return Err(Error::Dimension("concat: no inputs".into()));
        }
        let first = self.nodes[xs[0]].shape.clone();
        let rank = first.len();
        if axis >= rank || rank > 2 {
            return Err(Error::Dimension(format!(
                "concat: axis {axis} invalid for shape {first:?}"
            )));
        }
        let mut total = 0usize;
        for &x in xs {
            let s = &self.nodes[x].shape;
            if s.len() != rank {
                return Err(Error::Dimension("concat: rank mismatch".into()));
            }
            for d in 0..rank {
                if d != axis && s[d] != first[d] {
                    return Err(Error::Dimension(format!(
                        "concat: shape mismatch {s:?} vs {first:?} on axis {d}"
                    )));
                }
            }
            total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let data = if rank == 1 || axis == 0 {
            let mut d = Vec::with_capacity(numel_of(&out_shape));
            for &x in xs {
                d.extend_from_slice(&self.nodes[x].data);
            }
            d
        } else {
            let rows = first[0];
            let mut d = Vec::with_capacity(numel_of(&out_shape));
            for i in 0..rows {
                for &x in xs {
                    let cols = self.nodes[x].shape[1];
                    d.extend_from_slice(&self.nodes[x].data[i * cols..(i + 1) * cols]);
                }
            }
            d
        };
        let needs = xs.iter().any(|&x| self.needs(x));
        let xs_owned = xs.to_vec();
        self.emit("concat", out_shape, data, needs, |o| Record::Concat {
            xs: xs_owned,
            out: o,
            axis,
        })
    }

    pub fn reshape(&mut self, x: TensorId, new_shape: &[usize]) -> Result<TensorId> {
        if numel_of(new_shape) != self.nodes[x].numel() {
            return Err(Error::Dimension(format!(
                "reshape: cannot view {:?} as {:?}",
                self.nodes[x].shape, new_shape
            )));
        }
        let data = self.nodes[x].data.clone();
        let needs = self.needs(x);
        self.emit("reshape", new_shape.to_vec(), data, needs, |o| Record::Reshape { x, out: o })
    }

    /// Sum of all elements (f64 accumulation), as a scalar tensor.
    pub fn sum(&mut self, x: TensorId) -> Result<TensorId> {
        let s = kernels::sum_f64(&self.nodes[x].data) as f32;
        let needs = self.needs(x);
        self.emit("sum", vec![1], vec![s], needs, |o| Record::Sum { x, out: o })
    }

    /// Mean over all elements (f64 accumulation), as a scalar tensor.
    pub fn mean(&mut self, x: TensorId) -> Result<TensorId> {
        let n = self.nodes[x].numel();
        if n == 0 {
            return Err(Error::Dimension("mean: empty tensor".into()));
        }
        let s = (kernels::sum_f64(&self.nodes[x].data) / n as f64) as f32;
        let needs = self.needs(x);
        self.emit("mean", vec![1], vec![s], needs, |o| Record::Mean { x, out: o })
    }

    pub fn row_sum(&mut self, x: TensorId) -> Result<TensorId> {
        let (rows, cols) = self.dims2(x, "row_sum")?;
        let mut data = vec![0.0f32; rows];
        for i in 0..rows {
            data[i] = kernels::sum_f64(&self.nodes[x].data[i * cols..(i + 1) * cols]) as f32;
        }
        let needs = self.needs(x);
        self.emit("row_sum", vec![rows], data, needs, |o| Record::RowSum { x, out: o })
    }

    pub fn row_mean(&mut self, x: TensorId) -> Result<TensorId> {
        let (rows, cols) = self.dims2(x, "row_mean")?;
        if cols == 0 {
            return Err(Error::Dimension("row_mean: empty rows".into()));
        }
        let mut data = vec![0.0f32; rows];
        for i in 0..rows {
            data[i] =
                (kernels::sum_f64(&self.nodes[x].data[i * cols..(i + 1) * cols]) / cols as f64) as f32;
        }
        let needs = self.needs(x);
        self.emit("row_mean", vec![rows], data, needs, |o| Record::RowMean { x, out: o })
    }

    /// Softmax over the last axis of a 1-d or 2-d tensor.
    pub fn softmax(&mut self, x: TensorId) -> Result<TensorId> {
        let (rows, cols) = self.rows_cols(x, "softmax")?;
        if cols == 0 {
            return Err(Error::Dimension("softmax: empty last axis".into()));
        }
        let mut data = vec![0.0f32; rows * cols];
        kernels::softmax_rows(&self.nodes[x].data, &mut data, rows, cols);
        let needs = self.needs(x);
        let shape = self.nodes[x].shape.clone();
        self.emit("softmax", shape, data, needs, |o| Record::Softmax { x, out: o })
    }

    /// Log-softmax over the last axis of a 1-d or 2-d tensor.
    pub fn log_softmax(&mut self, x: TensorId) -> Result<TensorId> {
        let (rows, cols) = self.rows_cols(x, "log_softmax")?;
        if cols == 0 {
            return Err(Error::Dimension("log_softmax: empty last axis".into()));
        }
        let mut data = vec![0.0f32; rows * cols];
        kernels::log_softmax_rows(&self.nodes[x].data, &mut data, rows, cols);
        let needs = self.needs(x);
        let shape = self.nodes[x].shape.clone();
        self.emit("log_softmax", shape, data, needs, |o| Record::LogSoftmax { x, out: o })
    }

    /// Row lookup: out[t] = table[ids[t]], shape [ids.len(), d].
    pub fn embedding(&mut self, table: TensorId, ids: &[u32]) -> Result<TensorId> {
        let (vocab, d) = self.dims2(table, "embedding")?;
        for &id in ids {
            if id as usize >= vocab {
                return Err(Error::Data(format!(
                    "embedding: token id {id} out of range for vocab {vocab}"
                )));
            }
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            let r = id as usize;
            data.extend_from_slice(&self.nodes[table].data[r * d..(r + 1) * d]);
        }
        let needs = self.needs(table);
        let ids_owned = ids.to_vec();
        self.emit("embedding", vec![ids.len(), d], data, needs, |o| Record::Embedding {
            table,
            ids: ids_owned,
            out: o,
        })
    }

    /// out[i] = x[i, ids[i]]; rows with `MASK_IGNORE` yield 0 and get no gradient.
    pub fn take_per_row(&mut self, x: TensorId, ids: &[u32]) -> Result<TensorId> {
        let (rows, cols) = self.dims2(x, "take_per_row")?;
        if ids.len() != rows {
            return Err(Error::Dimension(format!(
                "take_per_row: {} indices for {} rows",
                ids.len(),
                rows
            )));
        }
        let mut data = vec![0.0f32; rows];
        for (i, &id) in ids.iter().enumerate() {
            if id == MASK_IGNORE {
                continue;
            }
            if id as usize >= cols {
                return Err(Error::Data(format!(
                    "take_per_row: index {id} out of range for {cols} columns"
                )));
            }
            data[i] = self.nodes[x].data[i * cols + id as usize];
        }
        let needs = self.needs(x);
        let ids_owned = ids.to_vec();
        self.emit("take_per_row", vec![rows], data, needs, |o| Record::TakePerRow {
            x,
            ids: ids_owned,
            out: o,
        })
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Accumulates `d loss / d node` into every reachable `requires_grad`
    /// ancestor of `loss`. The loss must be a scalar produced on this tape.
    /// Each call propagates a fresh pass through a working buffer, so
    /// repeated backward without zeroing adds gradients rather than
    /// compounding them.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if !self.recording {
            return Err(Error::Usage("backward on an inference tape".into()));
        }
        if self.nodes[loss].numel() != 1 {
            return Err(Error::Usage(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss].shape
            )));
        }
        let mut work: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        if self.nodes[loss].needs_grad {
            work[loss] = Some(vec![1.0]);
        }
        for idx in (0..self.records.len()).rev() {
            let rec = self.records[idx].clone();
            self.backward_record(&rec, &mut work);
        }
        for (node, w) in self.nodes.iter_mut().zip(work.into_iter()) {
            if !node.requires_grad {
                continue;
            }
            let contrib = w.unwrap_or_else(|| vec![0.0; node.data.len()]);
            match &mut node.grad {
                Some(g) => {
                    for (a, b) in g.iter_mut().zip(contrib.iter()) {
                        *a += b;
                    }
                }
                None => node.grad = Some(contrib),
            }
        }
        Ok(())
    }

    fn accum(&self, work: &mut [Option<Vec<f32>>], id: TensorId, contrib: &[f32]) {
        if !self.nodes[id].needs_grad {
            return;
        }
        let n = self.nodes[id].numel();
        debug_assert_eq!(contrib.len(), n);
        match &mut work[id] {
            Some(g) => {
                for (a, &c) in g.iter_mut().zip(contrib.iter()) {
                    *a += c;
                }
            }
            None => work[id] = Some(contrib.to_vec()),
        }
    }

    fn backward_record(&self, rec: &Record, work: &mut [Option<Vec<f32>>]) {
        match rec {
            Record::Matmul { a, b, out, m, k, n } => {
                let Some(g) = work[*out].clone() else { return };
                if self.needs(*a) {
                    let mut da = vec![0.0f32; m * k];
                    kernels::matmul_nt_acc(&g, &self.nodes[*b].data, &mut da, *m, *n, *k);
                    self.accum(work, *a, &da);
                }
                if self.needs(*b) {
                    let mut db = vec![0.0f32; k * n];
                    kernels::matmul_tn_acc(&self.nodes[*a].data, &g, &mut db, *m, *k, *n);
                    self.accum(work, *b, &db);
                }
            }
            Record::Add { a, b, out } => {
                let Some(g) = work[*out].clone() else { return };
                self.accum(work, *a, &g);
                self.accum(work, *b, &g);
            }
            Record::Sub { a, b, out } => {
                let Some(g) = work[*out].clone() else { return };
                self.accum(work, *a, &g);
                let neg: Vec<f32> = g.iter().map(|&v| -v).collect();
                self.accum(work, *b, &neg);
            }
            Record::Mul { a, b, out } => {
                let Some(g) = work[*out].clone() else { return };
                if self.needs(*a) {
                    let da: Vec<f32> =
                        g.iter().zip(self.nodes[*b].data.iter()).map(|(&gv, &bv)| gv * bv).collect();
                    self.accum(work, *a, &da);
                }
                if self.needs(*b) {
                    let db: Vec<f32> =
                        g.iter().zip(self.nodes[*a].data.iter()).map(|(&gv, &av)| gv * av).collect();
                    self.accum(work, *b, &db);
                }
            }
            Record::Scale { x, factor, out } => {
                let Some(g) = work[*out].clone() else { return };
                let dx: Vec<f32> = g.iter().map(|&v| v * factor).collect();
                self.accum(work, *x, &dx);
            }
            Record::AddScalar { x, out } => {
                let Some(g) = work[*out].clone() else { return };
                self.accum(work, *x, &g);
            }
            Record::Sigmoid { x, out } => {
                let Some(g) = work[*out].clone() else { return };
                let dx: Vec<f32> = g
                    .iter()
                    .zip(self.nodes[*out].data.iter())
                    .map(|(&gv, &y)| gv * y * (1.0 - y))
                    .collect();
                self.accum(work, *x, &dx);
            }
            Record::Tanh { x, out } => {
                let Some(g) = work[*out].clone() else { return };
                let dx: Vec<f32> = g
                    .iter()
                    .zip(self.nodes[*out].data.iter())
                    .map(|(&gv, &y)| gv * (1.0 - y * y))
                    .collect();
                self.accum(work, *x, &dx);
            }
            Record::Exp { x, out } => {
                let Some(g) = work[*out].clone() else { return };
                let dx: Vec<f32> = g
                    .iter()
                    .zip(self.nodes[*out].data.iter())
                    .map(|(&gv, &y)| gv * y)
                    .collect();
                self.accum(work, *x, &dx);
            }
            Record::Log { x, out } => {
                let Some(g) = work[*out].clone() else { return };
                let dx: Vec<f32> = g
                    .iter()
                    .zip(self.nodes[*x].data.iter())
                    .map(|(&gv, &xv)| gv / xv)
                    .collect();
                self.accum(work, *x, &dx);
            }
            Record::Rsqrt { x, out } => {
                let Some(g) = work[*out].clone() else { return };
                let dx: Vec<f32> = g
                    .iter()
                    .zip(self.nodes[*out].data.iter())
                    .map(|(&gv, &y)| gv * (-0.5 * y * y * y))
                    .collect();
                self.accum(work, *x, &dx);
            }
            Record::Outer { a, b, out } => {
                let Some(g) = work[*out].clone() else { return };
                let m = self.nodes[*a].numel();
                let n = self.nodes[*b].numel();
                if self.needs(*a) {
                    let mut da = vec![0.0f32; m];
                    for i in 0..m {
                        let mut acc = 0.0f32;
                        for j in 0..n {
                            acc += g[i * n + j] * self.nodes[*b].data[j];
                        }
                        da[i] = acc;
                    }
                    self.accum(work, *a, &da);
                }
                if self.needs(*b) {
                    let mut db = vec![0.0f32; n];
                    for i in 0..m {
                        let av = self.nodes[*a].data[i];
                        for j in 0..n {
                            db[j] += g[i * n + j] * av;
                        }
                    }
                    self.accum(work, *b, &db);
                }
            }
            Record::DiagScale { f, s, out } => {
                let Some(g) = work[*out].clone() else { return };
                let m = self.nodes[*f].numel();
                let cols = self.nodes[*s].shape[1];
                if self.needs(*f) {
                    let mut df = vec![0.0f32; m];
                    for i in 0..m {
                        let mut acc = 0.0f32;
                        for j in 0..cols {
                            acc += g[i * cols + j] * self.nodes[*s].data[i * cols + j];
                        }
                        df[i] = acc;
                    }
                    self.accum(work, *f, &df);
                }
                if self.needs(*s) {
                    let mut ds = vec![0.0f32; m * cols];
                    for i in 0..m {
                        let fv = self.nodes[*f].data[i];
                        for j in 0..cols {
                            ds[i * cols + j] = g[i * cols + j] * fv;
                        }
                    }
                    self.accum(work, *s, &ds);
                }
            }
            Record::ColScale { x, v, out } => {
                let Some(g) = work[*out].clone() else { return };
                let (rows, cols) = (self.nodes[*x].shape[0], self.nodes[*x].shape[1]);
                if self.needs(*x) {
                    let mut dx = vec![0.0f32; rows * cols];
                    for i in 0..rows {
                        for j in 0..cols {
                            dx[i * cols + j] = g[i * cols + j] * self.nodes[*v].data[j];
                        }
                    }
                    self.accum(work, *x, &dx);
                }
                if self.needs(*v) {
                    let mut dv = vec![0.0f32; cols];
                    for i in 0..rows {
                        for j in 0..cols {
                            dv[j] += g[i * cols + j] * self.nodes[*x].data[i * cols + j];
                        }
                    }
                    self.accum(work, *v, &dv);
                }
            }
            Record::AddBias { x, v, out } => {
                let Some(g) = work[*out].clone() else { return };
                let (rows, cols) = (self.nodes[*x].shape[0], self.nodes[*x].shape[1]);
                self.accum(work, *x, &g);
                if self.needs(*v) {
                    let mut dv = vec![0.0f32; cols];
                    for i in 0..rows {
                        for j in 0..cols {
                            dv[j] += g[i * cols + j];
                        }
                    }
                    self.accum(work, *v, &dv);
                }
            }
            Record::Slice { x, out, axis, start } => {
                let Some(g) = work[*out].clone() else { return };
                let xshape = self.nodes[*x].shape.clone();
                let oshape = self.nodes[*out].shape.clone();
                let mut dx = vec![0.0f32; self.nodes[*x].numel()];
                match xshape.len() {
                    1 => dx[*start..*start + oshape[0]].copy_from_slice(&g),
                    2 => {
                        let cols = xshape[1];
                        if *axis == 0 {
                            dx[*start * cols..(*start + oshape[0]) * cols].copy_from_slice(&g);
                        } else {
                            let len = oshape[1];
                            for i in 0..xshape[0] {
                                dx[i * cols + start..i * cols + start + len]
                                    .copy_from_slice(&g[i * len..(i + 1) * len]);
                            }
                        }
                    }
                    _ => unreachable!(),
                }
                self.accum(work, *x, &dx);
            }
            Record::Concat { xs, out, axis } => {
                let Some(g) = work[*out].clone() else { return };
                let rank = self.nodes[*out].shape.len();
                if rank == 1 || *axis == 0 {
                    let mut offset = 0usize;
                    for &x in xs {
                        let n = self.nodes[x].numel();
                        let gx = g[offset..offset + n].to_vec();
                        self.accum(work, x, &gx);
                        offset += n;
                    }
                } else {
                    let rows = self.nodes[*out].shape[0];
                    let out_cols = self.nodes[*out].shape[1];
                    let mut col_off = 0usize;
                    for &x in xs {
                        let cols = self.nodes[x].shape[1];
                        if self.needs(x) {
                            let mut gx = vec![0.0f32; rows * cols];
                            for i in 0..rows {
                                gx[i * cols..(i + 1) * cols].copy_from_slice(
                                    &g[i * out_cols + col_off..i * out_cols + col_off + cols],
                                );
                            }
                            self.accum(work, x, &gx);
                        }
                        col_off += cols;
                    }
                }
            }
            Record::Reshape { x, out } => {
                let Some(g) = work[*out].clone() else { return };
                self.accum(work, *x, &g);
            }
            Record::Sum { x, out } => {
                let Some(g) = work[*out].clone() else { return };
                let dx = vec![g[0]; self.nodes[*x].numel()];
                self.accum(work, *x, &dx);
            }
            Record::Mean { x, out } => {
                let Some(g) = work[*out].clone() else { return };
                let n = self.nodes[*x].numel();
                let dx = vec![g[0] / n as f32; n];
                self.accum(work, *x, &dx);
            }
            Record::RowSum { x, out } => {
                let Some(g) = work[*out].clone() else { return };
                let (rows, cols) = (self.nodes[*x].shape[0], self.nodes[*x].shape[1]);
                let mut dx = vec![0.0f32; rows * cols];
                for i in 0..rows {
                    for j in 0..cols {
                        dx[i * cols + j] = g[i];
                    }
                }
                self.accum(work, *x, &dx);
            }
            Record::RowMean { x, out } => {
                let Some(g) = work[*out].clone() else { return };
                let (rows, cols) = (self.nodes[*x].shape[0], self.nodes[*x].shape[1]);
                let mut dx = vec![0.0f32; rows * cols];
                for i in 0..rows {
                    let gv = g[i] / cols as f32;
                    for j in 0..cols {
                        dx[i * cols + j] = gv;
                    }
                }
                self.accum(work, *x, &dx);
            }
            Record::Softmax { x, out } => {
                let Some(g) = work[*out].clone() else { return };
                let (rows, cols) = match self.nodes[*out].shape.len() {
                    1 => (1, self.nodes[*out].shape[0]),
                    _ => (self.nodes[*out].shape[0], self.nodes[*out].shape[1]),
                };
                let y = &self.nodes[*out].data;
                let mut dx = vec![0.0f32; rows * cols];
                for r in 0..rows {
                    let base = r * cols;
                    let mut dot = 0.0f64;
                    for j in 0..cols {
                        dot += f64::from(g[base + j]) * f64::from(y[base + j]);
                    }
                    for j in 0..cols {
                        dx[base + j] = y[base + j] * (g[base + j] - dot as f32);
                    }
                }
                self.accum(work, *x, &dx);
            }
            Record::LogSoftmax { x, out } => {
                let Some(g) = work[*out].clone() else { return };
                let (rows, cols) = match self.nodes[*out].shape.len() {
                    1 => (1, self.nodes[*out].shape[0]),
                    _ => (self.nodes[*out].shape[0], self.nodes[*out].shape[1]),
                };
                let y = &self.nodes[*out].data;
                let mut dx = vec![0.0f32; rows * cols];
                for r in 0..rows {
                    let base = r * cols;
                    let mut gsum = 0.0f64;
                    for j in 0..cols {
                        gsum += f64::from(g[base + j]);
                    }
                    for j in 0..cols {
                        let p = f64::from(y[base + j]).exp();
                        dx[base + j] = (f64::from(g[base + j]) - p * gsum) as f32;
                    }
                }
                self.accum(work, *x, &dx);
            }
            Record::Embedding { table, ids, out } => {
                let Some(g) = work[*out].clone() else { return };
                let d = self.nodes[*table].shape[1];
                let mut dt = vec![0.0f32; self.nodes[*table].numel()];
                for (t, &id) in ids.iter().enumerate() {
                    let r = id as usize;
                    for j in 0..d {
                        dt[r * d + j] += g[t * d + j];
                    }
                }
                self.accum(work, *table, &dt);
            }
            Record::TakePerRow { x, ids, out } => {
                let Some(g) = work[*out].clone() else { return };
                let cols = self.nodes[*x].shape[1];
                let mut dx = vec![0.0f32; self.nodes[*x].numel()];
                for (i, &id) in ids.iter().enumerate() {
                    if id == MASK_IGNORE {
                        continue;
                    }
                    dx[i * cols + id as usize] = g[i];
                }
                self.accum(work, *x, &dx);
            }
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}
