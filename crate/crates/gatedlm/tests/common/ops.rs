//! Per-op finite-difference specifications shared by the gradcheck and
//! acceptance suites. Each op carries an independent f64 forward used as the
//! numeric-differentiation oracle.

use super::{rel_err, FD_STEP};
use gatedlm::tensor::{Tape, TensorId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Build = fn(&mut Tape, &[TensorId]) -> TensorId;
type Reference = fn(&[Vec<f64>]) -> Vec<f64>;

pub struct OpSpec {
    pub name: &'static str,
    pub shapes: &'static [&'static [usize]],
    /// Sampling interval per input; positive-domain ops shift it.
    pub domain: (f32, f32),
    pub build: Build,
    pub reference: Reference,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub fn check(spec: &OpSpec, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Vec<f32>> = spec
        .shapes
        .iter()
        .map(|s| (0..numel(s)).map(|_| rng.gen_range(spec.domain.0..spec.domain.1)).collect())
        .collect();

    // Analytic gradients through the tape.
    let mut tape = Tape::new();
    let ids: Vec<TensorId> = inputs
        .iter()
        .zip(spec.shapes.iter())
        .map(|(data, shape)| tape.param(shape, data.clone()).unwrap())
        .collect();
    let out = (spec.build)(&mut tape, &ids);
    let out_n = tape.data(out).len();
    let weights: Vec<f32> = (0..out_n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w = tape.constant(tape.shape(out).to_vec().as_slice(), weights.clone()).unwrap();
    let weighted = tape.mul(out, w).unwrap();
    let loss = tape.sum(weighted).unwrap();
    tape.backward(loss).unwrap();
    let analytic: Vec<Vec<f32>> =
        ids.iter().map(|&id| tape.grad(id).expect("grad missing").to_vec()).collect();

    // Numeric gradients from the f64 reference.
    let f = |xs: &[Vec<f64>]| -> f64 {
        (spec.reference)(xs)
            .iter()
            .zip(weights.iter())
            .map(|(&o, &w)| o * f64::from(w))
            .sum()
    };
    let base: Vec<Vec<f64>> =
        inputs.iter().map(|v| v.iter().map(|&x| f64::from(x)).collect()).collect();

    let mut errs: Vec<f64> = Vec::new();
    for (i, input) in base.iter().enumerate() {
        for c in 0..input.len() {
            let mut plus = base.clone();
            plus[i][c] += FD_STEP;
            let mut minus = base.clone();
            minus[i][c] -= FD_STEP;
            let numeric = (f(&plus) - f(&minus)) / (2.0 * FD_STEP);
            errs.push(rel_err(f64::from(analytic[i][c]), numeric));
        }
    }
    let worst = errs.iter().cloned().fold(0.0f64, f64::max);
    let tight = errs.iter().filter(|&&e| e <= 1e-4).count();
    assert!(
        worst <= 1e-3,
        "{}: worst relative error {worst:.2e} exceeds 1e-3",
        spec.name
    );
    assert!(
        tight as f64 >= 0.95 * errs.len() as f64,
        "{}: only {tight}/{} coordinates within 1e-4",
        spec.name,
        errs.len()
    );
}

fn ref_matmul(xs: &[Vec<f64>]) -> Vec<f64> {
    let (m, k, n) = (4, 3, 5);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for kk in 0..k {
            for j in 0..n {
                out[i * n + j] += xs[0][i * k + kk] * xs[1][kk * n + j];
            }
        }
    }
    out
}

fn ref_softmax_rows(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
        let s: f64 = exps.iter().sum();
        for c in 0..cols {
            out[r * cols + c] = exps[c] / s;
        }
    }
    out
}

pub const OPS: &[OpSpec] = &[
    OpSpec {
        name: "matmul",
        shapes: &[&[4, 3], &[3, 5]],
        domain: (-2.0, 2.0),
        build: |t, ids| t.matmul(ids[0], ids[1]).unwrap(),
        reference: ref_matmul,
    },
    OpSpec {
        name: "add",
        shapes: &[&[3, 4], &[3, 4]],
        domain: (-2.0, 2.0),
        build: |t, ids| t.add(ids[0], ids[1]).unwrap(),
        reference: |xs| xs[0].iter().zip(xs[1].iter()).map(|(a, b)| a + b).collect(),
    },
    OpSpec {
        name: "sub",
        shapes: &[&[3, 4], &[3, 4]],
        domain: (-2.0, 2.0),
        build: |t, ids| t.sub(ids[0], ids[1]).unwrap(),
        reference: |xs| xs[0].iter().zip(xs[1].iter()).map(|(a, b)| a - b).collect(),
    },
    OpSpec {
        name: "mul",
        shapes: &[&[3, 4], &[3, 4]],
        domain: (-2.0, 2.0),
        build: |t, ids| t.mul(ids[0], ids[1]).unwrap(),
        reference: |xs| xs[0].iter().zip(xs[1].iter()).map(|(a, b)| a * b).collect(),
    },
    OpSpec {
        name: "scale",
        shapes: &[&[3, 4]],
        domain: (-2.0, 2.0),
        build: |t, ids| t.scale(ids[0], 1.7).unwrap(),
        reference: |xs| xs[0].iter().map(|&v| v * 1.7f32 as f64).collect(),
    },
    OpSpec {
        name: "add_scalar",
        shapes: &[&[3, 4]],
        domain: (-2.0, 2.0),
        build: |t, ids| t.add_scalar(ids[0], 0.3).unwrap(),
        reference: |xs| xs[0].iter().map(|&v| v + 0.3f32 as f64).collect(),
    },
    OpSpec {
        name: "sigmoid",
        shapes: &[&[3, 4]],
        domain: (-2.0, 2.0),
        build: |t, ids| t.sigmoid(ids[0]).unwrap(),
        reference: |xs| xs[0].iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect(),
    },
    OpSpec {
        name: "tanh",
        shapes: &[&[3, 4]],
        domain: (-2.0, 2.0),
        build: |t, ids| t.tanh(ids[0]).unwrap(),
        reference: |xs| xs[0].iter().map(|&v| v.tanh()).collect(),
    },
    OpSpec {
        name: "exp",
        shapes: &[&[3, 4]],
        domain: (-2.0, 2.0),
        build: |t, ids| t.exp(ids[0]).unwrap(),
        reference: |xs| xs[0].iter().map(|&v| v.exp()).collect(),
    },
    OpSpec {
        name: "log",
        shapes: &[&[3, 4]],
        domain: (0.5, 2.5),
        build: |t, ids| t.log(ids[0]).unwrap(),
        reference: |xs| xs[0].iter().map(|&v| v.ln()).collect(),
    },
    OpSpec {
        name: "rsqrt",
        shapes: &[&[3, 4]],
        domain: (0.5, 2.5),
        build: |t, ids| t.rsqrt(ids[0]).unwrap(),
        reference: |xs| xs[0].iter().map(|&v| 1.0 / v.sqrt()).collect(),
    },
    OpSpec {
        name: "outer_product",
        shapes: &[&[5], &[4]],
        domain: (-2.0, 2.0),
        build: |t, ids| t.outer(ids[0], ids[1]).unwrap(),
        reference: |xs| {
            let mut out = Vec::with_capacity(20);
            for &a in &xs[0] {
                for &b in &xs[1] {
                    out.push(a * b);
                }
            }
            out
        },
    },
    OpSpec {
        name: "diag_scale",
        shapes: &[&[4], &[4, 3]],
        domain: (-2.0, 2.0),
        build: |t, ids| t.diag_scale(ids[0], ids[1]).unwrap(),
        reference: |xs| {
            (0..4).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| xs[0][i] * xs[1][i * 3 + j]).collect()
        },
    },
    OpSpec {
        name: "col_scale",
        shapes: &[&[3, 4], &[4]],
        domain: (-2.0, 2.0),
        build: |t, ids| t.col_scale(ids[0], ids[1]).unwrap(),
        reference: |xs| {
            (0..3).flat_map(|i| (0..4).map(move |j| (i, j))).map(|(i, j)| xs[0][i * 4 + j] * xs[1][j]).collect()
        },
    },
    OpSpec {
        name: "add_bias",
        shapes: &[&[3, 4], &[4]],
        domain: (-2.0, 2.0),
        build: |t, ids| t.add_bias(ids[0], ids[1]).unwrap(),
        reference: |xs| {
            (0..3).flat_map(|i| (0..4).map(move |j| (i, j))).map(|(i, j)| xs[0][i * 4 + j] + xs[1][j]).collect()
        },
    },
    OpSpec {
        name: "slice_rows",
        shapes: &[&[4, 6]],
        domain: (-2.0, 2.0),
        build: |t, ids| t.slice(ids[0], 0, 1, 2).unwrap(),
        reference: |xs| xs[0][6..18].to_vec(),
    },
    OpSpec {
        name: "slice_cols",
        shapes: &[&[4, 6]],
        domain: (-2.0, 2.0),
        build: |t, ids| t.slice(ids[0], 1, 2, 3).unwrap(),
        reference: |xs| {
            (0..4).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| xs[0][i * 6 + 2 + j]).collect()
        },
    },
    OpSpec {
        name: "concat_rows",
        shapes: &[&[2, 3], &[2, 3], &[1, 3]],
        domain: (-2.0, 2.0),
        build: |t, ids| t.concat(ids, 0).unwrap(),
        reference: |xs| xs.concat(),
    },
    OpSpec {
        name: "concat_cols",
        shapes: &[&[2, 3], &[2, 2]],
        domain: (-2.0, 2.0),
        build: |t, ids| t.concat(ids, 1).unwrap(),
        reference: |xs| {
            let mut out = Vec::new();
            for i in 0..2 {
                out.extend_from_slice(&xs[0][i * 3..(i + 1) * 3]);
                out.extend_from_slice(&xs[1][i * 2..(i + 1) * 2]);
            }
            out
        },
    },
    OpSpec {
        name: "reshape",
        shapes: &[&[3, 4]],
        domain: (-2.0, 2.0),
        build: |t, ids| t.reshape(ids[0], &[2, 6]).unwrap(),
        reference: |xs| xs[0].clone(),
    },
    OpSpec {
        name: "sum",
        shapes: &[&[3, 4]],
        domain: (-2.0, 2.0),
        build: |t, ids| t.sum(ids[0]).unwrap(),
        reference: |xs| vec![xs[0].iter().sum()],
    },
    OpSpec {
        name: "mean",
        shapes: &[&[3, 4]],
        domain: (-2.0, 2.0),
        build: |t, ids| t.mean(ids[0]).unwrap(),
        reference: |xs| vec![xs[0].iter().sum::<f64>() / 12.0],
    },
    OpSpec {
        name: "row_sum",
        shapes: &[&[3, 4]],
        domain: (-2.0, 2.0),
        build: |t, ids| t.row_sum(ids[0]).unwrap(),
        reference: |xs| (0..3).map(|i| xs[0][i * 4..(i + 1) * 4].iter().sum()).collect(),
    },
    OpSpec {
        name: "row_mean",
        shapes: &[&[3, 4]],
        domain: (-2.0, 2.0),
        build: |t, ids| t.row_mean(ids[0]).unwrap(),
        reference: |xs| {
            (0..3).map(|i| xs[0][i * 4..(i + 1) * 4].iter().sum::<f64>() / 4.0).collect()
        },
    },
    OpSpec {
        name: "softmax",
        shapes: &[&[3, 4]],
        domain: (-2.0, 2.0),
        build: |t, ids| t.softmax(ids[0]).unwrap(),
        reference: |xs| ref_softmax_rows(&xs[0], 3, 4),
    },
    OpSpec {
        name: "log_softmax",
        shapes: &[&[3, 4]],
        domain: (-2.0, 2.0),
        build: |t, ids| t.log_softmax(ids[0]).unwrap(),
        reference: |xs| ref_softmax_rows(&xs[0], 3, 4).iter().map(|&p| p.ln()).collect(),
    },
    OpSpec {
        name: "embedding",
        shapes: &[&[6, 4]],
        domain: (-2.0, 2.0),
        build: |t, ids| t.embedding(ids[0], &[2, 0, 5, 2]).unwrap(),
        reference: |xs| {
            [2usize, 0, 5, 2].iter().flat_map(|&r| xs[0][r * 4..(r + 1) * 4].to_vec()).collect()
        },
    },
    OpSpec {
        name: "take_per_row",
        shapes: &[&[4, 5]],
        domain: (-2.0, 2.0),
        build: |t, ids| t.take_per_row(ids[0], &[1, 0, 4, 2]).unwrap(),
        reference: |xs| {
            [1usize, 0, 4, 2].iter().enumerate().map(|(i, &c)| xs[0][i * 5 + c]).collect()
        },
    },
];


/// Runs the whole table once; panics with the op name on failure.
pub fn check_all(seed: u64) {
    for (i, spec) in OPS.iter().enumerate() {
        check(spec, seed + i as u64);
    }
}

pub fn op_count() -> usize {
    OPS.len()
}
