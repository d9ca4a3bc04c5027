//! Textbook stacked LSTM baseline with dropout between layers.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::HostTensor;
use crate::tensor::{Tape, TensorId};

/// One LSTM layer: fused input/forget/cell/output projections plus bias.
#[derive(Debug, Clone)]
pub struct LstmLayerParams {
    /// [input_dim, 4H] — gate order i, f, g, o.
    pub wx: HostTensor,
    /// [H, 4H]
    pub wh: HostTensor,
    /// [4H]
    pub bias: HostTensor,
}

impl LstmLayerParams {
    pub fn init(input_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        LstmLayerParams {
            wx: HostTensor::uniform(&[input_dim, 4 * hidden], input_dim, rng),
            wh: HostTensor::uniform(&[hidden, 4 * hidden], hidden, rng),
            bias: HostTensor::zeros(&[4 * hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.wh.shape[0]
    }

    pub fn named(&self) -> Vec<(&'static str, &HostTensor)> {
        vec![("wx", &self.wx), ("wh", &self.wh), ("bias", &self.bias)]
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut HostTensor)> {
        vec![("wx", &mut self.wx), ("wh", &mut self.wh), ("bias", &mut self.bias)]
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<Vec<TensorId>> {
        self.named()
            .into_iter()
            .map(|(_, t)| tape.param(&t.shape, t.data.clone()))
            .collect()
    }

    /// Standard LSTM sweep over x [T, input_dim], returning hidden rows [T, H].
    pub fn forward(
        &self,
        tape: &mut Tape,
        ids: &[TensorId],
        x: TensorId,
        state: &mut LstmState,
    ) -> Result<TensorId> {
        let [wx, wh, bias] = ids else {
            return Err(Error::Usage("lstm layer expects 3 parameter ids".into()));
        };
        let hidden = self.hidden();
        let t_len = tape.shape(x)[0];

        // Input contributions for the whole sequence at once.
        let xp = tape.matmul(x, *wx)?; // [T, 4H]
        let mut h = tape.constant(&[1, hidden], state.h.clone())?;
        let mut c = tape.constant(&[1, hidden], state.c.clone())?;
        let mut rows = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let x_t = tape.slice(xp, 0, t, 1)?; // [1, 4H]
            let h_t = tape.matmul(h, *wh)?;
            let z = tape.add(x_t, h_t)?;
            let z = tape.add_bias(z, *bias)?;
            let i_gate = tape.slice(z, 1, 0, hidden)?;
            let i_gate = tape.sigmoid(i_gate)?;
            let f_gate = tape.slice(z, 1, hidden, hidden)?;
            let f_gate = tape.sigmoid(f_gate)?;
            let g_cell = tape.slice(z, 1, 2 * hidden, hidden)?;
            let g_cell = tape.tanh(g_cell)?;
            let o_gate = tape.slice(z, 1, 3 * hidden, hidden)?;
            let o_gate = tape.sigmoid(o_gate)?;
            let kept = tape.mul(f_gate, c)?;
            let written = tape.mul(i_gate, g_cell)?;
            c = tape.add(kept, written)?;
            let c_act = tape.tanh(c)?;
            h = tape.mul(o_gate, c_act)?;
            rows.push(h);
        }
        state.h = tape.data(h).to_vec();
        state.c = tape.data(c).to_vec();
        tape.concat(&rows, 0)
    }
}

/// Hidden and cell vectors for one layer.
#[derive(Debug, Clone)]
pub struct LstmState {
    pub h: Vec<f32>,
    pub c: Vec<f32>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState { h: vec![0.0; hidden], c: vec![0.0; hidden] }
    }

    pub fn reset(&mut self) {
        self.h.iter_mut().for_each(|v| *v = 0.0);
        self.c.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Inverted dropout as an elementwise product with a host-generated mask.
pub fn dropout(tape: &mut Tape, x: TensorId, p: f32, rng: &mut ChaCha8Rng) -> Result<TensorId> {
    let shape = tape.shape(x).to_vec();
    let keep = 1.0 - p;
    let mask: Vec<f32> = (0..tape.data(x).len())
        .map(|_| if rng.gen::<f32>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    let mask = tape.constant(&shape, mask)?;
    tape.mul(x, mask)
}
