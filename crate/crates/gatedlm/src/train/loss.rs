//! Training objectives: next-token cross-entropy, the distillation KL term,
//! and their affine blend.

use crate::error::{Error, Result};
use crate::tensor::{kernels, Tape, TensorId, MASK_IGNORE};

/// Mean negative log-probability (nats) of `targets` under `logits` [T, V].
/// Targets are the inputs shifted by one; positions set to
/// [`MASK_IGNORE`] are excluded from the mean.
pub fn ce_loss(tape: &mut Tape, logits: TensorId, targets: &[u32]) -> Result<TensorId> {
    let t_len = tape.shape(logits)[0];
    if targets.len() != t_len {
        return Err(Error::Dimension(format!(
            "ce_loss: {} targets for {} logit rows",
            targets.len(),
            t_len
        )));
    }
    let valid = targets.iter().filter(|&&t| t != MASK_IGNORE).count();
    if valid == 0 {
        return Err(Error::Usage("ce_loss: all positions masked".into()));
    }
    let logp = tape.log_softmax(logits)?;
    let picked = tape.take_per_row(logp, targets)?;
    let total = tape.sum(picked)?;
    tape.scale(total, -1.0 / valid as f32)
}

/// KL(softmax(z_t / tau) || softmax(z_s / tau)), averaged over token
/// positions. Teacher logits are host data: constants on the tape, so the
/// gradient flows to the student only.
pub fn kd_loss(
    tape: &mut Tape,
    teacher_logits: &[f32],
    student_logits: TensorId,
    tau: f32,
) -> Result<TensorId> {
    if tau <= 0.0 {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let shape = tape.shape(student_logits).to_vec();
    if shape.len() != 2 {
        return Err(Error::Dimension("kd_loss expects [T, V] student logits".into()));
    }
    let (rows, cols) = (shape[0], shape[1]);
    if teacher_logits.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "kd_loss: teacher has {} values, student is {rows}x{cols}",
            teacher_logits.len()
        )));
    }

    // Teacher side on the host, through the same scale + log-softmax kernels
    // the student path uses, so identical logits give exactly zero.
    let inv_tau = 1.0 / tau;
    let scaled: Vec<f32> = teacher_logits.iter().map(|&v| v * inv_tau).collect();
    let mut t_logp = vec![0.0f32; rows * cols];
    kernels::log_softmax_rows(&scaled, &mut t_logp, rows, cols);
    let t_prob: Vec<f32> = t_logp.iter().map(|&lp| lp.exp()).collect();
    let t_logp = tape.constant(&[rows, cols], t_logp)?;
    let t_prob = tape.constant(&[rows, cols], t_prob)?;

    let s_scaled = tape.scale(student_logits, inv_tau)?;
    let s_logp = tape.log_softmax(s_scaled)?;
    let diff = tape.sub(t_logp, s_logp)?;
    let contrib = tape.mul(t_prob, diff)?;
    let per_row = tape.row_sum(contrib)?;
    tape.mean(per_row)
}

/// (1 - alpha) * ce + alpha * kd. The endpoints return the input tensor
/// itself, so the identities hold bit-exactly.
pub fn total_loss(tape: &mut Tape, ce: TensorId, kd: TensorId, alpha: f32) -> Result<TensorId> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must be in [0, 1], got {alpha}")));
    }
    if alpha == 0.0 {
        return Ok(ce);
    }
    if alpha == 1.0 {
        return Ok(kd);
    }
    let ce_part = tape.scale(ce, 1.0 - alpha)?;
    let kd_part = tape.scale(kd, alpha)?;
    tape.add(ce_part, kd_part)
}
