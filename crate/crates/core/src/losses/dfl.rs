//! Distribution focal loss over the distance bins of one box side.

use crate::error::{Error, Result};

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Left bin index and the weights of the two bins bracketing `target`.
fn bracket(side_logits: &[f64], target: f64) -> Result<(usize, f64, f64)> {
    if side_logits.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 distance bins, got {}",
            side_logits.len()
        )));
    }
    if let Some(z) = side_logits.iter().find(|z| !z.is_finite()) {
        return Err(Error::invalid(format!("non-finite distance logit {z}")));
    }
    let reg_max = (side_logits.len() - 1) as f64;
    if !(0.0..=reg_max).contains(&target) {
        return Err(Error::invalid(format!(
            "DFL target {target} outside [0, {reg_max}]"
        )));
    }
    // the last bin has no right neighbour, so t == reg_max uses (reg_max-1, reg_max)
    let left = (target.floor() as usize).min(side_logits.len() - 2);
    let w_right = target - left as f64;
    let w_left = 1.0 - w_right;
    Ok((left, w_left, w_right))
}

/// `-(i+1 - t) log S_i - (t - i) log S_{i+1}` with `i = floor(t)` and
/// `S = softmax(side_logits)`. Integer targets reduce to `-log S_t`.
pub fn dfl_loss(side_logits: &[f64], target: f64) -> Result<f64> {
    let (i, wl, wr) = bracket(side_logits, target)?;
    let ls = log_softmax(side_logits);
    let mut loss = 0.0;
    if wl > 0.0 {
        loss -= wl * ls[i];
    }
    if wr > 0.0 {
        loss -= wr * ls[i + 1];
    }
    Ok(loss)
}

/// Gradient of [`dfl_loss`] with respect to the logits: `S_j - w_j`.
pub fn dfl_loss_grad(side_logits: &[f64], target: f64) -> Result<Vec<f64>> {
    let (i, wl, wr) = bracket(side_logits, target)?;
    let mut g = softmax(side_logits);
    g[i] -= wl;
    g[i + 1] -= wr;
    Ok(g)
}
