use crate::error::{Error, Result};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-log(sigmoid(x))` for label 1, `-log(1 - sigmoid(x))` for label 0,
/// written as `max(x, 0) - x*y + log(1 + exp(-|x|))`.
#[inline]
fn bce_single(logit: f64, label: f64) -> f64 {
    logit.max(0.0) - logit * label + (-logit.abs()).exp().ln_1p()
}

fn check(class_logits: &[f64], labels: &[f64]) -> Result<()> {
    if class_logits.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} class logits but {} labels",
            class_logits.len(),
            labels.len()
        )));
    }
    if let Some(x) = class_logits.iter().find(|x| !x.is_finite()) {
        return Err(Error::invalid(format!("non-finite class logit {x}")));
    }
    if let Some(y) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::invalid(format!("class label {y} is not binary")));
    }
    Ok(())
}

/// Multi-label binary cross entropy summed over classes.
pub fn bce_loss(class_logits: &[f64], labels: &[f64]) -> Result<f64> {
    check(class_logits, labels)?;
    Ok(class_logits
        .iter()
        .zip(labels)
        .map(|(&x, &y)| bce_single(x, y))
        .sum())
}

/// Gradient of [`bce_loss`] with respect to each logit: `sigmoid(x) - y`.
pub fn bce_loss_grad(class_logits: &[f64], labels: &[f64]) -> Result<Vec<f64>> {
    check(class_logits, labels)?;
    Ok(class_logits
        .iter()
        .zip(labels)
        .map(|(&x, &y)| sigmoid(x) - y)
        .collect())
}
