use serde::Serialize;

use super::box_loss::ciou_loss_grad;
use crate::error::{Error, Result};
use crate::geometry::{enclosing_diag_sq, BBox};

/// IoU at which [`fitbox`] stops early.
pub const FIT_IOU_TARGET: f64 = 0.995;
/// A fit has run away once the predicted center is farther from the target
/// center than this many initial enclosing-box diagonals.
pub const FIT_ESCAPE_FACTOR: f64 = 100.0;

/// Parameters and velocity of a momentum SGD optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub theta: Vec<f64>,
    pub velocity: Vec<f64>,
    pub momentum: f64,
    pub learning_rate: f64,
}

impl OptimState {
    /// Fresh state with zero velocity.
    pub fn new(theta: Vec<f64>, momentum: f64, learning_rate: f64) -> Result<Self> {
        let velocity = vec![0.0; theta.len()];
        let s = OptimState {
            theta,
            velocity,
            momentum,
            learning_rate,
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        if self.theta.len() != self.velocity.len() {
            return Err(Error::invalid("theta and velocity lengths differ"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// One update: `V <- beta V + (g + 2 phi theta)`, then `theta <- theta - eta V`.
///
/// The `2 phi theta` term is the gradient of the `phi ||theta||^2` penalty.
pub fn sgd_momentum_step(state: &OptimState, grad: &[f64], weight_decay_phi: f64) -> Result<OptimState> {
    state.validate()?;
    if grad.len() != state.theta.len() {
        return Err(Error::invalid(format!(
            "gradient has {} entries, parameters have {}",
            grad.len(),
            state.theta.len()
        )));
    }
    if let Some(g) = grad.iter().find(|g| !g.is_finite()) {
        return Err(Error::invalid(format!("non-finite gradient entry {g}")));
    }
    let mut next = state.clone();
    for ((v, th), &g) in next.velocity.iter_mut().zip(next.theta.iter_mut()).zip(grad) {
        *v = state.momentum * *v + (g + 2.0 * weight_decay_phi * *th);
        *th -= state.learning_rate * *v;
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitStep {
    pub step: usize,
    pub loss: f64,
    pub iou: f64,
}

/// Drives `init` onto `gt` by minimizing the CIoU loss over the box
/// parameters `(cx, cy, w, h)` with momentum SGD.
///
/// Returns one entry per evaluated step, starting at step 0. Stops when the
/// IoU reaches [`FIT_IOU_TARGET`] or after `max_steps` updates.
///
/// The CIoU loss is bounded, so an oversized step does not blow the loss up;
/// the box flies off instead. [`Error::Diverged`] is returned when the loss
/// or gradient is non-finite, the box gets a non-positive extent, or its
/// center escapes beyond [`FIT_ESCAPE_FACTOR`] initial enclosing diagonals.
pub fn fitbox(init: &BBox, gt: &BBox, eta: f64, beta: f64, max_steps: usize) -> Result<Vec<FitStep>> {
    for b in [init, gt] {
        b.validate()?;
        if b.area() <= 0.0 {
            return Err(Error::invalid(format!("box {b:?} has zero area")));
        }
    }
    let mut state = OptimState::new(vec![init.cx, init.cy, init.w, init.h], beta, eta)?;
    let escape = FIT_ESCAPE_FACTOR * enclosing_diag_sq(init, gt).sqrt();
    let mut trajectory = Vec::new();
    for step in 0..=max_steps {
        let [cx, cy, w, h] = [state.theta[0], state.theta[1], state.theta[2], state.theta[3]];
        let pred = BBox { cx, cy, w, h };
        let dist = (cx - gt.cx).hypot(cy - gt.cy);
        if !(pred.validate().is_ok() && w > 0.0 && h > 0.0 && dist <= escape) {
            return Err(Error::Diverged { step });
        }
        let (loss, grad) = ciou_loss_grad(&pred, gt)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step });
        }
        let iou = pred.iou(gt);
        trajectory.push(FitStep { step, loss, iou });
        if iou >= FIT_IOU_TARGET || step == max_steps {
            break;
        }
        state = sgd_momentum_step(&state, &grad, 0.0)?;
    }
    Ok(trajectory)
}
