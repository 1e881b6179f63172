//! Detection losses with analytic gradients, and the momentum SGD update.
//!
//! Everything here works on plain `f64` slices; there is no autodiff. Each
//! loss has a `*_grad` companion that the [`crate::gradcheck`] module checks
//! against central finite differences.

mod box_loss;
mod classification;
mod composite;
mod dfl;
mod optim;
mod yolov1;
pub(crate) use yolov1::responsible_margin;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use box_loss::{ciou_loss, ciou_loss_grad};
pub use classification::{bce_loss, bce_loss_grad, sigmoid};
pub use composite::{
    composite_loss, composite_loss_grad, CellGrad, CellPrediction, CellTarget, LossReport,
    ObjectTarget,
};
pub use dfl::{dfl_loss, dfl_loss_grad, log_softmax, softmax};
pub use optim::{
    fitbox, sgd_momentum_step, FitStep, OptimState, FIT_ESCAPE_FACTOR, FIT_IOU_TARGET,
};
pub use yolov1::{
    encode_yolov1_target, yolov1_loss, yolov1_loss_grad, Yolo1Config, Yolo1Loss, Yolo1Object,
    Yolo1Target,
};

/// Momentum used for training the reference detector.
pub const DEFAULT_MOMENTUM: f64 = 0.937;
/// Weight decay `phi` of the L2 regularizer.
pub const DEFAULT_WEIGHT_DECAY: f64 = 0.01;
pub const DEFAULT_LAMBDA_BOX: f64 = 5.5;
pub const DEFAULT_LAMBDA_CLS: f64 = 1.0;
pub const DEFAULT_LAMBDA_DFL: f64 = 2.5;
/// Largest distance-bin index of the DFL distribution.
pub const DEFAULT_REG_MAX: usize = 16;
pub const MAX_REG_MAX: usize = 64;

/// Per-term weights of the composite loss plus the weight-decay coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_box: f64,
    pub lambda_cls: f64,
    pub lambda_dfl: f64,
    pub weight_decay_phi: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_box: DEFAULT_LAMBDA_BOX,
            lambda_cls: DEFAULT_LAMBDA_CLS,
            lambda_dfl: DEFAULT_LAMBDA_DFL,
            weight_decay_phi: DEFAULT_WEIGHT_DECAY,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_box", self.lambda_box),
            ("lambda_cls", self.lambda_cls),
            ("lambda_dfl", self.lambda_dfl),
            ("weight_decay_phi", self.weight_decay_phi),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}
