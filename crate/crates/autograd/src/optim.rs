use crate::error::{AutogradError, Result};
use crate::param::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub lr_decay_per_epoch: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.3,
            lr_decay_per_epoch: 0.95,
            weight_decay: 0.001,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.lr_decay_per_epoch > 0.0
            && self.lr_decay_per_epoch <= 1.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(AutogradError::InvalidArgument {
                op: "sgd",
                msg: format!("invalid config {self:?}"),
            })
        }
    }

    /// Learning rate used during zero-based epoch `epoch`.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay_per_epoch.powi(epoch as i32)
    }
}

/// `p <- p - lr * (grad + weight_decay * p)` for every parameter, then
/// clears the gradients. Fails before touching anything if a gradient is
/// missing.
pub fn sgd_step(params: &mut ParamStore, lr: f64, weight_decay: f64) -> Result<()> {
    if let Some(p) = params.iter().find(|p| p.grad.is_none()) {
        return Err(AutogradError::MissingGrad(p.name.clone()));
    }
    for p in params.params_mut() {
        let grad = p.grad.take().expect("checked above");
        let t = std::sync::Arc::make_mut(&mut p.tensor);
        for (w, g) in t.data_mut().iter_mut().zip(grad.data()) {
            *w -= lr * (g + weight_decay * *w);
        }
    }
    Ok(())
}
