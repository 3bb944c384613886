//! Stochastic gradient descent with a heavy-ball momentum buffer.

use crate::error::{Error, Result};
use crate::model::textcnn::{TextCnn, TextCnnParams};

/// `v ← μ·v + g`, `θ ← θ − τ·v`. The first step initializes `v = g`.
#[derive(Debug, Clone)]
pub struct Sgd {
    lr: f64,
    momentum: f64,
    velocity: Option<TextCnnParams>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::config(format!("learning rate {lr} must be finite and >= 0")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::config(format!("momentum {momentum} outside [0, 1)")));
        }
        Ok(Self {
            lr,
            momentum,
            velocity: None,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn step(&mut self, model: &mut TextCnn, grads: &TextCnnParams) -> Result<()> {
        if !grads.all_finite() {
            return Err(Error::NonFinite("gradient passed to sgd step".into()));
        }
        match &mut self.velocity {
            None => self.velocity = Some(grads.clone()),
            Some(v) => {
                v.scale_in_place(self.momentum);
                v.axpy(1.0, grads)?;
            }
        }
        if self.lr == 0.0 {
            return Ok(());
        }
        let v = self.velocity.as_ref().expect("set above");
        let params = model.params_mut();
        params.axpy(-self.lr, v)?;
        let d = params.embedding.row_len();
        params.embedding.data_mut()[..d].fill(0.0);
        Ok(())
    }
}
