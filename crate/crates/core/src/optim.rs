//! Per-image parameter updates and the training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::pipeline::{mix_seed, segment, PipelineConfig};
use crate::recon::{backward, loss, sgd_step, Gradients, ReconModel};

/// Update rule applied after every image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    /// `theta <- theta - lr * grad`.
    Sgd,
    /// Bias-corrected moment estimates scale each coordinate's step.
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Optimizer::Adam { beta1, beta2, eps } = *self {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return Err(Error::InvalidValue {
                    what: "adam",
                    reason: format!("beta1 {beta1} and beta2 {beta2} must lie in [0, 1), eps {eps} must be positive"),
                });
            }
        }
        Ok(())
    }
}

/// A model together with its optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer {
    model: ReconModel,
    optimizer: Optimizer,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: i32,
}

impl Trainer {
    pub fn new(model: ReconModel, optimizer: Optimizer) -> Self {
        let n = model.num_params();
        Self {
            model,
            optimizer,
            first: vec![0.0; n],
            second: vec![0.0; n],
            steps: 0,
        }
    }

    pub fn model(&self) -> &ReconModel {
        &self.model
    }

    pub fn into_model(self) -> ReconModel {
        self.model
    }

    pub fn step(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        self.optimizer.validate()?;
        match self.optimizer {
            Optimizer::Sgd => self.model = sgd_step(&self.model, grads, lr)?,
            Optimizer::Adam { beta1, beta2, eps } => {
                if grads.0.len() != self.model.num_params() {
                    return Err(Error::InvalidValue {
                        what: "gradients",
                        reason: format!("{} entries for {} parameters", grads.0.len(), self.model.num_params()),
                    });
                }
                if grads.0.iter().any(|g| !g.is_finite()) {
                    return Err(Error::NonFinite("gradient"));
                }
                self.steps += 1;
                let c1 = 1.0 - beta1.powi(self.steps);
                let c2 = 1.0 - beta2.powi(self.steps);
                let params = self.model.params_mut();
                for (k, g) in grads.0.iter().enumerate() {
                    self.first[k] = beta1 * self.first[k] + (1.0 - beta1) * g;
                    self.second[k] = beta2 * self.second[k] + (1.0 - beta2) * g * g;
                    params[k] -= lr * (self.first[k] / c1) / ((self.second[k] / c2).sqrt() + eps);
                }
            }
        }
        Ok(())
    }

    /// One seeded-shuffled pass: segment, evaluate the loss, back-propagate
    /// and update after every image. Returns the mean loss.
    pub fn epoch(&mut self, dataset: &[Image], cfg: &PipelineConfig, lr: f64, seed: u64) -> Result<f64> {
        if dataset.is_empty() {
            return Err(Error::InvalidValue {
                what: "dataset",
                reason: "no images".into(),
            });
        }
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut total = 0.0;
        for (step, &idx) in order.iter().enumerate() {
            let x = &dataset[idx];
            let d = segment(&self.model, x, cfg, mix_seed(seed, step as u64))?;
            let value = loss(&d, x, &cfg.loss)?.total;
            if !value.is_finite() {
                return Err(Error::NonFinite("loss"));
            }
            let grads = backward(&self.model, x, &d, &cfg.loss)?;
            self.step(&grads, lr)?;
            total += value;
        }
        Ok(total / dataset.len() as f64)
    }
}
