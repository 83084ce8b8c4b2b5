use ndarray::Zip;

use super::{Gradients, Mlp};
use crate::error::Result;

/// Adam with bias correction. The L2 penalty is part of the loss handed to
/// [`Mlp::grad_params`]; `l2_weight` is carried here so a training job has a
/// single source for it.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: Gradients,
    pub second_moment: Gradients,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub l2_weight: f64,
}

impl AdamState {
    pub fn new(model: &Mlp, learning_rate: f64, l2_weight: f64) -> Self {
        AdamState {
            step: 0,
            first_moment: Gradients::zeros_like(model),
            second_moment: Gradients::zeros_like(model),
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            l2_weight,
        }
    }

    pub fn step(&mut self, model: &mut Mlp, grads: &Gradients) -> Result<()> {
        grads.check_shape(model)?;
        self.first_moment.check_shape(model)?;
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let lr = self.learning_rate;

        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };

        for l in 0..model.weights.len() {
            Zip::from(&mut model.weights[l])
                .and(&mut self.first_moment.weights[l])
                .and(&mut self.second_moment.weights[l])
                .and(&grads.weights[l])
                .for_each(|p, m, v, &g| update(p, m, v, g));
            Zip::from(&mut model.biases[l])
                .and(&mut self.first_moment.biases[l])
                .and(&mut self.second_moment.biases[l])
                .and(&grads.biases[l])
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
        Ok(())
    }
}
