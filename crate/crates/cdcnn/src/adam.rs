//! Adam optimizer with bias correction.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct AdamState {
    lr: f32,
    beta1: f32,
    beta2: f32,
    epsilon: f32,
    /// Step counter; incremented once per `step`.
    t: u64,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
}

impl AdamState {
    /// Moments start at zero, shaped like `params`. beta1/beta2/epsilon are
    /// the canonical 0.9 / 0.999 / 1e-8.
    pub fn new(lr: f32, params: &[&Tensor]) -> AdamState {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            first_moment: params.iter().map(|p| Tensor::zeros_like(p)).collect(),
            second_moment: params.iter().map(|p| Tensor::zeros_like(p)).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn lr(&self) -> f32 {
        self.lr
    }

    /// One Adam update over every (param, grad) pair. `names` label the
    /// parameters in error messages.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[&Tensor],
        names: &[&str],
    ) -> Result<()> {
        if params.len() != grads.len()
            || params.len() != names.len()
            || params.len() != self.first_moment.len()
        {
            return Err(Error::ShapeMismatch(format!(
                "adam step: {} params, {} grads, {} names, state for {}",
                params.len(),
                grads.len(),
                names.len(),
                self.first_moment.len()
            )));
        }
        for ((param, grad), name) in params.iter().zip(grads).zip(names) {
            if !param.same_shape(grad) {
                return Err(Error::ShapeMismatch(format!(
                    "adam step: param \"{}\" has shape {:?} but grad has {:?}",
                    name,
                    param.shape(),
                    grad.shape()
                )));
            }
            grad.check_finite(&format!("gradient of \"{name}\""))?;
        }

        self.t += 1;
        let bias1 = 1.0 - (self.beta1 as f64).powi(self.t as i32);
        let bias2 = 1.0 - (self.beta2 as f64).powi(self.t as i32);
        let inv_bias1 = (1.0 / bias1) as f32;
        let inv_bias2 = (1.0 / bias2) as f32;

        for (i, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            let p = param.data_mut();
            let g = grad.data();
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] * inv_bias1;
                let v_hat = v[j] * inv_bias2;
                p[j] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
