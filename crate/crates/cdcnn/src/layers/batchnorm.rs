//! Batch normalization over `(N, T)` per channel.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct BatchNormState {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f32,
    pub eps: f32,
}

impl BatchNormState {
    pub fn new(channels: usize) -> BatchNormState {
        BatchNormState {
            gamma: Tensor::filled(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], 1.0),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        let (n, c, t) = x.dims3("batchnorm input")?;
        if c != self.channels() {
            return Err(Error::ShapeMismatch(format!(
                "batchnorm: input has {} channels, state has {}",
                c,
                self.channels()
            )));
        }
        Ok((n, c, t))
    }

    fn check_running_var(&self) -> Result<()> {
        if self.running_var.data().iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidData(
                "batchnorm: negative running variance".into(),
            ));
        }
        Ok(())
    }
}

/// What backward needs from the training forward pass.
pub struct BnCache {
    pub x_hat: Tensor,
    pub inv_std: Vec<f32>,
}

/// Per-channel batch statistics over `(N, T)`, accumulated in f64.
///
/// Channel tasks run in parallel; each channel's reduction is sequential, so
/// results are independent of the thread count.
fn batch_stats(x: &Tensor, n: usize, c: usize, t: usize) -> (Vec<f64>, Vec<f64>) {
    let count = (n * t) as f64;
    let data = x.data();
    let mut means = vec![0.0f64; c];
    let mut vars = vec![0.0f64; c];
    means
        .par_iter_mut()
        .zip(vars.par_iter_mut())
        .enumerate()
        .for_each(|(ch, (mean, var))| {
            let mut sum = 0.0f64;
            let mut sumsq = 0.0f64;
            for sample in 0..n {
                let row = &data[(sample * c + ch) * t..(sample * c + ch + 1) * t];
                for &v in row {
                    let v = v as f64;
                    sum += v;
                    sumsq += v * v;
                }
            }
            *mean = sum / count;
            *var = (sumsq / count - *mean * *mean).max(0.0);
        });
    (means, vars)
}

/// Training mode: normalize by batch statistics, then update the running
/// statistics in place (unbiased variance, like the usual framework default).
pub fn forward_train(state: &mut BatchNormState, x: &Tensor) -> Result<(Tensor, BnCache)> {
    let (n, c, t) = state.check_input(x)?;
    if n * t < 2 {
        return Err(Error::ShapeMismatch(format!(
            "batchnorm training needs N*T >= 2, got {}*{}",
            n, t
        )));
    }
    state.check_running_var()?;

    let (means, vars) = batch_stats(x, n, c, t);
    let inv_std: Vec<f32> = vars
        .iter()
        .map(|&v| (1.0 / (v + state.eps as f64).sqrt()) as f32)
        .collect();

    let count = (n * t) as f64;
    let momentum = state.momentum as f64;
    for ch in 0..c {
        let rm = state.running_mean.data_mut();
        rm[ch] = ((1.0 - momentum) * rm[ch] as f64 + momentum * means[ch]) as f32;
        let unbiased = vars[ch] * count / (count - 1.0);
        let rv = state.running_var.data_mut();
        rv[ch] = ((1.0 - momentum) * rv[ch] as f64 + momentum * unbiased) as f32;
    }

    let mut x_hat = Tensor::zeros_like(x);
    let mut y = Tensor::zeros_like(x);
    let gamma = state.gamma.data();
    let beta = state.beta.data();
    let data = x.data();
    let means_f32: Vec<f32> = means.iter().map(|&m| m as f32).collect();
    x_hat
        .data_mut()
        .par_chunks_mut(c * t)
        .zip(y.data_mut().par_chunks_mut(c * t))
        .zip(data.par_chunks(c * t))
        .for_each(|((xh_n, y_n), x_n)| {
            for ch in 0..c {
                let (m, s, g, b) = (means_f32[ch], inv_std[ch], gamma[ch], beta[ch]);
                for tt in 0..t {
                    let h = (x_n[ch * t + tt] - m) * s;
                    xh_n[ch * t + tt] = h;
                    y_n[ch * t + tt] = g * h + b;
                }
            }
        });

    Ok((y, BnCache { x_hat, inv_std }))
}

/// Inference mode: normalize by the running statistics.
pub fn forward_infer(state: &BatchNormState, x: &Tensor) -> Result<Tensor> {
    let (_, c, t) = state.check_input(x)?;
    state.check_running_var()?;

    let scale: Vec<f32> = (0..c)
        .map(|ch| {
            state.gamma.data()[ch]
                / (state.running_var.data()[ch] as f64 + state.eps as f64).sqrt() as f32
        })
        .collect();
    let shift: Vec<f32> = (0..c)
        .map(|ch| state.beta.data()[ch] - scale[ch] * state.running_mean.data()[ch])
        .collect();

    let mut y = Tensor::zeros_like(x);
    y.data_mut()
        .par_chunks_mut(c * t)
        .zip(x.data().par_chunks(c * t))
        .for_each(|(y_n, x_n)| {
            for ch in 0..c {
                for tt in 0..t {
                    y_n[ch * t + tt] = scale[ch] * x_n[ch * t + tt] + shift[ch];
                }
            }
        });
    Ok(y)
}

/// Gradients through the training-mode normalization.
pub fn backward(
    state: &BatchNormState,
    cache: &BnCache,
    grad_y: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c, t) = state.check_input(grad_y)?;
    if !grad_y.same_shape(&cache.x_hat) {
        return Err(Error::ShapeMismatch(format!(
            "batchnorm backward: grad_y {:?} vs cache {:?}",
            grad_y.shape(),
            cache.x_hat.shape()
        )));
    }
    let m = (n * t) as f64;
    let g = grad_y.data();
    let xh = cache.x_hat.data();
    let gamma = state.gamma.data();

    // Per-channel sums of grad_y and grad_y * x_hat.
    let mut sum_g = vec![0.0f64; c];
    let mut sum_gx = vec![0.0f64; c];
    sum_g
        .par_iter_mut()
        .zip(sum_gx.par_iter_mut())
        .enumerate()
        .for_each(|(ch, (sg, sgx))| {
            for sample in 0..n {
                let base = (sample * c + ch) * t;
                for tt in 0..t {
                    let gv = g[base + tt] as f64;
                    *sg += gv;
                    *sgx += gv * xh[base + tt] as f64;
                }
            }
        });

    let mut grad_x = Tensor::zeros_like(grad_y);
    grad_x
        .data_mut()
        .par_chunks_mut(c * t)
        .enumerate()
        .for_each(|(sample, gx_n)| {
            for ch in 0..c {
                let gscale = gamma[ch] as f64 * cache.inv_std[ch] as f64;
                let base = (sample * c + ch) * t;
                for tt in 0..t {
                    let gv = g[base + tt] as f64;
                    let hv = xh[base + tt] as f64;
                    gx_n[ch * t + tt] =
                        (gscale * (gv - sum_g[ch] / m - hv * sum_gx[ch] / m)) as f32;
                }
            }
        });

    let grad_gamma =
        Tensor::from_vec(&[c], sum_gx.iter().map(|&v| v as f32).collect()).unwrap();
    let grad_beta = Tensor::from_vec(&[c], sum_g.iter().map(|&v| v as f32).collect()).unwrap();
    Ok((grad_x, grad_gamma, grad_beta))
}
