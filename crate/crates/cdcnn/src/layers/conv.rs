//! Circular dilated 1D convolution.
//!
//! The circular pad of `d*(k-1)/2` per side keeps the output length equal to
//! the input length, so every tap index is taken modulo `T`:
//!
//! `y[n,o,t] = sum_{c,j} w[o,c,j] * x[n,c,(t + (j-(k-1)/2)*d) mod T]`
//!
//! There is no bias term; every conv here is followed by batch normalization,
//! which absorbs it.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub dilation: usize,
}

impl ConvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidConfig("conv: channel counts must be > 0".into()));
        }
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "conv: kernel size must be odd (symmetric circular pad), got {}",
                self.kernel_size
            )));
        }
        if self.dilation == 0 {
            return Err(Error::InvalidConfig("conv: dilation must be >= 1".into()));
        }
        Ok(())
    }

    /// Circular pad per side; also the reach of the kernel from its center.
    pub fn pad_per_side(&self) -> usize {
        self.dilation * (self.kernel_size - 1) / 2
    }

    /// Spans covered by the kernel footprint: `d*(k-1) + 1`.
    pub fn footprint(&self) -> usize {
        self.dilation * (self.kernel_size - 1) + 1
    }

    fn check_shapes(&self, x: &Tensor, weights: &Tensor) -> Result<(usize, usize)> {
        let (n, c_in, t) = x.dims3("conv input")?;
        let (w_out, w_in, w_k) = weights.dims3("conv weights")?;
        if c_in != self.in_channels || w_in != self.in_channels || w_out != self.out_channels
            || w_k != self.kernel_size
        {
            return Err(Error::ShapeMismatch(format!(
                "conv: input {:?} / weights {:?} do not match spec {:?}",
                x.shape(),
                weights.shape(),
                self
            )));
        }
        if t <= self.dilation * (self.kernel_size - 1) {
            return Err(Error::ShapeMismatch(format!(
                "conv: T={} too short for kernel footprint {} (k={}, d={})",
                t,
                self.footprint(),
                self.kernel_size,
                self.dilation
            )));
        }
        Ok((n, t))
    }
}

/// `y[t] += w * x[(t + shift) mod T]`, with `x` and `y` the same length.
///
/// The wrap splits the loop into two contiguous passes, which keeps the inner
/// loops vectorizable.
#[inline]
fn axpy_rotated(y: &mut [f32], x: &[f32], w: f32, shift: isize) {
    let t = y.len();
    let s = shift.rem_euclid(t as isize) as usize;
    let (y_head, y_tail) = y.split_at_mut(t - s);
    for (yv, xv) in y_head.iter_mut().zip(&x[s..]) {
        *yv += w * xv;
    }
    for (yv, xv) in y_tail.iter_mut().zip(&x[..s]) {
        *yv += w * xv;
    }
}

/// Dot product with eight independent accumulators combined in a fixed
/// order: vectorizable without changing results between runs.
#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    const LANES: usize = 8;
    let mut acc = [0.0f32; LANES];
    let mut a_chunks = a.chunks_exact(LANES);
    let mut b_chunks = b.chunks_exact(LANES);
    for (av, bv) in (&mut a_chunks).zip(&mut b_chunks) {
        for lane in 0..LANES {
            acc[lane] += av[lane] * bv[lane];
        }
    }
    let mut tail = 0.0f32;
    for (av, bv) in a_chunks.remainder().iter().zip(b_chunks.remainder()) {
        tail += av * bv;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `sum_t a[t] * x[(t + shift) mod T]`.
#[inline]
fn dot_rotated(a: &[f32], x: &[f32], shift: isize) -> f32 {
    let t = a.len();
    let s = shift.rem_euclid(t as isize) as usize;
    dot(&a[..t - s], &x[s..]) + dot(&a[t - s..], &x[..s])
}

pub fn forward(x: &Tensor, weights: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    spec.validate()?;
    let (n, t) = spec.check_shapes(x, weights)?;
    let (c_in, c_out, k) = (spec.in_channels, spec.out_channels, spec.kernel_size);
    let center = (k - 1) / 2;
    let dilation = spec.dilation as isize;
    let mut y = Tensor::zeros(&[n, c_out, t]);

    let w = weights.data();
    let x_data = x.data();
    // Samples are independent; reductions stay inside one task, so the result
    // does not depend on the thread count.
    y.data_mut()
        .par_chunks_mut(c_out * t)
        .zip(x_data.par_chunks(c_in * t))
        .for_each(|(y_n, x_n)| {
            for o in 0..c_out {
                let y_no = &mut y_n[o * t..(o + 1) * t];
                for c in 0..c_in {
                    let x_nc = &x_n[c * t..(c + 1) * t];
                    for j in 0..k {
                        let tap = w[(o * c_in + c) * k + j];
                        let shift = (j as isize - center as isize) * dilation;
                        axpy_rotated(y_no, x_nc, tap, shift);
                    }
                }
            }
        });
    Ok(y)
}

/// Gradients of [`forward`] with respect to the input and the weights.
pub fn backward(
    grad_y: &Tensor,
    x: &Tensor,
    weights: &Tensor,
    spec: &ConvSpec,
) -> Result<(Tensor, Tensor)> {
    spec.validate()?;
    let (n, t) = spec.check_shapes(x, weights)?;
    if grad_y.shape() != [n, spec.out_channels, t] {
        return Err(Error::ShapeMismatch(format!(
            "conv backward: grad_y {:?}, expected {:?}",
            grad_y.shape(),
            [n, spec.out_channels, t]
        )));
    }
    let (c_in, c_out, k) = (spec.in_channels, spec.out_channels, spec.kernel_size);
    let center = (k - 1) / 2;
    let dilation = spec.dilation as isize;
    let w = weights.data();
    let g = grad_y.data();
    let x_data = x.data();

    // grad_x[n,c,s] = sum_{o,j} w[o,c,j] * grad_y[n,o,(s - shift_j) mod T]
    // grad_w[o,c,j] = sum_{n,t} grad_y[n,o,t] * x[n,c,(t + shift_j) mod T]
    //
    // One sample-major pass keeps the working set cache-resident; each task
    // returns its sample's grad_w contribution, and those are summed in
    // sample order afterwards, so the result is thread-count independent.
    let mut grad_x = Tensor::zeros(&[n, c_in, t]);
    let partials: Vec<Vec<f32>> = grad_x
        .data_mut()
        .par_chunks_mut(c_in * t)
        .enumerate()
        .map(|(sample, gx_n)| {
            let g_n = &g[sample * c_out * t..(sample + 1) * c_out * t];
            let x_n = &x_data[sample * c_in * t..(sample + 1) * c_in * t];
            let mut gw = vec![0.0f32; c_out * c_in * k];
            for o in 0..c_out {
                let g_no = &g_n[o * t..(o + 1) * t];
                for c in 0..c_in {
                    let x_nc = &x_n[c * t..(c + 1) * t];
                    let gx_nc = &mut gx_n[c * t..(c + 1) * t];
                    for j in 0..k {
                        let tap = w[(o * c_in + c) * k + j];
                        let shift = (j as isize - center as isize) * dilation;
                        axpy_rotated(gx_nc, g_no, tap, -shift);
                        gw[(o * c_in + c) * k + j] += dot_rotated(g_no, x_nc, shift);
                    }
                }
            }
            gw
        })
        .collect();

    let mut grad_w = Tensor::zeros(&[c_out, c_in, k]);
    let gw = grad_w.data_mut();
    for partial in &partials {
        for (acc, v) in gw.iter_mut().zip(partial) {
            *acc += v;
        }
    }

    Ok((grad_x, grad_w))
}
