//! Global average pooling over the time axis: `(N, C, T) -> (N, C)`.

use crate::error::Result;
use crate::tensor::Tensor;

/// Means are accumulated in f64 so that circular shifts of the input change
/// the result by less than f32 resolution.
pub fn forward(x: &Tensor) -> Result<Tensor> {
    let (n, c, t) = x.dims3("gap input")?;
    let mut y = Tensor::zeros(&[n, c]);
    let data = x.data();
    for sample in 0..n {
        for ch in 0..c {
            let row = &data[(sample * c + ch) * t..(sample * c + ch + 1) * t];
            let sum: f64 = row.iter().map(|&v| v as f64).sum();
            y.set2(sample, ch, (sum / t as f64) as f32);
        }
    }
    Ok(y)
}

/// `grad_x[n,c,t] = grad_y[n,c] / T`.
pub fn backward(grad_y: &Tensor, time_steps: usize) -> Result<Tensor> {
    let (n, c) = grad_y.dims2("gap grad")?;
    let mut grad_x = Tensor::zeros(&[n, c, time_steps]);
    let inv_t = 1.0 / time_steps as f32;
    let gx = grad_x.data_mut();
    for sample in 0..n {
        for ch in 0..c {
            let g = grad_y.at2(sample, ch) * inv_t;
            let base = (sample * c + ch) * time_steps;
            gx[base..base + time_steps].fill(g);
        }
    }
    Ok(grad_x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_pools_to_the_constant() {
        let x = Tensor::filled(&[2, 3, 7], 2.5);
        let y = forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        assert!(y.data().iter().all(|&v| (v - 2.5).abs() < 1e-6));
    }

    #[test]
    fn backward_spreads_the_mean_gradient() {
        let g = Tensor::from_vec(&[1, 2], vec![4.0, -8.0]).unwrap();
        let gx = backward(&g, 4).unwrap();
        assert_eq!(gx.shape(), &[1, 2, 4]);
        for t in 0..4 {
            assert_eq!(gx.at3(0, 0, t), 1.0);
            assert_eq!(gx.at3(0, 1, t), -2.0);
        }
    }
}
