//! Fully connected layer `y = x W^T + b` with `x: (N, D)`, `W: (K, D)`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_shapes(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize)> {
    let (n, d) = x.dims2("linear input")?;
    let (k, wd) = weight.dims2("linear weight")?;
    if wd != d || bias.shape() != [k] {
        return Err(Error::ShapeMismatch(format!(
            "linear: x {:?}, weight {:?}, bias {:?}",
            x.shape(),
            weight.shape(),
            bias.shape()
        )));
    }
    Ok((n, d, k))
}

pub fn forward(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, d, k) = check_shapes(x, weight, bias)?;
    let mut y = Tensor::zeros(&[n, k]);
    for sample in 0..n {
        let x_row = &x.data()[sample * d..(sample + 1) * d];
        for out in 0..k {
            let w_row = &weight.data()[out * d..(out + 1) * d];
            let mut acc = bias.data()[out] as f64;
            for (wv, xv) in w_row.iter().zip(x_row) {
                acc += *wv as f64 * *xv as f64;
            }
            y.set2(sample, out, acc as f32);
        }
    }
    Ok(y)
}

pub fn backward(
    grad_y: &Tensor,
    x: &Tensor,
    weight: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, d) = x.dims2("linear input")?;
    let (k, _) = weight.dims2("linear weight")?;
    if grad_y.shape() != [n, k] {
        return Err(Error::ShapeMismatch(format!(
            "linear backward: grad_y {:?}, expected {:?}",
            grad_y.shape(),
            [n, k]
        )));
    }
    let mut grad_x = Tensor::zeros(&[n, d]);
    let mut grad_w = Tensor::zeros(&[k, d]);
    let mut grad_b = Tensor::zeros(&[k]);
    for sample in 0..n {
        let x_row = &x.data()[sample * d..(sample + 1) * d];
        for out in 0..k {
            let g = grad_y.at2(sample, out);
            grad_b.data_mut()[out] += g;
            let w_row = &weight.data()[out * d..(out + 1) * d];
            let gx_row = &mut grad_x.data_mut()[sample * d..(sample + 1) * d];
            for (gx, wv) in gx_row.iter_mut().zip(w_row) {
                *gx += g * wv;
            }
            let gw_row = &mut grad_w.data_mut()[out * d..(out + 1) * d];
            for (gw, xv) in gw_row.iter_mut().zip(x_row) {
                *gw += g * xv;
            }
        }
    }
    Ok((grad_x, grad_w, grad_b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_matches_hand_computation() {
        let x = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::from_vec(&[3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let b = Tensor::from_vec(&[3], vec![0.5, -0.5, 0.0]).unwrap();
        let y = forward(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[1.5, 1.5, 3.0]);
    }

    #[test]
    fn backward_shapes_and_bias_sum() {
        let x = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::from_vec(&[1, 2], vec![1.0, -1.0]).unwrap();
        let g = Tensor::from_vec(&[2, 1], vec![1.0, 2.0]).unwrap();
        let (gx, gw, gb) = backward(&g, &x, &w).unwrap();
        assert_eq!(gx.shape(), &[2, 2]);
        assert_eq!(gw.shape(), &[1, 2]);
        assert_eq!(gb.data(), &[3.0]);
        assert_eq!(gw.data(), &[1.0 + 2.0 * 3.0, 2.0 + 2.0 * 4.0]);
        assert_eq!(gx.data(), &[1.0, -1.0, 2.0, -2.0]);
    }
}
