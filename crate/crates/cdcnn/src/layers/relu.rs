//! Elementwise ReLU.

use crate::tensor::Tensor;

pub fn forward(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    for v in y.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    y
}

/// `forward_out` is the ReLU output; its positivity is the pass-through mask.
pub fn backward(grad_y: &Tensor, forward_out: &Tensor) -> Tensor {
    debug_assert!(grad_y.same_shape(forward_out));
    let mut grad_x = grad_y.clone();
    for (g, &o) in grad_x.data_mut().iter_mut().zip(forward_out.data()) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
    grad_x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamps_negatives_and_masks_gradient() {
        let x = Tensor::from_vec(&[4], vec![-1.0, 0.0, 2.0, -0.5]).unwrap();
        let y = forward(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0, 0.0]);
        let g = Tensor::from_vec(&[4], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let gx = backward(&g, &y);
        assert_eq!(gx.data(), &[0.0, 0.0, 1.0, 0.0]);
    }
}
