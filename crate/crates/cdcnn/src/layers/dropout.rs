//! Inverted dropout: survivors are scaled by 1/(1-p) at training time so that
//! inference is the identity.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Training-mode dropout. Returns the output and the applied mask (0 where
/// dropped, 1/(1-p) where kept); backward is `grad_y * mask`.
///
/// The mask is drawn sequentially from `rng`, one uniform per element.
pub fn forward_train(x: &Tensor, p: f32, rng: &mut Rng) -> Result<(Tensor, Tensor)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidConfig(format!(
            "dropout rate must be in [0, 1), got {p}"
        )));
    }
    let keep_scale = 1.0 / (1.0 - p);
    let mut mask = Tensor::zeros_like(x);
    for m in mask.data_mut() {
        *m = if rng.next_f32() < p { 0.0 } else { keep_scale };
    }
    let mut y = x.clone();
    for (v, &m) in y.data_mut().iter_mut().zip(mask.data()) {
        *v *= m;
    }
    Ok((y, mask))
}

pub fn backward(grad_y: &Tensor, mask: &Tensor) -> Tensor {
    debug_assert!(grad_y.same_shape(mask));
    let mut grad_x = grad_y.clone();
    for (g, &m) in grad_x.data_mut().iter_mut().zip(mask.data()) {
        *g *= m;
    }
    grad_x
}
