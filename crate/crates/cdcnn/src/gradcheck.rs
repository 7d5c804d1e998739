//! Finite-difference verification of every backward pass.
//!
//! Two harnesses per layer:
//!
//! - a production check: analytic f32 gradients against central differences
//!   taken through the production f32 forward (loss accumulated in f64),
//!   compared by vector-norm relative error, expected below ~1e-3. A
//!   difference through an f32 forward carries an absolute noise floor of
//!   roughly `1e-5 * max|grad|` per element, so elementwise ratios on
//!   near-zero entries are meaningless at this precision; the norm ratio is
//!   the strictest metric the 32-bit path supports.
//! - a reference check: an independent f64 re-implementation of the layer
//!   (naive direct-sum loops, no shared code with the f32 path) whose
//!   analytic gradients must match f64 central differences elementwise to
//!   ~1e-5, which does catch single-element errors.
//!
//! The scalar loss is `sum(G .* y)` for a fixed random `G`, which makes the
//! analytic gradient exactly `backward(G)`.

use crate::layers::{batchnorm, conv, dense, loss, pool, relu, BatchNormState, ConvSpec};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// `||a - b||_2 / max(||a||_2, ||b||_2)`; 0 when both are zero.
pub fn vector_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = norm(analytic).max(norm(numeric));
    if denom == 0.0 {
        return 0.0;
    }
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    diff / denom
}

/// Elementwise relative error with a floor tied to the largest gradient
/// entry, so near-zero elements are held to a proportional absolute
/// tolerance instead of blowing up the ratio.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let gmax = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    let floor = (gmax * 1e-3).max(1e-8);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs() / (a.abs() + b.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Central difference of `loss` with respect to each element of `x` (f32
/// path). The step is re-measured from the actually stored values.
fn fd_grad_f32(x: &mut Tensor, mut loss_fn: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    let n = x.len();
    let mut grad = Vec::with_capacity(n);
    for i in 0..n {
        let orig = x.data()[i];
        let h = orig.abs().max(1.0) * 5e-3;
        let hi = orig + h;
        let lo = orig - h;
        x.data_mut()[i] = hi;
        let l_hi = loss_fn(x);
        x.data_mut()[i] = lo;
        let l_lo = loss_fn(x);
        x.data_mut()[i] = orig;
        grad.push((l_hi - l_lo) / (hi as f64 - lo as f64));
    }
    grad
}

fn fd_grad_f64(x: &mut [f64], mut loss_fn: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let n = x.len();
    let mut grad = Vec::with_capacity(n);
    for i in 0..n {
        let orig = x[i];
        let h = orig.abs().max(1.0) * 1e-6;
        x[i] = orig + h;
        let l_hi = loss_fn(x);
        x[i] = orig - h;
        let l_lo = loss_fn(x);
        x[i] = orig;
        grad.push((l_hi - l_lo) / (2.0 * h));
    }
    grad
}

fn weighted_sum(y: &Tensor, g: &Tensor) -> f64 {
    y.data()
        .iter()
        .zip(g.data())
        .map(|(a, b)| *a as f64 * *b as f64)
        .sum()
}

fn random_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| rng.normal_f32()).collect()).unwrap()
}

fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

/// Independent f64 reference implementations (naive loops).
pub mod ref64 {
    #[allow(clippy::too_many_arguments)]
    pub fn conv_forward(
        x: &[f64],
        w: &[f64],
        n: usize,
        c_in: usize,
        c_out: usize,
        k: usize,
        d: usize,
        t: usize,
    ) -> Vec<f64> {
        let center = (k as isize - 1) / 2;
        let mut y = vec![0.0; n * c_out * t];
        for i in 0..n {
            for o in 0..c_out {
                for tt in 0..t {
                    let mut acc = 0.0;
                    for c in 0..c_in {
                        for j in 0..k {
                            let src = (tt as isize + (j as isize - center) * d as isize)
                                .rem_euclid(t as isize)
                                as usize;
                            acc += w[(o * c_in + c) * k + j] * x[(i * c_in + c) * t + src];
                        }
                    }
                    y[(i * c_out + o) * t + tt] = acc;
                }
            }
        }
        y
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv_backward(
        g: &[f64],
        x: &[f64],
        w: &[f64],
        n: usize,
        c_in: usize,
        c_out: usize,
        k: usize,
        d: usize,
        t: usize,
    ) -> (Vec<f64>, Vec<f64>) {
        let center = (k as isize - 1) / 2;
        let mut gx = vec![0.0; n * c_in * t];
        let mut gw = vec![0.0; c_out * c_in * k];
        for i in 0..n {
            for o in 0..c_out {
                for tt in 0..t {
                    let gv = g[(i * c_out + o) * t + tt];
                    for c in 0..c_in {
                        for j in 0..k {
                            let src = (tt as isize + (j as isize - center) * d as isize)
                                .rem_euclid(t as isize)
                                as usize;
                            gx[(i * c_in + c) * t + src] += gv * w[(o * c_in + c) * k + j];
                            gw[(o * c_in + c) * k + j] += gv * x[(i * c_in + c) * t + src];
                        }
                    }
                }
            }
        }
        (gx, gw)
    }

    /// Returns `(y, x_hat, inv_std)`; biased batch variance, like training.
    pub fn bn_forward(
        x: &[f64],
        gamma: &[f64],
        beta: &[f64],
        eps: f64,
        n: usize,
        c: usize,
        t: usize,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let m = (n * t) as f64;
        let mut y = vec![0.0; x.len()];
        let mut x_hat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for i in 0..n {
                for tt in 0..t {
                    let v = x[(i * c + ch) * t + tt];
                    sum += v;
                    sumsq += v * v;
                }
            }
            let mean = sum / m;
            let var = (sumsq / m - mean * mean).max(0.0);
            let s = 1.0 / (var + eps).sqrt();
            inv_std[ch] = s;
            for i in 0..n {
                for tt in 0..t {
                    let idx = (i * c + ch) * t + tt;
                    x_hat[idx] = (x[idx] - mean) * s;
                    y[idx] = gamma[ch] * x_hat[idx] + beta[ch];
                }
            }
        }
        (y, x_hat, inv_std)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn bn_backward(
        g: &[f64],
        x_hat: &[f64],
        inv_std: &[f64],
        gamma: &[f64],
        n: usize,
        c: usize,
        t: usize,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let m = (n * t) as f64;
        let mut gx = vec![0.0; g.len()];
        let mut ggamma = vec![0.0; c];
        let mut gbeta = vec![0.0; c];
        for ch in 0..c {
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for i in 0..n {
                for tt in 0..t {
                    let idx = (i * c + ch) * t + tt;
                    sum_g += g[idx];
                    sum_gx += g[idx] * x_hat[idx];
                }
            }
            ggamma[ch] = sum_gx;
            gbeta[ch] = sum_g;
            let gscale = gamma[ch] * inv_std[ch];
            for i in 0..n {
                for tt in 0..t {
                    let idx = (i * c + ch) * t + tt;
                    gx[idx] = gscale * (g[idx] - sum_g / m - x_hat[idx] * sum_gx / m);
                }
            }
        }
        (gx, ggamma, gbeta)
    }

    pub fn linear_forward(x: &[f64], w: &[f64], b: &[f64], n: usize, d: usize, k: usize) -> Vec<f64> {
        let mut y = vec![0.0; n * k];
        for i in 0..n {
            for o in 0..k {
                let mut acc = b[o];
                for j in 0..d {
                    acc += w[o * d + j] * x[i * d + j];
                }
                y[i * k + o] = acc;
            }
        }
        y
    }

    pub fn linear_backward(
        g: &[f64],
        x: &[f64],
        w: &[f64],
        n: usize,
        d: usize,
        k: usize,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut gx = vec![0.0; n * d];
        let mut gw = vec![0.0; k * d];
        let mut gb = vec![0.0; k];
        for i in 0..n {
            for o in 0..k {
                let gv = g[i * k + o];
                gb[o] += gv;
                for j in 0..d {
                    gx[i * d + j] += gv * w[o * d + j];
                    gw[o * d + j] += gv * x[i * d + j];
                }
            }
        }
        (gx, gw, gb)
    }

    pub fn gap_forward(x: &[f64], n: usize, c: usize, t: usize) -> Vec<f64> {
        let mut y = vec![0.0; n * c];
        for i in 0..n {
            for ch in 0..c {
                let sum: f64 = x[(i * c + ch) * t..(i * c + ch + 1) * t].iter().sum();
                y[i * c + ch] = sum / t as f64;
            }
        }
        y
    }

    pub fn gap_backward(g: &[f64], n: usize, c: usize, t: usize) -> Vec<f64> {
        let mut gx = vec![0.0; n * c * t];
        for i in 0..n {
            for ch in 0..c {
                for tt in 0..t {
                    gx[(i * c + ch) * t + tt] = g[i * c + ch] / t as f64;
                }
            }
        }
        gx
    }

    pub fn relu_forward(x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| v.max(0.0)).collect()
    }

    pub fn relu_backward(g: &[f64], x: &[f64]) -> Vec<f64> {
        g.iter()
            .zip(x)
            .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
            .collect()
    }

    /// Returns `(mean loss, grad wrt logits)`.
    pub fn softmax_ce(z: &[f64], labels: &[usize], n: usize, k: usize) -> (f64, Vec<f64>) {
        let mut total = 0.0;
        let mut grad = vec![0.0; n * k];
        for i in 0..n {
            let row = &z[i * k..(i + 1) * k];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|&v| (v - max).exp()).sum();
            total += denom.ln() - (row[labels[i]] - max);
            for j in 0..k {
                let p = (row[j] - max).exp() / denom;
                grad[i * k + j] = (p - if j == labels[i] { 1.0 } else { 0.0 }) / n as f64;
            }
        }
        (total / n as f64, grad)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConvDims {
    pub n: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub d: usize,
    pub t: usize,
}

/// Max relative error of the production conv backward (inputs and weights).
pub fn conv_check_production(dims: ConvDims, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let spec = ConvSpec {
        in_channels: dims.c_in,
        out_channels: dims.c_out,
        kernel_size: dims.k,
        dilation: dims.d,
    };
    let mut x = random_tensor(&[dims.n, dims.c_in, dims.t], &mut rng);
    let mut w = random_tensor(&[dims.c_out, dims.c_in, dims.k], &mut rng);
    let upstream = random_tensor(&[dims.n, dims.c_out, dims.t], &mut rng);

    let (gx, gw) = conv::backward(&upstream, &x, &w, &spec).unwrap();

    let w_frozen = w.clone();
    let fd_x = fd_grad_f32(&mut x, |xv| {
        weighted_sum(&conv::forward(xv, &w_frozen, &spec).unwrap(), &upstream)
    });
    let x_frozen = x.clone();
    let fd_w = fd_grad_f32(&mut w, |wv| {
        weighted_sum(&conv::forward(&x_frozen, wv, &spec).unwrap(), &upstream)
    });

    vector_relative_error(&to_f64(&gx), &fd_x).max(vector_relative_error(&to_f64(&gw), &fd_w))
}

/// Max relative error of the f64 reference conv backward.
pub fn conv_check_reference(dims: ConvDims, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let len_x = dims.n * dims.c_in * dims.t;
    let len_w = dims.c_out * dims.c_in * dims.k;
    let mut x: Vec<f64> = (0..len_x).map(|_| rng.normal_f64()).collect();
    let mut w: Vec<f64> = (0..len_w).map(|_| rng.normal_f64()).collect();
    let g: Vec<f64> = (0..dims.n * dims.c_out * dims.t)
        .map(|_| rng.normal_f64())
        .collect();
    let (gx, gw) = ref64::conv_backward(&g, &x, &w, dims.n, dims.c_in, dims.c_out, dims.k, dims.d, dims.t);

    let wsum = |y: &[f64], g: &[f64]| y.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
    let w_frozen = w.clone();
    let fd_x = fd_grad_f64(&mut x, |xv| {
        wsum(
            &ref64::conv_forward(xv, &w_frozen, dims.n, dims.c_in, dims.c_out, dims.k, dims.d, dims.t),
            &g,
        )
    });
    let x_frozen = x.clone();
    let fd_w = fd_grad_f64(&mut w, |wv| {
        wsum(
            &ref64::conv_forward(&x_frozen, wv, dims.n, dims.c_in, dims.c_out, dims.k, dims.d, dims.t),
            &g,
        )
    });
    max_relative_error(&gx, &fd_x).max(max_relative_error(&gw, &fd_w))
}

/// Max relative error of the production batchnorm backward (x, gamma, beta).
pub fn bn_check_production(n: usize, c: usize, t: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let mut x = random_tensor(&[n, c, t], &mut rng);
    let upstream = random_tensor(&[n, c, t], &mut rng);
    let mut template = BatchNormState::new(c);
    for v in template.gamma.data_mut() {
        *v = 1.0 + 0.3 * rng.normal_f32();
    }
    for v in template.beta.data_mut() {
        *v = 0.2 * rng.normal_f32();
    }

    let mut state = template.clone();
    let (_, cache) = batchnorm::forward_train(&mut state, &x).unwrap();
    let (gx, ggamma, gbeta) = batchnorm::backward(&template, &cache, &upstream).unwrap();

    let run = |st: &BatchNormState, xv: &Tensor| {
        let mut fresh = st.clone();
        let (y, _) = batchnorm::forward_train(&mut fresh, xv).unwrap();
        weighted_sum(&y, &upstream)
    };

    let fd_x = fd_grad_f32(&mut x, |xv| run(&template, xv));

    let x_fixed = x.clone();
    let mut gamma = template.gamma.clone();
    let fd_gamma = fd_grad_f32(&mut gamma, |gv| {
        let mut st = template.clone();
        st.gamma = gv.clone();
        run(&st, &x_fixed)
    });
    let mut beta = template.beta.clone();
    let fd_beta = fd_grad_f32(&mut beta, |bv| {
        let mut st = template.clone();
        st.beta = bv.clone();
        run(&st, &x_fixed)
    });

    vector_relative_error(&to_f64(&gx), &fd_x)
        .max(vector_relative_error(&to_f64(&ggamma), &fd_gamma))
        .max(vector_relative_error(&to_f64(&gbeta), &fd_beta))
}

/// Max relative error of the f64 reference batchnorm backward.
pub fn bn_check_reference(n: usize, c: usize, t: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let eps = 1e-5;
    let len = n * c * t;
    let mut x: Vec<f64> = (0..len).map(|_| rng.normal_f64()).collect();
    let mut gamma: Vec<f64> = (0..c).map(|_| 1.0 + 0.3 * rng.normal_f64()).collect();
    let mut beta: Vec<f64> = (0..c).map(|_| 0.2 * rng.normal_f64()).collect();
    let g: Vec<f64> = (0..len).map(|_| rng.normal_f64()).collect();

    let (_, x_hat, inv_std) = ref64::bn_forward(&x, &gamma, &beta, eps, n, c, t);
    let (gx, ggamma, gbeta) = ref64::bn_backward(&g, &x_hat, &inv_std, &gamma, n, c, t);

    let wsum = |y: &[f64]| y.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
    let (gamma_f, beta_f, x_f) = (gamma.clone(), beta.clone(), x.clone());
    let fd_x = fd_grad_f64(&mut x, |xv| {
        wsum(&ref64::bn_forward(xv, &gamma_f, &beta_f, eps, n, c, t).0)
    });
    let fd_gamma = fd_grad_f64(&mut gamma, |gv| {
        wsum(&ref64::bn_forward(&x_f, gv, &beta_f, eps, n, c, t).0)
    });
    let fd_beta = fd_grad_f64(&mut beta, |bv| {
        wsum(&ref64::bn_forward(&x_f, &gamma_f, bv, eps, n, c, t).0)
    });

    max_relative_error(&gx, &fd_x)
        .max(max_relative_error(&ggamma, &fd_gamma))
        .max(max_relative_error(&gbeta, &fd_beta))
}

/// Max relative error of the production linear backward (x, W, b).
pub fn linear_check_production(n: usize, d: usize, k: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let mut x = random_tensor(&[n, d], &mut rng);
    let mut w = random_tensor(&[k, d], &mut rng);
    let mut b = random_tensor(&[k], &mut rng);
    let upstream = random_tensor(&[n, k], &mut rng);

    let (gx, gw, gb) = dense::backward(&upstream, &x, &w).unwrap();

    let (w_f, b_f, x_f) = (w.clone(), b.clone(), x.clone());
    let fd_x = fd_grad_f32(&mut x, |xv| {
        weighted_sum(&dense::forward(xv, &w_f, &b_f).unwrap(), &upstream)
    });
    let fd_w = fd_grad_f32(&mut w, |wv| {
        weighted_sum(&dense::forward(&x_f, wv, &b_f).unwrap(), &upstream)
    });
    let fd_b = fd_grad_f32(&mut b, |bv| {
        weighted_sum(&dense::forward(&x_f, &w_f, bv).unwrap(), &upstream)
    });

    vector_relative_error(&to_f64(&gx), &fd_x)
        .max(vector_relative_error(&to_f64(&gw), &fd_w))
        .max(vector_relative_error(&to_f64(&gb), &fd_b))
}

/// Max relative error of the f64 reference linear backward.
pub fn linear_check_reference(n: usize, d: usize, k: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let mut x: Vec<f64> = (0..n * d).map(|_| rng.normal_f64()).collect();
    let mut w: Vec<f64> = (0..k * d).map(|_| rng.normal_f64()).collect();
    let mut b: Vec<f64> = (0..k).map(|_| rng.normal_f64()).collect();
    let g: Vec<f64> = (0..n * k).map(|_| rng.normal_f64()).collect();

    let (gx, gw, gb) = ref64::linear_backward(&g, &x, &w, n, d, k);
    let wsum = |y: &[f64]| y.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
    let (w_f, b_f, x_f) = (w.clone(), b.clone(), x.clone());
    let fd_x = fd_grad_f64(&mut x, |xv| wsum(&ref64::linear_forward(xv, &w_f, &b_f, n, d, k)));
    let fd_w = fd_grad_f64(&mut w, |wv| wsum(&ref64::linear_forward(&x_f, wv, &b_f, n, d, k)));
    let fd_b = fd_grad_f64(&mut b, |bv| wsum(&ref64::linear_forward(&x_f, &w_f, bv, n, d, k)));

    max_relative_error(&gx, &fd_x)
        .max(max_relative_error(&gw, &fd_w))
        .max(max_relative_error(&gb, &fd_b))
}

/// Max relative error of the production GAP backward.
pub fn gap_check_production(n: usize, c: usize, t: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let mut x = random_tensor(&[n, c, t], &mut rng);
    let upstream = random_tensor(&[n, c], &mut rng);
    let gx = pool::backward(&upstream, t).unwrap();
    let fd_x = fd_grad_f32(&mut x, |xv| {
        weighted_sum(&pool::forward(xv).unwrap(), &upstream)
    });
    vector_relative_error(&to_f64(&gx), &fd_x)
}

/// Max relative error of the f64 reference GAP backward.
pub fn gap_check_reference(n: usize, c: usize, t: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let mut x: Vec<f64> = (0..n * c * t).map(|_| rng.normal_f64()).collect();
    let g: Vec<f64> = (0..n * c).map(|_| rng.normal_f64()).collect();
    let gx = ref64::gap_backward(&g, n, c, t);
    let fd_x = fd_grad_f64(&mut x, |xv| {
        ref64::gap_forward(xv, n, c, t)
            .iter()
            .zip(&g)
            .map(|(a, b)| a * b)
            .sum()
    });
    max_relative_error(&gx, &fd_x)
}

/// Max relative error of the production ReLU backward. Inputs are kept away
/// from the kink so central differences stay valid.
pub fn relu_check_production(len: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let data: Vec<f32> = (0..len)
        .map(|_| {
            let v = rng.normal_f32();
            v.signum() * (v.abs() + 0.1)
        })
        .collect();
    let mut x = Tensor::from_vec(&[len], data).unwrap();
    let upstream = random_tensor(&[len], &mut rng);
    let out = relu::forward(&x);
    let gx = relu::backward(&upstream, &out);
    let fd_x = fd_grad_f32(&mut x, |xv| weighted_sum(&relu::forward(xv), &upstream));
    vector_relative_error(&to_f64(&gx), &fd_x)
}

/// Max relative error of the production softmax cross-entropy gradient.
pub fn softmax_check_production(n: usize, k: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let mut logits = random_tensor(&[n, k], &mut rng);
    let labels: Vec<usize> = (0..n).map(|_| rng.next_below(k as u64) as usize).collect();
    let (_, grad) = loss::softmax_cross_entropy(&logits, &labels).unwrap();
    let fd = fd_grad_f32(&mut logits, |z| {
        loss::softmax_cross_entropy(z, &labels).unwrap().0 as f64
    });
    vector_relative_error(&to_f64(&grad), &fd)
}

/// Max relative error of the f64 reference softmax cross-entropy gradient.
pub fn softmax_check_reference(n: usize, k: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let mut z: Vec<f64> = (0..n * k).map(|_| rng.normal_f64()).collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.next_below(k as u64) as usize).collect();
    let (_, grad) = ref64::softmax_ce(&z, &labels, n, k);
    let fd = fd_grad_f64(&mut z, |zv| ref64::softmax_ce(zv, &labels, n, k).0);
    max_relative_error(&grad, &fd)
}
