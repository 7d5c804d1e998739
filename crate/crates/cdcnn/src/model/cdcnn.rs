//! The circular dilated CNN: stacked conv -> batchnorm -> ReLU -> dropout
//! blocks with doubling dilation, global average pooling over time, and a
//! linear head.

use crate::error::{Error, Result};
use crate::layers::{batchnorm, conv, dense, dropout, pool, relu, BatchNormState, BnCache, ConvSpec};
use crate::model::{kaiming_uniform, ModelConfig, Network, Trainable};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub weights: Tensor,
    pub bn: BatchNormState,
}

#[derive(Clone, Debug)]
pub struct Cdcnn {
    pub config: ModelConfig,
    pub blocks: Vec<ConvBlock>,
    pub head_weight: Tensor,
    pub head_bias: Tensor,
}

pub struct CdcnnCache {
    blocks: Vec<BlockCache>,
    gap_out: Tensor,
    time_steps: usize,
}

struct BlockCache {
    input: Tensor,
    bn: BnCache,
    relu_out: Tensor,
    dropout_mask: Tensor,
}

impl Cdcnn {
    /// Kaiming-uniform conv and head weights, batchnorm at identity, zero
    /// head bias. Draw order is fixed (blocks in order, then the head).
    pub fn init(config: ModelConfig, rng: &mut Rng) -> Result<Cdcnn> {
        config.validate()?;
        let mut blocks = Vec::with_capacity(config.dilations.len());
        for i in 0..config.dilations.len() {
            let in_ch = if i == 0 { config.in_channels } else { config.hidden };
            let mut weights = Tensor::zeros(&[config.hidden, in_ch, config.kernel_size]);
            kaiming_uniform(&mut weights, in_ch * config.kernel_size, rng);
            blocks.push(ConvBlock {
                weights,
                bn: BatchNormState::new(config.hidden),
            });
        }
        let mut head_weight = Tensor::zeros(&[config.num_classes, config.hidden]);
        kaiming_uniform(&mut head_weight, config.hidden, rng);
        Ok(Cdcnn {
            head_bias: Tensor::zeros(&[config.num_classes]),
            config,
            blocks,
            head_weight,
        })
    }

    fn block_spec(&self, i: usize) -> ConvSpec {
        ConvSpec {
            in_channels: if i == 0 { self.config.in_channels } else { self.config.hidden },
            out_channels: self.config.hidden,
            kernel_size: self.config.kernel_size,
            dilation: self.config.dilations[i],
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, c, t) = x.dims3("model input")?;
        if c != self.config.in_channels || t != self.config.time_steps {
            return Err(Error::ShapeMismatch(format!(
                "model input {:?}, expected (N, {}, {})",
                x.shape(),
                self.config.in_channels,
                self.config.time_steps
            )));
        }
        Ok(())
    }

    /// Activations just before pooling, inference mode. Used by the
    /// receptive-field probe.
    pub fn pre_pool_infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for (i, block) in self.blocks.iter().enumerate() {
            let a = conv::forward(&cur, &block.weights, &self.block_spec(i))?;
            let normed = batchnorm::forward_infer(&block.bn, &a)?;
            cur = relu::forward(&normed);
            cur.check_finite(&format!("activation after block {i}"))?;
        }
        Ok(cur)
    }
}

impl Network for Cdcnn {
    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn forward_infer(&self, x: &Tensor) -> Result<Tensor> {
        let pre_pool = self.pre_pool_infer(x)?;
        let pooled = pool::forward(&pre_pool)?;
        let logits = dense::forward(&pooled, &self.head_weight, &self.head_bias)?;
        logits.check_finite("logits")?;
        Ok(logits)
    }
}

impl Trainable for Cdcnn {
    type Cache = CdcnnCache;

    fn forward_train(&mut self, x: &Tensor, rng: &mut Rng) -> Result<(Tensor, CdcnnCache)> {
        self.check_input(x)?;
        let dropout_rate = self.config.dropout;
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut cur = x.clone();
        for i in 0..self.blocks.len() {
            let spec = self.block_spec(i);
            let block = &mut self.blocks[i];
            let a = conv::forward(&cur, &block.weights, &spec)?;
            let (normed, bn_cache) = batchnorm::forward_train(&mut block.bn, &a)?;
            let activated = relu::forward(&normed);
            let (dropped, mask) = dropout::forward_train(&activated, dropout_rate, rng)?;
            dropped.check_finite(&format!("activation after block {i}"))?;
            caches.push(BlockCache {
                input: cur,
                bn: bn_cache,
                relu_out: activated,
                dropout_mask: mask,
            });
            cur = dropped;
        }
        let pooled = pool::forward(&cur)?;
        let logits = dense::forward(&pooled, &self.head_weight, &self.head_bias)?;
        logits.check_finite("logits")?;
        Ok((
            logits,
            CdcnnCache {
                blocks: caches,
                gap_out: pooled,
                time_steps: self.config.time_steps,
            },
        ))
    }

    fn backward(&self, cache: &CdcnnCache, grad_logits: &Tensor) -> Result<Vec<Tensor>> {
        let (grad_pooled, grad_head_w, grad_head_b) =
            dense::backward(grad_logits, &cache.gap_out, &self.head_weight)?;
        let mut grad = pool::backward(&grad_pooled, cache.time_steps)?;

        // Per-block gradients, filled walking backwards.
        let mut block_grads: Vec<(Tensor, Tensor, Tensor)> = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter().enumerate().rev() {
            let bc = &cache.blocks[i];
            let after_dropout = dropout::backward(&grad, &bc.dropout_mask);
            let after_relu = relu::backward(&after_dropout, &bc.relu_out);
            let (after_bn, grad_gamma, grad_beta) =
                batchnorm::backward(&block.bn, &bc.bn, &after_relu)?;
            let (grad_input, grad_w) =
                conv::backward(&after_bn, &bc.input, &block.weights, &self.block_spec(i))?;
            block_grads.push((grad_w, grad_gamma, grad_beta));
            grad = grad_input;
        }
        block_grads.reverse();

        let mut out = Vec::with_capacity(block_grads.len() * 3 + 2);
        for (gw, ggamma, gbeta) in block_grads {
            out.push(gw);
            out.push(ggamma);
            out.push(gbeta);
        }
        out.push(grad_head_w);
        out.push(grad_head_b);
        Ok(out)
    }

    fn learnable_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.blocks.len() * 3 + 2);
        for i in 0..self.blocks.len() {
            names.push(format!("block{i}.conv.weight"));
            names.push(format!("block{i}.bn.gamma"));
            names.push(format!("block{i}.bn.beta"));
        }
        names.push("head.weight".into());
        names.push("head.bias".into());
        names
    }

    fn learnables(&self) -> Vec<&Tensor> {
        let mut out = Vec::with_capacity(self.blocks.len() * 3 + 2);
        for block in &self.blocks {
            out.push(&block.weights);
            out.push(&block.bn.gamma);
            out.push(&block.bn.beta);
        }
        out.push(&self.head_weight);
        out.push(&self.head_bias);
        out
    }

    fn learnables_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::with_capacity(self.blocks.len() * 3 + 2);
        for block in &mut self.blocks {
            out.push(&mut block.weights);
            out.push(&mut block.bn.gamma);
            out.push(&mut block.bn.beta);
        }
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::loss::softmax;
    use crate::model::predict;

    fn small_config() -> ModelConfig {
        ModelConfig {
            in_channels: 3,
            time_steps: 20,
            hidden: 8,
            kernel_size: 3,
            dilations: vec![1, 2],
            dropout: 0.2,
            num_classes: 4,
        }
    }

    fn random_input(n: usize, cfg: &ModelConfig, seed: u64) -> Tensor {
        let mut rng = Rng::new(seed);
        let len = n * cfg.in_channels * cfg.time_steps;
        Tensor::from_vec(
            &[n, cfg.in_channels, cfg.time_steps],
            (0..len).map(|_| rng.normal_f32()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let cfg = ModelConfig::default();
        let a = Cdcnn::init(cfg.clone(), &mut Rng::new(42)).unwrap();
        let b = Cdcnn::init(cfg.clone(), &mut Rng::new(42)).unwrap();
        for (ta, tb) in a.learnables().iter().zip(b.learnables()) {
            assert!(ta.bit_eq(tb));
        }
        // per-layer bound sqrt(6/fan_in)
        for (i, block) in a.blocks.iter().enumerate() {
            let fan_in = if i == 0 { 24 * 3 } else { 64 * 3 };
            let bound = (6.0 / fan_in as f32).sqrt();
            assert!(block.weights.data().iter().all(|v| v.abs() <= bound));
        }
        let head_bound = (6.0f32 / 64.0).sqrt();
        assert!(a.head_weight.data().iter().all(|v| v.abs() <= head_bound));
        assert!(a.head_bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn default_param_count_is_42244() {
        let model = Cdcnn::init(ModelConfig::default(), &mut Rng::new(1)).unwrap();
        assert_eq!(model.param_count(), 42_244);
    }

    #[test]
    fn param_count_matches_shape_enumeration_for_random_configs() {
        let mut rng = Rng::new(99);
        for _ in 0..20 {
            let blocks = 1 + rng.next_below(4) as usize;
            let cfg = ModelConfig {
                in_channels: 1 + rng.next_below(8) as usize,
                time_steps: 64,
                hidden: 1 + rng.next_below(16) as usize,
                kernel_size: 3,
                dilations: (0..blocks).map(|i| 1 << i).collect(),
                dropout: 0.1,
                num_classes: 2 + rng.next_below(5) as usize,
            };
            let model = Cdcnn::init(cfg.clone(), &mut Rng::new(7)).unwrap();
            // independent enumeration of the declared shapes
            let mut expected = cfg.in_channels * cfg.hidden * cfg.kernel_size
                + (blocks - 1) * cfg.hidden * cfg.hidden * cfg.kernel_size;
            expected += blocks * 2 * cfg.hidden;
            expected += cfg.num_classes * cfg.hidden + cfg.num_classes;
            assert_eq!(model.param_count(), expected, "config {cfg:?}");
        }
    }

    #[test]
    fn forward_shapes_and_softmax_normalization() {
        let cfg = small_config();
        let model = Cdcnn::init(cfg.clone(), &mut Rng::new(3)).unwrap();
        let x = random_input(5, &cfg, 4);
        let logits = model.forward_infer(&x).unwrap();
        assert_eq!(logits.shape(), &[5, 4]);
        let p = softmax(&logits).unwrap();
        for row in 0..5 {
            let sum: f32 = (0..4).map(|k| p.at2(row, k)).sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn inference_is_shift_invariant() {
        let cfg = ModelConfig::default();
        let model = Cdcnn::init(cfg.clone(), &mut Rng::new(5)).unwrap();
        let x = random_input(2, &cfg, 6);
        let logits = model.forward_infer(&x).unwrap();

        let shift = 37usize;
        let mut shifted = Tensor::zeros_like(&x);
        for n in 0..2 {
            for c in 0..cfg.in_channels {
                for t in 0..cfg.time_steps {
                    shifted.set3(n, c, (t + shift) % cfg.time_steps, x.at3(n, c, t));
                }
            }
        }
        let logits_shifted = model.forward_infer(&shifted).unwrap();
        for (a, b) in logits.data().iter().zip(logits_shifted.data()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_input_yields_head_bias() {
        let cfg = small_config();
        let mut model = Cdcnn::init(cfg.clone(), &mut Rng::new(8)).unwrap();
        model.head_bias = Tensor::from_vec(&[4], vec![0.5, -1.0, 2.0, 0.0]).unwrap();
        let x = Tensor::zeros(&[3, cfg.in_channels, cfg.time_steps]);
        // BN at identity stats and beta=0 maps zero to zero; ReLU keeps it.
        let logits = model.forward_infer(&x).unwrap();
        for n in 0..3 {
            for k in 0..4 {
                assert!((logits.at2(n, k) - model.head_bias.data()[k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn predict_uses_lowest_index_on_ties() {
        let cfg = small_config();
        let model = Cdcnn::init(cfg.clone(), &mut Rng::new(9)).unwrap();
        let x = random_input(3, &cfg, 10);
        let classes = predict(&model, &x).unwrap();
        assert_eq!(classes.len(), 3);
        assert!(classes.iter().all(|&c| c < 4));
    }

    #[test]
    fn pre_pooling_stack_is_bitwise_shift_equivariant() {
        // conv + BN (inference) + ReLU are each exactly equivariant to
        // circular time shifts, so the stacked activations are too.
        let cfg = small_config();
        let model = Cdcnn::init(cfg.clone(), &mut Rng::new(21)).unwrap();
        let x = random_input(2, &cfg, 22);
        let base = model.pre_pool_infer(&x).unwrap();
        let shift = 7usize;
        let mut shifted = Tensor::zeros_like(&x);
        for n in 0..2 {
            for c in 0..cfg.in_channels {
                for t in 0..cfg.time_steps {
                    shifted.set3(n, c, (t + shift) % cfg.time_steps, x.at3(n, c, t));
                }
            }
        }
        let out = model.pre_pool_infer(&shifted).unwrap();
        for n in 0..2 {
            for c in 0..cfg.hidden {
                for t in 0..cfg.time_steps {
                    assert_eq!(
                        base.at3(n, c, t).to_bits(),
                        out.at3(n, c, (t + shift) % cfg.time_steps).to_bits()
                    );
                }
            }
        }
    }

    #[test]
    fn inference_forward_is_deterministic() {
        let cfg = small_config();
        let model = Cdcnn::init(cfg.clone(), &mut Rng::new(11)).unwrap();
        let x = random_input(4, &cfg, 12);
        let a = model.forward_infer(&x).unwrap();
        let b = model.forward_infer(&x).unwrap();
        assert!(a.bit_eq(&b));
    }

    #[test]
    fn receptive_field_bounds_perturbation_spread() {
        let cfg = ModelConfig::default();
        let model = Cdcnn::init(cfg.clone(), &mut Rng::new(13)).unwrap();
        let x = random_input(1, &cfg, 14);
        let base = model.pre_pool_infer(&x).unwrap();

        let t0 = 80usize;
        let mut perturbed = x.clone();
        perturbed.set3(0, 5, t0, perturbed.at3(0, 5, t0) + 10.0);
        let out = model.pre_pool_infer(&perturbed).unwrap();

        // footprint: 1 + (k-1) * sum(d) = 31 steps, i.e. +-15 around t0
        let radius = (cfg.receptive_field() - 1) / 2;
        assert_eq!(cfg.receptive_field(), 31);
        let t_len = cfg.time_steps;
        let mut any_diff = false;
        for c in 0..cfg.hidden {
            for t in 0..t_len {
                let delta = (base.at3(0, c, t) - out.at3(0, c, t)).abs();
                let dist = {
                    let fwd = (t + t_len - t0) % t_len;
                    fwd.min(t_len - fwd)
                };
                if dist > radius {
                    assert_eq!(
                        base.at3(0, c, t).to_bits(),
                        out.at3(0, c, t).to_bits(),
                        "leak at channel {c}, t {t}, distance {dist}"
                    );
                } else if delta > 0.0 {
                    any_diff = true;
                }
            }
        }
        assert!(any_diff, "perturbation had no effect inside the footprint");
    }
}
