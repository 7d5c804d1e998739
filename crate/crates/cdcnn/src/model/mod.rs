//! Network assembly: architecture config, the CDCNN, a linear baseline, and
//! checkpoint serialization.

pub mod baseline;
pub mod cdcnn;
pub mod checkpoint;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub use baseline::{LinearBaseline, LinearConfig};
pub use cdcnn::Cdcnn;
pub use checkpoint::{Checkpoint, SavedModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub time_steps: usize,
    pub hidden: usize,
    pub kernel_size: usize,
    pub dilations: Vec<usize>,
    pub dropout: f32,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 24,
            time_steps: 160,
            hidden: 64,
            kernel_size: 3,
            dilations: vec![1, 2, 4, 8],
            dropout: 0.2,
            num_classes: 4,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.hidden == 0 || self.num_classes == 0 {
            return Err(Error::InvalidConfig("model: sizes must be positive".into()));
        }
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "model: kernel size must be odd, got {}",
                self.kernel_size
            )));
        }
        if self.dilations.is_empty() {
            return Err(Error::InvalidConfig("model: needs at least one block".into()));
        }
        for (i, &d) in self.dilations.iter().enumerate() {
            if d != 1 << i {
                return Err(Error::InvalidConfig(format!(
                    "model: dilations must double per block (expected {} at block {i}, got {d})",
                    1usize << i
                )));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!(
                "model: dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        let max_footprint = self.dilations.iter().max().unwrap() * (self.kernel_size - 1);
        if self.time_steps <= max_footprint {
            return Err(Error::InvalidConfig(format!(
                "model: time_steps {} too short for largest kernel footprint {}",
                self.time_steps,
                max_footprint + 1
            )));
        }
        Ok(())
    }

    /// Total receptive field of the stacked blocks: `1 + (k-1) * sum(d)`.
    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel_size - 1) * self.dilations.iter().sum::<usize>()
    }
}

/// Inference-only view of a classifier. Object-safe so evaluation code can
/// run on any loaded model.
pub trait Network {
    fn num_classes(&self) -> usize;
    /// Batch logits, `(N, C, T) -> (N, K)`. Deterministic.
    fn forward_infer(&self, x: &Tensor) -> Result<Tensor>;
}

/// A network the training loop can optimize.
pub trait Trainable: Network + Clone {
    type Cache;
    /// Training-mode forward. Updates batch-norm running statistics; `rng`
    /// drives dropout.
    fn forward_train(&mut self, x: &Tensor, rng: &mut Rng) -> Result<(Tensor, Self::Cache)>;
    /// Gradients with respect to every learnable, aligned with
    /// [`Trainable::learnable_names`].
    fn backward(&self, cache: &Self::Cache, grad_logits: &Tensor) -> Result<Vec<Tensor>>;
    fn learnable_names(&self) -> Vec<String>;
    fn learnables(&self) -> Vec<&Tensor>;
    fn learnables_mut(&mut self) -> Vec<&mut Tensor>;

    fn param_count(&self) -> usize {
        self.learnables().iter().map(|t| t.len()).sum()
    }
}

/// Index of the largest logit; ties resolve to the lowest class index.
pub fn argmax_lowest(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Predicted class per sample, inference mode.
pub fn predict<M: Network + ?Sized>(model: &M, x: &Tensor) -> Result<Vec<usize>> {
    let logits = model.forward_infer(x)?;
    let (n, k) = logits.dims2("logits")?;
    Ok((0..n)
        .map(|i| argmax_lowest(&logits.data()[i * k..(i + 1) * k]))
        .collect())
}

/// Kaiming-uniform fill: `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
pub(crate) fn kaiming_uniform(tensor: &mut Tensor, fan_in: usize, rng: &mut Rng) {
    let bound = (6.0 / fan_in as f32).sqrt();
    for v in tensor.data_mut() {
        *v = rng.uniform(-bound, bound);
    }
}
