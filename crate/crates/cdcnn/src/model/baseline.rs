//! Multinomial logistic regression on flattened windows, trained with the
//! same optimizer and split protocol as the CDCNN. A deliberately simple
//! reference point; it does not emulate tree ensembles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::dense;
use crate::model::{kaiming_uniform, Network, Trainable};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearConfig {
    pub in_channels: usize,
    pub time_steps: usize,
    pub num_classes: usize,
}

impl LinearConfig {
    pub fn flat_features(&self) -> usize {
        self.in_channels * self.time_steps
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.time_steps == 0 || self.num_classes == 0 {
            return Err(Error::InvalidConfig("baseline: sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LinearBaseline {
    pub config: LinearConfig,
    /// `(K, C*T)`; the flat feature index is `c * T + t`.
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearBaseline {
    pub fn init(config: LinearConfig, rng: &mut Rng) -> Result<LinearBaseline> {
        config.validate()?;
        let d = config.flat_features();
        let mut weight = Tensor::zeros(&[config.num_classes, d]);
        kaiming_uniform(&mut weight, d, rng);
        Ok(LinearBaseline {
            bias: Tensor::zeros(&[config.num_classes]),
            weight,
            config,
        })
    }

    pub fn zeros(config: LinearConfig) -> Result<LinearBaseline> {
        config.validate()?;
        let d = config.flat_features();
        Ok(LinearBaseline {
            weight: Tensor::zeros(&[config.num_classes, d]),
            bias: Tensor::zeros(&[config.num_classes]),
            config,
        })
    }

    /// `(N, C, T) -> (N, C*T)`. A batch tensor is already contiguous in
    /// exactly this order, so flattening is a reshape.
    fn flatten(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, t) = x.dims3("baseline input")?;
        if c != self.config.in_channels || t != self.config.time_steps {
            return Err(Error::ShapeMismatch(format!(
                "baseline input {:?}, expected (N, {}, {})",
                x.shape(),
                self.config.in_channels,
                self.config.time_steps
            )));
        }
        Tensor::from_vec(&[n, c * t], x.data().to_vec())
    }
}

impl Network for LinearBaseline {
    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn forward_infer(&self, x: &Tensor) -> Result<Tensor> {
        let flat = self.flatten(x)?;
        let logits = dense::forward(&flat, &self.weight, &self.bias)?;
        logits.check_finite("baseline logits")?;
        Ok(logits)
    }
}

impl Trainable for LinearBaseline {
    type Cache = Tensor;

    fn forward_train(&mut self, x: &Tensor, _rng: &mut Rng) -> Result<(Tensor, Tensor)> {
        let flat = self.flatten(x)?;
        let logits = dense::forward(&flat, &self.weight, &self.bias)?;
        logits.check_finite("baseline logits")?;
        Ok((logits, flat))
    }

    fn backward(&self, cache: &Tensor, grad_logits: &Tensor) -> Result<Vec<Tensor>> {
        let (_, grad_w, grad_b) = dense::backward(grad_logits, cache, &self.weight)?;
        Ok(vec![grad_w, grad_b])
    }

    fn learnable_names(&self) -> Vec<String> {
        vec!["linear.weight".into(), "linear.bias".into()]
    }

    fn learnables(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn learnables_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}
