//! Checkpoint format.
//!
//! Layout: magic `CDCN`, version byte `0x01`, a little-endian u32 header
//! length, a UTF-8 JSON header (config, channel/label names, normalizer,
//! named tensor directory with shapes and byte offsets), then the raw
//! little-endian binary32 tensor payloads in directory order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Normalizer;
use crate::error::{Error, Result};
use crate::layers::BatchNormState;
use crate::model::{Cdcnn, LinearBaseline, LinearConfig, ModelConfig, Network};
use crate::rng::Rng;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"CDCN";
const VERSION: u8 = 0x01;

#[derive(Clone, Debug)]
pub enum SavedModel {
    Cdcnn(Cdcnn),
    Linear(LinearBaseline),
}

impl SavedModel {
    pub fn arch_name(&self) -> &'static str {
        match self {
            SavedModel::Cdcnn(_) => "cdcnn",
            SavedModel::Linear(_) => "linear",
        }
    }

    pub fn expected_input(&self) -> (usize, usize) {
        match self {
            SavedModel::Cdcnn(m) => (m.config.in_channels, m.config.time_steps),
            SavedModel::Linear(m) => (m.config.in_channels, m.config.time_steps),
        }
    }
}

impl Network for SavedModel {
    fn num_classes(&self) -> usize {
        match self {
            SavedModel::Cdcnn(m) => m.num_classes(),
            SavedModel::Linear(m) => m.num_classes(),
        }
    }

    fn forward_infer(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            SavedModel::Cdcnn(m) => m.forward_infer(x),
            SavedModel::Linear(m) => m.forward_infer(x),
        }
    }
}

/// Everything a later `eval`/`importance` run needs.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: SavedModel,
    pub channel_names: Vec<String>,
    pub label_names: Vec<String>,
    pub normalizer: Option<Normalizer>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "lowercase")]
enum ArchConfig {
    Cdcnn(ModelConfig),
    Linear(LinearConfig),
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ArchConfig,
    channel_names: Vec<String>,
    label_names: Vec<String>,
    normalizer: Option<Normalizer>,
    tensors: Vec<TensorEntry>,
}

/// Tensor directory order is fixed per architecture: for the CDCNN, each
/// block contributes conv weights, gamma, beta, running mean, running var;
/// then the head weight and bias. Running statistics are part of the model.
fn directory(model: &SavedModel) -> Vec<(String, &Tensor)> {
    let mut out = Vec::new();
    match model {
        SavedModel::Cdcnn(m) => {
            for (i, block) in m.blocks.iter().enumerate() {
                out.push((format!("block{i}.conv.weight"), &block.weights));
                out.push((format!("block{i}.bn.gamma"), &block.bn.gamma));
                out.push((format!("block{i}.bn.beta"), &block.bn.beta));
                out.push((format!("block{i}.bn.running_mean"), &block.bn.running_mean));
                out.push((format!("block{i}.bn.running_var"), &block.bn.running_var));
            }
            out.push(("head.weight".into(), &m.head_weight));
            out.push(("head.bias".into(), &m.head_bias));
        }
        SavedModel::Linear(m) => {
            out.push(("linear.weight".into(), &m.weight));
            out.push(("linear.bias".into(), &m.bias));
        }
    }
    out
}

pub fn save_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let dir = directory(&ckpt.model);
    let mut entries = Vec::with_capacity(dir.len());
    let mut offset = 0u64;
    for (name, tensor) in &dir {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: tensor.shape().to_vec(),
            offset,
        });
        offset += (tensor.len() * 4) as u64;
    }
    let header = Header {
        config: match &ckpt.model {
            SavedModel::Cdcnn(m) => ArchConfig::Cdcnn(m.config.clone()),
            SavedModel::Linear(m) => ArchConfig::Linear(m.config.clone()),
        },
        channel_names: ckpt.channel_names.clone(),
        label_names: ckpt.label_names.clone(),
        normalizer: ckpt.normalizer.clone(),
        tensors: entries,
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");

    let mut out = Vec::with_capacity(4 + 1 + 4 + header_json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    for (_, tensor) in &dir {
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn load_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 {
        return Err(Error::Truncated("shorter than the magic bytes".into()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 9 {
        return Err(Error::Truncated("missing version/header length".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::UnsupportedVersion(bytes[4]));
    }
    let header_len = u32::from_le_bytes([bytes[5], bytes[6], bytes[7], bytes[8]]) as usize;
    let payload_start = 9 + header_len;
    if bytes.len() < payload_start {
        return Err(Error::Truncated(format!(
            "header claims {header_len} bytes but only {} remain",
            bytes.len() - 9
        )));
    }
    let header: Header = serde_json::from_slice(&bytes[9..payload_start])
        .map_err(|e| Error::InconsistentHeader(e.to_string()))?;

    // Validate the directory: contiguous offsets, no trailing bytes.
    let payload = &bytes[payload_start..];
    let mut expected_offset = 0u64;
    for entry in &header.tensors {
        if entry.offset != expected_offset {
            return Err(Error::InconsistentHeader(format!(
                "tensor \"{}\" at offset {}, expected {}",
                entry.name, entry.offset, expected_offset
            )));
        }
        expected_offset += (entry.shape.iter().product::<usize>() * 4) as u64;
    }
    if (payload.len() as u64) < expected_offset {
        return Err(Error::Truncated(format!(
            "payload has {} bytes, directory needs {}",
            payload.len(),
            expected_offset
        )));
    }
    if (payload.len() as u64) > expected_offset {
        return Err(Error::InconsistentHeader(format!(
            "{} trailing bytes after the last tensor",
            payload.len() as u64 - expected_offset
        )));
    }

    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let len: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let data: Vec<f32> = payload[start..start + len * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let tensor = Tensor::from_vec(&entry.shape, data)?;
        tensor
            .check_finite(&format!("checkpoint tensor \"{}\"", entry.name))?;
        tensors.push((entry.name.clone(), tensor));
    }

    let model = match header.config {
        ArchConfig::Cdcnn(config) => SavedModel::Cdcnn(rebuild_cdcnn(config, &tensors)?),
        ArchConfig::Linear(config) => SavedModel::Linear(rebuild_linear(config, &tensors)?),
    };
    Ok(Checkpoint {
        model,
        channel_names: header.channel_names,
        label_names: header.label_names,
        normalizer: header.normalizer,
    })
}

fn take(
    tensors: &[(String, Tensor)],
    index: usize,
    name: &str,
    shape: &[usize],
) -> Result<Tensor> {
    let (found, tensor) = tensors.get(index).ok_or_else(|| {
        Error::InconsistentHeader(format!("missing tensor \"{name}\" at directory index {index}"))
    })?;
    if found != name {
        return Err(Error::InconsistentHeader(format!(
            "directory entry {index} is \"{found}\", expected \"{name}\""
        )));
    }
    if tensor.shape() != shape {
        return Err(Error::InconsistentHeader(format!(
            "tensor \"{name}\" has shape {:?}, config implies {shape:?}",
            tensor.shape()
        )));
    }
    Ok(tensor.clone())
}

fn rebuild_cdcnn(config: ModelConfig, tensors: &[(String, Tensor)]) -> Result<Cdcnn> {
    config.validate().map_err(|e| Error::InconsistentHeader(e.to_string()))?;
    let expected = config.dilations.len() * 5 + 2;
    if tensors.len() != expected {
        return Err(Error::InconsistentHeader(format!(
            "directory has {} tensors, config implies {expected}",
            tensors.len()
        )));
    }
    // Start from an arbitrary seed; every tensor is overwritten below.
    let mut model = Cdcnn::init(config.clone(), &mut Rng::new(0))?;
    for (i, block) in model.blocks.iter_mut().enumerate() {
        let in_ch = if i == 0 { config.in_channels } else { config.hidden };
        let base = i * 5;
        block.weights = take(
            tensors,
            base,
            &format!("block{i}.conv.weight"),
            &[config.hidden, in_ch, config.kernel_size],
        )?;
        let c = [config.hidden];
        block.bn = BatchNormState {
            gamma: take(tensors, base + 1, &format!("block{i}.bn.gamma"), &c)?,
            beta: take(tensors, base + 2, &format!("block{i}.bn.beta"), &c)?,
            running_mean: take(tensors, base + 3, &format!("block{i}.bn.running_mean"), &c)?,
            running_var: take(tensors, base + 4, &format!("block{i}.bn.running_var"), &c)?,
            ..block.bn.clone()
        };
        if block.bn.running_var.data().iter().any(|&v| v < 0.0) {
            return Err(Error::InconsistentHeader(format!(
                "block{i}.bn.running_var has negative entries"
            )));
        }
    }
    let n = tensors.len();
    model.head_weight = take(
        tensors,
        n - 2,
        "head.weight",
        &[config.num_classes, config.hidden],
    )?;
    model.head_bias = take(tensors, n - 1, "head.bias", &[config.num_classes])?;
    Ok(model)
}

fn rebuild_linear(config: LinearConfig, tensors: &[(String, Tensor)]) -> Result<LinearBaseline> {
    config.validate().map_err(|e| Error::InconsistentHeader(e.to_string()))?;
    if tensors.len() != 2 {
        return Err(Error::InconsistentHeader(format!(
            "directory has {} tensors, linear baseline implies 2",
            tensors.len()
        )));
    }
    let weight = take(
        tensors,
        0,
        "linear.weight",
        &[config.num_classes, config.flat_features()],
    )?;
    let bias = take(tensors, 1, "linear.bias", &[config.num_classes])?;
    Ok(LinearBaseline {
        config,
        weight,
        bias,
    })
}

pub fn save_file(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, save_bytes(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load_file(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{default_channel_names, default_label_names};

    fn sample_checkpoint() -> Checkpoint {
        let config = ModelConfig {
            in_channels: 3,
            time_steps: 24,
            hidden: 6,
            kernel_size: 3,
            dilations: vec![1, 2],
            dropout: 0.2,
            num_classes: 4,
        };
        let mut model = Cdcnn::init(config, &mut Rng::new(31)).unwrap();
        // Give the running stats non-default values so the round trip is
        // meaningful.
        for block in &mut model.blocks {
            for v in block.bn.running_mean.data_mut() {
                *v = 0.25;
            }
            for v in block.bn.running_var.data_mut() {
                *v = 2.0;
            }
        }
        Checkpoint {
            model: SavedModel::Cdcnn(model),
            channel_names: default_channel_names(),
            label_names: default_label_names(),
            normalizer: Some(Normalizer {
                mean: vec![0.5; 24],
                std: vec![2.0; 24],
            }),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ckpt = sample_checkpoint();
        let bytes = save_bytes(&ckpt);
        let loaded = load_bytes(&bytes).unwrap();
        let (before, after) = match (&ckpt.model, &loaded.model) {
            (SavedModel::Cdcnn(a), SavedModel::Cdcnn(b)) => (a, b),
            _ => panic!("arch changed in round trip"),
        };
        assert_eq!(before.config, after.config);
        for (a, b) in before.blocks.iter().zip(&after.blocks) {
            assert!(a.weights.bit_eq(&b.weights));
            assert!(a.bn.gamma.bit_eq(&b.bn.gamma));
            assert!(a.bn.running_mean.bit_eq(&b.bn.running_mean));
            assert!(a.bn.running_var.bit_eq(&b.bn.running_var));
        }
        assert!(before.head_weight.bit_eq(&after.head_weight));
        assert!(before.head_bias.bit_eq(&after.head_bias));
        assert_eq!(loaded.normalizer, ckpt.normalizer);
        assert_eq!(loaded.channel_names, ckpt.channel_names);

        // Saving the loaded checkpoint reproduces the exact bytes.
        assert_eq!(save_bytes(&loaded), bytes);
    }

    #[test]
    fn round_trip_preserves_logits() {
        let ckpt = sample_checkpoint();
        let mut rng = Rng::new(8);
        let len = 2 * 3 * 24;
        let x = Tensor::from_vec(&[2, 3, 24], (0..len).map(|_| rng.normal_f32()).collect())
            .unwrap();
        let before = ckpt.model.forward_infer(&x).unwrap();
        let loaded = load_bytes(&save_bytes(&ckpt)).unwrap();
        let after = loaded.model.forward_infer(&x).unwrap();
        assert!(before.bit_eq(&after));
    }

    #[test]
    fn bad_magic_is_detected() {
        let mut bytes = save_bytes(&sample_checkpoint());
        bytes[0] = b'X';
        assert!(matches!(load_bytes(&bytes), Err(Error::BadMagic)));
    }

    #[test]
    fn unsupported_version_is_detected() {
        let mut bytes = save_bytes(&sample_checkpoint());
        bytes[4] = 0x02;
        assert!(matches!(
            load_bytes(&bytes),
            Err(Error::UnsupportedVersion(0x02))
        ));
    }

    #[test]
    fn truncation_yields_no_partial_model() {
        let bytes = save_bytes(&sample_checkpoint());
        for cut in [2usize, 6, 40, bytes.len() - 3] {
            match load_bytes(&bytes[..cut]) {
                Err(Error::Truncated(_)) => {}
                other => panic!("cut at {cut}: expected truncation, got {other:?}"),
            }
        }
    }

    #[test]
    fn trailing_garbage_is_detected() {
        let mut bytes = save_bytes(&sample_checkpoint());
        bytes.extend_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(
            load_bytes(&bytes),
            Err(Error::InconsistentHeader(_))
        ));
    }

    #[test]
    fn linear_round_trip() {
        let config = LinearConfig {
            in_channels: 24,
            time_steps: 160,
            num_classes: 4,
        };
        let model = LinearBaseline::init(config, &mut Rng::new(3)).unwrap();
        let ckpt = Checkpoint {
            model: SavedModel::Linear(model),
            channel_names: default_channel_names(),
            label_names: default_label_names(),
            normalizer: None,
        };
        let loaded = load_bytes(&save_bytes(&ckpt)).unwrap();
        match (&ckpt.model, &loaded.model) {
            (SavedModel::Linear(a), SavedModel::Linear(b)) => {
                assert!(a.weight.bit_eq(&b.weight));
                assert!(a.bias.bit_eq(&b.bias));
            }
            _ => panic!("arch changed"),
        }
    }
}
