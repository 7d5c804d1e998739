//! Labeled sensor windows: on-disk format, validation, standardization,
//! subject-disjoint splitting, per-subject statistics, and a synthetic
//! generator for desk-scale verification.

pub mod io;
pub mod stats;
pub mod synth;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use io::{load_dataset, write_dataset};
pub use stats::{subject_class_table, SubjectClassTable};
pub use synth::generate_synthetic;

pub const TIME_STEPS: usize = 160;
pub const NUM_CHANNELS: usize = 24;
pub const NUM_CLASSES: usize = 4;

/// Channel layout: 18 pressure sensors, then accelerometer x/y/z, then
/// gyroscope x/y/z.
pub const PRESSURE_CHANNELS: std::ops::Range<usize> = 0..18;
pub const ACCEL_CHANNELS: std::ops::Range<usize> = 18..21;
pub const GYRO_CHANNELS: std::ops::Range<usize> = 21..24;

pub fn default_channel_names() -> Vec<String> {
    let mut names: Vec<String> = (0..18).map(|i| format!("pressure_{i}")).collect();
    for axis in ["x", "y", "z"] {
        names.push(format!("accel_{axis}"));
    }
    for axis in ["x", "y", "z"] {
        names.push(format!("gyro_{axis}"));
    }
    names
}

/// Class names in label-index order (alphabetical).
pub fn default_label_names() -> Vec<String> {
    ["Sitting", "Standing", "Tandem", "Walking"]
        .into_iter()
        .map(String::from)
        .collect()
}

pub fn channel_group(channel: usize) -> &'static str {
    if PRESSURE_CHANNELS.contains(&channel) {
        "pressure"
    } else if ACCEL_CHANNELS.contains(&channel) {
        "accel"
    } else {
        "gyro"
    }
}

/// One labeled window with subject provenance. `values` is `(T, F)` =
/// `(160, 24)`, time-major.
#[derive(Clone, Debug)]
pub struct SensorWindow {
    pub values: Tensor,
    pub label: usize,
    pub subject_id: u32,
    pub sample_id: u64,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub windows: Vec<SensorWindow>,
    pub channel_names: Vec<String>,
    pub label_names: Vec<String>,
    /// Free-text unit description carried through meta.json.
    pub units: String,
    /// Set once standardization has been applied; also stored in checkpoints.
    pub normalizer: Option<Normalizer>,
}

impl Dataset {
    pub fn empty() -> Dataset {
        Dataset {
            windows: Vec::new(),
            channel_names: default_channel_names(),
            label_names: default_label_names(),
            units: "pressure: raw; accel: g; gyro: raw".into(),
            normalizer: None,
        }
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn subjects(&self) -> BTreeSet<u32> {
        self.windows.iter().map(|w| w.subject_id).collect()
    }

    pub fn class_totals(&self) -> Vec<u64> {
        let mut totals = vec![0u64; self.label_names.len()];
        for w in &self.windows {
            totals[w.label] += 1;
        }
        totals
    }

    /// Checks the structural invariants: window shapes, label range, finite
    /// values, unique sample ids.
    pub fn validate(&self) -> Result<()> {
        if self.channel_names.len() != NUM_CHANNELS {
            return Err(Error::InvalidData(format!(
                "expected {} channel names, got {}",
                NUM_CHANNELS,
                self.channel_names.len()
            )));
        }
        if self.label_names.len() != NUM_CLASSES {
            return Err(Error::InvalidData(format!(
                "expected {} label names, got {}",
                NUM_CLASSES,
                self.label_names.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for (i, w) in self.windows.iter().enumerate() {
            if w.values.shape() != [TIME_STEPS, NUM_CHANNELS] {
                return Err(Error::InvalidData(format!(
                    "window {i}: shape {:?}, expected ({TIME_STEPS}, {NUM_CHANNELS})",
                    w.values.shape()
                )));
            }
            if w.label >= NUM_CLASSES {
                return Err(Error::InvalidData(format!(
                    "window {i} (sample {}): label {} out of range",
                    w.sample_id, w.label
                )));
            }
            w.values
                .check_finite(&format!("window {i} (sample {})", w.sample_id))
                .map_err(|e| Error::InvalidData(e.to_string()))?;
            if !seen.insert(w.sample_id) {
                return Err(Error::InvalidData(format!(
                    "duplicate sample_id {}",
                    w.sample_id
                )));
            }
        }
        Ok(())
    }
}

/// Per-channel z-score parameters, fitted on the training split only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

/// Fits per-channel mean/std over every (window, time) entry of `train`.
/// Channels with (numerically) zero variance get std = 1 so they pass
/// through shifted but unscaled.
pub fn fit_normalizer(train: &Dataset) -> Result<Normalizer> {
    if train.is_empty() {
        return Err(Error::InvalidData(
            "cannot fit a normalizer on an empty training split".into(),
        ));
    }
    let count = (train.len() * TIME_STEPS) as f64;
    let mut sums = [0.0f64; NUM_CHANNELS];
    let mut sumsqs = [0.0f64; NUM_CHANNELS];
    for w in &train.windows {
        let data = w.values.data();
        for t in 0..TIME_STEPS {
            for c in 0..NUM_CHANNELS {
                let v = data[t * NUM_CHANNELS + c] as f64;
                sums[c] += v;
                sumsqs[c] += v * v;
            }
        }
    }
    let mut mean = Vec::with_capacity(NUM_CHANNELS);
    let mut std = Vec::with_capacity(NUM_CHANNELS);
    for c in 0..NUM_CHANNELS {
        let m = sums[c] / count;
        let var = (sumsqs[c] / count - m * m).max(0.0);
        mean.push(m as f32);
        std.push(if var < 1e-12 { 1.0 } else { var.sqrt() as f32 });
    }
    Ok(Normalizer { mean, std })
}

/// Standardizes every window in place and records the normalizer on the
/// dataset. Applying twice is an error.
pub fn apply_normalizer(ds: &mut Dataset, norm: &Normalizer) -> Result<()> {
    if ds.normalizer.is_some() {
        return Err(Error::InvalidData("dataset is already standardized".into()));
    }
    if norm.mean.len() != NUM_CHANNELS || norm.std.len() != NUM_CHANNELS {
        return Err(Error::InvalidData(format!(
            "normalizer has {} channels, expected {}",
            norm.mean.len(),
            NUM_CHANNELS
        )));
    }
    if norm.std.iter().any(|&s| s <= 0.0) {
        return Err(Error::InvalidData("normalizer std must be positive".into()));
    }
    let inv_std: Vec<f32> = norm.std.iter().map(|s| 1.0 / s).collect();
    for w in &mut ds.windows {
        let data = w.values.data_mut();
        for row in data.chunks_exact_mut(NUM_CHANNELS) {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (*v - norm.mean[c]) * inv_std[c];
            }
        }
    }
    ds.normalizer = Some(norm.clone());
    Ok(())
}

/// Assignment of subject ids to the three splits.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<u32>,
    pub val: Vec<u32>,
    pub test: Vec<u32>,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let mut seen: BTreeMap<u32, &'static str> = BTreeMap::new();
        for (name, ids) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for &id in ids {
                if let Some(other) = seen.insert(id, name) {
                    return Err(Error::InvalidData(format!(
                        "subject {id} assigned to both {other} and {name}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn load_file(path: &std::path::Path) -> Result<SplitSpec> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SplitSpec =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Partitions a dataset by subject. Every subject present must be assigned to
/// exactly one split; within-split window order is preserved.
pub fn split_by_subject(ds: Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    spec.validate()?;
    let train_set: BTreeSet<u32> = spec.train.iter().copied().collect();
    let val_set: BTreeSet<u32> = spec.val.iter().copied().collect();
    let test_set: BTreeSet<u32> = spec.test.iter().copied().collect();
    for subject in ds.subjects() {
        if !train_set.contains(&subject) && !val_set.contains(&subject) && !test_set.contains(&subject)
        {
            return Err(Error::InvalidData(format!(
                "subject {subject} present in the dataset but not assigned to any split"
            )));
        }
    }
    let mut train = ds.clone_metadata();
    let mut val = ds.clone_metadata();
    let mut test = ds.clone_metadata();
    for w in ds.windows {
        if train_set.contains(&w.subject_id) {
            train.windows.push(w);
        } else if val_set.contains(&w.subject_id) {
            val.windows.push(w);
        } else {
            test.windows.push(w);
        }
    }
    debug_assert!(train
        .subjects()
        .intersection(&val.subjects())
        .next()
        .is_none());
    Ok((train, val, test))
}

impl Dataset {
    fn clone_metadata(&self) -> Dataset {
        Dataset {
            windows: Vec::new(),
            channel_names: self.channel_names.clone(),
            label_names: self.label_names.clone(),
            units: self.units.clone(),
            normalizer: self.normalizer.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_window(subject: u32, sample: u64, label: usize, fill: f32) -> SensorWindow {
        SensorWindow {
            values: Tensor::filled(&[TIME_STEPS, NUM_CHANNELS], fill),
            label,
            subject_id: subject,
            sample_id: sample,
        }
    }

    fn tiny_dataset() -> Dataset {
        let mut ds = Dataset::empty();
        for (i, subject) in [1u32, 1, 2, 2, 3, 3].iter().enumerate() {
            ds.windows
                .push(tiny_window(*subject, i as u64, i % 4, i as f32));
        }
        ds
    }

    #[test]
    fn validate_catches_duplicate_sample_ids() {
        let mut ds = tiny_dataset();
        ds.windows[1].sample_id = 0;
        assert!(matches!(ds.validate(), Err(Error::InvalidData(_))));
    }

    #[test]
    fn validate_catches_bad_labels() {
        let mut ds = tiny_dataset();
        ds.windows[0].label = 4;
        assert!(matches!(ds.validate(), Err(Error::InvalidData(_))));
    }

    #[test]
    fn split_all_train_keeps_everything() {
        let ds = tiny_dataset();
        let n = ds.len();
        let spec = SplitSpec {
            train: vec![1, 2, 3],
            val: vec![],
            test: vec![],
        };
        let (train, val, test) = split_by_subject(ds, &spec).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (n, 0, 0));
    }

    #[test]
    fn split_preserves_order_and_counts() {
        let ds = tiny_dataset();
        let spec = SplitSpec {
            train: vec![1],
            val: vec![2],
            test: vec![3],
        };
        let (train, val, test) = split_by_subject(ds, &spec).unwrap();
        assert_eq!(train.len() + val.len() + test.len(), 6);
        assert_eq!(train.windows[0].sample_id, 0);
        assert_eq!(train.windows[1].sample_id, 1);
        assert!(val.subjects().intersection(&test.subjects()).next().is_none());
    }

    #[test]
    fn split_rejects_overlap_and_uncovered_subjects() {
        let overlapping = SplitSpec {
            train: vec![1, 2],
            val: vec![2],
            test: vec![3],
        };
        assert!(overlapping.validate().is_err());

        let ds = tiny_dataset();
        let missing = SplitSpec {
            train: vec![1],
            val: vec![2],
            test: vec![],
        };
        assert!(matches!(
            split_by_subject(ds, &missing),
            Err(Error::InvalidData(_))
        ));
    }

    #[test]
    fn normalizer_zscores_the_fit_split() {
        let mut ds = Dataset::empty();
        let mut rng = crate::rng::Rng::new(77);
        for i in 0..10 {
            let values: Vec<f32> = (0..TIME_STEPS * NUM_CHANNELS)
                .map(|j| 3.0 * rng.normal_f32() + (j % NUM_CHANNELS) as f32)
                .collect();
            ds.windows.push(SensorWindow {
                values: Tensor::from_vec(&[TIME_STEPS, NUM_CHANNELS], values).unwrap(),
                label: 0,
                subject_id: 1,
                sample_id: i,
            });
        }
        let norm = fit_normalizer(&ds).unwrap();
        apply_normalizer(&mut ds, &norm).unwrap();
        let refit = fit_normalizer(&ds).unwrap();
        for c in 0..NUM_CHANNELS {
            assert!(refit.mean[c].abs() < 1e-4, "channel {c} mean {}", refit.mean[c]);
            assert!((refit.std[c] - 1.0).abs() < 1e-3, "channel {c} std {}", refit.std[c]);
        }
    }

    #[test]
    fn constant_channel_gets_unit_std() {
        let mut ds = Dataset::empty();
        for i in 0..4 {
            let mut values = vec![0.0f32; TIME_STEPS * NUM_CHANNELS];
            for t in 0..TIME_STEPS {
                values[t * NUM_CHANNELS] = 5.0; // channel 0 constant
                values[t * NUM_CHANNELS + 1] = (t as f32).sin() + i as f32;
            }
            ds.windows.push(SensorWindow {
                values: Tensor::from_vec(&[TIME_STEPS, NUM_CHANNELS], values).unwrap(),
                label: 0,
                subject_id: 1,
                sample_id: i,
            });
        }
        let norm = fit_normalizer(&ds).unwrap();
        assert_eq!(norm.std[0], 1.0);
        assert!((norm.mean[0] - 5.0).abs() < 1e-6);
        let mut normalized = ds.clone();
        apply_normalizer(&mut normalized, &norm).unwrap();
        // constant channel: values minus mean, divided by exactly 1
        assert_eq!(normalized.windows[0].values.at2(0, 0), 0.0);
    }

    #[test]
    fn val_stats_differ_from_train_stats_on_shifted_data() {
        let make = |offset: f32, subject: u32| {
            let mut ds = Dataset::empty();
            let mut rng = crate::rng::Rng::new(5 + subject as u64);
            for i in 0..8 {
                let values: Vec<f32> = (0..TIME_STEPS * NUM_CHANNELS)
                    .map(|_| rng.normal_f32() + offset)
                    .collect();
                ds.windows.push(SensorWindow {
                    values: Tensor::from_vec(&[TIME_STEPS, NUM_CHANNELS], values).unwrap(),
                    label: 0,
                    subject_id: subject,
                    sample_id: (subject as u64) * 100 + i,
                });
            }
            ds
        };
        let train = make(0.0, 1);
        let mut val = make(2.0, 2); // shifted distribution
        let train_norm = fit_normalizer(&train).unwrap();
        let val_norm = fit_normalizer(&val).unwrap();
        assert!((train_norm.mean[0] - val_norm.mean[0]).abs() > 1.0);
        // val is standardized with train stats, so its mean stays offset
        apply_normalizer(&mut val, &train_norm).unwrap();
        let after = fit_normalizer(&val).unwrap();
        assert!(after.mean[0] > 1.0);
    }

    #[test]
    fn empty_train_split_cannot_fit() {
        let ds = Dataset::empty();
        assert!(fit_normalizer(&ds).is_err());
    }
}
