//! Confusion matrix, per-class metrics, and permutation feature importance.
//!
//! Importance of a channel is the accuracy drop when that channel's values
//! are shuffled across samples: the baseline accuracy is measured once, then
//! for every channel (and repeat) a permuted copy of the split is evaluated
//! and the drop is averaged.

use std::path::Path;

use serde::Serialize;

use crate::dataset::{channel_group, Dataset, NUM_CHANNELS, TIME_STEPS};
use crate::error::{Error, Result};
use crate::model::{predict, Network};
use crate::rng::Rng;
use crate::training::{batch_from_windows, evaluate_split};
use crate::util::{fmt_sig6, round_sig6};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    /// `counts[true][predicted]`.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|k| self.counts[k][k]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    /// True-class support (row sum).
    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn precision(&self, class: usize) -> f64 {
        let predicted: u64 = (0..self.num_classes()).map(|t| self.counts[t][class]).sum();
        if predicted == 0 {
            0.0
        } else {
            self.counts[class][class] as f64 / predicted as f64
        }
    }

    pub fn recall(&self, class: usize) -> f64 {
        let support = self.support(class);
        if support == 0 {
            0.0
        } else {
            self.counts[class][class] as f64 / support as f64
        }
    }

    /// K x K CSV with label names on the header row and column.
    pub fn to_csv(&self, label_names: &[String]) -> String {
        let mut out = String::from("true\\pred");
        for name in label_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (row, name) in label_names.iter().enumerate() {
            out.push_str(name);
            for col in 0..label_names.len() {
                out.push_str(&format!(",{}", self.counts[row][col]));
            }
            out.push('\n');
        }
        out
    }
}

pub fn confusion_matrix<M: Network + ?Sized>(model: &M, ds: &Dataset) -> Result<ConfusionMatrix> {
    if ds.is_empty() {
        return Err(Error::InvalidData(
            "cannot build a confusion matrix for an empty split".into(),
        ));
    }
    let k = model.num_classes();
    let mut counts = vec![vec![0u64; k]; k];
    let indices: Vec<usize> = (0..ds.len()).collect();
    for chunk in indices.chunks(256) {
        let (x, labels) = batch_from_windows(ds, chunk);
        let preds = predict(model, &x)?;
        for (pred, label) in preds.iter().zip(&labels) {
            counts[*label][*pred] += 1;
        }
    }
    Ok(ConfusionMatrix { counts })
}

/// Applies a sample permutation to one channel: window `i` receives window
/// `perm[i]`'s full time series for channel `f`; everything else is copied
/// unchanged.
fn apply_channel_permutation(ds: &Dataset, channel: usize, perm: &[usize]) -> Dataset {
    let mut out = ds.clone();
    for (i, &src) in perm.iter().enumerate() {
        if i == src {
            continue;
        }
        let src_values = ds.windows[src].values.data();
        let dst_values = out.windows[i].values.data_mut();
        for t in 0..TIME_STEPS {
            dst_values[t * NUM_CHANNELS + channel] = src_values[t * NUM_CHANNELS + channel];
        }
    }
    out
}

/// Shuffles channel `f` across samples with a uniform permutation (the
/// identity is allowed). The input split is left untouched.
pub fn permute_channel(ds: &Dataset, channel: usize, rng: &mut Rng) -> Result<Dataset> {
    check_channel(channel)?;
    if ds.len() < 2 {
        return Err(Error::InvalidData(
            "channel permutation needs at least 2 samples".into(),
        ));
    }
    let perm = rng.permutation(ds.len());
    Ok(apply_channel_permutation(ds, channel, &perm))
}

/// Alternative reading: shuffle channel `f` along the time axis within each
/// sample.
pub fn permute_channel_within_time(ds: &Dataset, channel: usize, rng: &mut Rng) -> Result<Dataset> {
    check_channel(channel)?;
    let mut out = ds.clone();
    for w in &mut out.windows {
        let perm = rng.permutation(TIME_STEPS);
        let original: Vec<f32> = (0..TIME_STEPS)
            .map(|t| w.values.at2(t, channel))
            .collect();
        for (t, &src) in perm.iter().enumerate() {
            w.values.set2(t, channel, original[src]);
        }
    }
    Ok(out)
}

fn check_channel(channel: usize) -> Result<()> {
    if channel >= NUM_CHANNELS {
        return Err(Error::InvalidData(format!(
            "channel {channel} out of range (0..{NUM_CHANNELS})"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct ChannelImportance {
    pub channel: usize,
    pub name: String,
    pub group: String,
    /// Mean accuracy drop over repeats.
    pub importance_mean: f64,
    /// Population standard deviation over repeats.
    pub importance_std: f64,
    pub permuted_accuracy_mean: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GroupImportance {
    pub group: String,
    /// Sum of mean importances over the group's channels.
    pub total_importance: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ImportanceReport {
    pub baseline_accuracy: f64,
    pub repeats: usize,
    pub seed: u64,
    pub within_time: bool,
    pub channels: Vec<ChannelImportance>,
    pub groups: Vec<GroupImportance>,
}

#[derive(Clone, Copy, Debug)]
pub struct ImportanceOptions {
    pub repeats: usize,
    pub seed: u64,
    /// Use the within-time shuffle instead of the across-samples one.
    pub within_time: bool,
}

impl Default for ImportanceOptions {
    fn default() -> Self {
        ImportanceOptions {
            repeats: 5,
            seed: 42,
            within_time: false,
        }
    }
}

/// Permutation importance of every channel over `ds`.
///
/// Each (channel, repeat) pair gets an independently derived sub-seed, so the
/// report does not depend on evaluation order.
pub fn permutation_importance<M: Network + ?Sized>(
    model: &M,
    ds: &Dataset,
    opts: &ImportanceOptions,
) -> Result<ImportanceReport> {
    if opts.repeats < 1 {
        return Err(Error::InvalidConfig("repeats must be >= 1".into()));
    }
    if ds.len() < 2 {
        return Err(Error::InvalidData(
            "permutation importance needs at least 2 samples".into(),
        ));
    }
    let baseline = evaluate_split(model, ds)?;
    let root = Rng::new(opts.seed);

    let mut channels = Vec::with_capacity(NUM_CHANNELS);
    for channel in 0..NUM_CHANNELS {
        let mut drops = Vec::with_capacity(opts.repeats);
        let mut perm_acc_sum = 0.0f64;
        for repeat in 0..opts.repeats {
            let mut rng = root.derive((channel * opts.repeats + repeat) as u64);
            let permuted = if opts.within_time {
                permute_channel_within_time(ds, channel, &mut rng)?
            } else {
                permute_channel(ds, channel, &mut rng)?
            };
            let acc = evaluate_split(model, &permuted)?;
            perm_acc_sum += acc;
            drops.push(baseline - acc);
        }
        let mean = drops.iter().sum::<f64>() / drops.len() as f64;
        let var = drops.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>()
            / drops.len() as f64;
        channels.push(ChannelImportance {
            channel,
            name: ds.channel_names[channel].clone(),
            group: channel_group(channel).to_string(),
            importance_mean: mean,
            importance_std: var.sqrt(),
            permuted_accuracy_mean: perm_acc_sum / opts.repeats as f64,
        });
    }

    let groups = ["pressure", "accel", "gyro"]
        .into_iter()
        .map(|g| GroupImportance {
            group: g.to_string(),
            total_importance: channels
                .iter()
                .filter(|c| c.group == g)
                .map(|c| c.importance_mean)
                .sum(),
        })
        .collect();

    Ok(ImportanceReport {
        baseline_accuracy: baseline,
        repeats: opts.repeats,
        seed: opts.seed,
        within_time: opts.within_time,
        channels,
        groups,
    })
}

impl ImportanceReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("channel_name,group,I_mean,I_std,A_perm_mean\n");
        for c in &self.channels {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                c.name,
                c.group,
                fmt_sig6(c.importance_mean),
                fmt_sig6(c.importance_std),
                fmt_sig6(c.permuted_accuracy_mean)
            ));
        }
        out
    }

    /// JSON with floats rounded to 6 significant digits.
    pub fn to_json(&self) -> String {
        let mut rounded = self.clone();
        rounded.baseline_accuracy = round_sig6(rounded.baseline_accuracy);
        for c in &mut rounded.channels {
            c.importance_mean = round_sig6(c.importance_mean);
            c.importance_std = round_sig6(c.importance_std);
            c.permuted_accuracy_mean = round_sig6(c.permuted_accuracy_mean);
        }
        for g in &mut rounded.groups {
            g.total_importance = round_sig6(g.total_importance);
        }
        serde_json::to_string_pretty(&rounded).expect("report serializes")
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub support: u64,
}

/// Evaluation summary written by `eval`: accuracy, per-class metrics, and
/// provenance of the inputs that produced it. Evaluation itself draws no
/// randomness, so `seed` is only set when a caller wants to record one.
#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub num_samples: u64,
    pub per_class: Vec<ClassMetrics>,
    pub data_dir: String,
    pub model_file: String,
    pub split: String,
    pub seed: Option<u64>,
}

impl EvalReport {
    pub fn from_confusion(
        cm: &ConfusionMatrix,
        label_names: &[String],
        data_dir: &str,
        model_file: &str,
        split: &str,
    ) -> EvalReport {
        EvalReport {
            accuracy: cm.accuracy(),
            num_samples: cm.total(),
            per_class: label_names
                .iter()
                .enumerate()
                .map(|(k, name)| ClassMetrics {
                    label: name.clone(),
                    precision: cm.precision(k),
                    recall: cm.recall(k),
                    support: cm.support(k),
                })
                .collect(),
            data_dir: data_dir.to_string(),
            model_file: model_file.to_string(),
            split: split.to_string(),
            seed: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut rounded = self.clone();
        rounded.accuracy = round_sig6(rounded.accuracy);
        for c in &mut rounded.per_class {
            c.precision = round_sig6(c.precision);
            c.recall = round_sig6(c.recall);
        }
        serde_json::to_string_pretty(&rounded).expect("report serializes")
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
