//! Permutation-importance oracles against real models.

use cdcnn::dataset::{Dataset, SensorWindow, NUM_CHANNELS, TIME_STEPS};
use cdcnn::evaluation::{permutation_importance, ImportanceOptions};
use cdcnn::model::{Cdcnn, LinearBaseline, LinearConfig, ModelConfig};
use cdcnn::training::{train, TrainConfig};
use cdcnn::{Rng, Tensor};

/// Channel 20 encodes the label as a one-hot pulse at t = label; every other
/// channel is noise.
fn injected_label_dataset(n_per_class: usize, seed: u64) -> Dataset {
    let mut ds = Dataset::empty();
    let mut rng = Rng::new(seed);
    let mut sample = 0u64;
    for label in 0..4usize {
        for i in 0..n_per_class {
            let mut values: Vec<f32> = (0..TIME_STEPS * NUM_CHANNELS)
                .map(|_| 0.5 * rng.normal_f32())
                .collect();
            values[label * NUM_CHANNELS + 20] += 6.0;
            ds.windows.push(SensorWindow {
                values: Tensor::from_vec(&[TIME_STEPS, NUM_CHANNELS], values).unwrap(),
                label,
                subject_id: 1 + (i % 3) as u32,
                sample_id: sample,
            });
            sample += 1;
        }
    }
    ds
}

#[test]
fn injected_label_channel_ranks_strictly_first() {
    let ds = injected_label_dataset(20, 61);
    let spec = cdcnn::dataset::SplitSpec {
        train: vec![1, 2],
        val: vec![3],
        test: vec![],
    };
    let (train_split, val_split, _) =
        cdcnn::dataset::split_by_subject(ds.clone(), &spec).unwrap();
    let cfg = TrainConfig {
        max_epochs: 40,
        patience: 40,
        batch_size: 8,
        seed: 9,
        ..TrainConfig::default()
    };
    let model = LinearBaseline::init(
        LinearConfig {
            in_channels: NUM_CHANNELS,
            time_steps: TIME_STEPS,
            num_classes: 4,
        },
        &mut Rng::new(9),
    )
    .unwrap();
    let (best, _) = train(model, &train_split, &val_split, &cfg).unwrap();

    let opts = ImportanceOptions {
        repeats: 3,
        seed: 5,
        within_time: false,
    };
    let report = permutation_importance(&best, &ds, &opts).unwrap();
    let injected = report.channels[20].importance_mean;
    for c in &report.channels {
        if c.channel != 20 {
            assert!(
                injected > c.importance_mean,
                "channel {} ({}) has importance {} >= injected {}",
                c.channel,
                c.name,
                c.importance_mean,
                injected
            );
        }
    }
    assert!(injected > 0.05, "injected channel importance only {injected}");
}

#[test]
fn zeroed_first_layer_weights_give_exactly_zero_importance() {
    let ds = injected_label_dataset(10, 67);
    let config = ModelConfig {
        hidden: 8,
        ..ModelConfig::default()
    };
    let mut model = Cdcnn::init(config, &mut Rng::new(71)).unwrap();
    // Make the model provably blind to channel 20.
    let blind = 20usize;
    let (h, c_in, k) = (8usize, NUM_CHANNELS, 3usize);
    for o in 0..h {
        for j in 0..k {
            model.blocks[0].weights.data_mut()[(o * c_in + blind) * k + j] = 0.0;
        }
    }
    let opts = ImportanceOptions {
        repeats: 3,
        seed: 3,
        within_time: false,
    };
    let report = permutation_importance(&model, &ds, &opts).unwrap();
    assert_eq!(report.channels[blind].importance_mean, 0.0);
    assert_eq!(report.channels[blind].importance_std, 0.0);
    assert_eq!(
        report.channels[blind].permuted_accuracy_mean,
        report.baseline_accuracy
    );
}

#[test]
fn constant_channel_gives_exactly_zero_importance() {
    let mut ds = injected_label_dataset(10, 73);
    let constant = 5usize;
    for w in &mut ds.windows {
        for t in 0..TIME_STEPS {
            w.values.set2(t, constant, 0.75);
        }
    }
    let model = Cdcnn::init(
        ModelConfig {
            hidden: 8,
            ..ModelConfig::default()
        },
        &mut Rng::new(79),
    )
    .unwrap();
    let opts = ImportanceOptions {
        repeats: 2,
        seed: 7,
        within_time: false,
    };
    let report = permutation_importance(&model, &ds, &opts).unwrap();
    assert_eq!(report.channels[constant].importance_mean, 0.0);
    assert_eq!(report.channels[constant].importance_std, 0.0);
}

#[test]
fn importance_stays_within_accuracy_bounds() {
    let ds = injected_label_dataset(8, 81);
    let model = Cdcnn::init(
        ModelConfig {
            hidden: 8,
            ..ModelConfig::default()
        },
        &mut Rng::new(83),
    )
    .unwrap();
    let report = permutation_importance(
        &model,
        &ds,
        &ImportanceOptions {
            repeats: 2,
            seed: 11,
            within_time: false,
        },
    )
    .unwrap();
    for c in &report.channels {
        assert!(c.importance_mean <= report.baseline_accuracy + 1e-12);
        assert!(c.importance_mean >= report.baseline_accuracy - 1.0 - 1e-12);
        assert!(c.permuted_accuracy_mean >= 0.0 && c.permuted_accuracy_mean <= 1.0);
    }
    // group totals match the per-channel sums
    let pressure_sum: f64 = report.channels[0..18].iter().map(|c| c.importance_mean).sum();
    let group = report
        .groups
        .iter()
        .find(|g| g.group == "pressure")
        .unwrap();
    assert!((group.total_importance - pressure_sum).abs() < 1e-12);
}

#[test]
fn within_time_shuffle_also_preserves_multisets() {
    let ds = injected_label_dataset(6, 91);
    let mut rng = Rng::new(13);
    let shuffled =
        cdcnn::evaluation::permute_channel_within_time(&ds, 20, &mut rng).unwrap();
    for (a, b) in ds.windows.iter().zip(&shuffled.windows) {
        let mut series_a: Vec<u32> = (0..TIME_STEPS)
            .map(|t| a.values.at2(t, 20).to_bits())
            .collect();
        let mut series_b: Vec<u32> = (0..TIME_STEPS)
            .map(|t| b.values.at2(t, 20).to_bits())
            .collect();
        series_a.sort_unstable();
        series_b.sort_unstable();
        assert_eq!(series_a, series_b);
    }
}
