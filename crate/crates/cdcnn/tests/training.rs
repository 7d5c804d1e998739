//! End-to-end training behavior on synthetic data: overfit sanity,
//! determinism, early stopping bookkeeping, and the linear baseline.

use cdcnn::dataset::{generate_synthetic, split_by_subject, Dataset, SplitSpec};
use cdcnn::layers::loss::softmax_cross_entropy;
use cdcnn::model::{Cdcnn, LinearBaseline, LinearConfig, ModelConfig, Trainable};
use cdcnn::training::{
    batch_from_windows, evaluate_split, train, TrainConfig, STREAM_INIT, STREAM_TRAIN,
};
use cdcnn::{Rng, Tensor};

fn small_model_config() -> ModelConfig {
    ModelConfig {
        hidden: 16,
        dropout: 0.1,
        ..ModelConfig::default()
    }
}

fn two_subject_splits(per_class: usize, seed: u64) -> (Dataset, Dataset) {
    let ds = generate_synthetic(2, per_class, seed);
    let spec = SplitSpec {
        train: vec![1],
        val: vec![2],
        test: vec![],
    };
    let (train_split, val_split, _) = split_by_subject(ds, &spec).unwrap();
    (train_split, val_split)
}

#[test]
fn overfits_a_tiny_subset_to_full_train_accuracy() {
    let (train_split, val_split) = two_subject_splits(8, 17);
    assert_eq!(train_split.len(), 32);
    let cfg = TrainConfig {
        lr: 0.01,
        max_epochs: 200,
        patience: 200,
        batch_size: 16,
        dropout: 0.1,
        seed: 3,
        standardize: false,
    };
    let model = Cdcnn::init(small_model_config(), &mut Rng::new(cfg.seed).derive(STREAM_INIT))
        .unwrap();
    let (_, report) = train(model, &train_split, &val_split, &cfg).unwrap();
    let best_train_acc = report
        .epochs
        .iter()
        .map(|e| e.train_acc)
        .fold(0.0f64, f64::max);
    assert_eq!(best_train_acc, 1.0, "did not overfit: {best_train_acc}");
}

#[test]
fn identical_seeds_reproduce_reports_and_parameters_bitwise() {
    let run = || {
        let (train_split, val_split) = two_subject_splits(4, 23);
        let cfg = TrainConfig {
            max_epochs: 5,
            patience: 5,
            batch_size: 8,
            dropout: 0.2,
            seed: 11,
            ..TrainConfig::default()
        };
        let model =
            Cdcnn::init(small_model_config(), &mut Rng::new(cfg.seed).derive(STREAM_INIT))
                .unwrap();
        train(model, &train_split, &val_split, &cfg).unwrap()
    };
    let (model_a, report_a) = run();
    let (model_b, report_b) = run();
    assert_eq!(
        serde_json::to_string(&report_a.epochs).unwrap(),
        serde_json::to_string(&report_b.epochs).unwrap()
    );
    for (a, b) in model_a.learnables().iter().zip(model_b.learnables()) {
        assert!(a.bit_eq(b));
    }
    for (a, b) in model_a.blocks.iter().zip(&model_b.blocks) {
        assert!(a.bn.running_mean.bit_eq(&b.bn.running_mean));
        assert!(a.bn.running_var.bit_eq(&b.bn.running_var));
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            let (train_split, val_split) = two_subject_splits(4, 29);
            let cfg = TrainConfig {
                max_epochs: 3,
                patience: 3,
                batch_size: 8,
                seed: 5,
                ..TrainConfig::default()
            };
            let model =
                Cdcnn::init(small_model_config(), &mut Rng::new(cfg.seed).derive(STREAM_INIT))
                    .unwrap();
            train(model, &train_split, &val_split, &cfg).unwrap()
        })
    };
    let (model_1, report_1) = run(1);
    let (model_4, report_4) = run(4);
    assert_eq!(report_1.best_epoch, report_4.best_epoch);
    for (a, b) in model_1.learnables().iter().zip(model_4.learnables()) {
        assert!(a.bit_eq(b), "parameters diverged across thread counts");
    }
}

#[test]
fn untrained_model_scores_near_chance_on_balanced_data() {
    let ds = generate_synthetic(4, 30, 31); // 480 windows, balanced
    let model = Cdcnn::init(small_model_config(), &mut Rng::new(77)).unwrap();
    let acc = evaluate_split(&model, &ds).unwrap();
    assert!(
        (acc - 0.25).abs() < 0.1,
        "untrained accuracy {acc} not near chance"
    );
}

#[test]
fn fresh_model_first_batch_loss_is_near_ln4() {
    use cdcnn::dataset::{apply_normalizer, fit_normalizer};
    let (mut train_split, _) = two_subject_splits(16, 37);
    let norm = fit_normalizer(&train_split).unwrap();
    apply_normalizer(&mut train_split, &norm).unwrap();
    let mut model =
        Cdcnn::init(small_model_config(), &mut Rng::new(1).derive(STREAM_INIT)).unwrap();
    let indices: Vec<usize> = (0..64).collect();
    let (x, labels) = batch_from_windows(&train_split, &indices);
    let mut rng = Rng::new(1).derive(STREAM_TRAIN);
    let (logits, _) = model.forward_train(&x, &mut rng).unwrap();
    let (loss, _) = softmax_cross_entropy(&logits, &labels).unwrap();
    assert!(
        ((loss as f64) - 4.0f64.ln()).abs() < 0.3,
        "first-batch loss {loss}"
    );
}

#[test]
fn best_params_reproduce_recorded_validation_accuracy() {
    let (train_split, val_split) = two_subject_splits(6, 41);
    let cfg = TrainConfig {
        max_epochs: 8,
        patience: 8,
        batch_size: 8,
        seed: 13,
        ..TrainConfig::default()
    };
    let model =
        Cdcnn::init(small_model_config(), &mut Rng::new(cfg.seed).derive(STREAM_INIT)).unwrap();
    let (best, report) = train(model, &train_split, &val_split, &cfg).unwrap();
    let recorded = report.epochs[report.best_epoch - 1].val_acc;
    assert_eq!(recorded, report.best_val_acc);
    let reeval = evaluate_split(&best, &val_split).unwrap();
    assert_eq!(reeval, recorded, "returned snapshot does not reproduce best val acc");
    assert!(report.stopped_epoch - report.best_epoch <= cfg.patience);
    let max_val = report.epochs.iter().map(|e| e.val_acc).fold(0.0, f64::max);
    assert_eq!(max_val, report.best_val_acc);
}

#[test]
fn training_rejects_subject_overlap_between_splits() {
    let ds = generate_synthetic(2, 3, 43);
    let spec = SplitSpec {
        train: vec![1, 2],
        val: vec![],
        test: vec![],
    };
    let (train_split, _, _) = split_by_subject(ds.clone(), &spec).unwrap();
    let cfg = TrainConfig::default();
    let model = Cdcnn::init(small_model_config(), &mut Rng::new(1)).unwrap();
    // same subjects on both sides
    let err = train(model, &train_split, &train_split, &cfg).unwrap_err();
    assert!(err.to_string().contains("subject"), "{err}");
}

#[test]
fn linear_baseline_separates_a_separable_set() {
    // Two classes, margin carried by channel 0: class 0 at -2, class 1 at +2.
    let mut ds = Dataset::empty();
    let mut rng = Rng::new(53);
    for i in 0..80u64 {
        let label = (i % 2) as usize;
        let center = if label == 0 { -2.0 } else { 2.0 };
        let mut values = vec![0.0f32; 160 * 24];
        for t in 0..160 {
            for c in 0..24 {
                values[t * 24 + c] = 0.3 * rng.normal_f32() + if c == 0 { center } else { 0.0 };
            }
        }
        ds.windows.push(cdcnn::dataset::SensorWindow {
            values: Tensor::from_vec(&[160, 24], values).unwrap(),
            label,
            subject_id: 1 + (i % 4) as u32,
            sample_id: i,
        });
    }
    let spec = SplitSpec {
        train: vec![1, 2, 3],
        val: vec![4],
        test: vec![],
    };
    let (train_split, val_split, _) = split_by_subject(ds, &spec).unwrap();
    let cfg = TrainConfig {
        max_epochs: 60,
        patience: 60,
        batch_size: 8,
        seed: 3,
        ..TrainConfig::default()
    };
    let model = LinearBaseline::init(
        LinearConfig {
            in_channels: 24,
            time_steps: 160,
            num_classes: 4,
        },
        &mut Rng::new(cfg.seed).derive(STREAM_INIT),
    )
    .unwrap();
    let (best, _) = train(model, &train_split, &val_split, &cfg).unwrap();
    let train_acc = evaluate_split(&best, &train_split).unwrap();
    assert!(train_acc >= 0.99, "baseline train accuracy {train_acc}");
}
