mod common;

use easecore::arch::{self, ArchitectureSpec};
use easecore::data::{
    example_id, generate_biased_dataset, DataSource, Dataset, DatasetManifest, ExampleRecord,
    ImageShape, ImageStore, Split, SyntheticBiasSpec, SyntheticDataset, LATENT_DIM,
};
use easecore::nn::ModelState;
use easecore::trainer::{
    evaluate_accuracy, evaluate_per_example_loss, train_trial, Checkpoint, TrainConfig,
};

fn synthetic(classes: usize, per_class: usize, test_per_class: usize, seed: u64) -> SyntheticDataset {
    generate_biased_dataset(&SyntheticBiasSpec {
        num_classes: classes,
        examples_per_class: per_class,
        majority_fraction: 0.8,
        subcluster_separation: 2.0,
        noise_scale: 1.0,
        seed,
        class_separation: 4.0,
        test_examples_per_class: Some(test_per_class),
    })
    .unwrap()
}

fn plain(width: usize, depth: usize, dataset: &Dataset) -> ArchitectureSpec {
    ArchitectureSpec::new("plain-cnn", width, depth, dataset.num_classes(), dataset.shape())
}

fn init_checkpoint(spec: &ArchitectureSpec, seed: u64) -> Checkpoint {
    Checkpoint {
        run_id: "handmade".into(),
        architecture: spec.clone(),
        seed,
        update_count: 0,
        state: arch::build(spec).unwrap().init(seed),
    }
}

fn param_mut<'a>(state: &'a mut ModelState, name: &str) -> &'a mut Vec<f64> {
    &mut state.params.iter_mut().find(|p| p.name == name).unwrap().data
}

#[test]
fn initial_loss_is_close_to_uniform() {
    let data = synthetic(10, 30, 0, 1).dataset;
    let spec = plain(4, 2, &data);
    let mut config = TrainConfig::new(32, 1);
    config.checkpoint_updates = vec![0];
    config.augment = false;
    for seed in 0..3 {
        let outcome = train_trial(&spec, &data, &config, seed).unwrap();
        let ckpt = &outcome.checkpoints[&0];
        assert_eq!(ckpt.state, arch::build(&spec).unwrap().init(seed));
        let losses = evaluate_per_example_loss(ckpt, &data, Split::Train).unwrap();
        let mean = losses.values().sum::<f64>() / losses.len() as f64;
        assert!((mean - 10f64.ln()).abs() < 0.15, "seed {seed}: {mean}");
    }
}

#[test]
fn reruns_are_bit_identical() {
    let data = synthetic(3, 20, 5, 2).dataset;
    let spec = plain(3, 2, &data);
    let mut config = TrainConfig::new(8, 3);
    config.checkpoint_updates = vec![4, 16];
    let a = train_trial(&spec, &data, &config, 11).unwrap();
    let b = train_trial(&spec, &data, &config, 11).unwrap();
    assert_eq!(a.record, b.record);
    assert_eq!(a.record.metrics_csv(), b.record.metrics_csv());
    assert_eq!(a.checkpoints, b.checkpoints);
    let c = train_trial(&spec, &data, &config, 12).unwrap();
    assert_ne!(a.checkpoints[&16].state, c.checkpoints[&16].state);
}

/// Plain gradient descent on the logistic loss over the latents.
fn logistic_regression_accuracy(data: &SyntheticDataset) -> f64 {
    let rows: Vec<([f64; LATENT_DIM], f64)> = data
        .dataset
        .split(Split::Train)
        .iter()
        .map(|r| (data.latents[&r.id], r.label as f64))
        .collect();
    let mut w = [0.0; LATENT_DIM];
    let mut b = 0.0;
    for _ in 0..2000 {
        let mut gw = [0.0; LATENT_DIM];
        let mut gb = 0.0;
        for (x, y) in &rows {
            let z: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b;
            let err = 1.0 / (1.0 + (-z).exp()) - y;
            for d in 0..LATENT_DIM {
                gw[d] += err * x[d];
            }
            gb += err;
        }
        for d in 0..LATENT_DIM {
            w[d] -= 0.1 * gw[d] / rows.len() as f64;
        }
        b -= 0.1 * gb / rows.len() as f64;
    }
    let correct = rows
        .iter()
        .filter(|(x, y)| {
            let z: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b;
            (z > 0.0) == (*y > 0.5)
        })
        .count();
    correct as f64 / rows.len() as f64
}

#[test]
fn separable_two_class_data_is_fit() {
    let data = generate_biased_dataset(&SyntheticBiasSpec {
        num_classes: 2,
        examples_per_class: 100,
        majority_fraction: 0.8,
        subcluster_separation: 0.0,
        noise_scale: 0.5,
        seed: 5,
        class_separation: 6.0,
        test_examples_per_class: Some(0),
    })
    .unwrap();
    assert_eq!(logistic_regression_accuracy(&data), 1.0, "latents are not separable");

    let spec = plain(4, 2, &data.dataset);
    let mut config = TrainConfig::new(10, 100);
    config.augment = false;
    config.checkpoint_updates = vec![2000];
    let outcome = train_trial(&spec, &data.dataset, &config, 0).unwrap();
    let acc = evaluate_accuracy(&outcome.checkpoints[&2000], &data.dataset, Split::Train).unwrap();
    assert!(acc > 0.99, "train accuracy {acc}");
}

#[test]
fn zeroed_classifier_gives_ln_k() {
    let data = synthetic(10, 5, 0, 3).dataset;
    let spec = plain(2, 2, &data);
    let mut ckpt = init_checkpoint(&spec, 0);
    param_mut(&mut ckpt.state, "fc.weight").fill(0.0);
    param_mut(&mut ckpt.state, "fc.bias").fill(0.0);
    let losses = evaluate_per_example_loss(&ckpt, &data, Split::Train).unwrap();
    assert_eq!(losses.len(), 50);
    for loss in losses.values() {
        assert!((loss - 10f64.ln()).abs() < 1e-6);
    }
}

#[test]
fn random_init_accuracy_is_chance() {
    let data = synthetic(10, 2, 1000, 4).dataset;
    assert_eq!(data.split_len(Split::Test), 10_000);
    let spec = plain(4, 2, &data);
    let ckpt = init_checkpoint(&spec, 9);
    let acc = evaluate_accuracy(&ckpt, &data, Split::Test).unwrap();
    assert!((acc - 0.1).abs() <= 0.02, "{acc}");
    assert_eq!(acc, evaluate_accuracy(&ckpt, &data, Split::Test).unwrap());
}

#[test]
fn plain_cnn_gradients_match_finite_differences() {
    let (agree, checked) = common::plain_cnn_gradient_agreement(15);
    assert!(agree as f64 >= 0.95 * checked as f64, "{agree}/{checked}");
}

#[test]
fn checkpoint_round_trip_reproduces_losses() {
    let data = synthetic(3, 20, 5, 6).dataset;
    let spec = plain(3, 2, &data);
    let mut config = TrainConfig::new(10, 2);
    config.checkpoint_updates = vec![5];
    let outcome = train_trial(&spec, &data, &config, 1).unwrap();
    let ckpt = &outcome.checkpoints[&5];
    let before = evaluate_per_example_loss(ckpt, &data, Split::Train).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = ckpt.save(dir.path()).unwrap();
    assert!(path.file_name().unwrap().to_str().unwrap().ends_with(".T5.ckpt"));
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(before, evaluate_per_example_loss(&loaded, &data, Split::Train).unwrap());
}

/// Three 1x2x2 images with the given labels.
fn tiny_dataset(labels: [usize; 3]) -> Dataset {
    let shape = ImageShape { channels: 1, height: 2, width: 2 };
    let examples = labels
        .iter()
        .enumerate()
        .map(|(i, &label)| ExampleRecord {
            id: example_id(Split::Train, i, 3),
            label,
            split: Split::Train,
            offset: i,
        })
        .collect();
    let manifest = DatasetManifest {
        dataset_id: "tiny".into(),
        class_names: vec!["a".into(), "b".into(), "c".into()],
        image_shape: shape,
        source: DataSource::InMemory,
        examples,
    };
    let pixels = vec![0, 50, 200, 255, 10, 10, 10, 90, 255, 0, 0, 255];
    Dataset::new(manifest, ImageStore::new(shape, pixels).unwrap()).unwrap()
}

/// A one-layer plain CNN whose logits are `fc.weight · b + fc.bias` for
/// every input: the conv has zero weights and bias `b > 0`.
fn constant_logit_checkpoint(data: &Dataset, fc_weight: [f64; 3], fc_bias: [f64; 3]) -> Checkpoint {
    let spec = plain(1, 1, data);
    let mut ckpt = init_checkpoint(&spec, 0);
    param_mut(&mut ckpt.state, "conv0.weight").fill(0.0);
    param_mut(&mut ckpt.state, "conv0.bias").copy_from_slice(&[0.5]);
    param_mut(&mut ckpt.state, "fc.weight").copy_from_slice(&fc_weight);
    param_mut(&mut ckpt.state, "fc.bias").copy_from_slice(&fc_bias);
    ckpt
}

#[test]
fn loss_sum_matches_hand_computation() {
    let data = tiny_dataset([0, 2, 1]);
    let ckpt = constant_logit_checkpoint(&data, [2.0, -1.0, 0.0], [0.0, 0.5, 1.0]);
    // logits = [1.0, 0.0, 1.0]
    let z = [1.0f64, 0.0, 1.0];
    let denom = z[0].exp() + z[1].exp() + z[2].exp();
    let expected: f64 = [0usize, 2, 1].iter().map(|&y| -(z[y].exp() / denom).ln()).sum();
    let losses = evaluate_per_example_loss(&ckpt, &data, Split::Train).unwrap();
    let total: f64 = losses.values().sum();
    assert!((total - expected).abs() < 1e-12, "{total} vs {expected}");
    assert!(losses.values().all(|&l| l >= 0.0));
}

#[test]
fn one_hot_prediction_has_zero_loss_and_full_accuracy() {
    let data = tiny_dataset([1, 1, 1]);
    let ckpt = constant_logit_checkpoint(&data, [0.0; 3], [0.0, 1000.0, 0.0]);
    let losses = evaluate_per_example_loss(&ckpt, &data, Split::Train).unwrap();
    assert!(losses.values().all(|&l| l == 0.0), "{losses:?}");
    assert_eq!(evaluate_accuracy(&ckpt, &data, Split::Train).unwrap(), 1.0);
}

#[test]
fn mismatched_checkpoint_is_rejected() {
    let data = tiny_dataset([0, 1, 2]);
    let other = synthetic(3, 2, 0, 1).dataset;
    let ckpt = init_checkpoint(&plain(1, 1, &other), 0);
    let err = evaluate_per_example_loss(&ckpt, &data, Split::Train).unwrap_err();
    assert!(err.to_string().contains("inputs"), "{err}");
    assert!(evaluate_accuracy(&init_checkpoint(&plain(1, 1, &data), 0), &data, Split::Test).is_err());
}
