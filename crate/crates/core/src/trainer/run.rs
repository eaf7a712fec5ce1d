use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::arch::{self, ArchitectureSpec};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::io;
use crate::nn::{softmax_cross_entropy, Graph};
use crate::rng::{self, Stream};
use crate::trainer::checkpoint::{checkpoint_file_name, Checkpoint};
use crate::trainer::config::TrainConfig;
use crate::trainer::eval::{argmax, batch_tensor, evaluate_state};
use crate::trainer::sgd::{apply_running_updates, MomentumSgd};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean minibatch loss over the epoch (augmented inputs, train-mode).
    pub train_loss: f64,
    pub train_acc: f64,
    /// End-of-epoch eval accuracy; absent when the dataset has no test split.
    pub test_acc: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRunRecord {
    pub run_id: String,
    pub dataset_id: String,
    pub architecture: ArchitectureSpec,
    pub arch_fingerprint: String,
    pub param_count: usize,
    pub config: TrainConfig,
    pub seed: u64,
    pub train_examples: usize,
    /// Update count → checkpoint file name.
    pub checkpoints: BTreeMap<u64, String>,
    pub epochs: Vec<EpochMetrics>,
}

impl TrainRunRecord {
    pub fn final_test_accuracy(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.test_acc)
    }

    /// `epoch,train_loss,train_acc,test_acc,lr`
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,test_acc,lr\n");
        for e in &self.epochs {
            let test = e.test_acc.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                e.epoch, e.train_loss, e.train_acc, test, e.lr
            );
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub record: TrainRunRecord,
    pub checkpoints: BTreeMap<u64, Checkpoint>,
}

#[derive(Serialize)]
struct RunKey<'a> {
    arch_fingerprint: &'a str,
    dataset_id: &'a str,
    config: &'a TrainConfig,
    seed: u64,
}

/// Identifier (and cache key) of a trial: hash of architecture fingerprint,
/// dataset id, training config and seed.
pub fn run_id(arch: &ArchitectureSpec, dataset_id: &str, config: &TrainConfig, seed: u64) -> String {
    let key = RunKey {
        arch_fingerprint: &arch.fingerprint(),
        dataset_id,
        config,
        seed,
    };
    io::hash_json(&key)[..20].to_owned()
}

/// One seeded trial of minibatch momentum SGD.
///
/// Initialization, per-epoch shuffling and augmentation draws come from
/// separate streams of `seed`. Parameters are snapshotted after exactly `T`
/// updates for every `T` in `config.checkpoint_updates` (`T = 0` is the
/// initialization).
pub fn train_trial(
    spec: &ArchitectureSpec,
    dataset: &Dataset,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    let train = dataset.split(Split::Train);
    if train.is_empty() {
        return Err(Error::validation(
            "dataset",
            format!("{} has an empty train split", dataset.id()),
        ));
    }
    config.validate_for(train.len())?;
    if spec.input_shape != dataset.shape() || spec.num_classes != dataset.num_classes() {
        return Err(Error::validation(
            "architecture",
            format!(
                "{} ({} inputs, {} classes) does not fit {} ({} images, {} classes)",
                spec.label(),
                spec.input_shape,
                spec.num_classes,
                dataset.id(),
                dataset.shape(),
                dataset.num_classes()
            ),
        ));
    }
    let arch = arch::build(spec)?;
    let run_id = run_id(spec, dataset.id(), config, seed);
    let has_test = dataset.split_len(Split::Test) > 0;

    let mut state = arch.init(seed);
    let mut optimizer = MomentumSgd::new(config.momentum, config.weight_decay, &state);
    let mut shuffle_rng = rng::stream(seed, Stream::Shuffle);
    let mut augment_rng = rng::stream(seed, Stream::Augment);

    let mut checkpoints = BTreeMap::new();
    let snapshot = |state: &crate::nn::ModelState, updates: u64, out: &mut BTreeMap<u64, Checkpoint>| {
        if config.checkpoint_updates.binary_search(&updates).is_ok() {
            out.insert(
                updates,
                Checkpoint {
                    run_id: run_id.clone(),
                    architecture: spec.clone(),
                    seed,
                    update_count: updates,
                    state: state.clone(),
                },
            );
        }
    };
    snapshot(&state, 0, &mut checkpoints);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut updates = 0u64;
    let mut epochs = Vec::with_capacity(config.max_epochs);
    for epoch in 0..config.max_epochs {
        let lr = config.lr_at_epoch(epoch);
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch_idx in order.chunks(config.batch_size) {
            let records: Vec<_> = batch_idx.iter().map(|&i| train[i]).collect();
            let input = batch_tensor(dataset, &records, &mut augment_rng, config.augment)?;
            let labels: Vec<usize> = records.iter().map(|r| r.label).collect();

            let (grads, running, batch_loss, batch_correct) = {
                let mut graph = Graph::new(&state, true);
                let x = graph.input(input);
                let logits_var = arch.forward(&mut graph, x);
                let logits = graph.value(logits_var);
                let (losses, dlogits) = softmax_cross_entropy(logits, &labels);
                let mean = losses.iter().sum::<f64>() / losses.len() as f64;
                if !mean.is_finite() {
                    return Err(Error::Diverged {
                        update: updates + 1,
                        loss: mean,
                    });
                }
                let k = logits.shape[1];
                let hits = logits
                    .data
                    .chunks(k)
                    .zip(&labels)
                    .filter(|(row, &y)| argmax(row) == y)
                    .count();
                let grads = graph.backward(logits_var, dlogits);
                (grads, graph.running_updates().to_vec(), losses.iter().sum::<f64>(), hits)
            };
            optimizer.step(&mut state, &grads, lr);
            apply_running_updates(&mut state, &running);
            updates += 1;
            loss_sum += batch_loss;
            correct += batch_correct;
            snapshot(&state, updates, &mut checkpoints);
        }
        let test_acc = if has_test {
            Some(evaluate_state(arch.as_ref(), &state, dataset, Split::Test)?.accuracy())
        } else {
            None
        };
        log::debug!(
            "run {run_id} epoch {epoch}: loss {:.4} acc {:.4} test {:?}",
            loss_sum / train.len() as f64,
            correct as f64 / train.len() as f64,
            test_acc
        );
        epochs.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            test_acc,
            lr,
        });
    }

    let record = TrainRunRecord {
        run_id: run_id.clone(),
        dataset_id: dataset.id().to_owned(),
        architecture: spec.clone(),
        arch_fingerprint: spec.fingerprint(),
        param_count: arch.param_count(),
        config: config.clone(),
        seed,
        train_examples: train.len(),
        checkpoints: checkpoints
            .keys()
            .map(|&t| (t, checkpoint_file_name(&run_id, t)))
            .collect(),
        epochs,
    };
    Ok(TrainOutcome {
        record,
        checkpoints,
    })
}
