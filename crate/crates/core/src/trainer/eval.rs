use std::collections::BTreeMap;

use crate::arch::{self, Architecture};
use crate::data::{preprocess_into, Dataset, ExampleRecord, Split};
use crate::error::{Error, Result};
use crate::nn::{softmax_cross_entropy, Graph, ModelState, Tensor};
use crate::rng::{self, Stream, StreamRng};
use crate::trainer::checkpoint::Checkpoint;

/// Small enough that a full activation tape stays within a few hundred MB.
pub const EVAL_BATCH: usize = 32;

/// Stacks preprocessed images into an `[n, c, h, w]` tensor.
pub(crate) fn batch_tensor(
    dataset: &Dataset,
    records: &[&ExampleRecord],
    rng: &mut StreamRng,
    augment: bool,
) -> Result<Tensor> {
    let shape = dataset.shape();
    let per = shape.len();
    let mut data = vec![0.0; records.len() * per];
    for (r, out) in records.iter().zip(data.chunks_mut(per)) {
        preprocess_into(dataset.pixels(r), shape, rng, augment, out)?;
    }
    Ok(Tensor::new(
        vec![records.len(), shape.channels, shape.height, shape.width],
        data,
    ))
}

pub(crate) struct SplitEvaluation {
    pub ids: Vec<String>,
    pub losses: Vec<f64>,
    pub correct: Vec<bool>,
}

impl SplitEvaluation {
    pub fn accuracy(&self) -> f64 {
        self.correct.iter().filter(|&&c| c).count() as f64 / self.correct.len() as f64
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Eval-mode forward pass over every example of `split`, in manifest order.
pub(crate) fn evaluate_state(
    arch: &dyn Architecture,
    state: &ModelState,
    dataset: &Dataset,
    split: Split,
) -> Result<SplitEvaluation> {
    let records = dataset.split(split);
    if records.is_empty() {
        return Err(Error::validation(
            "split",
            format!("{split} split of {} is empty", dataset.id()),
        ));
    }
    let mut unused = rng::stream(0, Stream::Augment);
    let mut out = SplitEvaluation {
        ids: Vec::with_capacity(records.len()),
        losses: Vec::with_capacity(records.len()),
        correct: Vec::with_capacity(records.len()),
    };
    for chunk in records.chunks(EVAL_BATCH) {
        let input = batch_tensor(dataset, chunk, &mut unused, false)?;
        let labels: Vec<usize> = chunk.iter().map(|r| r.label).collect();
        let mut graph = Graph::new(state, false);
        let x = graph.input(input);
        let logits_var = arch.forward(&mut graph, x);
        let logits = graph.value(logits_var);
        let (losses, _) = softmax_cross_entropy(logits, &labels);
        let k = logits.shape[1];
        for ((r, loss), row) in chunk.iter().zip(losses).zip(logits.data.chunks(k)) {
            out.ids.push(r.id.clone());
            out.losses.push(loss);
            out.correct.push(argmax(row) == r.label);
        }
    }
    Ok(out)
}

fn check_compatible(checkpoint: &Checkpoint, dataset: &Dataset) -> Result<Box<dyn Architecture>> {
    let spec = &checkpoint.architecture;
    if spec.input_shape != dataset.shape() {
        return Err(Error::validation(
            "checkpoint",
            format!(
                "architecture expects {} inputs but {} holds {} images",
                spec.input_shape,
                dataset.id(),
                dataset.shape()
            ),
        ));
    }
    if spec.num_classes != dataset.num_classes() {
        return Err(Error::validation(
            "checkpoint",
            format!(
                "architecture has {} outputs but {} declares {} classes",
                spec.num_classes,
                dataset.id(),
                dataset.num_classes()
            ),
        ));
    }
    arch::build(spec)
}

/// Cross-entropy of every example in `split`, keyed by example id.
pub fn evaluate_per_example_loss(
    checkpoint: &Checkpoint,
    dataset: &Dataset,
    split: Split,
) -> Result<BTreeMap<String, f64>> {
    let arch = check_compatible(checkpoint, dataset)?;
    let eval = evaluate_state(arch.as_ref(), &checkpoint.state, dataset, split)?;
    Ok(eval.ids.into_iter().zip(eval.losses).collect())
}

/// Top-1 accuracy over `split`.
pub fn evaluate_accuracy(checkpoint: &Checkpoint, dataset: &Dataset, split: Split) -> Result<f64> {
    let arch = check_compatible(checkpoint, dataset)?;
    Ok(evaluate_state(arch.as_ref(), &checkpoint.state, dataset, split)?.accuracy())
}
