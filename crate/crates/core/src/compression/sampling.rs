use rand::Rng;

use crate::easiness::{normalize_easiness, EasinessTable};
use crate::error::{Error, Result};

/// Weighted sampling of `k` items without replacement (Efraimidis–Spirakis:
/// each item gets key `ln(u) / w` and the `k` largest keys win).
///
/// One uniform draw is consumed per item, in input order. Zero-weight items
/// are only taken once every positive-weight item is; among themselves they
/// go in input order.
pub fn weighted_sample<R: Rng + ?Sized>(weights: &[f64], k: usize, rng: &mut R) -> Result<Vec<usize>> {
    if k > weights.len() {
        return Err(Error::validation(
            "sample size",
            format!("cannot draw {k} of {} items", weights.len()),
        ));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::validation("weights", format!("invalid weight {w}")));
    }
    let mut keyed: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let u: f64 = rng.random();
            let key = if w > 0.0 {
                (1.0 - u).ln() / w
            } else {
                f64::NEG_INFINITY
            };
            (key, i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(keyed[..k].iter().map(|&(_, i)| i).collect())
}

/// Removal weights in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RemovalWeighting {
    /// Proportional to normalized easiness (hard examples go first).
    Hard,
    /// Proportional to `max e − e_i` (easy examples go first).
    Easy,
    Uniform,
}

pub fn removal_weights(table: &EasinessTable, weighting: RemovalWeighting) -> Result<Vec<f64>> {
    match weighting {
        RemovalWeighting::Uniform => Ok(vec![1.0; table.len()]),
        RemovalWeighting::Hard => Ok(normalize_easiness(table)?.into_values().collect()),
        RemovalWeighting::Easy => {
            normalize_easiness(table)?;
            let max = table
                .entries
                .iter()
                .map(|e| e.easiness)
                .fold(f64::NEG_INFINITY, f64::max);
            let inverted: Vec<f64> = table.entries.iter().map(|e| max - e.easiness).collect();
            let total: f64 = inverted.iter().sum();
            if total.is_nan() || total <= 0.0 {
                return Err(Error::DegenerateEasiness);
            }
            Ok(inverted.into_iter().map(|w| w / total).collect())
        }
    }
}
