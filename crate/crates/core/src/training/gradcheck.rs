use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::Prepared;
use super::train::{choice_grads, extractive_grads};
use crate::encoder::{Component, ModelParams};
use crate::error::{Error, Result};
use crate::model;
use crate::numerics::{Matrix, Tape};

/// Denominator floor for relative errors. Central differences at step 1e-5
/// carry roughly 1e-10 of rounding noise, so smaller gradients are compared
/// against this floor instead of their own size.
pub const RELATIVE_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckedScalar {
    pub param: String,
    pub component: Component,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Smallest selection gap of any max/argmax taken during the forward pass.
    pub margin: f64,
    pub checked: Vec<CheckedScalar>,
}

impl GradCheckReport {
    pub fn components(&self) -> Vec<Component> {
        let mut out: Vec<Component> = self.checked.iter().map(|c| c.component).collect();
        out.sort_by_key(|c| *c as u8);
        out.dedup();
        out
    }
}

/// Total loss over `batch` and the smallest decision margin seen.
pub fn batch_loss(params: &ModelParams, data: &Prepared, batch: &[usize]) -> Result<(f64, f64)> {
    let mut total = 0.0;
    let mut margin = f64::INFINITY;
    for &i in batch {
        let mut tape = Tape::new();
        let loss = match data {
            Prepared::Extractive(items) => model::span_loss_on_tape(&mut tape, params, &items[i].input)?,
            Prepared::Choice(items) => Some(model::choice_loss_on_tape(
                &mut tape,
                params,
                &items[i].inputs,
                items[i].example.gold,
            )?),
        };
        if let Some(l) = loss {
            total += tape.value(l).item();
        }
        margin = margin.min(tape.decision_margin());
    }
    Ok((total, margin))
}

/// Summed analytic gradients over `batch`; `None` marks tensors no example touched.
pub fn batch_gradients(params: &ModelParams, data: &Prepared, batch: &[usize]) -> Result<Vec<Option<Matrix>>> {
    let mut total: Vec<Option<Matrix>> = vec![None; params.len()];
    for &i in batch {
        let grads = match data {
            Prepared::Extractive(items) => match extractive_grads(params, &items[i])? {
                Some((_, g)) => g,
                None => continue,
            },
            Prepared::Choice(items) => choice_grads(params, &items[i])?.1,
        };
        for (acc, g) in total.iter_mut().zip(grads) {
            if let Some(g) = g {
                match acc {
                    Some(a) => a.add_assign(&g),
                    None => *acc = Some(g),
                }
            }
        }
    }
    Ok(total)
}

/// Draws random batches until `count` of them keep every max/argmax gap at
/// least `min_margin`, so finite differences never cross a selection boundary.
pub fn tie_free_batches(
    params: &ModelParams,
    data: &Prepared,
    batch_size: usize,
    count: usize,
    min_margin: f64,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 || batch_size > data.len() {
        return Err(Error::Input(format!("batch size {batch_size} invalid for {} examples", data.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count * 50 {
        if out.len() == count {
            break;
        }
        let batch = rand::seq::index::sample(&mut rng, data.len(), batch_size).into_vec();
        if batch_loss(params, data, &batch)?.1 >= min_margin {
            out.push(batch);
        }
    }
    if out.len() < count {
        return Err(Error::Input(format!("found only {} tie-free batches", out.len())));
    }
    Ok(out)
}

/// Compares tape gradients with central differences on sampled scalars.
///
/// From every tensor that receives a gradient, `per_tensor` scalars are drawn
/// from rows with a nonzero gradient (so embedding tables are sampled at the
/// rows the batch actually uses).
pub fn gradient_check(
    params: &ModelParams,
    data: &Prepared,
    batch: &[usize],
    per_tensor: usize,
    epsilon: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    if batch.is_empty() {
        return Err(Error::Input("gradient check needs a non-empty batch".into()));
    }
    let (_, margin) = batch_loss(params, data, batch)?;
    let grads = batch_gradients(params, data, batch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = params.clone();
    let mut checked = Vec::new();
    for (k, grad) in grads.iter().enumerate() {
        let Some(grad) = grad else { continue };
        let rows: Vec<usize> = (0..grad.rows()).filter(|&r| grad.row(r).iter().any(|&v| v != 0.0)).collect();
        let candidates: Vec<usize> = rows
            .iter()
            .flat_map(|&r| (0..grad.cols()).map(move |c| r * grad.cols() + c))
            .collect();
        for &index in candidates.choose_multiple(&mut rng, per_tensor) {
            let original = params.values()[k].data()[index];
            probe.values_mut()[k].data_mut()[index] = original + epsilon;
            let (plus, _) = batch_loss(&probe, data, batch)?;
            probe.values_mut()[k].data_mut()[index] = original - epsilon;
            let (minus, _) = batch_loss(&probe, data, batch)?;
            probe.values_mut()[k].data_mut()[index] = original;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let analytic = grad.data()[index];
            let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
            let info = &params.infos()[k];
            checked.push(CheckedScalar {
                param: info.name.clone(),
                component: info.component,
                index,
                analytic,
                numeric,
                relative_error: (analytic - numeric).abs() / denom,
            });
        }
    }
    let max_relative_error = checked.iter().map(|c| c.relative_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_relative_error,
        margin,
        checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::fixtures;

    #[test]
    fn tape_gradients_match_finite_differences() {
        let (params, data) = fixtures::extractive(12, true, 3);
        let batch = &tie_free_batches(&params, &data, 3, 1, 1e-4, 1).unwrap()[0];
        let report = gradient_check(&params, &data, batch, 3, 1e-5, 1).unwrap();
        assert!(report.margin >= 1e-4);
        let worst = report.checked.iter().max_by(|a, b| a.relative_error.total_cmp(&b.relative_error)).unwrap();
        assert!(report.max_relative_error < 1e-4, "{worst:?}");
        let covered = report.components();
        for c in [Component::Embedding, Component::PosEmbedding, Component::Encoder, Component::Heads] {
            assert!(covered.contains(&c), "{c:?} unchecked");
        }
    }

    #[test]
    fn choice_gradients_match_finite_differences() {
        let (params, data) = fixtures::choice(2, 2);
        let report = gradient_check(&params, &data, &[0, 1], 2, 1e-5, 2).unwrap();
        assert!(report.max_relative_error < 1e-4, "{}", report.max_relative_error);
    }

    #[test]
    fn unused_parameters_get_no_gradient() {
        let (params, data) = fixtures::extractive(3, true, 2);
        let grads = batch_gradients(&params, &data, &[0, 1, 2]).unwrap();
        for name in ["heads.choice.weight", "heads.choice.bias"] {
            assert!(grads[params.id_of(name).unwrap().0].is_none(), "{name}");
        }
        let (params, data) = fixtures::choice(2, 2);
        let grads = batch_gradients(&params, &data, &[0, 1]).unwrap();
        for name in ["heads.span.weight", "heads.span.bias"] {
            assert!(grads[params.id_of(name).unwrap().0].is_none(), "{name}");
        }
    }
}
