use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{Prepared, PreparedChoice, PreparedExtractive};
use crate::encoder::ModelParams;
use crate::error::{Error, Result};
use crate::model;
use crate::numerics::{Matrix, ParamGrads, Tape};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-3,
            batch_size: 16,
            epochs: 20,
            seed: 13,
            optimizer: Optimizer::adam(),
            clip_norm: Some(1.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} is invalid", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip norm {c} must be positive")));
            }
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
                return Err(Error::Config("Adam needs betas in [0, 1) and eps > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss per step.
    pub step_losses: Vec<f64>,
    /// Mean example loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
    /// Examples left out because their answer was truncated away.
    pub skipped: usize,
}

/// Loss and parameter gradients of one example; `None` for untrainable items.
pub(crate) fn extractive_grads(params: &ModelParams, item: &PreparedExtractive) -> Result<Option<(f64, ParamGrads)>> {
    let mut tape = Tape::new();
    let Some(loss) = model::span_loss_on_tape(&mut tape, params, &item.input)? else {
        return Ok(None);
    };
    let value = tape.value(loss).item();
    Ok(Some((value, tape.backward(loss, params.len()))))
}

pub(crate) fn choice_grads(params: &ModelParams, item: &PreparedChoice) -> Result<(f64, ParamGrads)> {
    let mut tape = Tape::new();
    let loss = model::choice_loss_on_tape(&mut tape, params, &item.inputs, item.example.gold)?;
    let value = tape.value(loss).item();
    Ok((value, tape.backward(loss, params.len())))
}

/// Mean loss and summed gradients over a batch, accumulated in batch order.
fn batch_grads(params: &ModelParams, data: &Prepared, batch: &[usize]) -> Result<Option<(f64, Vec<Matrix>, usize)>> {
    let per_example: Vec<Result<Option<(f64, ParamGrads)>>> = match data {
        Prepared::Extractive(items) => batch
            .par_iter()
            .map(|&i| extractive_grads(params, &items[i]))
            .collect(),
        Prepared::Choice(items) => batch
            .par_iter()
            .map(|&i| choice_grads(params, &items[i]).map(Some))
            .collect(),
    };
    let mut total: Vec<Matrix> = params.values().iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect();
    let mut loss = 0.0;
    let mut count = 0;
    for result in per_example {
        let Some((l, grads)) = result? else { continue };
        loss += l;
        count += 1;
        for (acc, g) in total.iter_mut().zip(grads) {
            if let Some(g) = g {
                acc.add_assign(&g);
            }
        }
    }
    if count == 0 {
        return Ok(None);
    }
    let scale = 1.0 / count as f64;
    for g in &mut total {
        for v in g.data_mut() {
            *v *= scale;
        }
    }
    Ok(Some((loss * scale, total, count)))
}

/// Optimizer state for one run.
struct OptimizerState {
    kind: Optimizer,
    step: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl OptimizerState {
    fn new(kind: Optimizer, params: &ModelParams) -> Self {
        let zeros = || params.values().iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect();
        Self {
            kind,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    fn apply(&mut self, params: &mut ModelParams, grads: &[Matrix], lr: f64) {
        self.step += 1;
        match self.kind {
            Optimizer::Sgd => {
                for (p, g) in params.values_mut().iter_mut().zip(grads) {
                    for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *pv -= lr * gv;
                    }
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.step);
                let c2 = 1.0 - beta2.powi(self.step);
                for (k, p) in params.values_mut().iter_mut().enumerate() {
                    let g = grads[k].data();
                    let m = self.m[k].data_mut();
                    let v = self.v[k].data_mut();
                    for (i, pv) in p.data_mut().iter_mut().enumerate() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        *pv -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}

fn clip(grads: &mut [Matrix], max_norm: f64) {
    let norm = grads.iter().map(Matrix::sum_squares).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
}

/// Minibatch training. Deterministic given the config seed.
pub fn train(params: &mut ModelParams, data: &Prepared, cfg: &TrainConfig) -> Result<TrainReport> {
    train_with(params, data, cfg, |_, _| Ok(()))
}

/// [`train`] with a hook called after every epoch with the epoch index.
pub fn train_with(
    params: &mut ModelParams,
    data: &Prepared,
    cfg: &TrainConfig,
    mut after_epoch: impl FnMut(usize, &ModelParams) -> Result<()>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = OptimizerState::new(cfg.optimizer, params);
    let mut report = TrainReport {
        skipped: data.untrainable(),
        ..TrainReport::default()
    };
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_count = 0;
        for batch in order.chunks(cfg.batch_size) {
            let Some((loss, mut grads, count)) = batch_grads(params, data, batch)? else {
                continue;
            };
            let step = report.steps;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training {
                    step,
                    message: format!("non-finite loss {loss}"),
                });
            }
            if let Some(c) = cfg.clip_norm {
                clip(&mut grads, c);
            }
            state.apply(params, &grads, cfg.learning_rate);
            report.step_losses.push(loss);
            report.steps += 1;
            epoch_loss += loss * count as f64;
            epoch_count += count;
        }
        report.epoch_losses.push(epoch_loss / epoch_count.max(1) as f64);
        after_epoch(epoch, params)?;
    }
    Ok(report)
}

/// Mean loss over a dataset without updating anything.
pub fn mean_loss(params: &ModelParams, data: &Prepared) -> Result<f64> {
    let all: Vec<usize> = (0..data.len()).collect();
    let losses: Vec<Result<Option<f64>>> = match data {
        Prepared::Extractive(items) => all
            .par_iter()
            .map(|&i| {
                let mut tape = Tape::new();
                let loss = model::span_loss_on_tape(&mut tape, params, &items[i].input)?;
                Ok(loss.map(|l| tape.value(l).item()))
            })
            .collect(),
        Prepared::Choice(items) => all
            .par_iter()
            .map(|&i| {
                let mut tape = Tape::new();
                let item = &items[i];
                let loss = model::choice_loss_on_tape(&mut tape, params, &item.inputs, item.example.gold)?;
                Ok(Some(tape.value(loss).item()))
            })
            .collect(),
    };
    let mut sum = 0.0;
    let mut count = 0;
    for l in losses {
        if let Some(v) = l? {
            sum += v;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Input("no example contributes a loss".into()));
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::fixtures;
    use crate::training::gradcheck::batch_gradients;

    fn cfg(lr: f64, optimizer: Optimizer, epochs: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: lr,
            batch_size: 4,
            epochs,
            seed: 5,
            optimizer,
            clip_norm: None,
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let (mut params, data) = fixtures::extractive(8, true, 2);
        let before = params.clone();
        for opt in [Optimizer::Sgd, Optimizer::adam()] {
            train(&mut params, &data, &cfg(0.0, opt, 1)).unwrap();
            assert_eq!(params, before);
        }
    }

    #[test]
    fn one_sgd_step_is_minus_lr_times_mean_gradient() {
        let (mut params, data) = fixtures::extractive(4, true, 2);
        let before = params.clone();
        let grads = batch_gradients(&before, &data, &[0, 1, 2, 3]).unwrap();
        let lr = 0.1;
        let mut c = cfg(lr, Optimizer::Sgd, 1);
        c.batch_size = 4;
        train(&mut params, &data, &c).unwrap();
        for k in 0..params.len() {
            let old = before.values()[k].data();
            let new = params.values()[k].data();
            for i in 0..old.len() {
                let g = grads[k].as_ref().map_or(0.0, |g| g.data()[i]) / 4.0;
                assert!((new[i] - (old[i] - lr * g)).abs() < 1e-12, "{} {i}", params.infos()[k].name);
            }
        }
    }

    #[test]
    fn clipping_caps_the_step_norm() {
        let (mut params, data) = fixtures::extractive(4, true, 1);
        let before = params.clone();
        let mut c = cfg(1.0, Optimizer::Sgd, 1);
        c.clip_norm = Some(1e-3);
        train(&mut params, &data, &c).unwrap();
        let step: f64 = params
            .values()
            .iter()
            .zip(before.values())
            .map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        assert!((step - 1e-3).abs() < 1e-9, "{step}");
    }

    #[test]
    fn same_seed_same_parameters() {
        let (init, data) = fixtures::extractive(12, true, 2);
        let mut a = init.clone();
        let mut b = init.clone();
        let ra = train(&mut a, &data, &cfg(2e-3, Optimizer::adam(), 2)).unwrap();
        let rb = train(&mut b, &data, &cfg(2e-3, Optimizer::adam(), 2)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        let mut c = init;
        let mut other = cfg(2e-3, Optimizer::adam(), 2);
        other.seed = 6;
        train(&mut c, &data, &other).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn small_learning_rate_lowers_training_loss() {
        for (mut params, data) in [fixtures::extractive(24, true, 3), fixtures::choice(12, 3)] {
            let initial = mean_loss(&params, &data).unwrap();
            let report = train(&mut params, &data, &cfg(1e-3, Optimizer::adam(), 4)).unwrap();
            let last = mean_loss(&params, &data).unwrap();
            assert!(last < initial, "{initial} -> {last}");
            assert_eq!(report.epoch_losses.len(), 4);
        }
    }

    #[test]
    fn diverging_run_reports_the_step() {
        let (mut params, data) = fixtures::extractive(4, false, 1);
        let k = params.id_of("heads.span.weight").unwrap().0;
        params.values_mut()[k].data_mut()[0] = f64::NAN;
        let err = train(&mut params, &data, &cfg(1e-3, Optimizer::Sgd, 1)).unwrap_err();
        assert!(matches!(err, Error::Training { step: 0, .. }), "{err}");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let (mut params, data) = fixtures::extractive(2, false, 1);
        for bad in [
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { learning_rate: -1.0, ..TrainConfig::default() },
            TrainConfig { clip_norm: Some(0.0), ..TrainConfig::default() },
        ] {
            assert!(matches!(train(&mut params, &data, &bad), Err(Error::Config(_))));
        }
    }
}
