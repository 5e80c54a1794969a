use std::collections::hash_map::Entry;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::data::{choice_vocab, extractive_vocab, prepare_choice, prepare_extractive, Prepared};
use super::eval::{evaluate, EvalReport};
use super::train::{train, TrainConfig, TrainReport};
use crate::data::{generate_synthetic_choice, generate_synthetic_extractive, AssembleConfig, RuleTagger, Vocab};
use crate::encoder::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::integration::Strategy;

/// Seeds used for every multi-seed comparison.
pub const SWEEP_SEEDS: [u64; 3] = [13, 42, 71];

/// A fixed train/dev split plus the model and optimizer settings shared by
/// every run on it.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub vocab: Vocab,
    pub train_data: Prepared,
    pub dev_data: Prepared,
}

/// Per-run knobs layered over an [`Experiment`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RunSpec {
    pub pos_embedding: bool,
    pub turns: usize,
    pub strategy: Strategy,
    pub seed: u64,
}

impl Experiment {
    pub fn new(model: ModelConfig, train: TrainConfig, vocab: Vocab, train_data: Prepared, dev_data: Prepared) -> Result<Self> {
        if train_data.kind() != dev_data.kind() {
            return Err(Error::Input("train and dev sets are different tasks".into()));
        }
        let model = ModelConfig {
            vocab_size: vocab.len(),
            ..model
        };
        model.validate()?;
        train.validate()?;
        Ok(Self {
            model,
            train,
            vocab,
            train_data,
            dev_data,
        })
    }

    /// Key-lookup extractive task; dev uses the next data seed.
    pub fn synthetic_extractive(
        model: ModelConfig,
        train: TrainConfig,
        sizes: (usize, usize),
        pos_dependency: bool,
        data_seed: u64,
    ) -> Result<Self> {
        let train_ex = generate_synthetic_extractive(data_seed, sizes.0, pos_dependency);
        let dev_ex = generate_synthetic_extractive(data_seed.wrapping_add(1), sizes.1, pos_dependency);
        let vocab = extractive_vocab(&train_ex);
        let cfg = AssembleConfig::new(model.max_positions);
        let train_data = prepare_extractive(&train_ex, &vocab, &cfg, &RuleTagger)?;
        let dev_data = prepare_extractive(&dev_ex, &vocab, &cfg, &RuleTagger)?;
        Self::new(model, train, vocab, train_data, dev_data)
    }

    /// Scattered-evidence choice task with `k` facts.
    pub fn synthetic_choice(model: ModelConfig, train: TrainConfig, sizes: (usize, usize), k: usize, data_seed: u64) -> Result<Self> {
        if !(1..=4).contains(&k) {
            return Err(Error::Config(format!("k = {k} outside 1..=4")));
        }
        let train_ex = generate_synthetic_choice(data_seed, sizes.0, k);
        let dev_ex = generate_synthetic_choice(data_seed.wrapping_add(1), sizes.1, k);
        let vocab = choice_vocab(&train_ex);
        let cfg = AssembleConfig::new(model.max_positions);
        let train_data = prepare_choice(&train_ex, &vocab, &cfg, &RuleTagger)?;
        let dev_data = prepare_choice(&dev_ex, &vocab, &cfg, &RuleTagger)?;
        Self::new(model, train, vocab, train_data, dev_data)
    }

    pub fn config_for(&self, spec: &RunSpec) -> ModelConfig {
        ModelConfig {
            pos_embedding: spec.pos_embedding,
            max_turns: spec.turns,
            strategy: spec.strategy,
            seed: spec.seed,
            ..self.model.clone()
        }
    }

    /// Initializes and trains one model. Model and data-order seeds both come
    /// from `spec.seed`.
    pub fn run(&self, spec: &RunSpec) -> Result<(ModelParams, TrainReport)> {
        let mut params = ModelParams::init(&self.config_for(spec))?;
        let cfg = TrainConfig {
            seed: spec.seed,
            ..self.train.clone()
        };
        let report = train(&mut params, &self.train_data, &cfg)?;
        Ok((params, report))
    }

    /// Dev evaluation, optionally with corrupted tags. The threshold is fit
    /// on the evaluated set.
    pub fn evaluate(&self, params: &ModelParams, corruption: f64, seed: u64) -> Result<EvalReport> {
        if corruption > 0.0 {
            evaluate(params, &self.dev_data.with_corrupted_tags(corruption, seed)?, None)
        } else {
            evaluate(params, &self.dev_data, None)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub pos_embedding: bool,
    pub turns: usize,
    pub strategy: Strategy,
    pub corruption: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(flatten)]
    pub cell: SweepCell,
    pub per_seed: Vec<f64>,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    /// `em` or `accuracy`.
    pub metric: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("pos_embedding\tturns\tstrategy\tcorruption");
        for s in &self.seeds {
            out.push_str(&format!("\tseed_{s}"));
        }
        out.push_str(&format!("\tmean_{}\n", self.metric));
        for row in &self.rows {
            let c = &row.cell;
            out.push_str(&format!(
                "{}\t{}\t{}\t{:.2}",
                if c.pos_embedding { "on" } else { "off" },
                c.turns,
                c.strategy,
                c.corruption
            ));
            for v in &row.per_seed {
                out.push_str(&format!("\t{v:.6}"));
            }
            out.push_str(&format!("\t{:.6}\n", row.mean));
        }
        out
    }

    pub fn find(&self, pred: impl Fn(&SweepCell) -> bool) -> Option<&SweepRow> {
        self.rows.iter().find(|r| pred(&r.cell))
    }
}

/// Every combination of the given axis values.
pub fn full_factorial(pos: &[bool], turns: &[usize], strategies: &[Strategy], corruption: &[f64]) -> Vec<SweepCell> {
    let mut cells = Vec::new();
    for &pos_embedding in pos {
        for &t in turns {
            for &strategy in strategies {
                for &c in corruption {
                    cells.push(SweepCell {
                        pos_embedding,
                        turns: t,
                        strategy,
                        corruption: c,
                    });
                }
            }
        }
    }
    cells
}

/// Trains each distinct model once per seed and evaluates every cell.
///
/// Corruption only touches evaluation inputs, so cells differing only in
/// corruption share a trained model. With at most one turn every strategy
/// produces the same model, so those runs are shared too.
pub fn ablation_sweep(exp: &Experiment, cells: &[SweepCell], seeds: &[u64]) -> Result<SweepTable> {
    ablation_sweep_with(exp, cells, seeds, |_, _| {})
}

/// [`ablation_sweep`] with a progress hook called after each cell-seed evaluation.
pub fn ablation_sweep_with(
    exp: &Experiment,
    cells: &[SweepCell],
    seeds: &[u64],
    mut progress: impl FnMut(&SweepCell, f64),
) -> Result<SweepTable> {
    if seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    let mut trained: HashMap<RunSpec, ModelParams> = HashMap::new();
    let mut rows = Vec::with_capacity(cells.len());
    for cell in cells {
        if !(0.0..=1.0).contains(&cell.corruption) {
            return Err(Error::Config(format!("corruption {} outside [0, 1]", cell.corruption)));
        }
        let mut per_seed = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let spec = RunSpec {
                pos_embedding: cell.pos_embedding,
                turns: cell.turns,
                strategy: if cell.turns <= 1 { Strategy::default() } else { cell.strategy },
                seed,
            };
            let params = match trained.entry(spec) {
                Entry::Occupied(e) => e.into_mut(),
                Entry::Vacant(e) => e.insert(exp.run(&spec)?.0),
            };
            let report = exp.evaluate(params, cell.corruption, seed)?;
            progress(cell, report.headline());
            per_seed.push(report.headline());
        }
        let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        rows.push(SweepRow {
            cell: *cell,
            per_seed,
            mean,
        });
    }
    Ok(SweepTable {
        metric: match exp.dev_data.kind() {
            super::TaskKind::Extractive => "em".into(),
            super::TaskKind::Choice => "accuracy".into(),
        },
        seeds: seeds.to_vec(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Experiment {
        let train = TrainConfig {
            epochs: 1,
            batch_size: 8,
            ..TrainConfig::default()
        };
        Experiment::synthetic_extractive(ModelConfig::default(), train, (16, 12), true, 3).unwrap()
    }

    #[test]
    fn strategy_by_turn_grid_has_twenty_cells() {
        let cells = full_factorial(&[true], &[0, 1, 2, 3, 4], &Strategy::ALL, &[0.0]);
        assert_eq!(cells.len(), 20);
        let exp = tiny();
        let table = ablation_sweep(&exp, &cells, &[13]).unwrap();
        assert_eq!(table.rows.len(), 20);
        assert_eq!(table.metric, "em");
        for t in [0, 1] {
            let rows: Vec<&SweepRow> = table.rows.iter().filter(|r| r.cell.turns == t).collect();
            assert!(rows.iter().all(|r| r.per_seed == rows[0].per_seed));
        }
        assert_eq!(table.to_tsv().lines().count(), 21);
        let back: SweepTable = serde_json::from_str(&table.to_json().unwrap()).unwrap();
        assert_eq!(back, table);
    }

    #[test]
    fn clean_cell_matches_a_direct_run() {
        let exp = tiny();
        let cell = SweepCell {
            pos_embedding: true,
            turns: 2,
            strategy: Strategy::Weighted,
            corruption: 0.0,
        };
        let table = ablation_sweep(&exp, &[cell], &[42]).unwrap();
        let spec = RunSpec {
            pos_embedding: true,
            turns: 2,
            strategy: Strategy::Weighted,
            seed: 42,
        };
        let (params, _) = exp.run(&spec).unwrap();
        let direct = evaluate(&params, &exp.dev_data, None).unwrap();
        assert_eq!(table.rows[0].per_seed, vec![direct.headline()]);
        assert_eq!(table.rows[0].mean, direct.headline());
    }

    #[test]
    fn bad_axes_are_rejected() {
        let exp = tiny();
        let cell = SweepCell {
            pos_embedding: false,
            turns: 1,
            strategy: Strategy::Average,
            corruption: 1.5,
        };
        assert!(matches!(ablation_sweep(&exp, &[cell], &[1]), Err(Error::Config(_))));
        assert!(matches!(ablation_sweep(&exp, &[], &[]), Err(Error::Config(_))));
    }
}
