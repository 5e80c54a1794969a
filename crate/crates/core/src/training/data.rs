use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    assemble_choice, assemble_extractive, AssembleConfig, ChoiceExample, ExtractiveExample, Tagger, TokenizedInput, Vocab,
};
use crate::error::Result;
use crate::model;

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedExtractive {
    pub example: ExtractiveExample,
    pub input: TokenizedInput,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedChoice {
    pub example: ChoiceExample,
    pub inputs: Vec<TokenizedInput>,
}

/// Examples with their assembled inputs.
#[derive(Clone, Debug, PartialEq)]
pub enum Prepared {
    Extractive(Vec<PreparedExtractive>),
    Choice(Vec<PreparedChoice>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Extractive,
    Choice,
}

impl Prepared {
    pub fn len(&self) -> usize {
        match self {
            Prepared::Extractive(v) => v.len(),
            Prepared::Choice(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> TaskKind {
        match self {
            Prepared::Extractive(_) => TaskKind::Extractive,
            Prepared::Choice(_) => TaskKind::Choice,
        }
    }

    /// Extractive items whose gold span did not survive truncation.
    pub fn untrainable(&self) -> usize {
        match self {
            Prepared::Extractive(v) => v.iter().filter(|p| !model::is_trainable(&p.input)).count(),
            Prepared::Choice(_) => 0,
        }
    }

    /// Copy with a fraction of every sequence's word tags replaced. The seed
    /// of item `i` is derived from `seed` and `i`, and all options of a
    /// choice item share it so their passage sides stay identical.
    pub fn with_corrupted_tags(&self, rate: f64, seed: u64) -> Result<Self> {
        let item_seed = |i: usize| seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64);
        Ok(match self {
            Prepared::Extractive(v) => Prepared::Extractive(
                v.iter()
                    .enumerate()
                    .map(|(i, p)| {
                        Ok(PreparedExtractive {
                            example: p.example.clone(),
                            input: p.input.with_corrupted_tags(rate, item_seed(i))?,
                        })
                    })
                    .collect::<Result<_>>()?,
            ),
            Prepared::Choice(v) => Prepared::Choice(
                v.iter()
                    .enumerate()
                    .map(|(i, p)| {
                        Ok(PreparedChoice {
                            example: p.example.clone(),
                            inputs: p
                                .inputs
                                .iter()
                                .map(|x| x.with_corrupted_tags(rate, item_seed(i)))
                                .collect::<Result<_>>()?,
                        })
                    })
                    .collect::<Result<_>>()?,
            ),
        })
    }
}

pub fn prepare_extractive(
    examples: &[ExtractiveExample],
    vocab: &Vocab,
    cfg: &AssembleConfig,
    tagger: &(dyn Tagger + Sync),
) -> Result<Prepared> {
    let items = examples
        .par_iter()
        .map(|ex| {
            Ok(PreparedExtractive {
                input: assemble_extractive(ex, vocab, cfg, tagger)?,
                example: ex.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Prepared::Extractive(items))
}

pub fn prepare_choice(
    examples: &[ChoiceExample],
    vocab: &Vocab,
    cfg: &AssembleConfig,
    tagger: &(dyn Tagger + Sync),
) -> Result<Prepared> {
    let items = examples
        .par_iter()
        .map(|ex| {
            Ok(PreparedChoice {
                inputs: assemble_choice(ex, vocab, cfg, tagger)?,
                example: ex.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Prepared::Choice(items))
}

/// Vocabulary over every text of the given extractive examples.
pub fn extractive_vocab(examples: &[ExtractiveExample]) -> Vocab {
    Vocab::build(examples.iter().flat_map(|e| [e.passage.as_str(), e.question.as_str()]))
}

/// Vocabulary over every text of the given choice examples, options included.
pub fn choice_vocab(examples: &[ChoiceExample]) -> Vocab {
    Vocab::build(examples.iter().flat_map(|e| {
        [e.passage.as_str(), e.question.as_str()]
            .into_iter()
            .chain(e.options.iter().map(String::as_str))
    }))
}
