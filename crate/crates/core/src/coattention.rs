//! Iterative co-attention between the passage and question domains.
//!
//! Each turn pools the previous enhanced matrix per domain, scores every
//! domain token of the *original* encoder output against the other domain's
//! pooled vector, min-max scales the scores and reweights the rows. Only the
//! normalized scores are carried between turns; the enhanced matrix is always
//! `ŝ ⊙ E`. The module has no trainable parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integration::{self, Strategy};
use crate::numerics::{ops, Matrix, Tape, Var};

/// Row roles of one assembled sequence.
///
/// `passage` and `question` are disjoint; rows in neither (`[CLS]`, `[SEP]`,
/// padding) are never rescaled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSplit {
    passage: Vec<bool>,
    question: Vec<bool>,
    valid: Vec<bool>,
}

impl DomainSplit {
    /// `valid` is false on padding rows. Both domains must be non-empty and
    /// consist of valid rows only.
    pub fn new(passage: Vec<bool>, question: Vec<bool>, valid: Vec<bool>) -> Result<Self> {
        let n = valid.len();
        if passage.len() != n || question.len() != n {
            return Err(Error::Dimension(format!(
                "domain masks have lengths {}, {}, {}",
                passage.len(),
                question.len(),
                n
            )));
        }
        for i in 0..n {
            if passage[i] && question[i] {
                return Err(Error::Input(format!("row {i} is in both domains")));
            }
            if (passage[i] || question[i]) && !valid[i] {
                return Err(Error::Input(format!("padding row {i} is inside a domain")));
            }
        }
        if !passage.contains(&true) {
            return Err(Error::EmptyDomain("passage domain has no tokens".into()));
        }
        if !question.contains(&true) {
            return Err(Error::EmptyDomain("question domain has no tokens".into()));
        }
        Ok(Self {
            passage,
            question,
            valid,
        })
    }

    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    pub fn passage_mask(&self) -> &[bool] {
        &self.passage
    }

    pub fn question_mask(&self) -> &[bool] {
        &self.question
    }

    /// False on padding rows.
    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn passage_positions(&self) -> Vec<usize> {
        positions(&self.passage)
    }

    pub fn question_positions(&self) -> Vec<usize> {
        positions(&self.question)
    }

    /// 1.0 on rows outside both domains, 0.0 inside.
    fn passthrough(&self) -> Vec<f64> {
        self.passage
            .iter()
            .zip(&self.question)
            .map(|(&p, &q)| if p || q { 0.0 } else { 1.0 })
            .collect()
    }
}

fn positions(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect()
}

/// Scores of one domain in one turn, over that domain's positions in order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainTurn {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    pub beta: f64,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    /// 1-based.
    pub turn: usize,
    pub passage: DomainTurn,
    pub question: DomainTurn,
}

/// Everything co-attention computed for one sequence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub passage_positions: Vec<usize>,
    pub question_positions: Vec<usize>,
    pub turns: Vec<TurnRecord>,
}

/// Flat per-(turn, domain) record used for JSON export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub turn: usize,
    pub domain: String,
    pub positions: Vec<usize>,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    pub beta: f64,
    pub alpha: f64,
}

impl AttentionTrace {
    pub fn records(&self) -> Vec<TraceRecord> {
        let mut out = Vec::with_capacity(self.turns.len() * 2);
        for t in &self.turns {
            for (domain, positions, d) in [
                ("passage", &self.passage_positions, &t.passage),
                ("question", &self.question_positions, &t.question),
            ] {
                out.push(TraceRecord {
                    turn: t.turn,
                    domain: domain.to_string(),
                    positions: positions.clone(),
                    raw: d.raw.clone(),
                    normalized: d.normalized.clone(),
                    beta: d.beta,
                    alpha: d.alpha,
                });
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.records())?)
    }
}

/// Concentrated representation of a domain: column-wise max over its rows.
pub fn concentrate(enhanced: &Matrix, mask: &[bool]) -> Result<Vec<f64>> {
    ops::max_pool_rows(enhanced, mask)
}

/// Raw and normalized scores of one turn.
#[derive(Clone, Debug, PartialEq)]
pub struct TurnScores {
    pub raw_passage: Vec<f64>,
    pub raw_question: Vec<f64>,
    pub normalized_passage: Vec<f64>,
    pub normalized_question: Vec<f64>,
}

/// One turn from the previous enhanced matrix (`e` itself for the first turn).
pub fn interaction_turn(e: &Matrix, prev_enhanced: &Matrix, split: &DomainSplit) -> Result<TurnScores> {
    check_rows(e, split)?;
    e.check_same_shape(prev_enhanced, "previous enhanced matrix")?;
    let ce_q = concentrate(prev_enhanced, split.question_mask())?;
    let ce_p = concentrate(prev_enhanced, split.passage_mask())?;
    let score = |mask: &[bool], against: &[f64]| -> Vec<f64> {
        positions(mask)
            .into_iter()
            .map(|i| ops::cosine_unchecked(e.row(i), against))
            .collect()
    };
    let raw_passage = score(split.passage_mask(), &ce_q);
    let raw_question = score(split.question_mask(), &ce_p);
    Ok(TurnScores {
        normalized_passage: ops::min_max_scale(&raw_passage)?,
        normalized_question: ops::min_max_scale(&raw_question)?,
        raw_passage,
        raw_question,
    })
}

/// `ŝ ⊙ E` on domain rows; other rows are copied.
pub fn enhance(e: &Matrix, split: &DomainSplit, normalized_passage: &[f64], normalized_question: &[f64]) -> Result<Matrix> {
    check_rows(e, split)?;
    let mut out = e.clone();
    for (mask, scores) in [
        (split.passage_mask(), normalized_passage),
        (split.question_mask(), normalized_question),
    ] {
        let rows = positions(mask);
        if rows.len() != scores.len() {
            return Err(Error::Dimension(format!(
                "{} scores for {} domain rows",
                scores.len(),
                rows.len()
            )));
        }
        for (&r, &s) in rows.iter().zip(scores) {
            for v in out.row_mut(r) {
                *v *= s;
            }
        }
    }
    Ok(out)
}

fn check_rows(e: &Matrix, split: &DomainSplit) -> Result<()> {
    if e.rows() != split.len() {
        return Err(Error::Dimension(format!(
            "split covers {} rows, matrix has {}",
            split.len(),
            e.rows()
        )));
    }
    Ok(())
}

fn beta_from(raw_prev: &[f64]) -> f64 {
    let m = raw_prev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    0.5 * m + 0.5
}

fn push_turn(trace: &mut AttentionTrace, scores: TurnScores) {
    // β of a domain comes from the other domain's raw scores one turn back.
    let (beta_p, beta_q, alpha_p, alpha_q) = match trace.turns.last() {
        None => (1.0, 1.0, 1.0, 1.0),
        Some(prev) => {
            let bp = beta_from(&prev.question.raw);
            let bq = beta_from(&prev.passage.raw);
            (bp, bq, prev.passage.alpha * bp, prev.question.alpha * bq)
        }
    };
    let turn = trace.turns.len() + 1;
    trace.turns.push(TurnRecord {
        turn,
        passage: DomainTurn {
            raw: scores.raw_passage,
            normalized: scores.normalized_passage,
            beta: beta_p,
            alpha: alpha_p,
        },
        question: DomainTurn {
            raw: scores.raw_question,
            normalized: scores.normalized_question,
            beta: beta_q,
            alpha: alpha_q,
        },
    });
}

fn empty_trace(split: &DomainSplit) -> AttentionTrace {
    AttentionTrace {
        passage_positions: split.passage_positions(),
        question_positions: split.question_positions(),
        turns: Vec::new(),
    }
}

/// Runs `turns` turns keeping only the normalized scores between them.
pub fn run_iterations(e: &Matrix, split: &DomainSplit, turns: usize) -> Result<AttentionTrace> {
    check_rows(e, split)?;
    let mut trace = empty_trace(split);
    for _ in 0..turns {
        let prev = match trace.turns.last() {
            None => e.clone(),
            Some(t) => enhance(e, split, &t.passage.normalized, &t.question.normalized)?,
        };
        let scores = interaction_turn(e, &prev, split)?;
        push_turn(&mut trace, scores);
    }
    Ok(trace)
}

/// Same as [`run_iterations`] but keeps every enhanced matrix.
pub fn run_iterations_with_matrices(e: &Matrix, split: &DomainSplit, turns: usize) -> Result<(AttentionTrace, Vec<Matrix>)> {
    check_rows(e, split)?;
    let mut trace = empty_trace(split);
    let mut enhanced = Vec::with_capacity(turns);
    for _ in 0..turns {
        let scores = interaction_turn(e, enhanced.last().unwrap_or(e), split)?;
        enhanced.push(enhance(e, split, &scores.normalized_passage, &scores.normalized_question)?);
        push_turn(&mut trace, scores);
    }
    Ok((trace, enhanced))
}

/// Final representation `R` and the trace. With zero turns `R = E`.
pub fn coattend(e: &Matrix, split: &DomainSplit, turns: usize, strategy: Strategy) -> Result<(Matrix, AttentionTrace)> {
    let trace = run_iterations(e, split, turns)?;
    if turns == 0 {
        return Ok((e.clone(), trace));
    }
    let r = integration::blend(&trace, e, split, strategy)?;
    Ok((r, trace))
}

/// Differentiable co-attention plus blending. Mirrors [`coattend`] operation
/// for operation, so values agree exactly.
pub(crate) fn coattend_on_tape(
    tape: &mut Tape,
    e: Var,
    split: &DomainSplit,
    turns: usize,
    strategy: Strategy,
) -> Result<(Var, AttentionTrace)> {
    check_rows(tape.value(e), split)?;
    let mut trace = empty_trace(split);
    if turns == 0 {
        return Ok((e, trace));
    }
    let pm = split.passage_mask();
    let qm = split.question_mask();
    let passthrough = tape.constant(Matrix::column(split.passthrough()));

    let mut prev = e;
    let mut hats_p = Vec::with_capacity(turns);
    let mut hats_q = Vec::with_capacity(turns);
    let mut betas_p = vec![tape.constant(Matrix::scalar(1.0))];
    let mut betas_q = vec![betas_p[0]];
    for t in 0..turns {
        let ce_q = tape.max_pool_rows(prev, qm)?;
        let ce_p = tape.max_pool_rows(prev, pm)?;
        let raw_p = tape.row_cosine(e, ce_q, pm);
        let raw_q = tape.row_cosine(e, ce_p, qm);
        let hat_p = tape.min_max_scale(raw_p, pm)?;
        let hat_q = tape.min_max_scale(raw_q, qm)?;
        if t + 1 < turns {
            let both = tape.add(hat_p, hat_q);
            let scale = tape.add(both, passthrough);
            prev = tape.scale_rows(e, scale);
            if strategy.uses_beta() {
                let mq = tape.masked_max(raw_q, qm)?;
                let mp = tape.masked_max(raw_p, pm)?;
                betas_p.push(tape.affine(mq, 0.5, 0.5));
                betas_q.push(tape.affine(mp, 0.5, 0.5));
            }
        }
        let pick = |tape: &Tape, v: Var, mask: &[bool]| -> Vec<f64> {
            let d = tape.value(v).data();
            positions(mask).into_iter().map(|i| d[i]).collect()
        };
        let scores = TurnScores {
            raw_passage: pick(tape, raw_p, pm),
            raw_question: pick(tape, raw_q, qm),
            normalized_passage: pick(tape, hat_p, pm),
            normalized_question: pick(tape, hat_q, qm),
        };
        push_turn(&mut trace, scores);
        hats_p.push(hat_p);
        hats_q.push(hat_q);
    }

    let mut per_domain = Vec::with_capacity(2);
    for (hats, betas) in [(hats_p, betas_p), (hats_q, betas_q)] {
        let stacked = tape.concat_cols(&hats);
        let weights = if strategy.uses_beta() {
            let beta_col = tape.concat_rows(&betas);
            let (w, jac) = integration::turn_weights_with_jacobian(tape.value(beta_col).data(), strategy);
            tape.linearized(beta_col, Matrix::column(w), jac)
        } else {
            tape.constant(Matrix::column(integration::turn_weights(&vec![1.0; turns], strategy)?))
        };
        let mixed = tape.matmul(stacked, weights);
        per_domain.push(tape.clamp_unit(mixed));
    }
    let both = tape.add(per_domain[0], per_domain[1]);
    let scale = tape.add(both, passthrough);
    Ok((tape.scale_rows(e, scale), trace))
}
