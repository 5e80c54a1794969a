//! Whole-model forward passes: embedding, encoder, co-attention, heads.

use crate::coattention::{self, AttentionTrace};
use crate::data::{SpanTarget, TokenizedInput};
use crate::encoder::{self, ModelParams};
use crate::error::{Error, Result};
use crate::heads::{self, HeadParams, SpanPrediction};
use crate::numerics::{Matrix, Tape, Var};

/// `R` for one sequence on the tape, plus the co-attention trace.
pub(crate) fn representation_on_tape(tape: &mut Tape, params: &ModelParams, input: &TokenizedInput) -> Result<(Var, AttentionTrace)> {
    let cfg = params.config();
    let e = encoder::embed_on_tape(tape, params, input)?;
    let e = encoder::encode_on_tape(tape, params, e, input.valid_mask())?;
    coattention::coattend_on_tape(tape, e, &input.split, cfg.max_turns, cfg.strategy)
}

/// Final representation `R` and the trace, without recording gradients.
pub fn representation(params: &ModelParams, input: &TokenizedInput) -> Result<(Matrix, AttentionTrace)> {
    let mut tape = Tape::new();
    let (r, trace) = representation_on_tape(&mut tape, params, input)?;
    Ok((tape.value(r).clone(), trace))
}

/// Span loss for one extractive sequence; `None` when its answer was truncated away.
pub(crate) fn span_loss_on_tape(tape: &mut Tape, params: &ModelParams, input: &TokenizedInput) -> Result<Option<Var>> {
    let target = input
        .target
        .ok_or_else(|| Error::Input("extractive loss needs a span target".into()))?;
    let Some((ys, ye)) = target.indices() else {
        return Ok(None);
    };
    let (r, _) = representation_on_tape(tape, params, input)?;
    let ids = params.layout.heads;
    let w = tape.param(ids.span_w, params.get(ids.span_w));
    let b = tape.param(ids.span_b, params.get(ids.span_b));
    let logits = tape.matmul(r, w);
    let logits = tape.add_row_bias(logits, b);
    let start = tape.slice_cols(logits, 0, 1);
    let end = tape.slice_cols(logits, 1, 1);
    let valid = input.valid_mask();
    let ls = tape.nll(start, valid, ys)?;
    let le = tape.nll(end, valid, ye)?;
    Ok(Some(tape.add(ls, le)))
}

/// Cross-entropy over the options of one multi-choice example.
pub(crate) fn choice_loss_on_tape(tape: &mut Tape, params: &ModelParams, options: &[TokenizedInput], gold: usize) -> Result<Var> {
    if options.len() < 2 {
        return Err(Error::Input(format!("{} options, at least 2 needed", options.len())));
    }
    let ids = params.layout.heads;
    let w = tape.param(ids.choice_w, params.get(ids.choice_w));
    let b = tape.param(ids.choice_b, params.get(ids.choice_b));
    let mut logits = Vec::with_capacity(options.len());
    for input in options {
        let (r, _) = representation_on_tape(tape, params, input)?;
        let pooled = tape.max_pool_rows(r, input.valid_mask())?;
        let logit = tape.matmul(pooled, w);
        logits.push(tape.add_row_bias(logit, b));
    }
    let row = tape.concat_cols(&logits);
    tape.nll(row, &vec![true; options.len()], gold)
}

/// Start/end distributions for one extractive sequence.
pub fn span_distributions(params: &ModelParams, input: &TokenizedInput) -> Result<(Vec<f64>, Vec<f64>, AttentionTrace)> {
    let (r, trace) = representation(params, input)?;
    let (s, e) = heads::span_distributions(&r, &HeadParams::from_model(params), input.valid_mask())?;
    Ok((s, e, trace))
}

/// Decoded span with the answer text sliced from `passage`.
pub fn predict_span(params: &ModelParams, input: &TokenizedInput, passage: &str, delta: f64) -> Result<SpanPrediction> {
    let (s, e, _) = span_distributions(params, input)?;
    let mut p = heads::decode_span(&s, &e, delta, params.config().max_answer_len, input.passage_range.clone())?;
    if p.answerable {
        p.answer_text = input.span_text(passage, p.start, p.end).unwrap_or_default();
    }
    Ok(p)
}

/// Option probabilities for one multi-choice example.
pub fn predict_choice(params: &ModelParams, options: &[TokenizedInput]) -> Result<Vec<f64>> {
    let reps = options
        .iter()
        .map(|input| Ok((representation(params, input)?.0, input.valid_mask().to_vec())))
        .collect::<Result<Vec<_>>>()?;
    heads::score_options(&reps, &HeadParams::from_model(params))
}

/// Whether an extractive input can contribute a training loss.
pub fn is_trainable(input: &TokenizedInput) -> bool {
    !matches!(input.target, Some(SpanTarget::Truncated) | None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{assemble_extractive, generate_synthetic_extractive, AssembleConfig, RuleTagger, Vocab};
    use crate::encoder::ModelConfig;
    use crate::integration::Strategy;

    fn setup(turns: usize, strategy: Strategy) -> (ModelParams, Vec<TokenizedInput>) {
        let data = generate_synthetic_extractive(1, 6, false);
        let vocab = Vocab::build(data.iter().flat_map(|e| [e.passage.as_str(), e.question.as_str()]));
        let cfg = ModelConfig {
            vocab_size: vocab.len(),
            max_turns: turns,
            strategy,
            ..ModelConfig::default()
        };
        let inputs = data
            .iter()
            .map(|e| assemble_extractive(e, &vocab, &AssembleConfig::new(cfg.max_positions), &RuleTagger).unwrap())
            .collect();
        (ModelParams::init(&cfg).unwrap(), inputs)
    }

    #[test]
    fn tape_loss_matches_pure_heads() {
        let (params, inputs) = setup(3, Strategy::Forgetting);
        for input in &inputs {
            let mut tape = Tape::new();
            let loss = span_loss_on_tape(&mut tape, &params, input).unwrap().unwrap();
            let (s, e, _) = span_distributions(&params, input).unwrap();
            let (ys, ye) = input.target.unwrap().indices().unwrap();
            let pure = heads::span_loss(&s, &e, ys, ye).unwrap();
            assert!((tape.value(loss).item() - pure).abs() < 1e-12);
        }
    }

    #[test]
    fn pure_and_tape_representations_agree() {
        let (params, inputs) = setup(2, Strategy::Intuition);
        let input = &inputs[0];
        let (r, trace) = representation(&params, input).unwrap();
        let e = encoder::embed(&params, input).unwrap();
        let e = encoder::encode_context(&params, &e, input.valid_mask()).unwrap();
        let (r2, trace2) = coattention::coattend(&e, &input.split, 2, Strategy::Intuition).unwrap();
        assert_eq!(r, r2);
        assert_eq!(trace, trace2);
    }

    #[test]
    fn choice_loss_is_cross_entropy() {
        let (params, inputs) = setup(1, Strategy::Average);
        let options = &inputs[..4];
        let probs = predict_choice(&params, options).unwrap();
        let mut tape = Tape::new();
        let loss = choice_loss_on_tape(&mut tape, &params, options, 2).unwrap();
        assert!((tape.value(loss).item() + probs[2].ln()).abs() < 1e-12);
    }
}
