//! Output heads: option scoring, span distributions, span decoding and the
//! answerability threshold.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::encoder::ModelParams;
use crate::error::{Error, Result};
use crate::numerics::{dot, masked_softmax, max_pool_rows, softmax, Matrix};

/// Weights of both heads, copied out of [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    /// `H x 1`
    pub choice_weight: Matrix,
    pub choice_bias: f64,
    /// `H x 2`: start column, end column.
    pub span_weight: Matrix,
    pub span_bias: [f64; 2],
}

impl HeadParams {
    pub fn from_model(params: &ModelParams) -> Self {
        let ids = &params.layout.heads;
        let span_bias = params.get(ids.span_b);
        Self {
            choice_weight: params.get(ids.choice_w).clone(),
            choice_bias: params.get(ids.choice_b).item(),
            span_weight: params.get(ids.span_w).clone(),
            span_bias: [span_bias.get(0, 0), span_bias.get(0, 1)],
        }
    }

    pub fn choice_scalars(&self) -> usize {
        self.choice_weight.len() + 1
    }

    pub fn span_scalars(&self) -> usize {
        self.span_weight.len() + 2
    }
}

/// One option's logit: max-pool over non-PAD rows, then the linear layer.
pub fn choice_logit(r: &Matrix, valid: &[bool], head: &HeadParams) -> Result<f64> {
    if r.cols() != head.choice_weight.rows() {
        return Err(Error::Dimension(format!(
            "representation width {} vs head input {}",
            r.cols(),
            head.choice_weight.rows()
        )));
    }
    let pooled = max_pool_rows(r, valid)?;
    Ok(dot(&pooled, head.choice_weight.data()) + head.choice_bias)
}

/// Probabilities over options.
pub fn score_options(reps: &[(Matrix, Vec<bool>)], head: &HeadParams) -> Result<Vec<f64>> {
    if reps.len() < 2 {
        return Err(Error::Input(format!("{} options, at least 2 needed", reps.len())));
    }
    let logits = reps
        .iter()
        .map(|(r, valid)| choice_logit(r, valid, head))
        .collect::<Result<Vec<_>>>()?;
    Ok(softmax(&logits))
}

/// Raw start and end logits per row.
pub fn span_logits(r: &Matrix, head: &HeadParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let out = r.matmul(&head.span_weight)?;
    let start = (0..r.rows()).map(|i| out.get(i, 0) + head.span_bias[0]).collect();
    let end = (0..r.rows()).map(|i| out.get(i, 1) + head.span_bias[1]).collect();
    Ok((start, end))
}

/// Start and end distributions over non-PAD rows.
pub fn span_distributions(r: &Matrix, head: &HeadParams, valid: &[bool]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (start, end) = span_logits(r, head)?;
    Ok((masked_softmax(&start, valid)?, masked_softmax(&end, valid)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanPrediction {
    pub start: usize,
    pub end: usize,
    pub score_has: f64,
    pub score_no: f64,
    pub final_score: f64,
    pub answerable: bool,
    /// Filled in by the caller, which owns the passage text.
    pub answer_text: String,
}

/// Best passage span by `s_i + e_j` and the thresholded answerability verdict.
pub fn decode_span(s: &[f64], e: &[f64], delta: f64, max_answer_len: usize, passage: Range<usize>) -> Result<SpanPrediction> {
    if s.len() != e.len() {
        return Err(Error::Dimension(format!("start has {} entries, end {}", s.len(), e.len())));
    }
    if passage.is_empty() {
        return Err(Error::Input("empty passage range".into()));
    }
    if passage.start == 0 || passage.end > s.len() {
        return Err(Error::Input(format!(
            "passage range {passage:?} must lie within 1..{}",
            s.len()
        )));
    }
    if max_answer_len == 0 {
        return Err(Error::Input("max_answer_len must be positive".into()));
    }
    let mut best = (passage.start, passage.start, f64::NEG_INFINITY);
    for i in passage.clone() {
        let last = (i + max_answer_len).min(passage.end);
        for j in i..last {
            let score = s[i] + e[j];
            if score > best.2 {
                best = (i, j, score);
            }
        }
    }
    let (start, end, score_has) = best;
    let score_no = s[0] + e[0];
    let final_score = score_has - score_no;
    Ok(SpanPrediction {
        start,
        end,
        score_has,
        score_no,
        final_score,
        answerable: final_score > delta,
        answer_text: String::new(),
    })
}

/// Threshold maximizing answerability accuracy under `final > δ`.
///
/// Among optimal thresholds the midpoint of the widest interval wins, lowest
/// interval on ties. The unbounded end intervals count as infinitely wide
/// and yield `±∞`; so does a single-class sample.
pub fn fit_threshold(final_scores: &[f64], has_answer: &[bool]) -> Result<f64> {
    if final_scores.is_empty() || final_scores.len() != has_answer.len() {
        return Err(Error::Input(format!(
            "{} scores and {} labels",
            final_scores.len(),
            has_answer.len()
        )));
    }
    if final_scores.iter().any(|v| v.is_nan()) {
        return Err(Error::Input("NaN final score".into()));
    }
    let mut pairs: Vec<(f64, bool)> = final_scores.iter().copied().zip(has_answer.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Interval k is [v_k, v_{k+1}) over distinct sorted values, with
    // v_0 = -inf; δ there marks every score ≤ v_k unanswerable.
    let mut correct: i64 = pairs.iter().filter(|p| p.1).count() as i64;
    let mut best_correct = correct;
    let mut best: (f64, f64) = (f64::NEG_INFINITY, pairs[0].0);
    let mut i = 0;
    while i < pairs.len() {
        let value = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == value {
            correct += if pairs[i].1 { -1 } else { 1 };
            i += 1;
        }
        let upper = pairs.get(i).map_or(f64::INFINITY, |p| p.0);
        let wider = (upper - value) > (best.1 - best.0);
        if correct > best_correct || (correct == best_correct && wider) {
            best_correct = correct;
            best = (value, upper);
        }
    }
    let (lo, hi) = best;
    Ok(if lo == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else if hi == f64::INFINITY {
        f64::INFINITY
    } else {
        let mid = lo + (hi - lo) / 2.0;
        if mid < hi {
            mid
        } else {
            lo
        }
    })
}

/// `-log s[y_s] - log e[y_e]`.
pub fn span_loss(s: &[f64], e: &[f64], y_s: usize, y_e: usize) -> Result<f64> {
    let ps = s.get(y_s).copied().unwrap_or(0.0);
    let pe = e.get(y_e).copied().unwrap_or(0.0);
    if ps <= 0.0 || pe <= 0.0 {
        return Err(Error::Input(format!(
            "span target ({y_s}, {y_e}) is on a masked or missing position"
        )));
    }
    Ok(-ps.ln() - pe.ln())
}

/// `-log p[gold]`.
pub fn choice_loss(probabilities: &[f64], gold: usize) -> Result<f64> {
    let p = probabilities
        .get(gold)
        .ok_or_else(|| Error::Input(format!("gold index {gold} out of range")))?;
    Ok(-p.ln())
}

/// One line of a prediction dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    /// Empty when predicted unanswerable.
    pub answer_text: String,
    pub final_score: f64,
    pub delta: f64,
}

pub fn write_predictions(records: &[PredictionRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn head(h: usize) -> HeadParams {
        HeadParams {
            choice_weight: Matrix::column((0..h).map(|i| 0.1 * i as f64 - 0.2).collect()),
            choice_bias: 0.3,
            span_weight: Matrix::from_vec(h, 2, (0..2 * h).map(|i| ((i * 7) % 5) as f64 * 0.1).collect()).unwrap(),
            span_bias: [0.0, 0.1],
        }
    }

    #[test]
    fn head_sizes() {
        let h = head(8);
        assert_eq!(h.choice_scalars(), 9);
        assert_eq!(h.span_scalars(), 18);
    }

    #[test]
    fn option_scoring() {
        let h = head(3);
        let r = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![0.0, -1.0, 5.0]]).unwrap();
        let reps = vec![(r.clone(), vec![true, true]); 4];
        for p in score_options(&reps, &h).unwrap() {
            assert_abs_diff_eq!(p, 0.25, epsilon = 1e-15);
        }
        assert!(score_options(&reps[..1], &h).is_err());
        let p = softmax(&[3f64.ln(), 0.0, 0.0, 0.0]);
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 1.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(choice_loss(&p, 0).unwrap(), 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(choice_loss(&[0.25; 4], 2).unwrap(), 4f64.ln(), epsilon = 1e-15);
        assert_eq!(choice_loss(&[1.0, 0.0], 0).unwrap(), 0.0);
    }

    #[test]
    fn option_permutation_equivariance() {
        let h = head(2);
        let reps: Vec<(Matrix, Vec<bool>)> = (0..4)
            .map(|k| (Matrix::from_rows(&[vec![k as f64, 1.0 - k as f64]]).unwrap(), vec![true]))
            .collect();
        let p = score_options(&reps, &h).unwrap();
        let perm = [2, 0, 3, 1];
        let permuted: Vec<_> = perm.iter().map(|&i| reps[i].clone()).collect();
        let q = score_options(&permuted, &h).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(q[k], p[i]);
        }
    }

    #[test]
    fn span_distribution_masking() {
        let h = HeadParams {
            span_weight: Matrix::zeros(2, 2),
            ..head(2)
        };
        let r = Matrix::zeros(5, 2);
        let (s, e) = span_distributions(&r, &h, &[true, true, true, true, false]).unwrap();
        assert_eq!(&s[..4], &[0.25; 4]);
        assert_eq!(&e[..4], &[0.25; 4]);
        assert_eq!((s[4], e[4]), (0.0, 0.0));
        assert_abs_diff_eq!(span_loss(&s, &e, 1, 2).unwrap(), 2.0 * 4f64.ln(), epsilon = 1e-12);
        assert!(span_loss(&s, &e, 4, 4).is_err());
        assert_eq!(span_loss(&[0.0, 1.0], &[0.0, 1.0], 1, 1).unwrap(), 0.0);
    }

    #[test]
    fn decode_worked_example() {
        let s = [0.5, 0.1, 0.3, 0.1];
        let e = [0.5, 0.1, 0.1, 0.3];
        let p = decode_span(&s, &e, 0.0, 30, 1..4).unwrap();
        assert_eq!((p.start, p.end), (2, 3));
        assert_abs_diff_eq!(p.score_has, 0.6, epsilon = 1e-15);
        assert_eq!(p.score_no, 1.0);
        assert_abs_diff_eq!(p.final_score, -0.4, epsilon = 1e-15);
        assert!(!p.answerable);
        assert!(decode_span(&s, &e, 0.0, 30, 2..2).is_err());
    }

    #[test]
    fn decode_point_mass() {
        for k in 1..6 {
            let mut s = vec![0.0; 6];
            s[k] = 1.0;
            let p = decode_span(&s, &s, f64::NEG_INFINITY, 30, 1..6).unwrap();
            assert_eq!((p.start, p.end), (k, k));
            assert!(p.answerable);
        }
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(fit_threshold(&[-1.0, 1.0], &[false, true]).unwrap(), 0.0);
        let d = fit_threshold(&[1.0, -1.0], &[false, true]).unwrap();
        assert_eq!(d, f64::NEG_INFINITY);
        assert_eq!(fit_threshold(&[0.3, 0.2], &[true, true]).unwrap(), f64::NEG_INFINITY);
        assert_eq!(fit_threshold(&[0.3, 0.2], &[false, false]).unwrap(), f64::INFINITY);
        assert!(fit_threshold(&[], &[]).is_err());
    }

    fn accuracy(scores: &[f64], labels: &[bool], delta: f64) -> usize {
        scores.iter().zip(labels).filter(|(s, l)| (**s > delta) == **l).count()
    }

    /// Every distinct threshold behavior is reached at -inf or at a score.
    fn best_by_enumeration(scores: &[f64], labels: &[bool]) -> usize {
        std::iter::once(f64::NEG_INFINITY)
            .chain(scores.iter().copied())
            .map(|d| accuracy(scores, labels, d))
            .max()
            .unwrap()
    }

    fn brute_force(s: &[f64], e: &[f64], max_len: usize, passage: Range<usize>) -> (usize, usize, f64) {
        let mut best = (0, 0, f64::NEG_INFINITY);
        for i in passage.clone() {
            for j in passage.clone() {
                if i <= j && j - i < max_len {
                    let v = s[i] + e[j];
                    if v > best.2 || (v == best.2 && (i, j) < (best.0, best.1)) {
                        best = (i, j, v);
                    }
                }
            }
        }
        best
    }

    proptest! {
        #[test]
        fn decode_matches_brute_force(
            logits in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 3..32),
            max_len in 1usize..8,
            start in 1usize..3,
            delta in -1.0f64..1.0,
        ) {
            let n = logits.len();
            let s = softmax(&logits.iter().map(|p| p.0).collect::<Vec<_>>());
            let e = softmax(&logits.iter().map(|p| p.1).collect::<Vec<_>>());
            let passage = start.min(n - 1)..n;
            let p = decode_span(&s, &e, delta, max_len, passage.clone()).unwrap();
            let (i, j, v) = brute_force(&s, &e, max_len, passage);
            prop_assert_eq!((p.start, p.end), (i, j));
            prop_assert_eq!(p.score_has, v);
            prop_assert_eq!(p.answerable, v - (s[0] + e[0]) > delta);
        }

        #[test]
        fn shift_invariant_verdict(
            logits in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 3..20),
            shift in -5.0f64..5.0,
        ) {
            let sl: Vec<f64> = logits.iter().map(|p| p.0).collect();
            let el: Vec<f64> = logits.iter().map(|p| p.1).collect();
            let n = sl.len();
            let a = decode_span(&softmax(&sl), &softmax(&el), 0.0, 30, 1..n).unwrap();
            let shifted = |v: &[f64]| softmax(&v.iter().map(|x| x + shift).collect::<Vec<_>>());
            let b = decode_span(&shifted(&sl), &shifted(&el), 0.0, 30, 1..n).unwrap();
            prop_assume!((a.final_score).abs() > 1e-9);
            prop_assert_eq!((a.start, a.end, a.answerable), (b.start, b.end, b.answerable));
        }

        #[test]
        fn threshold_is_optimal(
            data in prop::collection::vec((-2i32..3, any::<bool>()), 1..200),
        ) {
            let scores: Vec<f64> = data.iter().map(|d| d.0 as f64 * 0.5).collect();
            let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
            let delta = fit_threshold(&scores, &labels).unwrap();
            prop_assert_eq!(accuracy(&scores, &labels, delta), best_by_enumeration(&scores, &labels));
        }

        #[test]
        fn duplicating_a_pair_keeps_accuracy(
            data in prop::collection::vec((-3.0f64..3.0, any::<bool>()), 1..60),
            pick in any::<prop::sample::Index>(),
        ) {
            let scores: Vec<f64> = data.iter().map(|d| d.0).collect();
            let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
            let before = accuracy(&scores, &labels, fit_threshold(&scores, &labels).unwrap());
            let k = pick.index(data.len());
            let mut s2 = scores.clone();
            let mut l2 = labels.clone();
            s2.push(scores[k]);
            l2.push(labels[k]);
            let after = accuracy(&scores, &labels, fit_threshold(&s2, &l2).unwrap());
            // the duplicate can move the optimum by at most the one copied item
            prop_assert!(after + 1 >= before);
        }
    }
}
