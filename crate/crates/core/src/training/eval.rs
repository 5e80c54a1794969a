use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{Prepared, PreparedChoice, PreparedExtractive, TaskKind};
use super::metrics::{best_over_golds, exact_match, f1_score};
use crate::data::SpanTarget;
use crate::encoder::ModelParams;
use crate::error::{Error, Result};
use crate::heads::{self, PredictionRecord};
use crate::model;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    /// Predicted answer text, or the chosen option index as text.
    pub prediction: String,
    pub correct: bool,
    pub em: f64,
    pub f1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub is_impossible: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: TaskKind,
    pub count: usize,
    /// Extractive only.
    pub em: Option<f64>,
    /// Extractive only.
    pub f1: Option<f64>,
    /// Option accuracy for choice, answerability accuracy for extractive.
    pub accuracy: f64,
    pub delta: Option<f64>,
    /// Share of unanswerable questions predicted unanswerable.
    pub unanswerable_accuracy: Option<f64>,
    pub records: Vec<EvalRecord>,
}

impl EvalReport {
    /// The headline metric: EM for extractive, accuracy for choice.
    pub fn headline(&self) -> f64 {
        self.em.unwrap_or(self.accuracy)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Summary line plus one line per record.
    pub fn to_tsv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6}"));
        let mut out = String::from("task\tcount\tem\tf1\taccuracy\tdelta\tunanswerable_accuracy\n");
        out.push_str(&format!(
            "{:?}\t{}\t{}\t{}\t{:.6}\t{}\t{}\n\nid\tprediction\tcorrect\tem\tf1\tfinal_score\n",
            self.task,
            self.count,
            fmt(self.em),
            fmt(self.f1),
            self.accuracy,
            fmt(self.delta),
            fmt(self.unanswerable_accuracy)
        ));
        for r in &self.records {
            out.push_str(&format!(
                "{}\t{}\t{}\t{:.6}\t{:.6}\t{}\n",
                r.id,
                r.prediction.replace(['\t', '\n'], " "),
                r.correct,
                r.em,
                r.f1,
                fmt(r.final_score)
            ));
        }
        out
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// EM and F1 of one prediction (`None` = unanswerable) against its golds
/// (empty = unanswerable question).
pub fn answer_scores(prediction: Option<&str>, golds: &[String]) -> (f64, f64) {
    (
        best_over_golds(prediction, golds, exact_match),
        best_over_golds(prediction, golds, f1_score),
    )
}

/// Start/end distributions for every item, computed once.
fn span_outputs(params: &ModelParams, items: &[PreparedExtractive]) -> Result<Vec<heads::SpanPrediction>> {
    let max_len = params.config().max_answer_len;
    items
        .par_iter()
        .map(|item| {
            let (s, e, _) = model::span_distributions(params, &item.input)?;
            heads::decode_span(&s, &e, f64::NEG_INFINITY, max_len, item.input.passage_range.clone())
        })
        .collect()
}

/// EM/F1 over extractive items. With `delta = None` the threshold is fit on
/// these items first.
pub fn evaluate_extractive(params: &ModelParams, items: &[PreparedExtractive], delta: Option<f64>) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::Input("evaluation set is empty".into()));
    }
    let raw = span_outputs(params, items)?;
    let delta = match delta {
        Some(d) => d,
        None => {
            let scores: Vec<f64> = raw.iter().map(|p| p.final_score).collect();
            let labels: Vec<bool> = items.iter().map(|i| !i.example.is_impossible).collect();
            heads::fit_threshold(&scores, &labels)?
        }
    };
    let mut records = Vec::with_capacity(items.len());
    for (item, p) in items.iter().zip(&raw) {
        let answerable = p.final_score > delta;
        let text = answerable.then(|| item.input.span_text(&item.example.passage, p.start, p.end).unwrap_or_default());
        let golds: Vec<String> = if item.example.is_impossible {
            Vec::new()
        } else {
            item.example.answers.iter().map(|a| a.text.clone()).collect()
        };
        let truncated = item.input.target == Some(SpanTarget::Truncated);
        let (em, f1) = if truncated { (0.0, 0.0) } else { answer_scores(text.as_deref(), &golds) };
        records.push(EvalRecord {
            id: item.example.id.clone(),
            prediction: text.unwrap_or_default(),
            correct: answerable != item.example.is_impossible,
            em,
            f1,
            final_score: Some(p.final_score),
            is_impossible: Some(item.example.is_impossible),
        });
    }
    let impossible: Vec<&EvalRecord> = records.iter().filter(|r| r.is_impossible == Some(true)).collect();
    Ok(EvalReport {
        task: TaskKind::Extractive,
        count: records.len(),
        em: Some(mean(records.iter().map(|r| r.em))),
        f1: Some(mean(records.iter().map(|r| r.f1))),
        accuracy: mean(records.iter().map(|r| f64::from(u8::from(r.correct)))),
        delta: Some(delta),
        unanswerable_accuracy: (!impossible.is_empty()).then(|| mean(impossible.iter().map(|r| f64::from(u8::from(r.correct))))),
        records,
    })
}

/// Highest-probability option; ties go to the lowest index.
fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

pub fn evaluate_choice(params: &ModelParams, items: &[PreparedChoice]) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::Input("evaluation set is empty".into()));
    }
    let probs = items
        .par_iter()
        .map(|item| model::predict_choice(params, &item.inputs))
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<EvalRecord> = items
        .iter()
        .zip(&probs)
        .map(|(item, p)| {
            let pick = argmax(p);
            let correct = pick == item.example.gold;
            EvalRecord {
                id: item.example.id.clone(),
                prediction: pick.to_string(),
                correct,
                em: f64::from(u8::from(correct)),
                f1: f64::from(u8::from(correct)),
                final_score: None,
                is_impossible: None,
            }
        })
        .collect();
    Ok(EvalReport {
        task: TaskKind::Choice,
        count: records.len(),
        em: None,
        f1: None,
        accuracy: mean(records.iter().map(|r| f64::from(u8::from(r.correct)))),
        delta: None,
        unanswerable_accuracy: None,
        records,
    })
}

pub fn evaluate(params: &ModelParams, data: &Prepared, delta: Option<f64>) -> Result<EvalReport> {
    match data {
        Prepared::Extractive(items) => evaluate_extractive(params, items, delta),
        Prepared::Choice(items) => evaluate_choice(params, items),
    }
}

/// Prediction dump lines for extractive items at a fixed threshold.
pub fn predictions(params: &ModelParams, items: &[PreparedExtractive], delta: f64) -> Result<Vec<PredictionRecord>> {
    let raw = span_outputs(params, items)?;
    Ok(items
        .iter()
        .zip(raw)
        .map(|(item, p)| PredictionRecord {
            id: item.example.id.clone(),
            answer_text: if p.final_score > delta {
                item.input.span_text(&item.example.passage, p.start, p.end).unwrap_or_default()
            } else {
                String::new()
            },
            final_score: p.final_score,
            delta,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::fixtures;

    #[test]
    fn london_pair() {
        let gold = vec!["London Exhibition".to_string()];
        let (em, f1) = answer_scores(Some("London Exhibition in 1862"), &gold);
        assert_eq!(em, 0.0);
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(answer_scores(Some("the London  Exhibition."), &gold), (1.0, 1.0));
        assert_eq!(answer_scores(None, &gold), (0.0, 0.0));
        assert_eq!(answer_scores(None, &[]), (1.0, 1.0));
        assert_eq!(answer_scores(Some("London"), &[]), (0.0, 0.0));
    }

    #[test]
    fn choice_accuracy_matches_a_manual_count() {
        let (params, data) = fixtures::choice(10, 2);
        let Prepared::Choice(items) = &data else { unreachable!() };
        let mut hits = 0;
        for item in items {
            let p = model::predict_choice(&params, &item.inputs).unwrap();
            let best = (0..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b });
            hits += usize::from(best == item.example.gold);
        }
        let report = evaluate(&params, &data, None).unwrap();
        assert_eq!(report.count, 10);
        assert_eq!(report.accuracy, hits as f64 / 10.0);
        assert_eq!(report.records.iter().filter(|r| r.correct).count(), hits);
    }

    #[test]
    fn extractive_report_is_consistent() {
        let (params, data) = fixtures::extractive(20, true, 2);
        let a = evaluate(&params, &data, None).unwrap();
        let b = evaluate(&params, &data, None).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert!(a.em.unwrap() <= a.f1.unwrap());
        for r in &a.records {
            assert!(r.em <= r.f1);
        }
        // The fitted threshold is optimal for answerability accuracy.
        let fixed = evaluate(&params, &data, Some(a.delta.unwrap() + 10.0)).unwrap();
        assert!(fixed.accuracy <= a.accuracy);
        let tsv = a.to_tsv();
        assert_eq!(tsv.lines().count(), 2 + 1 + 1 + 20);
    }

    #[test]
    fn empty_sets_are_rejected() {
        let (params, _) = fixtures::choice(1, 1);
        assert!(matches!(evaluate_choice(&params, &[]), Err(Error::Input(_))));
        assert!(matches!(evaluate_extractive(&params, &[], None), Err(Error::Input(_))));
    }
}
