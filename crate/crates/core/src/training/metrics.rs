use std::collections::HashMap;

/// Lowercase, drop punctuation and the articles a/an/the, collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered: String = text
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    lowered
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn exact_match(prediction: &str, gold: &str) -> f64 {
    f64::from(u8::from(normalize_answer(prediction) == normalize_answer(gold)))
}

/// Harmonic mean of token-bag precision and recall.
pub fn f1_score(prediction: &str, gold: &str) -> f64 {
    let pred = normalize_answer(prediction);
    let gold = normalize_answer(gold);
    let pred_tokens: Vec<&str> = pred.split_whitespace().collect();
    let gold_tokens: Vec<&str> = gold.split_whitespace().collect();
    if pred_tokens.is_empty() || gold_tokens.is_empty() {
        return f64::from(u8::from(pred_tokens == gold_tokens));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gold_tokens {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &pred_tokens {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred_tokens.len() as f64;
    let recall = common as f64 / gold_tokens.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Best score over gold answers; an empty list means the question is
/// unanswerable and only an empty prediction scores.
pub fn best_over_golds(prediction: Option<&str>, golds: &[String], metric: fn(&str, &str) -> f64) -> f64 {
    match (prediction, golds.is_empty()) {
        (None, true) => 1.0,
        (None, false) | (Some(_), true) => 0.0,
        (Some(p), false) => golds.iter().map(|g| metric(p, g)).fold(0.0, f64::max),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn normalization() {
        assert_eq!(normalize_answer("The  London, Exhibition!"), "london exhibition");
        assert_eq!(normalize_answer("an apple a day"), "apple day");
    }

    #[test]
    fn worked_pair() {
        let f1 = f1_score("London Exhibition in 1862", "London Exhibition");
        assert_abs_diff_eq!(f1, 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(exact_match("London Exhibition in 1862", "London Exhibition"), 0.0);
        assert_eq!(exact_match("the London Exhibition.", "London exhibition"), 1.0);
        assert_eq!(f1_score("London Exhibition", "London Exhibition"), 1.0);
    }

    #[test]
    fn unanswerable_handling() {
        assert_eq!(best_over_golds(None, &[], exact_match), 1.0);
        assert_eq!(best_over_golds(Some("x"), &[], f1_score), 0.0);
        assert_eq!(best_over_golds(None, &["x".into()], f1_score), 0.0);
        assert_eq!(best_over_golds(Some("b"), &["a".into(), "b".into()], exact_match), 1.0);
    }

    proptest! {
        #[test]
        fn em_never_exceeds_f1(p in "[a-c ]{0,12}", g in "[a-c ]{1,12}") {
            prop_assert!(exact_match(&p, &g) <= f1_score(&p, &g));
            let f = f1_score(&p, &g);
            prop_assert!((0.0..=1.0).contains(&f));
        }
    }
}
