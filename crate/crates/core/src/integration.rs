//! Blending per-turn normalized scores into the final representation.
//!
//! Every strategy reduces to a convex combination of the turns: the final
//! per-token scale is `Σ_t w^t ŝ^t`, and `R` is that scale applied row-wise
//! to the encoder output. Tokens outside both domains keep scale 1.

use std::fmt;
use std::ops::{Add, Div, Mul};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::coattention::{AttentionTrace, DomainSplit};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Plain mean of the turns.
    Average,
    /// Turns weighted by their β coefficients.
    Weighted,
    /// Each turn is averaged into the running blend with weight β, so older
    /// turns fade.
    #[default]
    Forgetting,
    /// Turns weighted by the running product of β, favoring early turns.
    Intuition,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Average,
        Strategy::Weighted,
        Strategy::Forgetting,
        Strategy::Intuition,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Average => "average",
            Strategy::Weighted => "weighted",
            Strategy::Forgetting => "forgetting",
            Strategy::Intuition => "intuition",
        }
    }

    /// Whether the weights depend on β at all.
    pub fn uses_beta(self) -> bool {
        !matches!(self, Strategy::Average)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown strategy {s:?} (expected average | weighted | forgetting | intuition)"
                ))
            })
    }
}

/// Arithmetic needed by the weight formulas, so one implementation serves
/// both plain values and forward-mode derivatives.
trait Real: Copy + Add<Output = Self> + Mul<Output = Self> + Div<Output = Self> {
    fn constant(v: f64) -> Self;
}

impl Real for f64 {
    fn constant(v: f64) -> Self {
        v
    }
}

/// Value plus derivative along one input direction.
#[derive(Clone, Copy, Debug)]
struct Dual {
    v: f64,
    d: f64,
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual {
            v: self.v + o.v,
            d: self.d + o.d,
        }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual {
            v: self.v * o.v,
            d: self.d * o.v + self.v * o.d,
        }
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        Dual {
            v: self.v / o.v,
            d: (self.d * o.v - self.v * o.d) / (o.v * o.v),
        }
    }
}

impl Real for Dual {
    fn constant(v: f64) -> Self {
        Dual { v, d: 0.0 }
    }
}

fn weights_generic<T: Real>(betas: &[T], strategy: Strategy) -> Vec<T> {
    let turns = betas.len();
    let zero = T::constant(0.0);
    let one = T::constant(1.0);
    match strategy {
        Strategy::Average => vec![T::constant(1.0 / turns as f64); turns],
        Strategy::Weighted => {
            let total = betas.iter().skip(1).fold(betas[0], |acc, &b| acc + b);
            betas.iter().map(|&b| b / total).collect()
        }
        Strategy::Intuition => {
            let mut alphas = Vec::with_capacity(turns);
            let mut running = one;
            for &b in betas {
                running = running * b;
                alphas.push(running);
            }
            let total = alphas.iter().skip(1).fold(alphas[0], |acc, &a| acc + a);
            alphas.into_iter().map(|a| a / total).collect()
        }
        Strategy::Forgetting => {
            // Running blend b^1 = ŝ^1, then b^t = (b^{t-1} + β^{t-1} ŝ^{t-1}) / (1 + β^{t-1});
            // the output folds in the last turn the same way.
            let mut coeffs = vec![zero; turns];
            coeffs[0] = one;
            let fold = |coeffs: &mut Vec<T>, t: usize| {
                let denom = one + betas[t];
                for (i, c) in coeffs.iter_mut().enumerate() {
                    let added = if i == t { *c + betas[t] } else { *c };
                    *c = added / denom;
                }
            };
            for t in 0..turns - 1 {
                fold(&mut coeffs, t);
            }
            fold(&mut coeffs, turns - 1);
            coeffs
        }
    }
}

/// Convex per-turn weights for one domain given that domain's β sequence.
pub fn turn_weights(betas: &[f64], strategy: Strategy) -> Result<Vec<f64>> {
    if betas.is_empty() {
        return Err(Error::Input("blending needs at least one turn".into()));
    }
    Ok(weights_generic(betas, strategy))
}

/// Weights and their Jacobian `∂w_s/∂β_t` (turns x turns, row-major by `s`).
pub(crate) fn turn_weights_with_jacobian(betas: &[f64], strategy: Strategy) -> (Vec<f64>, Matrix) {
    let turns = betas.len();
    let weights = weights_generic(betas, strategy);
    let mut jac = Matrix::zeros(turns, turns);
    for t in 0..turns {
        let seeded: Vec<Dual> = betas
            .iter()
            .enumerate()
            .map(|(i, &v)| Dual {
                v,
                d: if i == t { 1.0 } else { 0.0 },
            })
            .collect();
        for (s, w) in weights_generic(&seeded, strategy).iter().enumerate() {
            jac.set(s, t, w.d);
        }
    }
    (weights, jac)
}

/// The implicit per-turn weights of one blend, per domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlendWeights {
    pub passage: Vec<f64>,
    pub question: Vec<f64>,
}

pub fn blend_weights(trace: &AttentionTrace, strategy: Strategy) -> Result<BlendWeights> {
    let beta_p: Vec<f64> = trace.turns.iter().map(|t| t.passage.beta).collect();
    let beta_q: Vec<f64> = trace.turns.iter().map(|t| t.question.beta).collect();
    Ok(BlendWeights {
        passage: turn_weights(&beta_p, strategy)?,
        question: turn_weights(&beta_q, strategy)?,
    })
}

/// Final per-row scale: `Σ_t w^t ŝ^t` on domain rows, 1 elsewhere.
pub fn token_scales(trace: &AttentionTrace, n_rows: usize, strategy: Strategy) -> Result<Vec<f64>> {
    let weights = blend_weights(trace, strategy)?;
    let mut scales = vec![1.0; n_rows];
    for (positions, w, pick) in [
        (&trace.passage_positions, &weights.passage, true),
        (&trace.question_positions, &weights.question, false),
    ] {
        for (k, &row) in positions.iter().enumerate() {
            let mut acc = 0.0;
            for (turn, &wt) in trace.turns.iter().zip(w) {
                let hat = if pick {
                    turn.passage.normalized[k]
                } else {
                    turn.question.normalized[k]
                };
                acc += wt * hat;
            }
            // Convex in exact arithmetic; rounding can overshoot by an ulp.
            scales[row] = acc.clamp(0.0, 1.0);
        }
    }
    Ok(scales)
}

/// Final representation `R`. Needs at least one turn; with no turns the
/// caller uses the encoder output directly.
pub fn blend(trace: &AttentionTrace, e: &Matrix, split: &DomainSplit, strategy: Strategy) -> Result<Matrix> {
    if split.len() != e.rows() {
        return Err(Error::Dimension(format!(
            "split covers {} rows, matrix has {}",
            split.len(),
            e.rows()
        )));
    }
    let scales = token_scales(trace, e.rows(), strategy)?;
    let mut out = e.clone();
    for (r, s) in scales.iter().enumerate() {
        for v in out.row_mut(r) {
            *v *= s;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use crate::integration::Strategy;

    #[test]
    fn single_turn_collapses() {
        for s in Strategy::ALL {
            assert_eq!(turn_weights(&[1.0], s).unwrap(), vec![1.0]);
        }
    }

    #[test]
    fn forgetting_unrolled_with_unit_beta() {
        let w = turn_weights(&[1.0, 1.0], Strategy::Forgetting).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);
        let w = turn_weights(&[1.0; 3], Strategy::Forgetting).unwrap();
        assert_eq!(w, vec![0.25, 0.25, 0.5]);
        let w = turn_weights(&[1.0; 4], Strategy::Forgetting).unwrap();
        assert_eq!(w, vec![0.125, 0.125, 0.25, 0.5]);
    }

    #[test]
    fn other_examples() {
        assert_eq!(turn_weights(&[1.0, 0.3, 0.9, 0.2], Strategy::Average).unwrap(), vec![0.25; 4]);
        let w = turn_weights(&[1.0, 0.5], Strategy::Weighted).unwrap();
        assert_abs_diff_eq!(w[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 1.0 / 3.0, epsilon = 1e-15);
        let w = turn_weights(&[0.5, 0.5, 0.5], Strategy::Intuition).unwrap();
        assert!(w[0] > w[1] && w[1] > w[2]);
        assert_abs_diff_eq!(w[0] / w[1], 2.0, epsilon = 1e-12);
        let w = turn_weights(&[0.7; 3], Strategy::Weighted).unwrap();
        for x in w {
            assert_abs_diff_eq!(x, 1.0 / 3.0, epsilon = 1e-15);
        }
        assert!(turn_weights(&[], Strategy::Average).is_err());
    }

    #[test]
    fn parse_names() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
        }
        assert!("lstm".parse::<Strategy>().is_err());
        assert_eq!(Strategy::default(), Strategy::Forgetting);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let betas = [1.0, 0.62, 0.81, 0.47];
        for s in Strategy::ALL {
            let (w, jac) = turn_weights_with_jacobian(&betas, s);
            assert_eq!(w, turn_weights(&betas, s).unwrap());
            for t in 0..betas.len() {
                let h = 1e-6;
                let mut plus = betas;
                plus[t] += h;
                let mut minus = betas;
                minus[t] -= h;
                let wp = turn_weights(&plus, s).unwrap();
                let wm = turn_weights(&minus, s).unwrap();
                for k in 0..betas.len() {
                    let fd = (wp[k] - wm[k]) / (2.0 * h);
                    assert_abs_diff_eq!(jac.get(k, t), fd, epsilon = 1e-8);
                }
            }
        }
    }

    /// The recursion exactly as written, over whole score vectors.
    fn forgetting_direct(hats: &[Vec<f64>], betas: &[f64]) -> Vec<f64> {
        let turns = hats.len();
        let mut running = hats[0].clone();
        for t in 0..turns - 1 {
            running = running
                .iter()
                .zip(&hats[t])
                .map(|(b, h)| (b + betas[t] * h) / (1.0 + betas[t]))
                .collect();
        }
        running
            .iter()
            .zip(&hats[turns - 1])
            .map(|(b, h)| (b + betas[turns - 1] * h) / (1.0 + betas[turns - 1]))
            .collect()
    }

    proptest! {
        #[test]
        fn weights_are_convex(
            tail in prop::collection::vec(0.0f64..=1.0, 0..6),
            idx in 0usize..4,
        ) {
            let mut betas = vec![1.0];
            betas.extend(tail);
            let w = turn_weights(&betas, Strategy::ALL[idx]).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(w.iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn forgetting_weights_match_direct_recursion(
            tail in prop::collection::vec(0.0f64..=1.0, 0..5),
            hats in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 5), 6),
        ) {
            let mut betas = vec![1.0];
            betas.extend(tail);
            let hats = &hats[..betas.len()];
            let w = turn_weights(&betas, Strategy::Forgetting).unwrap();
            let direct = forgetting_direct(hats, &betas);
            for i in 0..5 {
                let via_weights: f64 = w.iter().zip(hats).map(|(wt, h)| wt * h[i]).sum();
                prop_assert!((via_weights - direct[i]).abs() < 1e-12);
            }
        }

        #[test]
        fn forgetting_favors_recent_turns_at_constant_beta(b in 0.0f64..=1.0, turns in 2usize..6) {
            // the first two turns share a coefficient; recency order holds after that
            let w = turn_weights(&vec![b; turns], Strategy::Forgetting).unwrap();
            for pair in w[1..].windows(2) {
                prop_assert!(pair[0] <= pair[1] + 1e-15);
            }
        }
    }
}
