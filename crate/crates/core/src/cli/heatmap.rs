use crate::coattention::AttentionTrace;

/// Shades from lowest to highest, one per tenth of [0, 1].
pub const SHADES: [char; 10] = [' ', '.', ':', '-', '=', '+', '*', '#', '%', '@'];

/// Bucket of a normalized score; out-of-range values clamp.
pub fn bucket(score: f64) -> usize {
    if score.is_nan() {
        return 0;
    }
    ((score.clamp(0.0, 1.0) * 10.0) as usize).min(9)
}

/// Plain-text heatmap of normalized scores: one block per domain, a token
/// column, then one shade column per turn.
pub fn render(trace: &AttentionTrace, tokens: &[String]) -> String {
    let width = tokens.iter().map(|t| t.chars().count()).max().unwrap_or(0).max(5);
    let mut out = String::new();
    for (name, positions) in [("passage", &trace.passage_positions), ("question", &trace.question_positions)] {
        out.push_str(&format!("# {name}\n{:<width$}", "token"));
        for t in &trace.turns {
            out.push_str(&format!(" t{}", t.turn));
        }
        out.push('\n');
        for (k, &pos) in positions.iter().enumerate() {
            let token = tokens.get(pos).map_or("?", String::as_str);
            out.push_str(&format!("{token:<width$}"));
            for t in &trace.turns {
                let d = if name == "passage" { &t.passage } else { &t.question };
                let shade = SHADES[bucket(d.normalized[k])];
                out.push_str(&format!(" {shade}{shade}"));
            }
            out.push('\n');
        }
    }
    out
}
