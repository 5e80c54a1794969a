use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tokenizer::slice_chars;
use crate::error::{Error, Result};
use crate::pos::PosTag;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    /// Character offset into the passage.
    pub char_start: usize,
}

/// Word-level tags supplied with an example instead of running the tagger.
/// Lengths follow [`split_words`](super::split_words) of each text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvidedTags {
    pub passage: Vec<PosTag>,
    pub question: Vec<PosTag>,
    /// One entry per option; empty for extractive examples.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<Vec<PosTag>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractiveExample {
    pub id: String,
    pub passage: String,
    pub question: String,
    pub answers: Vec<Answer>,
    pub is_impossible: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<ProvidedTags>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceExample {
    pub id: String,
    pub passage: String,
    pub question: String,
    pub options: Vec<String>,
    pub gold: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<ProvidedTags>,
}

impl ExtractiveExample {
    /// Checks that every answer is a substring of the passage at its offset.
    pub fn validate(&self) -> Result<()> {
        if !self.is_impossible && self.answers.is_empty() {
            return Err(Error::Input(format!("{}: answerable example without answers", self.id)));
        }
        for a in &self.answers {
            let found = slice_chars(&self.passage, a.char_start, a.char_start + a.text.chars().count());
            if found != a.text {
                return Err(Error::Input(format!(
                    "{}: answer {:?} does not occur at offset {} (found {:?})",
                    self.id, a.text, a.char_start, found
                )));
            }
        }
        Ok(())
    }
}

impl ChoiceExample {
    pub fn validate(&self) -> Result<()> {
        if !(2..=5).contains(&self.options.len()) {
            return Err(Error::Input(format!(
                "{}: {} options, expected 2 to 5",
                self.id,
                self.options.len()
            )));
        }
        if self.gold >= self.options.len() {
            return Err(Error::Input(format!(
                "{}: gold index {} out of range",
                self.id, self.gold
            )));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct SquadFile {
    data: Vec<SquadArticle>,
}

#[derive(Deserialize)]
struct SquadArticle {
    paragraphs: Vec<SquadParagraph>,
}

#[derive(Deserialize)]
struct SquadParagraph {
    context: String,
    qas: Vec<SquadQa>,
}

#[derive(Deserialize)]
struct SquadQa {
    id: String,
    question: String,
    #[serde(default)]
    answers: Vec<SquadAnswer>,
    #[serde(default)]
    is_impossible: bool,
}

#[derive(Deserialize)]
struct SquadAnswer {
    text: String,
    answer_start: usize,
}

fn json_error(source: &str, e: serde_json::Error) -> Error {
    Error::parse(format!("{source}:{}:{}", e.line(), e.column()), e.to_string())
}

/// Parses SQuAD-style JSON (v1.1 or v2.0).
pub fn parse_extractive(json: &str, source: &str) -> Result<Vec<ExtractiveExample>> {
    let file: SquadFile = serde_json::from_str(json).map_err(|e| json_error(source, e))?;
    let mut out = Vec::new();
    for (a, article) in file.data.into_iter().enumerate() {
        for (p, para) in article.paragraphs.into_iter().enumerate() {
            for (q, qa) in para.qas.into_iter().enumerate() {
                let location = format!("{source}: data[{a}].paragraphs[{p}].qas[{q}]");
                let example = ExtractiveExample {
                    id: qa.id,
                    passage: para.context.clone(),
                    question: qa.question,
                    answers: qa
                        .answers
                        .into_iter()
                        .map(|x| Answer {
                            text: x.text,
                            char_start: x.answer_start,
                        })
                        .collect(),
                    is_impossible: qa.is_impossible,
                    tags: None,
                };
                example
                    .validate()
                    .map_err(|e| Error::parse(location, e.to_string()))?;
                out.push(example);
            }
        }
    }
    Ok(out)
}

pub fn load_extractive(path: &Path) -> Result<Vec<ExtractiveExample>> {
    let text = std::fs::read_to_string(path)?;
    parse_extractive(&text, &path.display().to_string())
}

#[derive(Deserialize)]
struct ChoiceLine {
    id: String,
    article: String,
    question: String,
    options: Vec<String>,
    label: usize,
}

/// Parses multi-choice JSON lines. Blank lines are skipped.
pub fn parse_choice(jsonl: &str, source: &str) -> Result<Vec<ChoiceExample>> {
    let mut out = Vec::new();
    for (i, line) in jsonl.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let location = format!("{source}: line {}", i + 1);
        let raw: ChoiceLine =
            serde_json::from_str(line).map_err(|e| Error::parse(location.clone(), e.to_string()))?;
        let example = ChoiceExample {
            id: raw.id,
            passage: raw.article,
            question: raw.question,
            options: raw.options,
            gold: raw.label,
            tags: None,
        };
        example
            .validate()
            .map_err(|e| Error::parse(location, e.to_string()))?;
        out.push(example);
    }
    Ok(out)
}

pub fn load_choice(path: &Path) -> Result<Vec<ChoiceExample>> {
    let text = std::fs::read_to_string(path)?;
    parse_choice(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE: &str = r#"{"data":[{"paragraphs":[{"context":"It was held in London in 1862.",
        "qas":[{"id":"q1","question":"Where was it held?","answers":[{"text":"London","answer_start":15}]},
               {"id":"q2","question":"Who came?","answers":[],"is_impossible":true}]}]}]}"#;

    #[test]
    fn parses_squad() {
        let ex = parse_extractive(ONE, "mem").unwrap();
        assert_eq!(ex.len(), 2);
        assert_eq!(ex[0].answers[0].text, "London");
        assert!(!ex[0].is_impossible);
        assert!(ex[1].is_impossible);
        assert!(ex[1].answers.is_empty());
    }

    #[test]
    fn offset_mismatch_is_located() {
        let bad = ONE.replace("\"answer_start\":15", "\"answer_start\":14");
        match parse_extractive(&bad, "mem") {
            Err(Error::Parse { location, .. }) => assert!(location.contains("qas[0]"), "{location}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_json_has_line_and_column() {
        match parse_extractive("{\"data\": [", "f.json") {
            Err(Error::Parse { location, .. }) => assert!(location.starts_with("f.json:1:")),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn parses_choice_lines() {
        let text = r#"{"id":"a","article":"p","question":"q","options":["x","y","z","w"],"label":2}

{"id":"b","article":"p","question":"q","options":["x","y"],"label":0}"#;
        let ex = parse_choice(text, "mem").unwrap();
        assert_eq!(ex.len(), 2);
        assert_eq!(ex[0].gold, 2);
        let bad = r#"{"id":"a","article":"p","question":"q","options":["x","y"],"label":2}"#;
        assert!(matches!(parse_choice(bad, "mem"), Err(Error::Parse { .. })));
        let one = r#"{"id":"a","article":"p","question":"q","options":["x"],"label":0}"#;
        assert!(parse_choice(one, "mem").is_err());
    }
}
