use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD_TOKEN: &str = "[PAD]";
pub const CLS_TOKEN: &str = "[CLS]";
pub const SEP_TOKEN: &str = "[SEP]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const PAD_ID: usize = 0;
pub const CLS_ID: usize = 1;
pub const SEP_ID: usize = 2;
pub const UNK_ID: usize = 3;

/// Suffixes split off as `##` pieces when building the vocabulary. Longest first.
const SUFFIXES: &[&str] = &["ation", "tion", "ness", "ment", "ing", "est", "ed", "er", "ly", "s"];

/// Stems shorter than this stay whole.
const MIN_STEM_CHARS: usize = 3;

/// A word of the original text with its character span `[start, end)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Word {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Splits text into words: maximal alphanumeric runs, and every other
/// non-whitespace character on its own. Offsets count characters.
pub fn split_words(text: &str) -> Vec<Word> {
    let mut out = Vec::new();
    let mut current: Option<(usize, String)> = None;
    for (i, ch) in text.chars().enumerate() {
        if ch.is_alphanumeric() {
            current.get_or_insert_with(|| (i, String::new())).1.push(ch);
            continue;
        }
        if let Some((start, word)) = current.take() {
            out.push(Word { end: start + word.chars().count(), text: word, start });
        }
        if !ch.is_whitespace() {
            out.push(Word {
                text: ch.to_string(),
                start: i,
                end: i + 1,
            });
        }
    }
    if let Some((start, word)) = current {
        out.push(Word { end: start + word.chars().count(), text: word, start });
    }
    out
}

/// Substring by character range.
pub fn slice_chars(text: &str, start: usize, end: usize) -> String {
    text.chars().skip(start).take(end.saturating_sub(start)).collect()
}

/// Toy WordPiece vocabulary: special tokens, whole words, stems with `##`
/// suffix pieces, and single characters as a fallback.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Builds a vocabulary from raw texts. Deterministic in the set of words.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut pieces = BTreeSet::new();
        for text in texts {
            for word in split_words(text) {
                let lower = word.text.to_lowercase();
                for ch in lower.chars() {
                    pieces.insert(ch.to_string());
                    pieces.insert(format!("##{ch}"));
                }
                match split_suffix(&lower) {
                    Some((stem, suffix)) => {
                        pieces.insert(stem.to_string());
                        pieces.insert(format!("##{suffix}"));
                    }
                    None => {
                        pieces.insert(lower);
                    }
                }
            }
        }
        let tokens = [PAD_TOKEN, CLS_TOKEN, SEP_TOKEN, UNK_TOKEN]
            .into_iter()
            .map(String::from)
            .chain(pieces)
            .collect();
        Self::from_tokens(tokens).expect("built vocabulary is well formed")
    }

    /// Restores a vocabulary from its token list (ids are positions).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let expected = [PAD_TOKEN, CLS_TOKEN, SEP_TOKEN, UNK_TOKEN];
        if tokens.len() < expected.len() || tokens[..4] != expected {
            return Err(Error::Input(format!(
                "vocabulary must start with {expected:?}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Input(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Greedy longest-match WordPiece over the lowercased word. A word with
    /// an unmatched remainder becomes a single `[UNK]`.
    pub fn tokenize_word(&self, word: &str) -> Vec<usize> {
        let chars: Vec<char> = word.to_lowercase().chars().collect();
        let mut out = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut found = None;
            for end in (start + 1..=chars.len()).rev() {
                let body: String = chars[start..end].iter().collect();
                let piece = if start == 0 { body } else { format!("##{body}") };
                if let Some(id) = self.id(&piece) {
                    found = Some((id, end));
                    break;
                }
            }
            match found {
                Some((id, end)) => {
                    out.push(id);
                    start = end;
                }
                None => return vec![UNK_ID],
            }
        }
        out
    }
}

fn split_suffix(word: &str) -> Option<(&str, &str)> {
    SUFFIXES.iter().find_map(|suffix| {
        let stem = word.strip_suffix(suffix)?;
        (stem.chars().count() >= MIN_STEM_CHARS && stem.chars().all(char::is_alphabetic))
            .then_some((stem, *suffix))
    })
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;
    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}
