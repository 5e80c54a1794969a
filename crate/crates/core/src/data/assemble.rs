use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::examples::{ChoiceExample, ExtractiveExample};
use super::tokenizer::{slice_chars, split_words, Vocab, Word, CLS_ID, PAD_ID, SEP_ID};
use crate::coattention::DomainSplit;
use crate::error::{Error, Result};
use crate::pos::{self, PosTag, SubwordSource, TaggedWord};

/// Produces one tag per word of a single text.
pub trait Tagger {
    fn tag(&self, words: &[String]) -> Vec<PosTag>;
}

/// The built-in rule tagger.
#[derive(Clone, Copy, Debug, Default)]
pub struct RuleTagger;

impl Tagger for RuleTagger {
    fn tag(&self, words: &[String]) -> Vec<PosTag> {
        pos::tag_words(words)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AssembleConfig {
    /// Longest allowed sequence, structural tokens included.
    pub max_len: usize,
    /// Pad shorter sequences to this length.
    pub pad_to: Option<usize>,
}

impl AssembleConfig {
    pub fn new(max_len: usize) -> Self {
        Self { max_len, pad_to: None }
    }
}

/// Gold span of an extractive sequence in subword positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpanTarget {
    Span { start: usize, end: usize },
    NoAnswer,
    /// The gold answer fell outside the kept passage.
    Truncated,
}

impl SpanTarget {
    /// Start and end indices used for the loss; `(0, 0)` means no answer.
    pub fn indices(self) -> Option<(usize, usize)> {
        match self {
            SpanTarget::Span { start, end } => Some((start, end)),
            SpanTarget::NoAnswer => Some((0, 0)),
            SpanTarget::Truncated => None,
        }
    }
}

/// One model input sequence: `[CLS] P [SEP] Q [SEP]` plus optional padding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenizedInput {
    pub token_ids: Vec<usize>,
    pub segment_ids: Vec<usize>,
    pub position_ids: Vec<usize>,
    pub pos_tags: Vec<PosTag>,
    pub split: DomainSplit,
    /// Word each subword came from. Passage words are numbered first, then
    /// the question side.
    pub sources: Vec<SubwordSource>,
    /// Character span in the passage, for passage subwords.
    pub char_spans: Vec<Option<(usize, usize)>>,
    pub passage_range: Range<usize>,
    /// Present for extractive inputs.
    pub target: Option<SpanTarget>,
}

impl TokenizedInput {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// False on padding rows.
    pub fn valid_mask(&self) -> &[bool] {
        self.split.valid_mask()
    }

    /// Passage text covered by subwords `start..=end`, sliced from the original.
    pub fn span_text(&self, passage: &str, start: usize, end: usize) -> Option<String> {
        let (s, _) = (*self.char_spans.get(start)?)?;
        let (_, e) = (*self.char_spans.get(end)?)?;
        (s < e).then(|| slice_chars(passage, s, e))
    }

    /// Replaces the tags with a copy that has `rate` of the word-derived
    /// positions corrupted.
    pub fn with_corrupted_tags(&self, rate: f64, seed: u64) -> Result<Self> {
        let mut out = self.clone();
        out.pos_tags = pos::corrupt_tags(&self.pos_tags, rate, seed)?;
        Ok(out)
    }
}

struct Side<'a> {
    words: Vec<Word>,
    tags: &'a [PosTag],
}

fn words_and_tags(text: &str, provided: Option<&[PosTag]>, tagger: &dyn Tagger, what: &str) -> Result<(Vec<Word>, Vec<PosTag>)> {
    let words = split_words(text);
    if words.is_empty() {
        return Err(Error::Input(format!("{what} is empty")));
    }
    let tags = match provided {
        Some(t) if t.len() != words.len() => {
            return Err(Error::Alignment(format!(
                "{what} has {} words but {} provided tags",
                words.len(),
                t.len()
            )))
        }
        Some(t) => t.to_vec(),
        None => {
            let surfaces: Vec<String> = words.iter().map(|w| w.text.clone()).collect();
            tagger.tag(&surfaces)
        }
    };
    Ok((words, tags))
}

struct Assembled {
    input: TokenizedInput,
    /// First and last subword position of each passage word that was kept.
    passage_word_spans: Vec<Option<(usize, usize)>>,
}

fn assemble_parts(passage: Side<'_>, question: &[Side<'_>], vocab: &Vocab, cfg: &AssembleConfig) -> Result<Assembled> {
    let mut q_tokens: Vec<(usize, usize)> = Vec::new();
    let mut word_offset = passage.words.len();
    for side in question {
        for (i, w) in side.words.iter().enumerate() {
            for id in vocab.tokenize_word(&w.text) {
                q_tokens.push((word_offset + i, id));
            }
        }
        word_offset += side.words.len();
    }
    let budget = cfg.max_len.checked_sub(q_tokens.len() + 3).filter(|&b| b > 0).ok_or_else(|| {
        Error::Input(format!(
            "question side has {} subwords, leaving no room for the passage within {}",
            q_tokens.len(),
            cfg.max_len
        ))
    })?;

    let mut p_tokens: Vec<(usize, usize)> = Vec::new();
    for (i, w) in passage.words.iter().enumerate() {
        for id in vocab.tokenize_word(&w.text) {
            p_tokens.push((i, id));
        }
    }
    p_tokens.truncate(budget);

    let mut tagged: Vec<TaggedWord> = Vec::with_capacity(word_offset);
    for side in std::iter::once(&passage).chain(question) {
        for (w, &tag) in side.words.iter().zip(side.tags) {
            tagged.push(TaggedWord {
                surface: w.text.clone(),
                tag,
            });
        }
    }

    let n = p_tokens.len() + q_tokens.len() + 3;
    let total = cfg.pad_to.map_or(n, |p| p.max(n));
    let mut token_ids = Vec::with_capacity(total);
    let mut segment_ids = Vec::with_capacity(total);
    let mut sources = Vec::with_capacity(total);
    let mut char_spans = vec![None; total];
    let mut passage_word_spans = vec![None; passage.words.len()];
    let mut in_passage = vec![false; total];
    let mut in_question = vec![false; total];

    token_ids.push(CLS_ID);
    segment_ids.push(0);
    sources.push(SubwordSource::Special);
    for &(w, id) in &p_tokens {
        let position = token_ids.len();
        token_ids.push(id);
        segment_ids.push(0);
        sources.push(SubwordSource::Word(w));
        in_passage[position] = true;
        let word = &passage.words[w];
        char_spans[position] = Some((word.start, word.end));
        let span = passage_word_spans[w].get_or_insert((position, position));
        span.1 = position;
    }
    let passage_range = 1..token_ids.len();
    token_ids.push(SEP_ID);
    segment_ids.push(0);
    sources.push(SubwordSource::Special);
    for &(w, id) in &q_tokens {
        in_question[token_ids.len()] = true;
        token_ids.push(id);
        segment_ids.push(1);
        sources.push(SubwordSource::Word(w));
    }
    token_ids.push(SEP_ID);
    segment_ids.push(1);
    sources.push(SubwordSource::Special);
    let mut valid = vec![true; n];
    while token_ids.len() < total {
        token_ids.push(PAD_ID);
        segment_ids.push(0);
        sources.push(SubwordSource::Pad);
        valid.push(false);
    }

    let pos_tags = pos::align_tags_to_subwords(&tagged, &sources)?;
    let split = DomainSplit::new(in_passage, in_question, valid)?;
    Ok(Assembled {
        input: TokenizedInput {
            position_ids: (0..total).collect(),
            token_ids,
            segment_ids,
            pos_tags,
            split,
            sources,
            char_spans,
            passage_range,
            target: None,
        },
        passage_word_spans,
    })
}

/// Words overlapping the character range `[start, end)`.
fn word_range(words: &[Word], start: usize, end: usize) -> Option<(usize, usize)> {
    let first = words.iter().position(|w| w.end > start)?;
    let last = words.iter().rposition(|w| w.start < end)?;
    (first <= last).then_some((first, last))
}

pub fn assemble_extractive(example: &ExtractiveExample, vocab: &Vocab, cfg: &AssembleConfig, tagger: &dyn Tagger) -> Result<TokenizedInput> {
    let provided = example.tags.as_ref();
    let (p_words, p_tags) = words_and_tags(&example.passage, provided.map(|t| &t.passage[..]), tagger, "passage")?;
    let (q_words, q_tags) = words_and_tags(&example.question, provided.map(|t| &t.question[..]), tagger, "question")?;
    let assembled = assemble_parts(
        Side { words: p_words.clone(), tags: &p_tags },
        &[Side { words: q_words, tags: &q_tags }],
        vocab,
        cfg,
    )?;
    let target = if example.is_impossible {
        SpanTarget::NoAnswer
    } else {
        let answer = example
            .answers
            .first()
            .ok_or_else(|| Error::Input(format!("{}: answerable example without answers", example.id)))?;
        let end_char = answer.char_start + answer.text.chars().count();
        let (first, last) = word_range(&p_words, answer.char_start, end_char).ok_or_else(|| {
            Error::Input(format!("{}: answer lies outside the passage words", example.id))
        })?;
        match (assembled.passage_word_spans[first], assembled.passage_word_spans[last]) {
            (Some((start, _)), Some((_, end))) => SpanTarget::Span { start, end },
            _ => SpanTarget::Truncated,
        }
    };
    let mut input = assembled.input;
    input.target = Some(target);
    Ok(input)
}

/// One input per option, each `[CLS] P [SEP] Q O_i [SEP]`.
pub fn assemble_choice(example: &ChoiceExample, vocab: &Vocab, cfg: &AssembleConfig, tagger: &dyn Tagger) -> Result<Vec<TokenizedInput>> {
    example.validate()?;
    let provided = example.tags.as_ref();
    if let Some(t) = provided {
        if t.options.len() != example.options.len() {
            return Err(Error::Alignment(format!(
                "{}: {} options but tags for {}",
                example.id,
                example.options.len(),
                t.options.len()
            )));
        }
    }
    let (p_words, p_tags) = words_and_tags(&example.passage, provided.map(|t| &t.passage[..]), tagger, "passage")?;
    let (q_words, q_tags) = words_and_tags(&example.question, provided.map(|t| &t.question[..]), tagger, "question")?;
    example
        .options
        .iter()
        .enumerate()
        .map(|(i, option)| {
            let (o_words, o_tags) = words_and_tags(option, provided.map(|t| &t.options[i][..]), tagger, "option")?;
            let assembled = assemble_parts(
                Side { words: p_words.clone(), tags: &p_tags },
                &[
                    Side { words: q_words.clone(), tags: &q_tags },
                    Side { words: o_words, tags: &o_tags },
                ],
                vocab,
                cfg,
            )?;
            Ok(assembled.input)
        })
        .collect()
}
