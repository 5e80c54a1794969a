//! Dataset ingestion, input assembly and synthetic tasks.

mod assemble;
mod examples;
mod synthetic;
mod tokenizer;

pub use assemble::{assemble_choice, assemble_extractive, AssembleConfig, RuleTagger, SpanTarget, Tagger, TokenizedInput};
pub use examples::{
    load_choice, load_extractive, parse_choice, parse_extractive, Answer, ChoiceExample, ExtractiveExample, ProvidedTags,
};
pub use synthetic::{
    generate_synthetic_choice, generate_synthetic_extractive, CHOICE_FILLERS, CHOICE_OPTIONS, EXTRACTIVE_FILLERS,
    UNANSWERABLE_RATE,
};
pub use tokenizer::{
    slice_chars, split_words, Vocab, Word, CLS_ID, CLS_TOKEN, PAD_ID, PAD_TOKEN, SEP_ID, SEP_TOKEN, UNK_ID, UNK_TOKEN,
};
