//! Deterministic toy datasets.
//!
//! Words are made-up `CVCV` strings drawn from disjoint fixed pools, so the
//! vocabulary never depends on the seed. Every example carries its own tags.

use std::sync::OnceLock;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::examples::{Answer, ChoiceExample, ExtractiveExample, ProvidedTags};
use crate::pos::PosTag;

const FILLER_TAGS: [PosTag; 8] = [
    PosTag::Dt,
    PosTag::In,
    PosTag::Jj,
    PosTag::Nn,
    PosTag::Rb,
    PosTag::Vb,
    PosTag::Cc,
    PosTag::Prp,
];

const QUESTION_WORD: &str = "which";

/// Fraction of unanswerable extractive examples.
pub const UNANSWERABLE_RATE: f64 = 0.2;
/// Filler words per extractive passage.
pub const EXTRACTIVE_FILLERS: usize = 18;
/// Filler words per choice passage.
pub const CHOICE_FILLERS: usize = 16;

struct Pools {
    fillers: Vec<String>,
    keys: Vec<String>,
    values: Vec<String>,
}

fn pools() -> &'static Pools {
    static POOLS: OnceLock<Pools> = OnceLock::new();
    POOLS.get_or_init(|| {
        let consonants = "bdfgklmnprtvz".chars();
        let vowels: Vec<char> = "aeiou".chars().collect();
        let mut words = Vec::new();
        for c1 in consonants.clone() {
            for &v1 in &vowels {
                for c2 in consonants.clone() {
                    for &v2 in &vowels {
                        words.push(format!("{c1}{v1}{c2}{v2}"));
                    }
                }
            }
        }
        words.shuffle(&mut ChaCha8Rng::seed_from_u64(0));
        let mut it = words.into_iter();
        Pools {
            fillers: it.by_ref().take(80).collect(),
            keys: it.by_ref().take(KEYS).collect(),
            values: it.by_ref().take(FAMILY * KEYS).collect(),
        }
    })
}

const KEYS: usize = 24;
/// Value words owned by each key: two first words, then two second words.
const FAMILY: usize = 4;

fn family(key: usize) -> (&'static [String], &'static [String]) {
    let words = &pools().values[key * FAMILY..(key + 1) * FAMILY];
    words.split_at(2)
}

fn filler_tag(word: &str) -> PosTag {
    let index = pools().fillers.iter().position(|w| w == word).unwrap_or(0);
    FILLER_TAGS[index % FILLER_TAGS.len()]
}

/// Words plus tags, joined with single spaces.
#[derive(Default)]
struct Text {
    words: Vec<String>,
    tags: Vec<PosTag>,
}

impl Text {
    fn push(&mut self, word: &str, tag: PosTag) {
        self.words.push(word.to_string());
        self.tags.push(tag);
    }

    fn render(&self) -> String {
        self.words.join(" ")
    }

    /// Character offset of word `i` in the rendered text.
    fn char_offset(&self, i: usize) -> usize {
        self.words[..i].iter().map(|w| w.chars().count() + 1).sum()
    }
}

/// Interleaves fillers with contiguous segments at random places.
type Segment = Vec<(String, PosTag)>;

fn weave(rng: &mut ChaCha8Rng, fillers: usize, segments: Vec<Segment>) -> (Text, Vec<usize>) {
    let p = pools();
    let mut chunks: Vec<(Option<usize>, Segment)> = (0..fillers)
        .map(|_| {
            let w = p.fillers.choose(rng).expect("non-empty pool").clone();
            let tag = filler_tag(&w);
            (None, vec![(w, tag)])
        })
        .collect();
    chunks.extend(segments.into_iter().enumerate().map(|(i, s)| (Some(i), s)));
    chunks.shuffle(rng);
    let mut text = Text::default();
    let mut starts = vec![0; chunks.iter().filter(|c| c.0.is_some()).count()];
    for (segment, words) in chunks {
        if let Some(i) = segment {
            starts[i] = text.words.len();
        }
        for (w, t) in words {
            text.push(&w, t);
        }
    }
    (text, starts)
}

fn distinct<'a>(rng: &mut ChaCha8Rng, pool: &'a [String], n: usize) -> Vec<&'a String> {
    pool.choose_multiple(rng, n).collect()
}

/// Key-lookup extractive task.
///
/// Every key owns a fixed family of two first words and two second words.
/// The passage holds segments `key first [second]` built from each key's own
/// family; the question names one key and the answer is the family words
/// after it. Unanswerable questions name a key whose segment is missing.
///
/// With `pos_dependency` the queried key appears twice, before an `NNP NNP`
/// answer and a `VBD VBN` decoy that use the other half of the same family,
/// so only the tags tell them apart. Unanswerable items keep only the decoy.
pub fn generate_synthetic_extractive(seed: u64, size: usize, pos_dependency: bool) -> Vec<ExtractiveExample> {
    let p = pools();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..size)
        .map(|n| {
            let answerable = !rng.random_bool(UNANSWERABLE_RATE);
            let keys: Vec<usize> = rand::seq::index::sample(&mut rng, p.keys.len(), 3).into_vec();
            let key = |k: usize| (p.keys[k].clone(), PosTag::Nn);
            let mut segments = Vec::new();
            let mut answer_words = Vec::new();

            if pos_dependency {
                let (firsts, seconds) = family(keys[0]);
                let swap = rng.random_bool(0.5);
                let (a, d) = if swap { (1, 0) } else { (0, 1) };
                let answer = vec![
                    key(keys[0]),
                    (firsts[a].clone(), PosTag::Nnp),
                    (seconds[a].clone(), PosTag::Nnp),
                ];
                let decoy = vec![
                    key(keys[0]),
                    (firsts[d].clone(), PosTag::Vbd),
                    (seconds[d].clone(), PosTag::Vbn),
                ];
                if answerable {
                    answer_words = vec![firsts[a].clone(), seconds[a].clone()];
                    segments.push(answer);
                }
                segments.push(decoy);
                for &other in &keys[1..] {
                    let (f, s) = family(other);
                    let i = rng.random_range(0..2);
                    let tags = if rng.random_bool(0.5) {
                        [PosTag::Nnp, PosTag::Nnp]
                    } else {
                        [PosTag::Vbd, PosTag::Vbn]
                    };
                    segments.push(vec![key(other), (f[i].clone(), tags[0]), (s[i].clone(), tags[1])]);
                }
            } else {
                for (slot, &k) in keys.iter().enumerate() {
                    let (f, s) = family(k);
                    let i = rng.random_range(0..2);
                    let mut words = vec![f[i].clone()];
                    if rng.random_bool(0.5) {
                        words.push(s[i].clone());
                    }
                    if slot == 0 {
                        if !answerable {
                            continue;
                        }
                        answer_words = words.clone();
                    }
                    let mut segment = vec![key(k)];
                    segment.extend(words.into_iter().map(|w| (w, PosTag::Nnp)));
                    segments.push(segment);
                }
            }

            let (passage, starts) = weave(&mut rng, EXTRACTIVE_FILLERS, segments);
            let answers = if answerable {
                vec![Answer {
                    text: answer_words.join(" "),
                    char_start: passage.char_offset(starts[0] + 1),
                }]
            } else {
                Vec::new()
            };
            let mut question = Text::default();
            question.push(QUESTION_WORD, PosTag::Wdt);
            question.push(&p.keys[keys[0]], PosTag::Nn);
            ExtractiveExample {
                id: format!("synth-ext-{seed}-{n}"),
                passage: passage.render(),
                question: question.render(),
                answers,
                is_impossible: !answerable,
                tags: Some(ProvidedTags {
                    passage: passage.tags,
                    question: question.tags,
                    options: Vec::new(),
                }),
            }
        })
        .collect()
}

/// Options per choice example.
pub const CHOICE_OPTIONS: usize = 4;

/// Scattered-evidence choice task.
///
/// The passage hides `k` fact words among fillers. The gold option lists all
/// `k`; distractor `j` swaps fact `j mod k` for a word absent from the
/// passage, so it matches `k - 1` facts.
pub fn generate_synthetic_choice(seed: u64, size: usize, k: usize) -> Vec<ChoiceExample> {
    assert!((1..=4).contains(&k), "k must be in 1..=4");
    let p = pools();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..size)
        .map(|n| {
            let picked = distinct(&mut rng, &p.values, k + CHOICE_OPTIONS - 1);
            let (facts, absent) = picked.split_at(k);
            let segments = facts.iter().map(|w| vec![((*w).clone(), PosTag::Nn)]).collect();
            let (passage, _) = weave(&mut rng, CHOICE_FILLERS, segments);

            let gold = rng.random_range(0..CHOICE_OPTIONS);
            let mut options = Vec::with_capacity(CHOICE_OPTIONS);
            let mut distractor = 0;
            for i in 0..CHOICE_OPTIONS {
                let mut words: Vec<&String> = facts.to_vec();
                if i != gold {
                    words[distractor % k] = absent[distractor];
                    distractor += 1;
                }
                words.shuffle(&mut rng);
                options.push(words);
            }
            let mut question = Text::default();
            question.push(QUESTION_WORD, PosTag::Wdt);
            ChoiceExample {
                id: format!("synth-choice-{seed}-{n}"),
                passage: passage.render(),
                question: question.render(),
                tags: Some(ProvidedTags {
                    passage: passage.tags,
                    question: question.tags,
                    options: options.iter().map(|o| vec![PosTag::Nn; o.len()]).collect(),
                }),
                options: options
                    .into_iter()
                    .map(|o| o.iter().map(|w| w.as_str()).collect::<Vec<_>>().join(" "))
                    .collect(),
                gold,
            }
        })
        .collect()
}
