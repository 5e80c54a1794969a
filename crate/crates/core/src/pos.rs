//! Part-of-speech tags: the closed 39-tag vocabulary, a deterministic
//! lexicon/suffix tagger, subword alignment, and seeded corruption.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! pos_tags {
    ($($variant:ident => $name:literal),+ $(,)?) => {
        /// Penn Treebank tags plus `SPE` (special tokens), `PAD` and `ERR`.
        /// Discriminants are the stable embedding ids.
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        #[repr(u8)]
        pub enum PosTag { $($variant),+ }

        impl PosTag {
            pub const ALL: [PosTag; 39] = [$(PosTag::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $(PosTag::$variant => $name),+ }
            }
        }

        impl FromStr for PosTag {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok(PosTag::$variant),)+
                    other => Err(Error::Lookup(format!("unknown POS tag {other:?}"))),
                }
            }
        }
    };
}

pos_tags! {
    Cc => "CC", Cd => "CD", Dt => "DT", Ex => "EX", Fw => "FW", In => "IN",
    Jj => "JJ", Jjr => "JJR", Jjs => "JJS", Ls => "LS", Md => "MD", Nn => "NN",
    Nns => "NNS", Nnp => "NNP", Nnps => "NNPS", Pdt => "PDT", Pos => "POS",
    Prp => "PRP", PrpS => "PRP$", Rb => "RB", Rbr => "RBR", Rbs => "RBS",
    Rp => "RP", Sym => "SYM", To => "TO", Uh => "UH", Vb => "VB", Vbd => "VBD",
    Vbg => "VBG", Vbn => "VBN", Vbp => "VBP", Vbz => "VBZ", Wdt => "WDT",
    Wp => "WP", WpS => "WP$", Wrb => "WRB", Spe => "SPE", Pad => "PAD", Unrecognized => "ERR",
}

/// Size of the tag vocabulary, i.e. the rows of the POS embedding table.
pub const NUM_TAGS: usize = 39;
/// The first 36 tags are the linguistic ones a tagger can emit.
pub const NUM_LINGUISTIC_TAGS: usize = 36;

impl PosTag {
    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Result<Self> {
        Self::ALL
            .get(id)
            .copied()
            .ok_or_else(|| Error::Lookup(format!("POS tag id {id} out of range")))
    }

    pub fn is_linguistic(self) -> bool {
        self.id() < NUM_LINGUISTIC_TAGS
    }

    /// `SPE` and `PAD` are assigned structurally and never corrupted.
    pub fn is_structural(self) -> bool {
        matches!(self, PosTag::Spe | PosTag::Pad)
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for PosTag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for PosTag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedWord {
    pub surface: String,
    pub tag: PosTag,
}

// Closed-class lexicon. Lookups are on the lowercased word.
const LEXICON: &[(&str, PosTag)] = {
    use PosTag::*;
    &[
        ("the", Dt), ("a", Dt), ("an", Dt), ("this", Dt), ("these", Dt), ("those", Dt),
        ("every", Dt), ("each", Dt), ("some", Dt), ("any", Dt), ("no", Dt), ("another", Dt),
        ("either", Dt), ("neither", Dt), ("that", In),
        ("and", Cc), ("or", Cc), ("but", Cc), ("nor", Cc), ("yet", Cc), ("plus", Cc),
        ("of", In), ("in", In), ("on", In), ("at", In), ("by", In), ("for", In), ("with", In),
        ("from", In), ("about", In), ("into", In), ("over", In), ("under", In), ("after", In),
        ("before", In), ("during", In), ("through", In), ("between", In), ("against", In),
        ("without", In), ("within", In), ("since", In), ("until", In), ("because", In),
        ("if", In), ("while", In), ("than", In), ("as", In), ("upon", In), ("near", In),
        ("among", In), ("across", In), ("behind", In), ("below", In), ("above", In),
        ("although", In), ("though", In), ("unless", In), ("whether", In), ("per", In),
        ("to", To),
        ("i", Prp), ("you", Prp), ("he", Prp), ("she", Prp), ("it", Prp), ("we", Prp),
        ("they", Prp), ("me", Prp), ("him", Prp), ("us", Prp), ("them", Prp),
        ("myself", Prp), ("himself", Prp), ("herself", Prp), ("itself", Prp),
        ("themselves", Prp), ("ourselves", Prp), ("yourself", Prp),
        ("my", PrpS), ("your", PrpS), ("his", PrpS), ("her", PrpS), ("its", PrpS),
        ("our", PrpS), ("their", PrpS),
        ("can", Md), ("could", Md), ("will", Md), ("would", Md), ("shall", Md),
        ("should", Md), ("may", Md), ("might", Md), ("must", Md),
        ("which", Wdt), ("whatever", Wdt), ("whichever", Wdt),
        ("who", Wp), ("whom", Wp), ("what", Wp), ("whoever", Wp),
        ("whose", WpS),
        ("where", Wrb), ("when", Wrb), ("why", Wrb), ("how", Wrb), ("whenever", Wrb),
        ("all", Dt), ("both", Dt), ("half", Pdt), ("such", Pdt),
        ("'s", Pos), ("'", Pos),
        ("oh", Uh), ("yes", Uh), ("hello", Uh), ("wow", Uh), ("uh", Uh), ("um", Uh),
        ("please", Uh), ("ah", Uh),
        ("is", Vbz), ("are", Vbp), ("am", Vbp), ("was", Vbd), ("were", Vbd), ("be", Vb),
        ("been", Vbn), ("being", Vbg), ("has", Vbz), ("have", Vbp), ("had", Vbd),
        ("does", Vbz), ("do", Vbp), ("did", Vbd), ("done", Vbn), ("made", Vbd),
        ("said", Vbd), ("went", Vbd), ("came", Vbd), ("took", Vbd), ("gave", Vbd),
        ("saw", Vbd), ("knew", Vbd), ("got", Vbd), ("found", Vbd), ("began", Vbd),
        ("built", Vbd), ("became", Vbd), ("wrote", Vbd), ("known", Vbn), ("given", Vbn),
        ("taken", Vbn), ("seen", Vbn), ("written", Vbn), ("become", Vb), ("make", Vb),
        ("take", Vb), ("get", Vb), ("give", Vb), ("go", Vb), ("see", Vb), ("know", Vb),
        ("not", Rb), ("n't", Rb), ("very", Rb), ("also", Rb), ("often", Rb), ("never", Rb),
        ("always", Rb), ("too", Rb), ("so", Rb), ("just", Rb), ("then", Rb), ("now", Rb),
        ("here", Rb), ("still", Rb), ("already", Rb), ("soon", Rb), ("again", Rb),
        ("almost", Rb), ("even", Rb), ("only", Rb), ("there", Rb), ("however", Rb),
        ("more", Jjr), ("less", Jjr), ("better", Jjr), ("worse", Jjr), ("larger", Jjr),
        ("most", Jjs), ("least", Jjs), ("best", Jjs), ("worst", Jjs),
        ("up", Rp), ("off", Rp), ("out", Rp), ("down", Rp), ("away", Rp),
        ("one", Cd), ("two", Cd), ("three", Cd), ("four", Cd), ("five", Cd), ("six", Cd),
        ("seven", Cd), ("eight", Cd), ("nine", Cd), ("ten", Cd), ("hundred", Cd),
        ("thousand", Cd), ("million", Cd), ("billion", Cd), ("zero", Cd),
        ("good", Jj), ("new", Jj), ("old", Jj), ("great", Jj), ("high", Jj), ("small", Jj),
        ("large", Jj), ("big", Jj), ("long", Jj), ("little", Jj), ("early", Jj),
        ("young", Jj), ("important", Jj), ("few", Jj), ("many", Jj), ("other", Jj),
        ("first", Jj), ("last", Jj), ("same", Jj), ("successful", Jj), ("green", Jj),
    ]
};

const SYMBOLS: &[char] = &[
    '.', ',', ';', ':', '!', '?', '(', ')', '[', ']', '{', '}', '"', '\'', '-', '/', '&', '%',
    '$', '#', '@', '*', '+', '=', '<', '>', '~', '`', '^', '|', '\\', '_',
];

const ADJECTIVE_SUFFIXES: &[&str] = &["able", "ible", "ous", "ful", "ive", "less", "ical", "ish"];
const IRREGULAR_PLURALS: &[&str] = &["people", "children", "men", "women", "feet", "teeth", "mice"];

fn lexicon(word: &str) -> Option<PosTag> {
    LEXICON.iter().find(|(w, _)| *w == word).map(|(_, t)| *t)
}

fn is_number(word: &str) -> bool {
    word.chars().any(|c| c.is_ascii_digit())
        && word
            .chars()
            .all(|c| c.is_ascii_digit() || matches!(c, '.' | ',' | '-' | '/' | ':'))
}

fn is_capitalized(word: &str) -> bool {
    let mut chars = word.chars();
    chars.next().is_some_and(char::is_uppercase) && chars.all(|c| c.is_alphanumeric() || c == '-')
}

fn starts_sentence(prev: Option<&str>) -> bool {
    prev.is_none_or(|p| matches!(p, "." | "!" | "?" | "\"" | ":" | ";"))
}

/// Tags one word given its left context.
fn tag_one(word: &str, prev: Option<&str>, prev_tag: Option<PosTag>, next: Option<&str>) -> PosTag {
    use PosTag::*;
    if word.is_empty() {
        return Unrecognized;
    }
    if is_number(word) {
        return Cd;
    }
    if word.chars().all(|c| SYMBOLS.contains(&c)) {
        return Sym;
    }
    if !word
        .chars()
        .all(|c| c.is_alphanumeric() || c == '-' || c == '\'' || c == '.' || c == '&')
    {
        return Unrecognized;
    }
    let lower = word.to_lowercase();
    let sentence_initial = starts_sentence(prev);
    if is_capitalized(word) && !sentence_initial {
        // Demonyms like "Americans" are the only plural proper nouns we recognize.
        return if lower.len() > 5 && lower.ends_with("ans") { Nnps } else { Nnp };
    }
    if is_capitalized(word) && lexicon(&lower).is_none() && next.is_some_and(is_capitalized) {
        return Nnp;
    }
    if lower == "there" && next.is_some_and(|n| matches!(n.to_lowercase().as_str(), "is" | "are" | "was" | "were")) {
        return Ex;
    }
    if matches!(lower.as_str(), "all" | "both") && next.is_some_and(|n| lexicon(&n.to_lowercase()) == Some(Dt)) {
        return Pdt;
    }
    if lower == "that" && prev_tag.is_some_and(|t| matches!(t, Nn | Nns)) {
        return Wdt;
    }
    if let Some(tag) = lexicon(&lower) {
        return tag;
    }
    if IRREGULAR_PLURALS.contains(&lower.as_str()) {
        return Nns;
    }
    let after_have = prev.is_some_and(|p| {
        matches!(p.to_lowercase().as_str(), "has" | "have" | "had" | "having" | "been" | "be" | "was" | "were" | "is" | "are")
    });
    let n = lower.len();
    if n > 3 && lower.ends_with("ed") {
        return if after_have { Vbn } else { Vbd };
    }
    if n > 4 && lower.ends_with("ing") {
        return Vbg;
    }
    if n > 3 && lower.ends_with("ly") {
        return Rb;
    }
    if n > 5 && lower.ends_with("est") {
        return Jjs;
    }
    if ADJECTIVE_SUFFIXES.iter().any(|s| n > s.len() + 2 && lower.ends_with(s)) {
        return Jj;
    }
    if prev_tag == Some(To) || prev_tag == Some(Md) {
        return Vb;
    }
    if n > 3 && lower.ends_with('s') && !lower.ends_with("ss") && !lower.ends_with("us") && !lower.ends_with("is") {
        return if matches!(prev_tag, Some(Prp) | Some(Nnp)) { Vbz } else { Nns };
    }
    Nn
}

/// Deterministic tagger: closed-class lexicon, suffix rules, digit rule,
/// capitalization rule, `NN` fallback, `ERR` for untaggable symbols.
///
/// Tags original-case text; never emits `SPE` or `PAD`.
pub fn tag_words<S: AsRef<str>>(words: &[S]) -> Vec<PosTag> {
    let mut tags: Vec<PosTag> = Vec::with_capacity(words.len());
    for (i, w) in words.iter().enumerate() {
        let prev = i.checked_sub(1).map(|j| words[j].as_ref());
        let next = words.get(i + 1).map(AsRef::as_ref);
        let tag = tag_one(w.as_ref(), prev, tags.last().copied(), next);
        tags.push(tag);
    }
    tags
}

/// Where one subword position comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubwordSource {
    Word(usize),
    Special,
    Pad,
}

/// Every subword inherits the tag of its word; specials get `SPE`, padding `PAD`.
pub fn align_tags_to_subwords(tagged: &[TaggedWord], sources: &[SubwordSource]) -> Result<Vec<PosTag>> {
    sources
        .iter()
        .enumerate()
        .map(|(pos, src)| match *src {
            SubwordSource::Word(i) => tagged.get(i).map(|w| w.tag).ok_or_else(|| {
                Error::Alignment(format!(
                    "subword {pos} points at word {i}, but only {} words are tagged",
                    tagged.len()
                ))
            }),
            SubwordSource::Special => Ok(PosTag::Spe),
            SubwordSource::Pad => Ok(PosTag::Pad),
        })
        .collect()
}

/// Replaces exactly `round(rate · n)` of the `n` non-structural tags with a
/// different linguistic tag chosen uniformly. Positions come from a seeded
/// shuffle, so at one seed the corrupted set grows monotonically with `rate`.
pub fn corrupt_tags(tags: &[PosTag], rate: f64, seed: u64) -> Result<Vec<PosTag>> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Input(format!("corruption rate {rate} outside [0, 1]")));
    }
    let mut positions: Vec<usize> = (0..tags.len()).filter(|&i| !tags[i].is_structural()).collect();
    let count = (rate * positions.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    positions.shuffle(&mut rng);
    let mut out = tags.to_vec();
    for &i in positions.iter().take(count) {
        let original = tags[i];
        let replacement = loop {
            let candidate = PosTag::ALL[rng.random_range(0..NUM_LINGUISTIC_TAGS)];
            if candidate != original {
                break candidate;
            }
        };
        out[i] = replacement;
    }
    Ok(out)
}

/// Parses `surface<TAB>TAG` lines; a blank line ends a sequence.
pub fn parse_pretagged(text: &str) -> Result<Vec<Vec<TaggedWord>>> {
    let mut sequences = Vec::new();
    let mut current = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !current.is_empty() {
                sequences.push(std::mem::take(&mut current));
            }
            continue;
        }
        let (surface, tag) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(format!("line {}", lineno + 1), "expected surface<TAB>TAG"))?;
        if surface.is_empty() {
            return Err(Error::parse(format!("line {}", lineno + 1), "empty surface"));
        }
        let tag: PosTag = tag
            .trim()
            .parse()
            .map_err(|e: Error| Error::parse(format!("line {}", lineno + 1), e.to_string()))?;
        current.push(TaggedWord {
            surface: surface.to_string(),
            tag,
        });
    }
    if !current.is_empty() {
        sequences.push(current);
    }
    Ok(sequences)
}

pub fn format_pretagged(sequences: &[Vec<TaggedWord>]) -> String {
    let mut out = String::new();
    for (i, seq) in sequences.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for w in seq {
            out.push_str(&w.surface);
            out.push('\t');
            out.push_str(w.tag.as_str());
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use PosTag::*;

    #[test]
    fn vocabulary_order_and_round_trip() {
        assert_eq!(PosTag::ALL.len(), NUM_TAGS);
        assert_eq!(Cc.id(), 0);
        assert_eq!(Wrb.id(), 35);
        assert_eq!(Spe.id(), 36);
        assert_eq!(Pad.id(), 37);
        assert_eq!(Unrecognized.id(), 38);
        for id in 0..NUM_TAGS {
            let tag = PosTag::from_id(id).unwrap();
            assert_eq!(tag.id(), id);
            assert_eq!(tag.as_str().parse::<PosTag>().unwrap(), tag);
        }
        assert!(PosTag::from_id(39).is_err());
        assert_eq!("PRP$".parse::<PosTag>().unwrap(), PrpS);
    }

    #[test]
    fn tagger_examples() {
        assert_eq!(tag_words(&["the"]), vec![Dt]);
        assert_eq!(tag_words(&["1862"]), vec![Cd]);
        assert_eq!(tag_words(&["exhibited"]), vec![Vbd]);
    }

    #[test]
    fn tagger_sentence() {
        let words = [
            "Charles", "Richard", "exhibited", "it", "at", "London", "Exhibition", "in", "1862", ".",
        ];
        let tags = tag_words(&words);
        assert_eq!(tags, vec![Nnp, Nnp, Vbd, Prp, In, Nnp, Nnp, In, Cd, Sym]);
        let q = tag_words(&["Where", "was", "the", "indicator", "exhibited", "?"]);
        assert_eq!(q, vec![Wrb, Vbd, Dt, Nn, Vbd, Sym]);
        assert_eq!(tag_words(&["it", "was", "exhibited"]), vec![Prp, Vbd, Vbn]);
        assert_eq!(tag_words(&["there", "is", "quickly", "running", "🙂"]), vec![Ex, Vbz, Rb, Vbg, Unrecognized]);
        assert!(tag_words(&["the", "cats", "can", "jump"]).ends_with(&[Nns, Md, Vb]));
    }

    #[test]
    fn tagger_never_emits_structural_tags() {
        let words = ["[CLS]", "[SEP]", "", "x", "##ed", "PAD"];
        for tag in tag_words(&words) {
            assert!(!tag.is_structural());
        }
    }

    #[test]
    fn alignment_examples() {
        let tagged = vec![TaggedWord {
            surface: "exhibited".into(),
            tag: Vbd,
        }];
        let src = [
            SubwordSource::Special,
            SubwordSource::Word(0),
            SubwordSource::Word(0),
            SubwordSource::Pad,
            SubwordSource::Pad,
            SubwordSource::Pad,
        ];
        assert_eq!(
            align_tags_to_subwords(&tagged, &src).unwrap(),
            vec![Spe, Vbd, Vbd, Pad, Pad, Pad]
        );
        assert!(matches!(
            align_tags_to_subwords(&tagged, &[SubwordSource::Word(1)]),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn corruption_examples() {
        let tags = vec![Nn, Vbd, Dt, Jj, Nnp, Nnp, In, Cd, Rb, Vbg];
        assert_eq!(corrupt_tags(&tags, 0.0, 1).unwrap(), tags);
        let full = corrupt_tags(&tags, 1.0, 1).unwrap();
        assert!(full.iter().zip(&tags).all(|(a, b)| a != b));
        assert!(full.iter().all(|t| t.is_linguistic()));
        let partial = corrupt_tags(&tags, 0.2, 99).unwrap();
        assert_eq!(partial.iter().zip(&tags).filter(|(a, b)| a != b).count(), 2);
        assert!(corrupt_tags(&tags, 1.5, 1).is_err());
    }

    #[test]
    fn corruption_spares_structural_positions() {
        let tags = vec![Spe, Nn, Nn, Spe, Vb, Spe, Pad, Pad];
        let out = corrupt_tags(&tags, 1.0, 3).unwrap();
        for (a, b) in out.iter().zip(&tags) {
            if b.is_structural() {
                assert_eq!(a, b);
            } else {
                assert_ne!(a, b);
            }
        }
    }

    #[test]
    fn pretagged_round_trip_and_errors() {
        let text = "London\tNNP\nExhibition\tNNP\n\nin\tIN\n1862\tCD\n";
        let parsed = parse_pretagged(text).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[1][1].tag, Cd);
        assert_eq!(parse_pretagged(&format_pretagged(&parsed)).unwrap(), parsed);
        let err = parse_pretagged("a\tDT\nb\tXYZ\n").unwrap_err();
        assert!(matches!(err, Error::Parse { ref location, .. } if location == "line 2"));
        assert!(parse_pretagged("no-tab-here\n").is_err());
    }

    fn tag_strategy() -> impl Strategy<Value = PosTag> {
        (0..NUM_TAGS).prop_map(|i| PosTag::from_id(i).unwrap())
    }

    proptest! {
        #[test]
        fn corruption_is_reproducible_and_exact(
            tags in prop::collection::vec(tag_strategy(), 0..60),
            rate in 0.0f64..=1.0,
            seed in any::<u64>(),
        ) {
            let a = corrupt_tags(&tags, rate, seed).unwrap();
            prop_assert_eq!(&a, &corrupt_tags(&tags, rate, seed).unwrap());
            let n = tags.iter().filter(|t| !t.is_structural()).count();
            let changed = a.iter().zip(&tags).filter(|(x, y)| x != y).count();
            prop_assert_eq!(changed, (rate * n as f64).round() as usize);
        }

        #[test]
        fn alignment_preserves_fanout(
            fanout in prop::collection::vec(1usize..4, 1..12),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tagged: Vec<TaggedWord> = fanout
                .iter()
                .map(|_| TaggedWord { surface: "w".into(), tag: PosTag::ALL[rng.random_range(0..36)] })
                .collect();
            let mut src = vec![SubwordSource::Special];
            for (i, &k) in fanout.iter().enumerate() {
                src.extend(std::iter::repeat_n(SubwordSource::Word(i), k));
            }
            src.push(SubwordSource::Special);
            src.push(SubwordSource::Pad);
            let aligned = align_tags_to_subwords(&tagged, &src).unwrap();
            prop_assert_eq!(aligned.len(), src.len());
            let mut got: Vec<PosTag> = aligned.into_iter().filter(|t| !t.is_structural()).collect();
            let mut want: Vec<PosTag> = tagged
                .iter()
                .zip(&fanout)
                .flat_map(|(w, &k)| std::iter::repeat_n(w.tag, k))
                .collect();
            got.sort();
            want.sort();
            prop_assert_eq!(got, want);
        }
    }

    #[test]
    fn different_seeds_differ() {
        let tags: Vec<PosTag> = (0..30).map(|i| PosTag::ALL[i % 36]).collect();
        let a = corrupt_tags(&tags, 0.2, 13).unwrap();
        let b = corrupt_tags(&tags, 0.2, 42).unwrap();
        assert_ne!(a, b);
    }
}
