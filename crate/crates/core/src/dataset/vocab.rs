use std::collections::HashMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const NUM_SPECIAL: u32 = 4;

const SPECIAL_WORDS: [&str; NUM_SPECIAL as usize] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Lowercases, drops punctuation, digits and other non-letters, and
/// collapses runs of whitespace into single spaces.
pub fn normalize_text(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for c in raw.chars().flat_map(char::to_lowercase) {
        if c.is_whitespace() {
            pending_space = !out.is_empty();
        } else if c.is_alphabetic() && !c.is_numeric() {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(c);
        }
    }
    out
}

/// Word-level vocabulary with four reserved ids (`PAD`, `BOS`, `EOS`, `UNK`).
/// Corpus words take ids from `NUM_SPECIAL` upward.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    word_to_id: HashMap<String, u32>,
    id_to_word: Vec<String>,
    max_len: usize,
}

impl Vocabulary {
    /// Builds a vocabulary from an explicit word list (ids assigned in order).
    pub fn from_words(words: Vec<String>, max_len: usize) -> Result<Self> {
        if max_len == 0 {
            return Err(Error::Input("vocabulary max_len must be positive".into()));
        }
        let mut word_to_id = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if w.is_empty() || w.contains(char::is_whitespace) {
                return Err(Error::Input(format!("invalid vocabulary word {w:?}")));
            }
            if SPECIAL_WORDS.contains(&w.as_str()) {
                return Err(Error::Input(format!("{w:?} is a reserved token")));
            }
            if word_to_id.insert(w.clone(), i as u32 + NUM_SPECIAL).is_some() {
                return Err(Error::Input(format!("duplicate vocabulary word {w:?}")));
            }
        }
        Ok(Self {
            word_to_id,
            id_to_word: words,
            max_len,
        })
    }

    /// Keeps the words occurring at least `min_count` times; `max_len` is the
    /// smallest length covering at least `quantile` of the texts.
    pub fn build(corpus: &[impl AsRef<str>], min_count: usize, quantile: f64) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Input("empty corpus".into()));
        }
        if !(quantile > 0.0 && quantile <= 1.0) {
            return Err(Error::Input(format!("quantile {quantile} outside (0, 1]")));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut lengths = Vec::with_capacity(corpus.len());
        for text in corpus {
            let mut n = 0;
            for w in text.as_ref().split_whitespace() {
                *counts.entry(w).or_default() += 1;
                n += 1;
            }
            lengths.push(n);
        }
        let words = ranked_words(counts, min_count.max(1));
        Self::from_words(words, quantile_length(&mut lengths, quantile).max(1))
    }

    /// Every distinct word, and room for the longest caption plus `BOS`/`EOS`.
    pub fn build_captions(captions: &[impl AsRef<str>]) -> Result<Self> {
        if captions.is_empty() {
            return Err(Error::Input("no captions".into()));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut longest = 0;
        for c in captions {
            let mut n = 0;
            for w in c.as_ref().split_whitespace() {
                *counts.entry(w).or_default() += 1;
                n += 1;
            }
            longest = longest.max(n);
        }
        Self::from_words(ranked_words(counts, 1), longest + 2)
    }

    /// Total id count including the reserved ids.
    pub fn len(&self) -> usize {
        self.id_to_word.len() + NUM_SPECIAL as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn words(&self) -> &[String] {
        &self.id_to_word
    }

    pub fn contains(&self, word: &str) -> bool {
        self.word_to_id.contains_key(word)
    }

    pub fn id(&self, word: &str) -> u32 {
        self.word_to_id.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        if id < NUM_SPECIAL {
            Some(SPECIAL_WORDS[id as usize])
        } else {
            self.id_to_word
                .get((id - NUM_SPECIAL) as usize)
                .map(String::as_str)
        }
    }

    /// Token ids of a normalized text, without framing or truncation.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }

    /// `BOS`, the tokens, `EOS`, truncated so the result fits in `max_len`.
    pub fn encode_caption(&self, text: &str) -> Vec<u32> {
        let keep = self.max_len.saturating_sub(2);
        let mut ids = vec![BOS];
        ids.extend(self.encode(text).into_iter().take(keep));
        ids.push(EOS);
        ids
    }

    /// Joins the words of `ids`, skipping `BOS`/`PAD` and stopping at `EOS`.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i != BOS && i != PAD)
            .map(|&i| self.word(i).unwrap_or(SPECIAL_WORDS[UNK as usize]))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

pub fn build_vocab(corpus: &[impl AsRef<str>], min_count: usize, quantile: f64) -> Result<Vocabulary> {
    Vocabulary::build(corpus, min_count, quantile)
}

pub fn build_caption_vocab(captions: &[impl AsRef<str>]) -> Result<Vocabulary> {
    Vocabulary::build_captions(captions)
}

/// Most frequent first, ties broken alphabetically.
fn ranked_words(counts: HashMap<&str, usize>, min_count: usize) -> Vec<String> {
    let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
    kept.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    kept.into_iter().map(|(w, _)| w.to_owned()).collect()
}

/// Smallest `L` such that at least `quantile * n` of the lengths are `<= L`.
pub(crate) fn quantile_length(lengths: &mut [usize], quantile: f64) -> usize {
    lengths.sort_unstable();
    let n = lengths.len();
    let needed = ((quantile * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    lengths[needed - 1]
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    words: Vec<String>,
    max_len: usize,
}

impl Serialize for Vocabulary {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        VocabularyRepr {
            words: self.id_to_word.clone(),
            max_len: self.max_len,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = VocabularyRepr::deserialize(d)?;
        Vocabulary::from_words(repr.words, repr.max_len).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn min_count_keeps_frequent_words() {
        let mut corpus = vec!["meme"; 5];
        corpus.extend(["rare"; 4]);
        let v = build_vocab(&corpus, 5, 0.9).unwrap();
        assert!(v.contains("meme"));
        assert!(!v.contains("rare"));
        assert_eq!(v.id("rare"), UNK);
    }

    #[test]
    fn single_text_quantile() {
        let v = build_vocab(&["a b c"], 1, 1.0).unwrap();
        assert_eq!(v.max_len(), 3);
    }

    #[test]
    fn ninety_percent_quantile_of_ten_lengths() {
        let corpus: Vec<String> = (1..=10)
            .map(|n| vec!["w"; n].join(" "))
            .collect();
        assert_eq!(build_vocab(&corpus, 1, 0.9).unwrap().max_len(), 9);
    }

    #[test]
    fn build_vocab_errors() {
        let empty: [&str; 0] = [];
        assert!(build_vocab(&empty, 1, 0.9).is_err());
        assert!(build_vocab(&["a"], 1, 0.0).is_err());
        assert!(build_vocab(&["a"], 1, 1.5).is_err());
        assert!(build_caption_vocab(&empty).is_err());
    }

    #[test]
    fn caption_vocab_framing() {
        let v = build_caption_vocab(&["a cat", "a dog runs"]).unwrap();
        let mut words = v.words().to_vec();
        words.sort();
        assert_eq!(words, ["a", "cat", "dog", "runs"]);
        assert_eq!(v.max_len(), 5);
        let single = build_caption_vocab(&["x"]).unwrap();
        assert_eq!(single.words(), ["x"]);
        assert_eq!(single.max_len(), 3);

        let ids = v.encode_caption("a dog runs");
        assert_eq!(ids.len(), 5);
        assert_eq!((ids[0], ids[4]), (BOS, EOS));
        assert_eq!(v.decode(&ids), "a dog runs");
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_text("Hello, WORLD 42!"), "hello world");
        assert_eq!(normalize_text(""), "");
        assert_eq!(normalize_text("  a\t\tb  "), "a b");
    }

    #[test]
    fn reserved_words_rejected() {
        assert!(Vocabulary::from_words(vec!["<pad>".into()], 3).is_err());
        assert!(Vocabulary::from_words(vec!["a".into(), "a".into()], 3).is_err());
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,40}") {
            let once = normalize_text(&s);
            prop_assert_eq!(normalize_text(&once), once.clone());
            prop_assert!(!once.contains("  "));
            prop_assert!(!once.chars().any(|c| c.is_ascii_punctuation() || c.is_numeric()));
        }

        #[test]
        fn corpus_ids_never_special(words in proptest::collection::vec("[a-z]{1,4}", 1..30)) {
            let text = words.join(" ");
            let v = build_vocab(&[text.as_str()], 1, 1.0).unwrap();
            for id in v.encode(&text) {
                prop_assert!(id >= NUM_SPECIAL);
            }
        }
    }
}
