use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

/// A token is kept only if it occurs strictly more often than this.
pub const MIN_OCCURRENCES: usize = 5;

/// Token → id map. Id 0 is the unknown token; known tokens get ids in
/// lexicographic order starting at 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRecord", into = "VocabRecord")]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
    min_occurrences: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabRecord {
    min_occurrences: usize,
    tokens: Vec<String>,
}

impl From<VocabRecord> for Vocabulary {
    fn from(r: VocabRecord) -> Self {
        Vocabulary::from_tokens(r.tokens, r.min_occurrences)
    }
}

impl From<Vocabulary> for VocabRecord {
    fn from(v: Vocabulary) -> Self {
        VocabRecord {
            min_occurrences: v.min_occurrences,
            tokens: v.tokens,
        }
    }
}

impl Vocabulary {
    fn from_tokens(mut tokens: Vec<String>, min_occurrences: usize) -> Self {
        tokens.retain(|t| !t.is_empty());
        tokens.sort();
        tokens.dedup();
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i + 1)).collect();
        Vocabulary {
            tokens,
            ids,
            min_occurrences,
        }
    }

    /// Id for `token`, or 0 when unknown.
    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(0)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        id.checked_sub(1).and_then(|i| self.tokens.get(i)).map(String::as_str)
    }

    /// Number of embedding rows, including the unknown slot.
    pub fn len(&self) -> usize {
        self.tokens.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn known_tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn min_occurrences(&self) -> usize {
        self.min_occurrences
    }
}

/// Builds the vocabulary with the default threshold.
pub fn build_vocabulary<S: AsRef<str>>(corpus: &[Vec<S>]) -> Vocabulary {
    build_vocabulary_with(corpus, MIN_OCCURRENCES)
}

pub fn build_vocabulary_with<S: AsRef<str>>(corpus: &[Vec<S>], min_occurrences: usize) -> Vocabulary {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for sentence in corpus {
        for tok in sentence {
            *counts.entry(tok.as_ref()).or_default() += 1;
        }
    }
    let kept = counts
        .into_iter()
        .filter(|(t, c)| !t.is_empty() && *c > min_occurrences)
        .map(|(t, _)| t.to_string())
        .collect();
    Vocabulary::from_tokens(kept, min_occurrences)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn repeat(tok: &str, n: usize) -> Vec<Vec<String>> {
        vec![vec![tok.to_string()]; n]
    }

    #[test]
    fn threshold_is_strict() {
        let mut corpus = repeat("six", 6);
        corpus.extend(repeat("five", 5));
        corpus.extend(repeat("", 10));
        let v = build_vocabulary(&corpus);
        assert_eq!(v.id("six"), 1);
        assert_eq!(v.id("five"), 0);
        assert_eq!(v.id(""), 0);
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn ids_are_lexicographic_and_bijective() {
        let mut corpus = repeat("zebra", 7);
        corpus.extend(repeat("apple", 7));
        corpus.extend(repeat("mango", 7));
        let v = build_vocabulary(&corpus);
        assert_eq!(v.encode(&["apple".into(), "mango".into(), "zebra".into(), "kiwi".into()]), vec![1, 2, 3, 0]);
        for id in 1..v.len() {
            assert_eq!(v.id(v.token(id).unwrap()), id);
        }
        assert_eq!(v.token(0), None);
    }

    #[test]
    fn serde_round_trip() {
        let v = build_vocabulary(&repeat("red", 9));
        let back: Vocabulary = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        assert_eq!(v, back);
    }
}
