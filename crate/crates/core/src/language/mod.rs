//! Expression tokenization, vocabulary, constituency trees, noun-phrase
//! extraction and the recurrent expression encoder.

mod encoder;
mod phrases;
mod tree;
mod vocab;

pub use encoder::{encode_expression, phrase_average_matrix, word_type_weights, EncodedExpression};
pub use phrases::{extract_noun_phrases, NounPhrases, Span, StopLists};
pub use tree::{parse_bracketed_tree, ConstituencyNode, TreeError};
pub use vocab::{build_vocabulary, build_vocabulary_with, Vocabulary, MIN_OCCURRENCES};

use thiserror::Error;

use crate::tensor::TensorError;

/// Default cap on expression length in tokens.
pub const MAX_LENGTH: usize = 20;

/// Word-type slots of the 4-way classifier.
pub const ENTITY: usize = 0;
pub const RELATION: usize = 1;
pub const LOCATION: usize = 2;
pub const UNNECESSARY: usize = 3;

#[derive(Debug, Error)]
pub enum LanguageError {
    #[error("expression has no tokens")]
    EmptyExpression,
    #[error("expression has {len} tokens, limit is {max}")]
    TooLong { len: usize, max: usize },
    #[error("tree leaves {leaves:?} do not match tokens {tokens:?}")]
    LeafMismatch { leaves: Vec<String>, tokens: Vec<String> },
    #[error("phrase word index {index} out of range for {len} tokens")]
    PhraseIndex { index: usize, len: usize },
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Lowercases and splits on whitespace and punctuation; punctuation is dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| c.is_whitespace() || (c.is_ascii_punctuation()))
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_lowercases_and_drops_punctuation() {
        assert_eq!(tokenize("The man's  UMBRELLA, left."), vec!["the", "man", "s", "umbrella", "left"]);
        assert!(tokenize(" ,.; ").is_empty());
    }
}
