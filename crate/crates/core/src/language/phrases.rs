use serde::{Deserialize, Serialize};

use super::{ConstituencyNode, LanguageError};

/// Word-filter lists applied to candidate noun phrases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopLists {
    pub determiners: Vec<String>,
    pub absolute_location: Vec<String>,
}

impl Default for StopLists {
    fn default() -> Self {
        let owned = |ws: &[&str]| ws.iter().map(|w| w.to_string()).collect();
        StopLists {
            determiners: owned(&["a", "an", "the", "this", "that", "these", "those", "any", "some"]),
            absolute_location: owned(&[
                "left", "right", "top", "bottom", "middle", "center", "front", "back", "leftmost", "rightmost",
                "closest", "farthest",
            ]),
        }
    }
}

impl StopLists {
    pub fn is_stop(&self, word: &str) -> bool {
        let w = word.to_lowercase();
        self.determiners.contains(&w) || self.absolute_location.contains(&w)
    }
}

/// Half-open word range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NounPhrases {
    /// Innermost noun phrases, in sentence order.
    pub candidates: Vec<Span>,
    /// Word indices surviving the stop-list filter, for candidates that
    /// keep at least two words.
    pub phrases: Vec<Vec<usize>>,
}

fn is_np(tag: &str) -> bool {
    tag == "NP" || tag.starts_with("NP-")
}

/// Returns whether the subtree contains an NP, pushing innermost NP spans.
fn walk(node: &ConstituencyNode, offset: &mut usize, out: &mut Vec<Span>) -> bool {
    if node.is_leaf() {
        *offset += 1;
        return false;
    }
    let start = *offset;
    let mut below = false;
    for c in &node.children {
        below |= walk(c, offset, out);
    }
    if is_np(&node.tag) {
        if !below {
            out.push(Span { start, end: *offset });
        }
        return true;
    }
    below
}

/// Extracts noun phrases: on each leaf-to-root path the first NP met is
/// the candidate, so only NPs without an NP inside them survive. Each
/// candidate then loses determiners and absolute-location words and is
/// kept when two or more words remain.
pub fn extract_noun_phrases(
    tree: &ConstituencyNode,
    tokens: &[String],
    stops: &StopLists,
) -> Result<NounPhrases, LanguageError> {
    let leaves = tree.leaves();
    let matches = leaves.len() == tokens.len()
        && leaves.iter().zip(tokens).all(|(l, t)| l.eq_ignore_ascii_case(t));
    if !matches {
        return Err(LanguageError::LeafMismatch {
            leaves: leaves.iter().map(|s| s.to_string()).collect(),
            tokens: tokens.to_vec(),
        });
    }
    let mut candidates = Vec::new();
    walk(tree, &mut 0, &mut candidates);
    candidates.sort();
    candidates.dedup();
    let phrases = candidates
        .iter()
        .map(|s| (s.start..s.end).filter(|&i| !stops.is_stop(&tokens[i])).collect::<Vec<_>>())
        .filter(|p| p.len() >= 2)
        .collect();
    Ok(NounPhrases { candidates, phrases })
}
