use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("tree parse error at {}: {reason}", position_label(.position, .len))]
pub struct TreeError {
    /// Byte offset into the input; equal to the input length at end of input.
    pub position: usize,
    pub len: usize,
    pub reason: String,
}

fn position_label(position: &usize, len: &usize) -> String {
    if position >= len {
        "end of input".to_string()
    } else {
        format!("byte {position}")
    }
}

impl TreeError {
    pub fn at_end(&self) -> bool {
        self.position >= self.len
    }
}

/// One node of a Penn-Treebank style constituency tree. Leaves are
/// pre-terminals: a part-of-speech tag plus the word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstituencyNode {
    pub tag: String,
    pub children: Vec<ConstituencyNode>,
    pub token: Option<String>,
}

impl ConstituencyNode {
    pub fn leaf(tag: impl Into<String>, token: impl Into<String>) -> Self {
        ConstituencyNode {
            tag: tag.into(),
            children: Vec::new(),
            token: Some(token.into()),
        }
    }

    pub fn internal(tag: impl Into<String>, children: Vec<ConstituencyNode>) -> Self {
        ConstituencyNode {
            tag: tag.into(),
            children,
            token: None,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.token.is_some()
    }

    /// Words in left-to-right order.
    pub fn leaves(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a str>) {
        match &self.token {
            Some(t) => out.push(t),
            None => self.children.iter().for_each(|c| c.collect_leaves(out)),
        }
    }

    pub fn num_leaves(&self) -> usize {
        match self.token {
            Some(_) => 1,
            None => self.children.iter().map(ConstituencyNode::num_leaves).sum(),
        }
    }
}

impl fmt::Display for ConstituencyNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}", self.tag)?;
        if let Some(t) = &self.token {
            write!(f, " {t}")?;
        }
        for c in &self.children {
            write!(f, " {c}")?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Tok<'a> {
    Open,
    Close,
    Atom(&'a str),
}

fn lex(text: &str) -> Vec<(usize, Tok<'_>)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        if c == '(' || c == ')' || c.is_whitespace() {
            if let Some(s) = start.take() {
                out.push((s, Tok::Atom(&text[s..i])));
            }
            if c == '(' {
                out.push((i, Tok::Open));
            } else if c == ')' {
                out.push((i, Tok::Close));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push((s, Tok::Atom(&text[s..])));
    }
    out
}

struct Parser<'a> {
    toks: Vec<(usize, Tok<'a>)>,
    pos: usize,
    len: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, reason: impl Into<String>) -> TreeError {
        let position = self.toks.get(self.pos).map_or(self.len, |t| t.0);
        TreeError {
            position,
            len: self.len,
            reason: reason.into(),
        }
    }

    fn peek(&self) -> Option<Tok<'a>> {
        self.toks.get(self.pos).map(|t| t.1)
    }

    fn node(&mut self) -> Result<ConstituencyNode, TreeError> {
        if self.peek() != Some(Tok::Open) {
            return Err(self.err("expected '('"));
        }
        self.pos += 1;
        let tag = match self.peek() {
            Some(Tok::Atom(a)) => {
                self.pos += 1;
                a.to_string()
            }
            _ => String::new(),
        };
        let mut children = Vec::new();
        let mut token = None;
        loop {
            match self.peek() {
                None => return Err(self.err("unbalanced parentheses: missing ')'")),
                Some(Tok::Close) => {
                    self.pos += 1;
                    break;
                }
                Some(Tok::Open) => {
                    if token.is_some() {
                        return Err(self.err("word and subtree mixed under one node"));
                    }
                    children.push(self.node()?);
                }
                Some(Tok::Atom(a)) => {
                    if token.is_some() || !children.is_empty() {
                        return Err(self.err("a word must be the only child of its tag"));
                    }
                    token = Some(a.to_string());
                    self.pos += 1;
                }
            }
        }
        if token.is_none() && children.is_empty() {
            return Err(TreeError {
                position: self.toks[self.pos - 1].0,
                len: self.len,
                reason: "empty node".into(),
            });
        }
        // PTB files often wrap the root as "( (S ...) )"
        if tag.is_empty() && token.is_none() && children.len() == 1 {
            return Ok(children.pop().unwrap());
        }
        if tag.is_empty() {
            return Err(self.err("node without a tag"));
        }
        Ok(ConstituencyNode { tag, children, token })
    }
}

/// Parses `(TAG child ...)` notation. Serializing the result with
/// `Display` reproduces the input up to whitespace.
pub fn parse_bracketed_tree(text: &str) -> Result<ConstituencyNode, TreeError> {
    let mut p = Parser {
        toks: lex(text),
        pos: 0,
        len: text.len(),
    };
    if p.toks.is_empty() {
        return Err(p.err("empty input"));
    }
    let root = p.node()?;
    if p.pos < p.toks.len() {
        return Err(p.err("trailing input after the root node"));
    }
    Ok(root)
}
