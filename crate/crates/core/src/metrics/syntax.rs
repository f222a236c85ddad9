//! Labeled trees and the fallback fragment kernel used for syntax similarity.
//!
//! A fragment rooted at node `n` is either `n` on its own or `n` together with
//! all of its children, each child again contributing one of its own
//! fragments. The kernel counts pairs of identical fragments across two trees:
//!
//! ```text
//! C(a, b) = 0                                   if label(a) != label(b)
//!         = 1 + [same production] * prod_i C(a_i, b_i)   otherwise
//! K(t, u) = sum over node pairs (a in t, b in u) of C(a, b)
//! ```
//!
//! where "same production" means both nodes have children and the child
//! label sequences are equal. Similarity is `K(t,u) / sqrt(K(t,t) K(u,u))`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::backends::{BackendResult, SyntaxParser};
use crate::corpus::Sentence;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tree {
    pub label: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<Tree>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("bracketed tree, offset {offset}: {reason}")]
pub struct TreeParseError {
    pub offset: usize,
    pub reason: String,
}

impl Tree {
    pub fn leaf(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            children: Vec::new(),
        }
    }

    pub fn node(label: impl Into<String>, children: Vec<Tree>) -> Self {
        Self {
            label: label.into(),
            children,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn size(&self) -> usize {
        1 + self.children.iter().map(Tree::size).sum::<usize>()
    }

    /// Parse Penn-style bracketed notation, e.g. `(S (NP (DT the) (NN dog)) (VP barked))`.
    /// Bare atoms become leaves. An unlabeled outer bracket gets the label `ROOT`.
    pub fn parse_bracketed(input: &str) -> Result<Tree, TreeParseError> {
        let tokens = lex(input);
        let mut pos = 0;
        let tree = parse_node(&tokens, &mut pos)?;
        if pos != tokens.len() {
            return Err(TreeParseError {
                offset: tokens[pos].0,
                reason: "trailing input".into(),
            });
        }
        Ok(tree)
    }
}

impl fmt::Display for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_leaf() {
            return f.write_str(&self.label);
        }
        write!(f, "({}", self.label)?;
        for c in &self.children {
            write!(f, " {c}")?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Lexeme {
    Open,
    Close,
    Atom(String),
}

fn lex(input: &str) -> Vec<(usize, Lexeme)> {
    let mut out = Vec::new();
    let mut atom_start: Option<usize> = None;
    let flush = |out: &mut Vec<(usize, Lexeme)>, start: &mut Option<usize>, end: usize| {
        if let Some(s) = start.take() {
            out.push((s, Lexeme::Atom(input[s..end].to_string())));
        }
    };
    for (i, c) in input.char_indices() {
        match c {
            '(' | ')' => {
                flush(&mut out, &mut atom_start, i);
                out.push((i, if c == '(' { Lexeme::Open } else { Lexeme::Close }));
            }
            c if c.is_whitespace() => flush(&mut out, &mut atom_start, i),
            _ => {
                if atom_start.is_none() {
                    atom_start = Some(i);
                }
            }
        }
    }
    flush(&mut out, &mut atom_start, input.len());
    out
}

fn parse_node(tokens: &[(usize, Lexeme)], pos: &mut usize) -> Result<Tree, TreeParseError> {
    let err = |offset: usize, reason: &str| TreeParseError {
        offset,
        reason: reason.to_string(),
    };
    let end = tokens.last().map(|t| t.0 + 1).unwrap_or(0);
    let Some((offset, lexeme)) = tokens.get(*pos) else {
        return Err(err(end, "unexpected end of input"));
    };
    *pos += 1;
    match lexeme {
        Lexeme::Atom(a) => Ok(Tree::leaf(a.clone())),
        Lexeme::Close => Err(err(*offset, "unexpected ')'")),
        Lexeme::Open => {
            let label = match tokens.get(*pos) {
                Some((_, Lexeme::Atom(a))) => {
                    *pos += 1;
                    a.clone()
                }
                Some((_, Lexeme::Open)) => "ROOT".to_string(),
                Some((o, Lexeme::Close)) => return Err(err(*o, "empty brackets")),
                None => return Err(err(end, "unexpected end of input")),
            };
            let mut children = Vec::new();
            loop {
                match tokens.get(*pos) {
                    Some((_, Lexeme::Close)) => {
                        *pos += 1;
                        return Ok(Tree::node(label, children));
                    }
                    Some(_) => children.push(parse_node(tokens, pos)?),
                    None => return Err(err(end, "unclosed '('")),
                }
            }
        }
    }
}

/// Nodes in post-order so children always precede their parent.
struct Flat<'a> {
    labels: Vec<&'a str>,
    children: Vec<Vec<usize>>,
}

fn flatten(tree: &Tree) -> Flat<'_> {
    fn walk<'a>(t: &'a Tree, flat: &mut Flat<'a>) -> usize {
        let kids: Vec<usize> = t.children.iter().map(|c| walk(c, flat)).collect();
        flat.labels.push(&t.label);
        flat.children.push(kids);
        flat.labels.len() - 1
    }
    let mut flat = Flat {
        labels: Vec::new(),
        children: Vec::new(),
    };
    walk(tree, &mut flat);
    flat
}

fn same_production(a: &Flat, i: usize, b: &Flat, j: usize) -> bool {
    let (ca, cb) = (&a.children[i], &b.children[j]);
    !ca.is_empty() && ca.len() == cb.len() && ca.iter().zip(cb).all(|(&x, &y)| a.labels[x] == b.labels[y])
}

/// Number of shared fragments between two trees.
pub fn fragment_kernel(t: &Tree, u: &Tree) -> f64 {
    let (a, b) = (flatten(t), flatten(u));
    let (n, m) = (a.labels.len(), b.labels.len());
    let mut c = vec![0.0f64; n * m];
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..m {
            if a.labels[i] != b.labels[j] {
                continue;
            }
            let mut v = 1.0;
            if same_production(&a, i, &b, j) {
                v += a.children[i]
                    .iter()
                    .zip(&b.children[j])
                    .map(|(&x, &y)| c[x * m + y])
                    .product::<f64>();
            }
            c[i * m + j] = v;
            total += v;
        }
    }
    total
}

/// Kernel normalized into [0, 1]; identical trees score 1.
pub fn tree_similarity(t: &Tree, u: &Tree) -> f64 {
    let denom = (fragment_kernel(t, t) * fragment_kernel(u, u)).sqrt();
    if denom == 0.0 {
        return 0.0;
    }
    (fragment_kernel(t, u) / denom).clamp(0.0, 1.0)
}

pub fn syntax_similarity(a: &Sentence, b: &Sentence, parser: &dyn SyntaxParser) -> BackendResult<f64> {
    let (ta, tb) = (parser.parse(a)?, parser.parse(b)?);
    Ok(tree_similarity(&ta, &tb))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Tree {
        Tree::parse_bracketed(s).unwrap()
    }

    #[test]
    fn bracketed_round_trip() {
        let src = "(S (NP (DT the) (NN dog)) (VP barked))";
        assert_eq!(t(src).to_string(), src);
        assert_eq!(t("((S a))").label, "ROOT");
        assert!(Tree::parse_bracketed("(S (NP a)").is_err());
        assert!(Tree::parse_bracketed("(S a))").is_err());
        assert!(Tree::parse_bracketed("").is_err());
    }

    #[test]
    fn identical_trees_score_one() {
        let a = t("(S (NP DT NN) (VP VBD (NP DT NN)))");
        assert!((tree_similarity(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_labels_score_zero() {
        assert_eq!(tree_similarity(&t("(S A B)"), &t("(X Y Z)")), 0.0);
    }

    #[test]
    fn three_node_trees_sharing_one_production() {
        // (S A B) vs (S A C): fragments of the first are S, (S A B), A, B;
        // of the second S, (S A C), A, C. Shared: S and A, so K = 2.
        // K(t,t) = K(u,u) = 4, giving 2/4.
        let (x, y) = (t("(S A B)"), t("(S A C)"));
        assert_eq!(fragment_kernel(&x, &y), 2.0);
        assert_eq!(fragment_kernel(&x, &x), 4.0);
        assert!((tree_similarity(&x, &y) - 0.5).abs() < 1e-12);
        assert_eq!(fragment_kernel(&x, &t("(S A B)")), 4.0);
    }
}
