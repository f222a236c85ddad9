//! Corpus-level BLEU over the shared tokenizer.
//!
//! Clipped n-gram matches and totals are summed over the whole corpus before
//! taking precisions, then combined by geometric mean with the usual brevity
//! penalty. Orders for which the candidate corpus has no n-grams at all are
//! left out of the mean, so very short corpora still score 100 against
//! themselves.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Story;

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Smoothing {
    #[default]
    None,
    /// Add one to matches and totals for orders 2 and up.
    AddOne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    /// 0..=100
    pub score: f64,
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub candidate_len: usize,
    pub reference_len: usize,
}

fn ngram_counts<'a, 'b>(tokens: &'b [&'a str], n: usize) -> HashMap<&'b [&'a str], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// BLEU over pre-tokenized, index-aligned candidate/reference pairs.
pub fn corpus_bleu_tokens(candidates: &[Vec<&str>], references: &[Vec<&str>], smoothing: Smoothing) -> BleuScore {
    assert_eq!(candidates.len(), references.len(), "corpora must be aligned");
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (cand, refr) in candidates.iter().zip(references) {
        c_len += cand.len();
        r_len += refr.len();
        for n in 1..=MAX_ORDER {
            let cand_counts = ngram_counts(cand, n);
            let ref_counts = ngram_counts(refr, n);
            totals[n - 1] += cand.len().saturating_sub(n - 1);
            matches[n - 1] += cand_counts
                .iter()
                .map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
        }
    }

    let precisions: Vec<f64> = (0..MAX_ORDER)
        .map(|i| {
            let (m, t) = (matches[i] as f64, totals[i] as f64);
            match smoothing {
                Smoothing::AddOne if i > 0 => (m + 1.0) / (t + 1.0),
                _ if totals[i] == 0 => 0.0,
                _ => m / t,
            }
        })
        .collect();
    let brevity_penalty = if c_len == 0 {
        0.0
    } else if c_len < r_len {
        (1.0 - r_len as f64 / c_len as f64).exp()
    } else {
        1.0
    };

    let used: Vec<f64> = (0..MAX_ORDER)
        .filter(|&i| totals[i] > 0)
        .map(|i| precisions[i])
        .collect();
    let score = if used.is_empty() || used.contains(&0.0) {
        0.0
    } else {
        let log_mean = used.iter().map(|p| p.ln()).sum::<f64>() / used.len() as f64;
        100.0 * brevity_penalty * log_mean.exp()
    };

    BleuScore {
        score,
        precisions,
        brevity_penalty,
        candidate_len: c_len,
        reference_len: r_len,
    }
}

pub fn corpus_bleu(candidates: &[Story], references: &[Story], smoothing: Smoothing) -> BleuScore {
    let cand: Vec<Vec<&str>> = candidates.iter().map(Story::tokens).collect();
    let refs: Vec<Vec<&str>> = references.iter().map(Story::tokens).collect();
    corpus_bleu_tokens(&cand, &refs, smoothing)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn identical_corpus_is_100() {
        let c = vec![toks("the cat sat on the mat"), toks("a dog ran")];
        let b = corpus_bleu_tokens(&c, &c, Smoothing::None);
        assert_eq!(b.score, 100.0);
        assert_eq!(b.brevity_penalty, 1.0);
    }

    #[test]
    fn no_four_gram_overlap_is_zero() {
        let c = vec![toks("a b c x d e f")];
        let r = vec![toks("a b c y d e f")];
        let b = corpus_bleu_tokens(&c, &r, Smoothing::None);
        assert_eq!(b.precisions[3], 0.0);
        assert_eq!(b.score, 0.0);
        assert!(corpus_bleu_tokens(&c, &r, Smoothing::AddOne).score > 0.0);
    }

    #[test]
    fn brevity_penalty_applies_when_short() {
        let c = vec![toks("a b c d")];
        let r = vec![toks("a b c d e f g h")];
        let b = corpus_bleu_tokens(&c, &r, Smoothing::None);
        assert!((b.brevity_penalty - (-1.0f64).exp()).abs() < 1e-12);
        assert!((b.score - 100.0 * (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn clipping_limits_repeated_matches() {
        let c = vec![toks("the the the the")];
        let r = vec![toks("the cat")];
        let b = corpus_bleu_tokens(&c, &r, Smoothing::None);
        assert_eq!(b.precisions[0], 0.25);
    }
}
