//! Endpoint relatedness (lexical overlap, embedding cosine, syntax
//! similarity) and story quality (distinct n-grams, BLEU), plus corpus-level
//! aggregation into mean ± std reports.

pub mod bleu;
pub mod syntax;

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, SentenceEmbedder, SyntaxParser};
use crate::corpus::{Sentence, Story};

pub use bleu::{corpus_bleu, BleuScore, Smoothing};
pub use syntax::{syntax_similarity, tree_similarity, Tree};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("candidate and reference corpora differ in size ({candidates} vs {references})")]
    LengthMismatch { candidates: usize, references: usize },
    #[error("no stories to evaluate")]
    EmptyCorpus,
    #[error("embedding dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Cosine of two equal-length vectors; `None` when either has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    debug_assert_eq!(a.len(), b.len());
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Dice coefficient over token sets.
pub fn dice_overlap(a: &Sentence, b: &Sentence) -> f64 {
    let sa: HashSet<&str> = a.tokens().iter().map(String::as_str).collect();
    let sb: HashSet<&str> = b.tokens().iter().map(String::as_str).collect();
    let shared = sa.intersection(&sb).count();
    2.0 * shared as f64 / (sa.len() + sb.len()) as f64
}

pub fn cosine_relatedness(a: &Sentence, b: &Sentence, embedder: &dyn SentenceEmbedder) -> Result<f64, MetricsError> {
    let va = embedder.embed_sentence(a)?.vector;
    let vb = embedder.embed_sentence(b)?.vector;
    if va.len() != vb.len() {
        return Err(MetricsError::DimensionMismatch(va.len(), vb.len()));
    }
    Ok(cosine(&va, &vb).unwrap_or_else(|| {
        log::warn!("zero-norm sentence embedding; cosine taken as 0");
        0.0
    }))
}

pub const MAX_DISTINCT_N: usize = 5;

/// `(distinct, total)` n-gram counts for n = 1..=5.
pub fn ngram_counts(tokens: &[&str]) -> [(usize, usize); MAX_DISTINCT_N] {
    let mut out = [(0, 0); MAX_DISTINCT_N];
    for (i, slot) in out.iter_mut().enumerate() {
        let n = i + 1;
        if tokens.len() < n {
            continue;
        }
        let distinct: HashSet<&[&str]> = tokens.windows(n).collect();
        *slot = (distinct.len(), tokens.len() - n + 1);
    }
    out
}

fn mean_ratio(counts: &[(usize, usize)]) -> f64 {
    let ratios: Vec<f64> = counts
        .iter()
        .filter(|(_, total)| *total > 0)
        .map(|&(d, t)| d as f64 / t as f64)
        .collect();
    if ratios.is_empty() {
        return 0.0;
    }
    ratios.iter().sum::<f64>() / ratios.len() as f64
}

/// Mean over n = 1..=5 of distinct/total n-grams in a token stream. Orders
/// longer than the stream are skipped.
pub fn distinct_ngrams_tokens(tokens: &[&str]) -> f64 {
    mean_ratio(&ngram_counts(tokens))
}

pub fn distinct_ngrams(story: &Story) -> f64 {
    distinct_ngrams_tokens(&story.tokens())
}

/// Corpus-level variant: distinct n-grams pooled across all stories (n-grams
/// never span two stories) over the pooled totals.
pub fn distinct_ngrams_corpus(stories: &[Story]) -> f64 {
    let mut pooled: Vec<HashSet<Vec<&str>>> = vec![HashSet::new(); MAX_DISTINCT_N];
    let mut totals = [0usize; MAX_DISTINCT_N];
    for story in stories {
        let tokens = story.tokens();
        for n in 1..=MAX_DISTINCT_N.min(tokens.len()) {
            for w in tokens.windows(n) {
                pooled[n - 1].insert(w.to_vec());
            }
            totals[n - 1] += tokens.len() - n + 1;
        }
    }
    let counts: Vec<(usize, usize)> = pooled.iter().map(HashSet::len).zip(totals).collect();
    mean_ratio(&counts)
}

/// BLEU of the candidate corpus against index-aligned references, 0..=100.
pub fn bleu(candidates: &[Story], references: &[Story]) -> Result<f64, MetricsError> {
    bleu_with(candidates, references, Smoothing::None).map(|b| b.score)
}

pub fn bleu_with(candidates: &[Story], references: &[Story], smoothing: Smoothing) -> Result<BleuScore, MetricsError> {
    if candidates.len() != references.len() {
        return Err(MetricsError::LengthMismatch {
            candidates: candidates.len(),
            references: references.len(),
        });
    }
    Ok(corpus_bleu(candidates, references, smoothing))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointRelatedness {
    pub lexical_overlap: f64,
    pub cosine_similarity: f64,
    /// Missing when the parser failed on either endpoint.
    pub syntax_similarity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityScores {
    pub distinct_ngrams: f64,
    /// Per-story BLEU against the aligned reference, when one was given.
    pub bleu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoryScores {
    pub relatedness: EndpointRelatedness,
    pub quality: QualityScores,
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl MetricSummary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            count: values.len(),
        })
    }

    pub fn cell(&self, decimals: usize) -> String {
        format!("{:.*}±{:.*}", decimals, self.mean, decimals, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntaxFailure {
    pub story: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    pub corpus: BleuScore,
    pub per_story: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub count: usize,
    pub sentence_embedder: String,
    pub syntax_parser: String,
    pub lexical_overlap: MetricSummary,
    pub cosine_similarity: MetricSummary,
    /// `None` when every parse failed.
    pub syntax_similarity: Option<MetricSummary>,
    pub syntax_failures: Vec<SyntaxFailure>,
    /// Mean ± std of per-story distinct n-grams.
    pub distinct_ngrams: MetricSummary,
    pub distinct_ngrams_corpus: f64,
    pub bleu: Option<BleuReport>,
    pub per_story: Vec<StoryScores>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub smoothing: Smoothing,
}

pub fn score_endpoints(
    story: &Story,
    embedder: &dyn SentenceEmbedder,
    parser: &dyn SyntaxParser,
) -> Result<(EndpointRelatedness, Option<BackendError>), MetricsError> {
    let (start, stop) = (story.start(), story.stop());
    let (syntax, failure) = match syntax_similarity(start, stop, parser) {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e)),
    };
    Ok((
        EndpointRelatedness {
            lexical_overlap: dice_overlap(start, stop),
            cosine_similarity: cosine_relatedness(start, stop, embedder)?,
            syntax_similarity: syntax,
        },
        failure,
    ))
}

fn quality(story: &Story, reference: Option<&Story>, options: EvalOptions) -> QualityScores {
    QualityScores {
        distinct_ngrams: distinct_ngrams(story),
        bleu: reference
            .map(|r| corpus_bleu(std::slice::from_ref(story), std::slice::from_ref(r), options.smoothing).score),
    }
}

pub fn score_story(
    story: &Story,
    reference: Option<&Story>,
    embedder: &dyn SentenceEmbedder,
    parser: &dyn SyntaxParser,
    options: EvalOptions,
) -> Result<StoryScores, MetricsError> {
    let (relatedness, _) = score_endpoints(story, embedder, parser)?;
    Ok(StoryScores {
        relatedness,
        quality: quality(story, reference, options),
    })
}

pub fn evaluate_corpus(
    stories: &[Story],
    references: Option<&[Story]>,
    embedder: &dyn SentenceEmbedder,
    parser: &dyn SyntaxParser,
    options: EvalOptions,
) -> Result<AggregateReport, MetricsError> {
    if stories.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    if let Some(refs) = references {
        if refs.len() != stories.len() {
            return Err(MetricsError::LengthMismatch {
                candidates: stories.len(),
                references: refs.len(),
            });
        }
    }

    let mut per_story = Vec::with_capacity(stories.len());
    let mut syntax_failures = Vec::new();
    for (i, story) in stories.iter().enumerate() {
        let (relatedness, failure) = score_endpoints(story, embedder, parser)?;
        if let Some(e) = failure {
            log::warn!("syntax parse failed for story {i}: {e}");
            syntax_failures.push(SyntaxFailure {
                story: i,
                error: e.to_string(),
            });
        }
        per_story.push(StoryScores {
            relatedness,
            quality: quality(story, references.map(|r| &r[i]), options),
        });
    }

    let column = |f: &dyn Fn(&StoryScores) -> Option<f64>| -> Vec<f64> { per_story.iter().filter_map(f).collect() };
    let summary = |values: Vec<f64>| MetricSummary::of(&values).expect("non-empty corpus");

    let bleu = references.map(|refs| BleuReport {
        corpus: corpus_bleu(stories, refs, options.smoothing),
        per_story: summary(column(&|s| s.quality.bleu)),
    });

    Ok(AggregateReport {
        count: stories.len(),
        sentence_embedder: embedder.id(),
        syntax_parser: parser.id(),
        lexical_overlap: summary(column(&|s| Some(s.relatedness.lexical_overlap))),
        cosine_similarity: summary(column(&|s| Some(s.relatedness.cosine_similarity))),
        syntax_similarity: MetricSummary::of(&column(&|s| s.relatedness.syntax_similarity)),
        syntax_failures,
        distinct_ngrams: summary(column(&|s| Some(s.quality.distinct_ngrams))),
        distinct_ngrams_corpus: distinct_ngrams_corpus(stories),
        bleu,
        per_story,
    })
}

const TABLE_HEADERS: [&str; 7] = [
    "Model",
    "Lexical Overlap",
    "Cosine Sim.",
    "Syntax Sim.",
    "Distinct n-grams",
    "BLEU",
    "BLEU/story",
];

/// Aligned text table, one row per labeled report, cells as `mean±std`.
pub fn render_table(rows: &[(&str, &AggregateReport)]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, r)| {
            vec![
                name.to_string(),
                r.lexical_overlap.cell(3),
                r.cosine_similarity.cell(3),
                r.syntax_similarity.map_or("--".into(), |s| s.cell(3)),
                r.distinct_ngrams.cell(3),
                r.bleu
                    .as_ref()
                    .map_or("--".into(), |b| format!("{:.2}", b.corpus.score)),
                r.bleu.as_ref().map_or("--".into(), |b| b.per_story.cell(2)),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..TABLE_HEADERS.len())
        .map(|c| {
            body.iter()
                .map(|row| row[c].chars().count())
                .chain([TABLE_HEADERS[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: Vec<&str>| -> String {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}", w = *w))
            .collect::<Vec<_>>()
            .join(" | ")
            .trim_end()
            .to_string()
    };
    let mut out = String::new();
    writeln!(out, "{}", line(TABLE_HEADERS.to_vec())).unwrap();
    writeln!(
        out,
        "{}",
        widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-|-")
    )
    .unwrap();
    for row in &body {
        writeln!(out, "{}", line(row.iter().map(String::as_str).collect())).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::stubs::{HashEmbedder, ShallowParser};

    fn s(text: &str) -> Sentence {
        Sentence::new(text).unwrap()
    }

    #[test]
    fn dice_cases() {
        assert_eq!(dice_overlap(&s("The cat sat."), &s("the cat sat")), 1.0);
        assert_eq!(dice_overlap(&s("a b"), &s("c d")), 0.0);
        assert!((dice_overlap(&s("a b c"), &s("b c d")) - 4.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_fixture() {
        let v = cosine(&[1.0, 2.0, 2.0], &[2.0, 2.0, 1.0]).unwrap();
        assert!((v - 8.0 / 9.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]), Some(0.0));
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]), None);
    }

    #[test]
    fn cosine_relatedness_self() {
        let e = HashEmbedder::default();
        let a = s("A husband and his wife are looking for a new home.");
        assert!((cosine_relatedness(&a, &a, &e).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn distinct_cases() {
        assert_eq!(distinct_ngrams_tokens(&["a", "b", "c", "d", "e", "f"]), 1.0);
        // 1/6, 1/5, 1/4, 1/3, 1/2 -> 1.45 / 5
        let rep = ["a"; 6];
        assert!((distinct_ngrams_tokens(&rep) - 0.29).abs() < 1e-12);
        // two tokens: only n = 1, 2 contribute
        let two = ngram_counts(&["x", "x"]);
        assert_eq!(two[0], (1, 2));
        assert_eq!(two[1], (1, 1));
        assert_eq!(two[2], (0, 0));
        assert!((distinct_ngrams_tokens(&["x", "x"]) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn corpus_distinct_pools_stories() {
        let a = Story::from_texts(["x y.", "z w."]).unwrap();
        assert_eq!(distinct_ngrams_corpus(std::slice::from_ref(&a)), distinct_ngrams(&a));
        assert!(distinct_ngrams_corpus(&[a.clone(), a.clone()]) < distinct_ngrams(&a));
    }

    #[test]
    fn bleu_length_mismatch() {
        let a = Story::from_texts(["x y.", "z w."]).unwrap();
        assert!(matches!(
            bleu(std::slice::from_ref(&a), &[]),
            Err(MetricsError::LengthMismatch { .. })
        ));
        assert_eq!(bleu(std::slice::from_ref(&a), std::slice::from_ref(&a)).unwrap(), 100.0);
    }

    #[test]
    fn summary_population_std() {
        let m = MetricSummary::of(&[1.0, 3.0]).unwrap();
        assert_eq!((m.mean, m.std, m.count), (2.0, 1.0, 2));
        let c = MetricSummary::of(&[0.4; 5]).unwrap();
        assert!((c.mean - 0.4).abs() < 1e-15);
        assert_eq!(c.std, 0.0);
        assert!(MetricSummary::of(&[]).is_none());
    }

    #[test]
    fn evaluate_single_and_identical() {
        let e = HashEmbedder::default();
        let story = Story::from_texts(["The dog ran home.", "It was late.", "The dog slept at home."]).unwrap();
        let r = evaluate_corpus(
            std::slice::from_ref(&story),
            None,
            &e,
            &ShallowParser,
            EvalOptions::default(),
        )
        .unwrap();
        assert_eq!(r.count, 1);
        assert_eq!(r.lexical_overlap.std, 0.0);
        assert_eq!(r.lexical_overlap.mean, dice_overlap(story.start(), story.stop()));
        assert!(r.bleu.is_none());
        let r2 = evaluate_corpus(
            &[story.clone(), story.clone()],
            None,
            &e,
            &ShallowParser,
            EvalOptions::default(),
        )
        .unwrap();
        assert_eq!(r2.cosine_similarity.std, 0.0);
        assert_eq!(r2.distinct_ngrams.std, 0.0);
        assert!(evaluate_corpus(&[], None, &e, &ShallowParser, EvalOptions::default()).is_err());
    }

    #[test]
    fn table_has_header_and_rows() {
        let e = HashEmbedder::default();
        let story = Story::from_texts(["The dog ran home.", "The dog slept at home."]).unwrap();
        let r = evaluate_corpus(
            std::slice::from_ref(&story),
            Some(std::slice::from_ref(&story)),
            &e,
            &ShallowParser,
            EvalOptions::default(),
        )
        .unwrap();
        let table = render_table(&[("stub", &r)]);
        let lines: Vec<_> = table.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("Model"));
        assert!(lines[2].contains("100.00"));
        assert!(lines[2].contains('±'));
    }
}
