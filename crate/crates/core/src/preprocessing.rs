//! Fine-tuning sample construction.
//!
//! Four sample families come out of a story corpus:
//!
//! * phrase-list samples `(start, phrase list)` for the phrase generator,
//! * stop samples `(start, phrase list, stop)` for the stop generator,
//! * position samples (masked story text, missing / not missing) for the
//!   position classifier,
//! * infill samples `s1 … MASK … sn SEP → s_i` for the infill generator.
//!
//! Phrase lists are the stop tokens whose best cosine match against any start
//! token exceeds the threshold, in stop order, first occurrence kept.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, TokenEmbedder};
use crate::corpus::{join_sentences, Sentence, Story};
use crate::format::{self, Markers};
use crate::metrics::cosine;

/// Default similarity threshold for phrase-list extraction.
pub const DEFAULT_GAMMA: f64 = 0.7;

#[derive(Debug, thiserror::Error)]
pub enum PreprocessError {
    #[error("gamma must be in (0, 1), got {0}")]
    BadGamma(f64),
    #[error("story has {got} sentences, needs at least {needed}")]
    TooShort { needed: usize, got: usize },
    #[error("story text contains the marker literal {0:?}")]
    MarkerInText(String),
    #[error("token embeddings disagree on dimension ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Ordered, duplicate-free list of non-empty phrases.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct PhraseList {
    tokens: Vec<String>,
}

impl PhraseList {
    /// Trims each entry, drops empty ones and keeps the first of any duplicates.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out: Vec<String> = Vec::new();
        for t in tokens {
            let t = t.as_ref().trim();
            if !t.is_empty() && !out.iter().any(|o| o == t) {
                out.push(t.to_string());
            }
        }
        Self { tokens: out }
    }

    /// Parse a comma- or newline-separated list, stripping quotes and other
    /// punctuation from the edges of every item.
    pub fn parse(text: &str) -> Self {
        Self::from_tokens(
            text.split([',', '\n', ';'])
                .map(|item| crate::text::normalize_whitespace(item.trim_matches(|c: char| !c.is_alphanumeric()))),
        )
    }

    /// How many entries [`PhraseList::from_tokens`] would drop as duplicates.
    pub fn duplicates_in<I, S>(tokens: I) -> usize
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let raw: Vec<String> = tokens
            .into_iter()
            .map(|t| t.as_ref().trim().to_string())
            .filter(|t| !t.is_empty())
            .collect();
        raw.len() - Self::from_tokens(&raw).len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.tokens.iter().any(|t| t == token)
    }
}

impl From<Vec<String>> for PhraseList {
    fn from(v: Vec<String>) -> Self {
        Self::from_tokens(v)
    }
}

impl From<PhraseList> for Vec<String> {
    fn from(p: PhraseList) -> Self {
        p.tokens
    }
}

impl fmt::Display for PhraseList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tokens.join(", "))
    }
}

/// Stop tokens whose best cosine against any start token exceeds `gamma`.
pub fn extract_phrase_list(
    start: &Sentence,
    stop: &Sentence,
    embedder: &dyn TokenEmbedder,
    gamma: f64,
) -> Result<PhraseList, PreprocessError> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(PreprocessError::BadGamma(gamma));
    }
    let start_emb = embedder.embed_tokens(start)?;
    let stop_emb = embedder.embed_tokens(stop)?;
    let dim = start_emb.first().or(stop_emb.first()).map_or(0, |e| e.vector.len());
    if let Some(bad) = start_emb.iter().chain(&stop_emb).find(|e| e.vector.len() != dim) {
        return Err(PreprocessError::DimensionMismatch(dim, bad.vector.len()));
    }

    let mut selected = Vec::new();
    for t in &stop_emb {
        let best = start_emb
            .iter()
            .map(|u| {
                cosine(&t.vector, &u.vector).unwrap_or_else(|| {
                    log::warn!(
                        "zero-norm embedding for {:?} or {:?}; cosine taken as 0",
                        t.token,
                        u.token
                    );
                    0.0
                })
            })
            .fold(f64::NEG_INFINITY, f64::max);
        if best > gamma {
            selected.push(t.token.as_str());
        }
    }
    Ok(PhraseList::from_tokens(selected))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseListSample {
    pub start: Sentence,
    pub phrase_list: PhraseList,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopSample {
    pub start: Sentence,
    pub phrase_list: PhraseList,
    pub stop: Sentence,
}

impl From<&StopSample> for PhraseListSample {
    fn from(s: &StopSample) -> Self {
        Self {
            start: s.start.clone(),
            phrase_list: s.phrase_list.clone(),
        }
    }
}

/// One stop sample per story, phrase list extracted from its endpoints.
pub fn build_stop_samples(
    corpus: &[Story],
    embedder: &dyn TokenEmbedder,
    gamma: f64,
) -> Result<Vec<StopSample>, PreprocessError> {
    corpus
        .iter()
        .map(|story| {
            Ok(StopSample {
                start: story.start().clone(),
                phrase_list: extract_phrase_list(story.start(), story.stop(), embedder, gamma)?,
                stop: story.stop().clone(),
            })
        })
        .collect()
}

pub fn build_phrase_list_samples(stop_samples: &[StopSample]) -> Vec<PhraseListSample> {
    stop_samples.iter().map(PhraseListSample::from).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositionLabel {
    Missing,
    NotMissing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionSample {
    /// Story text with exactly one mask marker.
    pub text: String,
    pub label: PositionLabel,
    /// Sentences cut out at the marker (empty for negatives).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub removed: Vec<Sentence>,
}

impl PositionSample {
    /// Rebuild the source story text: splice the removed sentences back in at
    /// the marker, or delete the marker for negatives.
    pub fn reconstruct(&self, mask: &str) -> String {
        match self.label {
            PositionLabel::Missing => self.text.replacen(mask, &join_sentences(&self.removed), 1),
            PositionLabel::NotMissing => self.text.replacen(&format!(" {mask}"), "", 1),
        }
    }
}

fn check_markers(story: &Story, markers: &Markers) -> Result<(), PreprocessError> {
    for s in story.sentences() {
        if let Some(m) = markers.find_in(s.text()) {
            return Err(PreprocessError::MarkerInText(m.to_string()));
        }
    }
    Ok(())
}

/// Positive sample removing `count` consecutive sentences starting at `site`.
pub fn positive_sample(story: &Story, site: usize, count: usize, mask: &str) -> PositionSample {
    let s = story.sentences();
    PositionSample {
        text: format::masked_text(&s[..site], &s[site + count..], mask),
        label: PositionLabel::Missing,
        removed: s[site..site + count].to_vec(),
    }
}

/// Negative sample with the marker inserted before sentence `boundary`.
pub fn negative_sample(story: &Story, boundary: usize, mask: &str) -> PositionSample {
    let s = story.sentences();
    PositionSample {
        text: format::masked_text(&s[..boundary], &s[boundary..], mask),
        label: PositionLabel::NotMissing,
        removed: Vec::new(),
    }
}

/// One positive (1-3 consecutive interior sentences removed at one site) and
/// `negatives` negatives (marker at a random interior boundary), seeded.
pub fn build_position_samples(
    story: &Story,
    seed: u64,
    markers: &Markers,
    negatives: usize,
) -> Result<Vec<PositionSample>, PreprocessError> {
    let len = story.len();
    if len < 4 {
        return Err(PreprocessError::TooShort { needed: 4, got: len });
    }
    check_markers(story, markers)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Endpoints stay, so at most len - 2 interior sentences can go.
    let count = rng.random_range(1..=3usize).min(len - 2);
    let site = rng.random_range(1..=len - 1 - count);
    let mut out = vec![positive_sample(story, site, count, &markers.mask)];
    for _ in 0..negatives {
        let boundary = rng.random_range(1..len);
        out.push(negative_sample(story, boundary, &markers.mask));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfillSample {
    /// `s1 … MASK … sn SEP`
    pub context: String,
    pub target: Sentence,
}

impl InfillSample {
    pub fn reconstruct(&self, markers: &Markers) -> String {
        let filled = self.context.replacen(&markers.mask, self.target.text(), 1);
        filled
            .strip_suffix(&markers.sep)
            .map(|s| s.trim_end().to_string())
            .unwrap_or(filled)
    }
}

/// One sample per interior sentence; endpoints are never targets.
pub fn build_infill_samples(story: &Story, markers: &Markers) -> Result<Vec<InfillSample>, PreprocessError> {
    let len = story.len();
    if len < 3 {
        return Err(PreprocessError::TooShort { needed: 3, got: len });
    }
    check_markers(story, markers)?;
    let s = story.sentences();
    Ok((1..len - 1)
        .map(|i| InfillSample {
            context: format::infill_prompt(&s[..i], &s[i + 1..], markers),
            target: s[i].clone(),
        })
        .collect())
}

/// A sample as written to the JSON-lines output, tagged by family. Generator
/// families also carry the rendered `prompt`/`completion` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SampleRecord {
    PhraseList {
        #[serde(flatten)]
        sample: PhraseListSample,
        prompt: String,
        completion: String,
    },
    Stop {
        #[serde(flatten)]
        sample: StopSample,
        prompt: String,
        completion: String,
    },
    Position {
        #[serde(flatten)]
        sample: PositionSample,
    },
    Infill {
        #[serde(flatten)]
        sample: InfillSample,
        prompt: String,
        completion: String,
    },
}

impl SampleRecord {
    pub fn phrase_list(sample: PhraseListSample, markers: &Markers) -> Self {
        Self::PhraseList {
            prompt: format::phrase_prompt(&sample.start, markers),
            completion: sample.phrase_list.to_string(),
            sample,
        }
    }

    pub fn stop(sample: StopSample, markers: &Markers) -> Self {
        Self::Stop {
            prompt: format::stop_prompt(&sample.start, &sample.phrase_list, markers),
            completion: sample.stop.text().to_string(),
            sample,
        }
    }

    pub fn position(sample: PositionSample) -> Self {
        Self::Position { sample }
    }

    pub fn infill(sample: InfillSample) -> Self {
        Self::Infill {
            prompt: sample.context.clone(),
            completion: sample.target.text().to_string(),
            sample,
        }
    }
}

pub fn write_samples(path: impl AsRef<Path>, records: &[SampleRecord]) -> Result<(), PreprocessError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub gamma: f64,
    pub seed: u64,
    pub markers: Markers,
    /// Negative position samples per story.
    pub negatives_per_story: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            seed: 0,
            markers: Markers::default(),
            negatives_per_story: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleFamilies {
    pub phrase_lists: Vec<SampleRecord>,
    pub stops: Vec<SampleRecord>,
    pub positions: Vec<SampleRecord>,
    pub infills: Vec<SampleRecord>,
    /// Stories skipped for position or infill samples (too short).
    pub skipped: Vec<(usize, String)>,
}

/// Per-story RNG seed so stories do not share a stream.
pub fn story_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Build all four families for a corpus.
pub fn build_all(
    corpus: &[Story],
    embedder: &dyn TokenEmbedder,
    config: &PreprocessConfig,
) -> Result<SampleFamilies, PreprocessError> {
    let markers = &config.markers;
    let stops = build_stop_samples(corpus, embedder, config.gamma)?;
    let mut out = SampleFamilies {
        phrase_lists: build_phrase_list_samples(&stops)
            .into_iter()
            .map(|s| SampleRecord::phrase_list(s, markers))
            .collect(),
        stops: stops.into_iter().map(|s| SampleRecord::stop(s, markers)).collect(),
        ..Default::default()
    };
    for (i, story) in corpus.iter().enumerate() {
        match build_position_samples(story, story_seed(config.seed, i), markers, config.negatives_per_story) {
            Ok(samples) => out.positions.extend(samples.into_iter().map(SampleRecord::position)),
            Err(e @ PreprocessError::TooShort { .. }) => out.skipped.push((i, e.to_string())),
            Err(e) => return Err(e),
        }
        match build_infill_samples(story, markers) {
            Ok(samples) => out.infills.extend(samples.into_iter().map(SampleRecord::infill)),
            Err(e @ PreprocessError::TooShort { .. }) => out.skipped.push((i, e.to_string())),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
