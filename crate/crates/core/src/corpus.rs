//! Story corpora: validated sentence/story types, CSV and JSON-lines I/O, and
//! seeded train/validation splitting.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::text;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("sentence has no word tokens: {0:?}")]
    EmptySentence(String),
    #[error("story needs at least 2 sentences, got {0}")]
    TooShort(usize),
    #[error("row {row}: {reason}")]
    Malformed { row: usize, reason: String },
    #[error("{0} is empty")]
    EmptyFile(String),
    #[error("split needs at least 2 stories, got {0}")]
    NotEnoughStories(usize),
    #[error("split ratio must be in (0, 1), got {0}")]
    BadRatio(f64),
    #[error("five-sentence-csv needs exactly 5 sentences, story {index} has {len}")]
    NotFiveSentences { index: usize, len: usize },
    #[error("unknown corpus format {0:?} (expected csv or jsonl)")]
    UnknownFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A single trimmed sentence together with its cached token list.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Sentence {
    text: String,
    tokens: Vec<String>,
}

impl Sentence {
    pub fn new(text: impl AsRef<str>) -> Result<Self, CorpusError> {
        let text = text.as_ref().trim();
        let tokens = text::tokenize(text);
        if tokens.is_empty() {
            return Err(CorpusError::EmptySentence(text.to_string()));
        }
        Ok(Self {
            text: text.to_string(),
            tokens,
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl fmt::Debug for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Sentence({:?})", self.text)
    }
}

impl fmt::Display for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

impl FromStr for Sentence {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Sentence::new(s)
    }
}

impl Serialize for Sentence {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.text)
    }
}

impl<'de> Deserialize<'de> for Sentence {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        Sentence::new(raw).map_err(serde::de::Error::custom)
    }
}

/// An ordered list of at least two sentences; the first is the start and the
/// last is the stop.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "StoryRecord", into = "StoryRecord")]
pub struct Story {
    id: Option<String>,
    title: Option<String>,
    sentences: Vec<Sentence>,
}

#[derive(Serialize, Deserialize)]
struct StoryRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    title: Option<String>,
    sentences: Vec<Sentence>,
}

impl TryFrom<StoryRecord> for Story {
    type Error = CorpusError;

    fn try_from(r: StoryRecord) -> Result<Self, Self::Error> {
        Story::new(r.sentences).map(|s| s.with_id(r.id).with_title(r.title))
    }
}

impl From<Story> for StoryRecord {
    fn from(s: Story) -> Self {
        StoryRecord {
            id: s.id,
            title: s.title,
            sentences: s.sentences,
        }
    }
}

fn non_empty(v: Option<String>) -> Option<String> {
    v.filter(|s| !s.is_empty())
}

impl Story {
    pub fn new(sentences: Vec<Sentence>) -> Result<Self, CorpusError> {
        if sentences.len() < 2 {
            return Err(CorpusError::TooShort(sentences.len()));
        }
        Ok(Self {
            id: None,
            title: None,
            sentences,
        })
    }

    /// Build a story from raw sentence strings.
    pub fn from_texts<I, S>(texts: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let sentences = texts.into_iter().map(Sentence::new).collect::<Result<Vec<_>, _>>()?;
        Story::new(sentences)
    }

    /// Empty strings are stored as `None`.
    pub fn with_id(mut self, id: Option<String>) -> Self {
        self.id = non_empty(id);
        self
    }

    pub fn with_title(mut self, title: Option<String>) -> Self {
        self.title = non_empty(title);
        self
    }

    pub fn id(&self) -> Option<&str> {
        self.id.as_deref()
    }

    pub fn title(&self) -> Option<&str> {
        self.title.as_deref()
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn start(&self) -> &Sentence {
        &self.sentences[0]
    }

    pub fn stop(&self) -> &Sentence {
        &self.sentences[self.sentences.len() - 1]
    }

    /// Sentences joined with single spaces.
    pub fn text(&self) -> String {
        join_sentences(&self.sentences)
    }

    /// All tokens of the story in order.
    pub fn tokens(&self) -> Vec<&str> {
        self.sentences
            .iter()
            .flat_map(|s| s.tokens().iter().map(String::as_str))
            .collect()
    }
}

/// First sentence of free text that contains a word, if any.
pub fn first_sentence(raw: &str) -> Option<Sentence> {
    text::split_sentences(raw)
        .into_iter()
        .find_map(|piece| Sentence::new(piece).ok())
}

pub fn join_sentences(sentences: &[Sentence]) -> String {
    sentences.iter().map(Sentence::text).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    /// Header row plus `id, title, sentence1..sentence5` columns.
    FiveSentenceCsv,
    /// One `{id, title, sentences: [...]}` object per line.
    Jsonl,
}

impl FromStr for CorpusFormat {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" | "five-sentence-csv" => Ok(Self::FiveSentenceCsv),
            "jsonl" | "json-lines" => Ok(Self::Jsonl),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

impl CorpusFormat {
    /// Guess from the file extension, defaulting to JSON-lines.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Self::FiveSentenceCsv,
            _ => Self::Jsonl,
        }
    }
}

const CSV_SENTENCES: usize = 5;
const CSV_HEADER: [&str; 7] = [
    "id",
    "title",
    "sentence1",
    "sentence2",
    "sentence3",
    "sentence4",
    "sentence5",
];

pub fn load_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Vec<Story>, CorpusError> {
    let path = path.as_ref();
    match format {
        CorpusFormat::FiveSentenceCsv => load_csv(path),
        CorpusFormat::Jsonl => load_jsonl(path),
    }
}

fn column(headers: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    headers
        .iter()
        .position(|h| names.iter().any(|n| h.trim().eq_ignore_ascii_case(n)))
}

fn load_csv(path: &Path) -> Result<Vec<Story>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.is_empty() || headers.iter().all(|h| h.trim().is_empty()) {
        return Err(CorpusError::EmptyFile(path.display().to_string()));
    }
    // ROCStories ships `storyid`/`storytitle`; accept both spellings.
    let id_col = column(&headers, &["id", "storyid"]);
    let title_col = column(&headers, &["title", "storytitle"]);
    let sentence_cols = (1..=CSV_SENTENCES)
        .map(|k| {
            column(&headers, &[&format!("sentence{k}")]).ok_or_else(|| CorpusError::Malformed {
                row: 0,
                reason: format!("header has no sentence{k} column"),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut stories = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| CorpusError::Malformed {
            row,
            reason: e.to_string(),
        })?;
        let field = |col: usize| record.get(col).map(str::to_string);
        let sentences = sentence_cols
            .iter()
            .enumerate()
            .map(|(k, &col)| {
                let raw = field(col).ok_or_else(|| CorpusError::Malformed {
                    row,
                    reason: format!("missing sentence{} column", k + 1),
                })?;
                Sentence::new(&raw).map_err(|_| CorpusError::Malformed {
                    row,
                    reason: format!("sentence{} is empty", k + 1),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let story = Story::new(sentences)?
            .with_id(id_col.and_then(field))
            .with_title(title_col.and_then(field));
        stories.push(story);
    }
    Ok(stories)
}

fn load_jsonl(path: &Path) -> Result<Vec<Story>, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let mut stories = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let story: Story = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            row: i + 1,
            reason: e.to_string(),
        })?;
        stories.push(story);
    }
    Ok(stories)
}

pub fn write_stories(stories: &[Story], path: impl AsRef<Path>, format: CorpusFormat) -> Result<(), CorpusError> {
    let path = path.as_ref();
    match format {
        CorpusFormat::FiveSentenceCsv => {
            if let Some((index, s)) = stories.iter().enumerate().find(|(_, s)| s.len() != CSV_SENTENCES) {
                return Err(CorpusError::NotFiveSentences { index, len: s.len() });
            }
            let mut writer = csv::Writer::from_path(path)?;
            writer.write_record(CSV_HEADER)?;
            for story in stories {
                let mut row = vec![
                    story.id().unwrap_or_default().to_string(),
                    story.title().unwrap_or_default().to_string(),
                ];
                row.extend(story.sentences().iter().map(|s| s.text().to_string()));
                writer.write_record(&row)?;
            }
            writer.flush()?;
        }
        CorpusFormat::Jsonl => {
            let mut writer = BufWriter::new(File::create(path)?);
            for story in stories {
                serde_json::to_writer(&mut writer, story)?;
                writer.write_all(b"\n")?;
            }
            writer.flush()?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: Vec<Story>,
    pub validation: Vec<Story>,
    pub seed: u64,
}

/// Seeded shuffle, then `floor(len * ratio)` stories go to training and the
/// rest to validation.
pub fn split_train_val(stories: &[Story], ratio: f64, seed: u64) -> Result<CorpusSplit, CorpusError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(CorpusError::BadRatio(ratio));
    }
    if stories.len() < 2 {
        return Err(CorpusError::NotEnoughStories(stories.len()));
    }
    let mut order: Vec<usize> = (0..stories.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (stories.len() as f64 * ratio).floor() as usize;
    let pick = |idx: &[usize]| idx.iter().map(|&i| stories[i].clone()).collect();
    Ok(CorpusSplit {
        train: pick(&order[..n_train]),
        validation: pick(&order[n_train..]),
        seed,
    })
}
