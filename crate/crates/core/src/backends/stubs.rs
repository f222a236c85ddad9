//! Deterministic backends for tests, demos and GPU-free runs.
//!
//! Every stub is a pure function of its inputs and seed, so outputs are
//! byte-identical across processes.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    single_marker, truncate_at_stop, BackendError, BackendResult, ChatGenerator, GenerationParams, GenerationRequest,
    PositionScorer, SentenceEmbedder, SentenceEmbedding, SyntaxParser, TextGenerator, TokenEmbedder, TokenEmbedding,
};
use crate::corpus::Sentence;
use crate::metrics::syntax::Tree;
use crate::text;

/// First eight bytes of SHA-256, little endian.
pub fn stable_hash(parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

const FILLER: &[&str] = &[
    "the", "day", "went", "home", "friend", "happy", "found", "walked", "later", "store", "family", "decided",
    "finally", "new", "old", "again", "school", "work", "dog", "park", "morning", "night", "car", "money", "help",
    "tried", "wanted", "very", "little", "big",
];

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// One pseudo-random sentence drawing on `pool` and a fixed filler list.
fn babble(rng: &mut ChaCha8Rng, pool: &[String], max_words: usize) -> String {
    let len = rng.random_range(4..=8).min(max_words.max(1));
    let words: Vec<String> = (0..len)
        .map(|_| {
            if !pool.is_empty() && rng.random_bool(0.5) {
                pool[rng.random_range(0..pool.len())].clone()
            } else {
                FILLER[rng.random_range(0..FILLER.len())].to_string()
            }
        })
        .collect();
    format!("{}.", capitalize(&words.join(" ")))
}

fn prompt_pool(prompt: &str) -> Vec<String> {
    let mut pool: Vec<String> = text::tokenize(prompt)
        .into_iter()
        .filter(|t| !matches!(t.as_str(), "mask" | "sep" | "plist" | "stop"))
        .collect();
    pool.sort();
    pool.dedup();
    pool
}

/// Text generator whose completion is a fixed function of (prompt, seed): one
/// sentence mixing words from the prompt with filler words.
#[derive(Debug, Clone, Default)]
pub struct EchoGenerator;

impl TextGenerator for EchoGenerator {
    fn generate(&self, request: &GenerationRequest) -> BackendResult<String> {
        request.params.validate()?;
        let seed = request.params.seed.unwrap_or(0).to_string();
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(&["echo", &request.prompt, &seed]));
        let pool = prompt_pool(&request.prompt);
        let out = babble(&mut rng, &pool, request.params.max_new_tokens as usize);
        Ok(truncate_at_stop(&out, &request.params.stop_markers))
    }

    fn id(&self) -> String {
        "stub:echo".into()
    }
}

/// Chat generator answering every prompt with a fixed-length run of
/// pseudo-random sentences derived from (system, user, seed).
#[derive(Debug, Clone)]
pub struct EchoChat {
    pub sentences_per_reply: usize,
}

impl Default for EchoChat {
    fn default() -> Self {
        Self {
            sentences_per_reply: 32,
        }
    }
}

impl ChatGenerator for EchoChat {
    fn chat(&self, system: &str, user: &str, params: &GenerationParams) -> BackendResult<String> {
        params.validate()?;
        let seed = params.seed.unwrap_or(0).to_string();
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(&["chat", system, user, &seed]));
        let pool = prompt_pool(user);
        let reply = (0..self.sentences_per_reply)
            .map(|_| babble(&mut rng, &pool, 8))
            .collect::<Vec<_>>()
            .join(" ");
        Ok(truncate_at_stop(&reply, &params.stop_markers))
    }

    fn id(&self) -> String {
        format!("stub:echo-chat/{}", self.sentences_per_reply)
    }
}

/// Text generator backed by an exact prompt → completion table.
#[derive(Debug, Clone, Default)]
pub struct ScriptedGenerator {
    table: HashMap<String, String>,
}

impl ScriptedGenerator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, prompt: impl Into<String>, completion: impl Into<String>) -> Self {
        self.table.insert(prompt.into(), completion.into());
        self
    }
}

impl<P: Into<String>, C: Into<String>> FromIterator<(P, C)> for ScriptedGenerator {
    fn from_iter<T: IntoIterator<Item = (P, C)>>(iter: T) -> Self {
        Self {
            table: iter.into_iter().map(|(p, c)| (p.into(), c.into())).collect(),
        }
    }
}

impl TextGenerator for ScriptedGenerator {
    fn generate(&self, request: &GenerationRequest) -> BackendResult<String> {
        request.params.validate()?;
        self.table
            .get(&request.prompt)
            .map(|c| truncate_at_stop(c, &request.params.stop_markers))
            .ok_or_else(|| BackendError::Unscripted(request.prompt.clone()))
    }

    fn id(&self) -> String {
        "stub:scripted".into()
    }
}

/// One chat exchange, as stored in transcripts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub system: String,
    pub user: String,
    pub response: String,
}

/// Chat generator backed by a (system, user) → answer table.
#[derive(Debug, Clone, Default)]
pub struct ScriptedChat {
    table: HashMap<(String, String), String>,
}

impl ScriptedChat {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, system: impl Into<String>, user: impl Into<String>, answer: impl Into<String>) -> Self {
        self.table.insert((system.into(), user.into()), answer.into());
        self
    }

    /// Replays a stored transcript.
    pub fn from_transcript<'a>(exchanges: impl IntoIterator<Item = &'a Exchange>) -> Self {
        exchanges.into_iter().fold(Self::new(), |chat, e| {
            chat.with(e.system.clone(), e.user.clone(), e.response.clone())
        })
    }
}

impl ChatGenerator for ScriptedChat {
    fn chat(&self, system: &str, user: &str, params: &GenerationParams) -> BackendResult<String> {
        params.validate()?;
        self.table
            .get(&(system.to_string(), user.to_string()))
            .map(|a| truncate_at_stop(a, &params.stop_markers))
            .ok_or_else(|| BackendError::Unscripted(user.to_string()))
    }

    fn id(&self) -> String {
        "stub:scripted-chat".into()
    }
}

/// Wraps a text generator and records every request it sees.
#[derive(Debug, Default)]
pub struct RecordingGenerator<G> {
    inner: G,
    requests: Mutex<Vec<GenerationRequest>>,
}

impl<G> RecordingGenerator<G> {
    pub fn new(inner: G) -> Self {
        Self {
            inner,
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<GenerationRequest> {
        self.requests.lock().unwrap().clone()
    }

    pub fn prompts(&self) -> Vec<String> {
        self.requests().into_iter().map(|r| r.prompt).collect()
    }
}

impl<G: TextGenerator> TextGenerator for RecordingGenerator<G> {
    fn generate(&self, request: &GenerationRequest) -> BackendResult<String> {
        self.requests.lock().unwrap().push(request.clone());
        self.inner.generate(request)
    }

    fn id(&self) -> String {
        self.inner.id()
    }
}

/// Token embedder mapping every token to a one-hot vector at
/// `hash(token) % dim`. Cosine similarity is 1 for equal tokens and 0 for
/// tokens whose buckets differ.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    pub dim: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self { dim: 4096 }
    }
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (stable_hash(&[token]) % self.dim as u64) as usize
    }

    fn one_hot(&self, token: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        v[self.bucket(token)] = 1.0;
        v
    }
}

impl TokenEmbedder for HashEmbedder {
    fn embed_tokens(&self, sentence: &Sentence) -> BackendResult<Vec<TokenEmbedding>> {
        Ok(sentence
            .tokens()
            .iter()
            .map(|t| TokenEmbedding {
                token: t.clone(),
                vector: self.one_hot(t),
            })
            .collect())
    }

    fn id(&self) -> String {
        format!("stub:hash/{}", self.dim)
    }
}

impl SentenceEmbedder for HashEmbedder {
    /// Mean of the token one-hots.
    fn embed_sentence(&self, sentence: &Sentence) -> BackendResult<SentenceEmbedding> {
        let tokens = sentence.tokens();
        let mut v = vec![0.0; self.dim];
        for t in tokens {
            v[self.bucket(t)] += 1.0;
        }
        let n = tokens.len() as f64;
        v.iter_mut().for_each(|x| *x /= n);
        Ok(SentenceEmbedding { vector: v })
    }

    fn id(&self) -> String {
        format!("stub:hash/{}", self.dim)
    }
}

/// Index of the gap a mask marker sits in: the number of sentences before it.
pub fn mask_index(masked_story_text: &str, marker: &str) -> BackendResult<usize> {
    let at = single_marker(masked_story_text, marker)?;
    Ok(text::split_sentences(&masked_story_text[..at]).len())
}

/// Scorer returning a scripted probability per mask index, or `default`.
#[derive(Debug, Clone)]
pub struct ScriptedScorer {
    marker: String,
    by_index: BTreeMap<usize, f64>,
    default: f64,
}

impl ScriptedScorer {
    pub fn new(marker: impl Into<String>, default: f64) -> Self {
        Self {
            marker: marker.into(),
            by_index: BTreeMap::new(),
            default,
        }
    }

    pub fn with(mut self, index: usize, probability: f64) -> Self {
        self.by_index.insert(index, probability);
        self
    }
}

impl PositionScorer for ScriptedScorer {
    fn score_position(&self, masked_story_text: &str) -> BackendResult<f64> {
        let index = mask_index(masked_story_text, &self.marker)?;
        Ok(*self.by_index.get(&index).unwrap_or(&self.default))
    }

    fn id(&self) -> String {
        "stub:scripted-scorer".into()
    }
}

/// Probability = gap index / 10, capped at 1, so the last gap always wins.
#[derive(Debug, Clone)]
pub struct MonotoneScorer {
    marker: String,
}

impl MonotoneScorer {
    pub fn new(marker: impl Into<String>) -> Self {
        Self { marker: marker.into() }
    }
}

impl PositionScorer for MonotoneScorer {
    fn score_position(&self, masked_story_text: &str) -> BackendResult<f64> {
        let index = mask_index(masked_story_text, &self.marker)?;
        Ok((index as f64 / 10.0).min(1.0))
    }

    fn id(&self) -> String {
        "stub:monotone-scorer".into()
    }
}

#[derive(Debug, Clone)]
pub struct ConstantScorer {
    marker: String,
    probability: f64,
}

impl ConstantScorer {
    pub fn new(marker: impl Into<String>, probability: f64) -> Self {
        Self {
            marker: marker.into(),
            probability,
        }
    }
}

impl PositionScorer for ConstantScorer {
    fn score_position(&self, masked_story_text: &str) -> BackendResult<f64> {
        single_marker(masked_story_text, &self.marker)?;
        Ok(self.probability)
    }

    fn id(&self) -> String {
        "stub:constant-scorer".into()
    }
}

/// Counts calls made to the wrapped scorer.
#[derive(Debug)]
pub struct CountingScorer<S> {
    inner: S,
    calls: AtomicUsize,
}

impl<S> CountingScorer<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<S: PositionScorer> PositionScorer for CountingScorer<S> {
    fn score_position(&self, masked_story_text: &str) -> BackendResult<f64> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.score_position(masked_story_text)
    }

    fn id(&self) -> String {
        self.inner.id()
    }
}

const DETERMINERS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "my", "his", "her", "their", "our", "your", "its", "some",
    "every",
];
const PRONOUNS: &[&str] = &["i", "you", "he", "she", "it", "we", "they", "me", "him", "us", "them"];
const PREPOSITIONS: &[&str] = &[
    "in", "on", "at", "to", "for", "with", "from", "of", "by", "about", "into", "over", "after", "before", "under",
];
const CONJUNCTIONS: &[&str] = &["and", "but", "or", "so", "because", "when", "while", "if", "then"];
const AUXILIARIES: &[&str] = &[
    "is", "are", "was", "were", "be", "been", "am", "has", "have", "had", "do", "did", "does", "will", "would",
    "could", "can", "should",
];

fn coarse_tag(raw: &str, token: &str, first: bool) -> &'static str {
    if DETERMINERS.contains(&token) {
        "DT"
    } else if PRONOUNS.contains(&token) {
        "PRP"
    } else if PREPOSITIONS.contains(&token) {
        "IN"
    } else if CONJUNCTIONS.contains(&token) {
        "CC"
    } else if AUXILIARIES.contains(&token) {
        "AUX"
    } else if token.chars().all(|c| c.is_ascii_digit()) {
        "CD"
    } else if token.ends_with("ing") {
        "VBG"
    } else if token.ends_with("ed") {
        "VBD"
    } else if token.ends_with("ly") {
        "RB"
    } else if !first && raw.chars().next().is_some_and(char::is_uppercase) {
        "NNP"
    } else {
        "NN"
    }
}

/// Heuristic parser: a flat `S` over coarse word-class tags, grouping
/// determiner-led runs into `NP`s. Good enough to exercise the tree kernel
/// without a real constituency parser.
#[derive(Debug, Clone, Default)]
pub struct ShallowParser;

impl SyntaxParser for ShallowParser {
    fn parse(&self, sentence: &Sentence) -> BackendResult<Tree> {
        let raws: Vec<&str> = sentence
            .text()
            .split_whitespace()
            .filter(|w| w.chars().any(char::is_alphanumeric))
            .collect();
        let tags: Vec<&str> = raws
            .iter()
            .zip(sentence.tokens())
            .enumerate()
            .map(|(i, (raw, tok))| {
                let raw = raw.trim_matches(|c: char| !c.is_alphanumeric());
                coarse_tag(raw, tok, i == 0)
            })
            .collect();
        let mut children = Vec::new();
        let mut i = 0;
        while i < tags.len() {
            if tags[i] == "DT" {
                let mut np = vec![Tree::leaf("DT")];
                i += 1;
                while i < tags.len() && matches!(tags[i], "NN" | "NNP" | "VBG" | "CD") {
                    np.push(Tree::leaf(tags[i]));
                    i += 1;
                }
                children.push(Tree::node("NP", np));
            } else {
                children.push(Tree::leaf(tags[i]));
                i += 1;
            }
        }
        Ok(Tree::node("S", children))
    }

    fn id(&self) -> String {
        "stub:shallow-parser".into()
    }
}
