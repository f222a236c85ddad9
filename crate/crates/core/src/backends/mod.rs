//! Model contracts the pipelines depend on.
//!
//! The LM scheme needs a text generator, a token embedder (phrase-list
//! extraction) and a position scorer; the LLM scheme needs a chat generator;
//! evaluation needs a sentence embedder and a syntax parser. Each contract is
//! its own trait so the two schemes share nothing by accident.
//!
//! [`stubs`] holds deterministic implementations that run without any model,
//! [`remote`] speaks JSON over HTTP to an external model server.

pub mod remote;
pub mod stubs;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::Sentence;
use crate::metrics::syntax::Tree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    /// The caller sent something the contract does not accept.
    Contract,
    /// The backend could not be reached or answered garbage.
    Transport,
    /// The backend answered but could not produce a result.
    Generation,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("unscripted prompt: {0:?}")]
    Unscripted(String),
    #[error("backend unavailable: {0}")]
    Transport(String),
    #[error("generation failed: {0}")]
    Generation(String),
}

impl BackendError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Self::InvalidRequest(_) | Self::Unscripted(_) => ErrorCategory::Contract,
            Self::Transport(_) => ErrorCategory::Transport,
            Self::Generation(_) => ErrorCategory::Generation,
        }
    }
}

pub type BackendResult<T> = Result<T, BackendError>;

/// Decoding parameters shared by text and chat generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub max_new_tokens: u32,
    /// 0 means greedy decoding.
    pub temperature: f64,
    #[serde(default)]
    pub stop_markers: Vec<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            max_new_tokens: 64,
            temperature: 0.0,
            stop_markers: Vec::new(),
            seed: None,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> BackendResult<()> {
        if self.max_new_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_new_tokens must be >= 1".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature must be finite and >= 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_stop_markers<I, S>(mut self, markers: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.stop_markers = markers.into_iter().map(Into::into).collect();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    #[serde(flatten)]
    pub params: GenerationParams,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, params: GenerationParams) -> Self {
        Self {
            prompt: prompt.into(),
            params,
        }
    }
}

/// Cut `text` at the earliest occurrence of any stop marker.
pub fn truncate_at_stop(text: &str, stop_markers: &[String]) -> String {
    let cut = stop_markers
        .iter()
        .filter(|m| !m.is_empty())
        .filter_map(|m| text.find(m.as_str()))
        .min()
        .unwrap_or(text.len());
    text[..cut].to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenEmbedding {
    pub token: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceEmbedding {
    pub vector: Vec<f64>,
}

/// Causal text generator. Returns the completion only, cut at the first stop
/// marker.
pub trait TextGenerator: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> BackendResult<String>;

    fn id(&self) -> String;

    /// Whether concurrent calls are allowed. Backends returning `false` are
    /// driven one request at a time.
    fn concurrency_safe(&self) -> bool {
        true
    }
}

pub trait ChatGenerator: Send + Sync {
    fn chat(&self, system: &str, user: &str, params: &GenerationParams) -> BackendResult<String>;

    fn id(&self) -> String;

    fn concurrency_safe(&self) -> bool {
        true
    }
}

/// One embedding per token of the sentence, in token order.
pub trait TokenEmbedder: Send + Sync {
    fn embed_tokens(&self, sentence: &Sentence) -> BackendResult<Vec<TokenEmbedding>>;

    fn id(&self) -> String;
}

pub trait SentenceEmbedder: Send + Sync {
    fn embed_sentence(&self, sentence: &Sentence) -> BackendResult<SentenceEmbedding>;

    fn id(&self) -> String;
}

/// Probability that a sentence is missing at the single mask marker in the
/// text.
pub trait PositionScorer: Send + Sync {
    fn score_position(&self, masked_story_text: &str) -> BackendResult<f64>;

    fn id(&self) -> String;
}

/// Produces a labeled constituency tree for a sentence.
pub trait SyntaxParser: Send + Sync {
    fn parse(&self, sentence: &Sentence) -> BackendResult<Tree>;

    fn id(&self) -> String;
}

/// Check that `text` has exactly one `marker`, returning the byte offset.
pub fn single_marker(text: &str, marker: &str) -> BackendResult<usize> {
    let mut hits = text.match_indices(marker).map(|(i, _)| i);
    match (hits.next(), hits.next()) {
        (Some(i), None) => Ok(i),
        (None, _) => Err(BackendError::InvalidRequest(format!("no {marker} marker in text"))),
        (Some(_), Some(_)) => Err(BackendError::InvalidRequest(format!(
            "more than one {marker} marker in text"
        ))),
    }
}

/// Every backend a full run can touch, behind shared handles.
#[derive(Clone)]
pub struct BackendSuite {
    pub phrase_generator: Arc<dyn TextGenerator>,
    pub stop_generator: Arc<dyn TextGenerator>,
    pub infill_generator: Arc<dyn TextGenerator>,
    pub chat: Arc<dyn ChatGenerator>,
    pub token_embedder: Arc<dyn TokenEmbedder>,
    pub sentence_embedder: Arc<dyn SentenceEmbedder>,
    pub scorer: Arc<dyn PositionScorer>,
    pub parser: Arc<dyn SyntaxParser>,
}

impl BackendSuite {
    /// The deterministic stub suite: echo generators, hash embeddings, a
    /// monotone scorer and the shallow tag parser.
    pub fn stubs(mask_marker: &str) -> Self {
        let text: Arc<dyn TextGenerator> = Arc::new(stubs::EchoGenerator);
        let hash = Arc::new(stubs::HashEmbedder::default());
        Self {
            phrase_generator: text.clone(),
            stop_generator: text.clone(),
            infill_generator: text,
            chat: Arc::new(stubs::EchoChat::default()),
            token_embedder: hash.clone(),
            sentence_embedder: hash,
            scorer: Arc::new(stubs::MonotoneScorer::new(mask_marker)),
            parser: Arc::new(stubs::ShallowParser),
        }
    }

    /// Every contract served by one remote model server.
    pub fn remote(base_url: &str, mask_marker: &str) -> Self {
        let remote = Arc::new(remote::RemoteBackend::new(base_url, mask_marker));
        Self {
            phrase_generator: remote.clone(),
            stop_generator: remote.clone(),
            infill_generator: remote.clone(),
            chat: remote.clone(),
            token_embedder: remote.clone(),
            sentence_embedder: remote.clone(),
            scorer: remote.clone(),
            parser: remote,
        }
    }

    pub fn ids(&self) -> BackendIds {
        BackendIds {
            phrase_generator: self.phrase_generator.id(),
            stop_generator: self.stop_generator.id(),
            infill_generator: self.infill_generator.id(),
            chat: self.chat.id(),
            token_embedder: self.token_embedder.id(),
            sentence_embedder: self.sentence_embedder.id(),
            scorer: self.scorer.id(),
            parser: self.parser.id(),
        }
    }

    pub fn concurrency_safe(&self) -> bool {
        self.phrase_generator.concurrency_safe()
            && self.stop_generator.concurrency_safe()
            && self.infill_generator.concurrency_safe()
            && self.chat.concurrency_safe()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendIds {
    pub phrase_generator: String,
    pub stop_generator: String,
    pub infill_generator: String,
    pub chat: String,
    pub token_embedder: String,
    pub sentence_embedder: String,
    pub scorer: String,
    pub parser: String,
}
