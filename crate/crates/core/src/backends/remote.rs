//! JSON-over-HTTP adapter so real model servers can sit behind the contracts.
//!
//! Every contract is one `POST` under the base URL:
//!
//! | path              | request body                         | response            |
//! |-------------------|--------------------------------------|---------------------|
//! | `/generate`       | `GenerationRequest`                  | `{text}`            |
//! | `/chat`           | `{system, user, ...GenerationParams}`| `{text}`            |
//! | `/embed-tokens`   | `{sentence, tokens}`                 | `{embeddings: [{token, vector}]}` |
//! | `/embed-sentence` | `{sentence}`                         | `{vector}`          |
//! | `/score-position` | `{text}`                             | `{probability}`     |
//! | `/parse`          | `{sentence}`                         | `{tree}` (bracketed)|
//!
//! Connection failures, timeouts and 5xx answers map to
//! [`BackendError::Transport`]; 4xx answers map to
//! [`BackendError::InvalidRequest`].

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    single_marker, truncate_at_stop, BackendError, BackendResult, ChatGenerator, GenerationParams, GenerationRequest,
    PositionScorer, SentenceEmbedder, SentenceEmbedding, SyntaxParser, TextGenerator, TokenEmbedder, TokenEmbedding,
};
use crate::corpus::Sentence;
use crate::metrics::syntax::Tree;

#[derive(Debug, Clone)]
pub struct RemoteBackend {
    base_url: String,
    mask_marker: String,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct ChatBody<'a> {
    system: &'a str,
    user: &'a str,
    #[serde(flatten)]
    params: &'a GenerationParams,
}

#[derive(Serialize)]
struct SentenceBody<'a> {
    sentence: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    tokens: Option<&'a [String]>,
}

#[derive(Serialize)]
struct ScoreBody<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct TextReply {
    text: String,
}

#[derive(Deserialize)]
struct TokensReply {
    embeddings: Vec<TokenEmbedding>,
}

#[derive(Deserialize)]
struct VectorReply {
    vector: Vec<f64>,
}

#[derive(Deserialize)]
struct ProbabilityReply {
    probability: f64,
}

#[derive(Deserialize)]
struct TreeReply {
    tree: String,
}

impl RemoteBackend {
    pub fn new(base_url: &str, mask_marker: &str) -> Self {
        Self::with_timeout(base_url, mask_marker, Duration::from_secs(120))
    }

    pub fn with_timeout(base_url: &str, mask_marker: &str, timeout: Duration) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .expect("http client");
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            mask_marker: mask_marker.to_string(),
            client,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> BackendResult<R> {
        let url = format!("{}{}", self.base_url, path);
        let response = self
            .client
            .post(&url)
            .json(body)
            .send()
            .map_err(|e| BackendError::Transport(format!("{url}: {e}")))?;
        let status = response.status();
        if status.is_client_error() {
            let detail = response.text().unwrap_or_default();
            return Err(BackendError::InvalidRequest(format!("{url}: {status} {detail}")));
        }
        if !status.is_success() {
            return Err(BackendError::Transport(format!("{url}: {status}")));
        }
        response
            .json::<R>()
            .map_err(|e| BackendError::Transport(format!("{url}: bad response body: {e}")))
    }
}

fn finite(v: &[f64], what: &str) -> BackendResult<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(BackendError::Generation(format!("{what} has non-finite values")))
    }
}

impl TextGenerator for RemoteBackend {
    fn generate(&self, request: &GenerationRequest) -> BackendResult<String> {
        request.params.validate()?;
        let reply: TextReply = self.post("/generate", request)?;
        Ok(truncate_at_stop(&reply.text, &request.params.stop_markers))
    }

    fn id(&self) -> String {
        format!("remote:{}", self.base_url)
    }
}

impl ChatGenerator for RemoteBackend {
    fn chat(&self, system: &str, user: &str, params: &GenerationParams) -> BackendResult<String> {
        params.validate()?;
        let reply: TextReply = self.post("/chat", &ChatBody { system, user, params })?;
        Ok(truncate_at_stop(&reply.text, &params.stop_markers))
    }

    fn id(&self) -> String {
        format!("remote:{}", self.base_url)
    }
}

impl TokenEmbedder for RemoteBackend {
    fn embed_tokens(&self, sentence: &Sentence) -> BackendResult<Vec<TokenEmbedding>> {
        let body = SentenceBody {
            sentence: sentence.text(),
            tokens: Some(sentence.tokens()),
        };
        let reply: TokensReply = self.post("/embed-tokens", &body)?;
        if reply.embeddings.len() != sentence.tokens().len() {
            return Err(BackendError::Generation(format!(
                "expected {} token embeddings, got {}",
                sentence.tokens().len(),
                reply.embeddings.len()
            )));
        }
        for e in &reply.embeddings {
            finite(&e.vector, "token embedding")?;
        }
        Ok(reply.embeddings)
    }

    fn id(&self) -> String {
        format!("remote:{}", self.base_url)
    }
}

impl SentenceEmbedder for RemoteBackend {
    fn embed_sentence(&self, sentence: &Sentence) -> BackendResult<SentenceEmbedding> {
        let body = SentenceBody {
            sentence: sentence.text(),
            tokens: None,
        };
        let reply: VectorReply = self.post("/embed-sentence", &body)?;
        finite(&reply.vector, "sentence embedding")?;
        Ok(SentenceEmbedding { vector: reply.vector })
    }

    fn id(&self) -> String {
        format!("remote:{}", self.base_url)
    }
}

impl PositionScorer for RemoteBackend {
    fn score_position(&self, masked_story_text: &str) -> BackendResult<f64> {
        single_marker(masked_story_text, &self.mask_marker)?;
        let reply: ProbabilityReply = self.post(
            "/score-position",
            &ScoreBody {
                text: masked_story_text,
            },
        )?;
        if !(0.0..=1.0).contains(&reply.probability) {
            return Err(BackendError::Generation(format!(
                "probability {} outside [0, 1]",
                reply.probability
            )));
        }
        Ok(reply.probability)
    }

    fn id(&self) -> String {
        format!("remote:{}", self.base_url)
    }
}

impl SyntaxParser for RemoteBackend {
    fn parse(&self, sentence: &Sentence) -> BackendResult<Tree> {
        let body = SentenceBody {
            sentence: sentence.text(),
            tokens: None,
        };
        let reply: TreeReply = self.post("/parse", &body)?;
        Tree::parse_bracketed(&reply.tree).map_err(|e| BackendError::Generation(format!("unparseable tree: {e}")))
    }

    fn id(&self) -> String {
        format!("remote:{}", self.base_url)
    }
}
