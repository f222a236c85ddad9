//! Bookended story generation.
//!
//! Stories are generated endpoints first: a stop sentence related to the given
//! start, then middle sentences infilled between them. Two schemes are
//! provided. The LM scheme uses fine-tuned generators and a position
//! classifier to infill one sentence at a time wherever context is most
//! missing. The LLM scheme prompts a chat model with one of six endpoint
//! methods and infills all middles at once. Metrics score endpoint
//! relatedness and overall story quality, and [`session`] keeps interactive
//! phrase-list editing sessions on disk.
//!
//! Every model is reached through a narrow trait in [`backends`]; the
//! deterministic stubs there make the whole crate runnable without models.

pub mod backends;
pub mod corpus;
pub mod endpoint;
pub mod format;
pub mod infill;
pub mod llm;
pub mod metrics;
pub mod preprocessing;
pub mod session;
pub mod text;

pub use backends::{
    BackendError, BackendSuite, ChatGenerator, GenerationParams, GenerationRequest, PositionScorer, SentenceEmbedder,
    SyntaxParser, TextGenerator, TokenEmbedder,
};
pub use corpus::{CorpusFormat, Sentence, Story};
pub use format::Markers;
pub use preprocessing::PhraseList;
