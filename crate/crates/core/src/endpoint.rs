//! LM-scheme endpoint generation: the phrase generator turns a start into a
//! phrase list, the stop generator turns start + phrase list into a stop.

use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, GenerationParams, GenerationRequest, TextGenerator};
use crate::corpus::{first_sentence, Sentence};
use crate::format::{self, Markers};
use crate::preprocessing::PhraseList;

#[derive(Debug, thiserror::Error)]
pub enum EndpointError {
    #[error("stop generation failed: no sentence in output {0:?}")]
    StopFailed(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhraseListSource {
    Generated,
    UserEdited,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointResult {
    pub start: Sentence,
    pub phrase_list: PhraseList,
    pub stop: Sentence,
    pub phrase_list_source: PhraseListSource,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub markers: Markers,
    pub params: GenerationParams,
}

impl LmConfig {
    /// Caller params plus newline and every marker literal as stop markers.
    pub(crate) fn request(&self, prompt: String) -> GenerationRequest {
        let mut params = self.params.clone();
        for m in self.markers.all().into_iter().chain(["\n"]) {
            if !m.is_empty() && !params.stop_markers.iter().any(|s| s == m) {
                params.stop_markers.push(m.to_string());
            }
        }
        GenerationRequest::new(prompt, params)
    }
}

pub fn generate_phrase_list(
    start: &Sentence,
    generator: &dyn TextGenerator,
    config: &LmConfig,
) -> Result<PhraseList, BackendError> {
    let raw = generator.generate(&config.request(format::phrase_prompt(start, &config.markers)))?;
    let list = PhraseList::parse(&raw);
    if list.is_empty() && !raw.trim().is_empty() {
        log::warn!("phrase generator output has no usable phrases: {raw:?}");
    }
    Ok(list)
}

pub fn generate_stop(
    start: &Sentence,
    phrase_list: &PhraseList,
    generator: &dyn TextGenerator,
    config: &LmConfig,
) -> Result<Sentence, EndpointError> {
    let prompt = format::stop_prompt(start, phrase_list, &config.markers);
    let raw = generator.generate(&config.request(prompt))?;
    first_sentence(&raw).ok_or(EndpointError::StopFailed(raw))
}

pub fn generate_endpoints(
    start: &Sentence,
    phrase_generator: &dyn TextGenerator,
    stop_generator: &dyn TextGenerator,
    config: &LmConfig,
) -> Result<EndpointResult, EndpointError> {
    let phrase_list = generate_phrase_list(start, phrase_generator, config)?;
    let stop = generate_stop(start, &phrase_list, stop_generator, config)?;
    Ok(EndpointResult {
        start: start.clone(),
        phrase_list,
        stop,
        phrase_list_source: PhraseListSource::Generated,
    })
}

/// Endpoints from a phrase list the user supplied instead of the generator.
pub fn endpoints_from_phrase_list(
    start: &Sentence,
    phrase_list: PhraseList,
    stop_generator: &dyn TextGenerator,
    config: &LmConfig,
) -> Result<EndpointResult, EndpointError> {
    let stop = generate_stop(start, &phrase_list, stop_generator, config)?;
    Ok(EndpointResult {
        start: start.clone(),
        phrase_list,
        stop,
        phrase_list_source: PhraseListSource::UserEdited,
    })
}
