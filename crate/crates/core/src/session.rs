//! Interactive sessions: one start sentence, any number of attempts, each
//! attempt a phrase list that is turned into a stop, infilled and scored.
//!
//! Every change is an event appended to `<data_dir>/<id>.jsonl`; session state
//! is whatever replaying those events produces, both live and after restart.

use std::collections::HashMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::backends::stubs::Exchange;
use crate::backends::{BackendIds, BackendSuite, GenerationParams};
use crate::corpus::{Sentence, Story};
use crate::endpoint::{self, EndpointError, LmConfig, PhraseListSource};
use crate::format::Markers;
use crate::infill::{self, InfillError, InfillState, TraceEntry};
use crate::llm::{self, Intermediate, LlmConfig, LlmError, PromptMethod};
use crate::metrics::{self, EvalOptions, MetricsError, StoryScores};
use crate::preprocessing::{PhraseList, DEFAULT_GAMMA};
use crate::text;

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("session {0} not found")]
    NotFound(String),
    #[error("session {id} has no attempt {index}")]
    AttemptNotFound { id: String, index: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Unsupported(String),
    #[error(transparent)]
    Endpoint(#[from] EndpointError),
    #[error(transparent)]
    Infill(#[from] InfillError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("corrupt event log {path}:{line}: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl SessionError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Self::NotFound(_) | Self::AttemptNotFound { .. } => "not_found",
            Self::InvalidInput(_) => "invalid_input",
            Self::Conflict(_) => "conflict",
            Self::Unsupported(_) => "unsupported",
            Self::Infill(InfillError::Complete(_)) => "conflict",
            Self::Endpoint(_) | Self::Infill(_) | Self::Llm(_) | Self::Metrics(_) => "backend_error",
            Self::Corrupt { .. } | Self::Io(_) | Self::Json(_) => "internal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Scheme {
    Lm,
    Llm(PromptMethod),
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Lm => f.write_str("lm"),
            Self::Llm(m) => write!(f, "llm-method-{m}"),
        }
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "lm" {
            return Ok(Self::Lm);
        }
        s.strip_prefix("llm-method-")
            .and_then(|k| k.parse::<u8>().ok())
            .and_then(|k| PromptMethod::new(k).ok())
            .map(Self::Llm)
            .ok_or_else(|| format!("unknown scheme {s:?}; expected lm or llm-method-1..6"))
    }
}

impl TryFrom<String> for Scheme {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<Scheme> for String {
    fn from(s: Scheme) -> String {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub n: usize,
    pub gamma: f64,
    pub markers: Markers,
    pub seed: Option<u64>,
    pub params: GenerationParams,
    pub system_prompt: String,
}

impl Default for SessionConfig {
    fn default() -> Self {
        let llm = LlmConfig::default();
        Self {
            n: 5,
            gamma: DEFAULT_GAMMA,
            markers: Markers::default(),
            seed: None,
            params: GenerationParams::default(),
            system_prompt: llm.system_prompt,
        }
    }
}

impl SessionConfig {
    fn lm(&self) -> LmConfig {
        LmConfig {
            markers: self.markers.clone(),
            params: self.params.clone().with_seed(self.seed),
        }
    }

    fn llm(&self) -> LlmConfig {
        LlmConfig {
            system_prompt: self.system_prompt.clone(),
            params: self.params.clone().with_seed(self.seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub phrase_list: PhraseList,
    pub phrase_list_source: PhraseListSource,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub stop: Option<Sentence>,
    /// Partial story and trace while infilling (LM scheme).
    pub infill: Option<InfillState>,
    pub final_story: Option<Story>,
    pub scores: Option<StoryScores>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intermediate: Option<Intermediate>,
    /// Chat exchanges behind this attempt (LLM scheme).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transcript: Vec<Exchange>,
}

impl Attempt {
    fn new(phrase_list: PhraseList, source: PhraseListSource) -> Self {
        Self {
            phrase_list,
            phrase_list_source: source,
            warnings: Vec::new(),
            stop: None,
            infill: None,
            final_story: None,
            scores: None,
            intermediate: None,
            transcript: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub start: Sentence,
    pub scheme: Scheme,
    pub config: SessionConfig,
    pub backends: BackendIds,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub attempts: Vec<Attempt>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Created {
        id: String,
        start: Sentence,
        scheme: Scheme,
        config: SessionConfig,
        backends: BackendIds,
    },
    AttemptAdded {
        attempt: Attempt,
    },
    StopGenerated {
        attempt: usize,
        stop: Sentence,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        intermediate: Option<Intermediate>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        exchanges: Vec<Exchange>,
    },
    InfillStepped {
        attempt: usize,
        entry: TraceEntry,
    },
    Completed {
        attempt: usize,
        story: Story,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        exchanges: Vec<Exchange>,
    },
    Scored {
        attempt: usize,
        scores: StoryScores,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub at: DateTime<Utc>,
    #[serde(flatten)]
    pub event: Event,
}

impl Session {
    fn from_created(record: &EventRecord) -> Result<Self, String> {
        match &record.event {
            Event::Created {
                id,
                start,
                scheme,
                config,
                backends,
            } => Ok(Self {
                id: id.clone(),
                start: start.clone(),
                scheme: *scheme,
                config: config.clone(),
                backends: backends.clone(),
                created_at: record.at,
                updated_at: record.at,
                attempts: Vec::new(),
            }),
            _ => Err("first event must be `created`".into()),
        }
    }

    fn attempt_mut(&mut self, index: usize) -> Result<&mut Attempt, String> {
        self.attempts
            .get_mut(index)
            .ok_or_else(|| format!("event names missing attempt {index}"))
    }

    /// Fold one event into the state.
    fn apply(&mut self, record: &EventRecord) -> Result<(), String> {
        match &record.event {
            Event::Created { .. } => return Err("duplicate `created` event".into()),
            Event::AttemptAdded { attempt } => self.attempts.push(attempt.clone()),
            Event::StopGenerated {
                attempt,
                stop,
                intermediate,
                exchanges,
            } => {
                let a = self.attempt_mut(*attempt)?;
                a.stop = Some(stop.clone());
                if intermediate.is_some() {
                    a.intermediate = intermediate.clone();
                }
                a.transcript.extend(exchanges.iter().cloned());
            }
            Event::InfillStepped { attempt, entry } => {
                let (start, n) = (self.start.clone(), self.config.n);
                let a = self.attempt_mut(*attempt)?;
                let stop = a.stop.clone().ok_or("infill step before stop")?;
                if a.infill.is_none() {
                    a.infill = Some(InfillState::new(start, stop, n).map_err(|e| e.to_string())?);
                }
                let state = a.infill.as_mut().expect("just set");
                state.apply(entry.clone()).map_err(|e| e.to_string())?;
            }
            Event::Completed {
                attempt,
                story,
                exchanges,
            } => {
                let a = self.attempt_mut(*attempt)?;
                a.final_story = Some(story.clone());
                a.transcript.extend(exchanges.iter().cloned());
            }
            Event::Scored { attempt, scores } => {
                self.attempt_mut(*attempt)?.scores = Some(scores.clone());
            }
        }
        self.updated_at = record.at;
        Ok(())
    }

    /// Rebuild a session from its event log.
    pub fn replay(records: &[EventRecord]) -> Result<Self, String> {
        let (first, rest) = records.split_first().ok_or("empty event log")?;
        let mut session = Self::from_created(first)?;
        for r in rest {
            session.apply(r)?;
        }
        Ok(session)
    }

    fn attempt(&self, index: usize) -> Result<&Attempt, SessionError> {
        self.attempts.get(index).ok_or_else(|| SessionError::AttemptNotFound {
            id: self.id.clone(),
            index,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub entry: TraceEntry,
    pub sentences: Vec<Sentence>,
    pub remaining: usize,
    pub final_story: Option<Story>,
}

struct Slot {
    session: Session,
    log: PathBuf,
}

impl Slot {
    /// Persist, then fold into memory.
    fn record(&mut self, event: Event) -> Result<(), SessionError> {
        let record = EventRecord { at: Utc::now(), event };
        let line = serde_json::to_string(&record)?;
        let mut file = OpenOptions::new().append(true).create(true).open(&self.log)?;
        writeln!(file, "{line}")?;
        file.flush()?;
        self.session
            .apply(&record)
            .map_err(|reason| SessionError::Conflict(format!("event rejected: {reason}")))
    }
}

/// Sessions on disk plus an in-memory index. Requests on one session are
/// serialized by its own lock; the index lock is only held for lookups.
pub struct SessionStore {
    data_dir: PathBuf,
    backends: BackendSuite,
    index: Mutex<HashMap<String, Arc<Mutex<Slot>>>>,
}

fn read_log(path: &Path) -> Result<Vec<EventRecord>, SessionError> {
    let lines: Vec<String> = BufReader::new(File::open(path)?).lines().collect::<Result<_, _>>()?;
    let last = lines.iter().rposition(|l| !l.trim().is_empty());
    let mut records = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => records.push(r),
            // a crash mid-append leaves a torn final line
            Err(e) if Some(i) == last => {
                log::warn!("{}: ignoring unreadable final line: {e}", path.display());
            }
            Err(e) => {
                return Err(SessionError::Corrupt {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason: e.to_string(),
                })
            }
        }
    }
    Ok(records)
}

impl SessionStore {
    /// Open (creating if needed) `data_dir` and replay every session log in it.
    pub fn open(data_dir: impl Into<PathBuf>, backends: BackendSuite) -> Result<Self, SessionError> {
        let data_dir = data_dir.into();
        fs::create_dir_all(&data_dir)?;
        let mut index = HashMap::new();
        for entry in fs::read_dir(&data_dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("jsonl") {
                continue;
            }
            let records = read_log(&path)?;
            if records.is_empty() {
                continue;
            }
            let session = Session::replay(&records).map_err(|reason| SessionError::Corrupt {
                path: path.clone(),
                line: 0,
                reason,
            })?;
            index.insert(session.id.clone(), Arc::new(Mutex::new(Slot { session, log: path })));
        }
        Ok(Self {
            data_dir,
            backends,
            index: Mutex::new(index),
        })
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    pub fn backends(&self) -> &BackendSuite {
        &self.backends
    }

    fn slot(&self, id: &str) -> Result<Arc<Mutex<Slot>>, SessionError> {
        self.index
            .lock()
            .expect("index lock poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::NotFound(id.to_string()))
    }

    fn with_slot<T>(&self, id: &str, f: impl FnOnce(&mut Slot) -> Result<T, SessionError>) -> Result<T, SessionError> {
        let slot = self.slot(id)?;
        let mut guard = slot.lock().expect("session lock poisoned");
        f(&mut guard)
    }

    pub fn list(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .index
            .lock()
            .expect("index lock poisoned")
            .keys()
            .cloned()
            .collect();
        ids.sort();
        ids
    }

    pub fn get(&self, id: &str) -> Result<Session, SessionError> {
        self.with_slot(id, |slot| Ok(slot.session.clone()))
    }

    /// The persisted events of a session, in order.
    pub fn events(&self, id: &str) -> Result<Vec<EventRecord>, SessionError> {
        self.with_slot(id, |slot| read_log(&slot.log))
    }

    pub fn create_session(&self, start: &str, scheme: Scheme, config: SessionConfig) -> Result<Session, SessionError> {
        let pieces = text::split_sentences(start);
        if pieces.len() != 1 {
            return Err(SessionError::InvalidInput(format!(
                "start must be exactly one sentence, got {}",
                pieces.len()
            )));
        }
        let start = Sentence::new(&pieces[0]).map_err(|e| SessionError::InvalidInput(e.to_string()))?;
        if config.n < 2 {
            return Err(SessionError::InvalidInput(format!(
                "n must be at least 2, got {}",
                config.n
            )));
        }
        if let Err(e) = config.params.validate() {
            return Err(SessionError::InvalidInput(e.to_string()));
        }

        let (attempt, exchanges) = self.first_attempt(&start, scheme, &config);
        let id = uuid::Uuid::new_v4().simple().to_string();
        let log = self.data_dir.join(format!("{id}.jsonl"));
        let created = EventRecord {
            at: Utc::now(),
            event: Event::Created {
                id: id.clone(),
                start,
                scheme,
                config,
                backends: self.backends.ids(),
            },
        };
        let mut slot = Slot {
            session: Session::from_created(&created).expect("created event"),
            log,
        };
        fs::write(&slot.log, format!("{}\n", serde_json::to_string(&created)?))?;
        let mut attempt = attempt;
        attempt.transcript = exchanges;
        slot.record(Event::AttemptAdded { attempt })?;

        let session = slot.session.clone();
        let mut index = self.index.lock().expect("index lock poisoned");
        if index.contains_key(&id) {
            return Err(SessionError::Conflict(format!("session id {id} already exists")));
        }
        index.insert(id, Arc::new(Mutex::new(slot)));
        Ok(session)
    }

    /// Phrase list for the first attempt; a backend failure leaves it empty.
    fn first_attempt(&self, start: &Sentence, scheme: Scheme, config: &SessionConfig) -> (Attempt, Vec<Exchange>) {
        let generated = match scheme {
            Scheme::Lm => endpoint::generate_phrase_list(start, self.backends.phrase_generator.as_ref(), &config.lm())
                .map(|l| (l, Vec::new()))
                .map_err(|e| e.to_string()),
            Scheme::Llm(m) if m.id() == 1 => {
                llm::salient_phrases_llm(start, self.backends.chat.as_ref(), &config.llm())
                    .map(|(l, ex)| (l, vec![ex]))
                    .map_err(|e| e.to_string())
            }
            Scheme::Llm(_) => Ok((PhraseList::default(), Vec::new())),
        };
        match generated {
            Ok((list, exchanges)) => (Attempt::new(list, PhraseListSource::Generated), exchanges),
            Err(e) => {
                log::warn!("phrase generation failed: {e}");
                let mut a = Attempt::new(PhraseList::default(), PhraseListSource::Generated);
                a.warnings.push(format!("phrase generation failed: {e}"));
                (a, Vec::new())
            }
        }
    }

    /// Append a new attempt with a user-supplied phrase list.
    pub fn edit_phrase_list(&self, id: &str, tokens: &[String]) -> Result<(usize, Attempt), SessionError> {
        self.with_slot(id, |slot| {
            let mut attempt = Attempt::new(PhraseList::from_tokens(tokens), PhraseListSource::UserEdited);
            let dups = PhraseList::duplicates_in(tokens);
            if dups > 0 {
                log::warn!("session {id}: dropped {dups} duplicate phrase(s)");
                attempt.warnings.push(format!("dropped {dups} duplicate phrase(s)"));
            }
            if matches!(slot.session.scheme, Scheme::Llm(m) if m.id() != 1) {
                attempt
                    .warnings
                    .push(format!("{} does not use the phrase list", slot.session.scheme));
            }
            slot.record(Event::AttemptAdded { attempt })?;
            let index = slot.session.attempts.len() - 1;
            Ok((index, slot.session.attempts[index].clone()))
        })
    }

    pub fn generate_stop_for(&self, id: &str, index: usize) -> Result<Attempt, SessionError> {
        self.with_slot(id, |slot| {
            let session = &slot.session;
            let attempt = session.attempt(index)?;
            if attempt.stop.is_some() {
                return Err(SessionError::Conflict(format!(
                    "attempt {index} already has a stop; edit the phrase list to start a new attempt"
                )));
            }
            let event = match session.scheme {
                Scheme::Lm => Event::StopGenerated {
                    attempt: index,
                    stop: endpoint::generate_stop(
                        &session.start,
                        &attempt.phrase_list,
                        self.backends.stop_generator.as_ref(),
                        &session.config.lm(),
                    )?,
                    intermediate: None,
                    exchanges: Vec::new(),
                },
                Scheme::Llm(method) => {
                    let given = (method.id() == 1).then(|| Intermediate::PhraseList(attempt.phrase_list.clone()));
                    let out = llm::generate_stop_llm_from(
                        method,
                        &session.start,
                        given,
                        self.backends.chat.as_ref(),
                        &session.config.llm(),
                    )?;
                    Event::StopGenerated {
                        attempt: index,
                        stop: out.stop,
                        intermediate: out.intermediate.filter(|_| method.id() == 3),
                        exchanges: out.exchanges,
                    }
                }
            };
            slot.record(event)?;
            Ok(slot.session.attempts[index].clone())
        })
    }

    /// Stop and current infill state of an LM attempt ready for a step.
    fn lm_state(session: &Session, index: usize) -> Result<InfillState, SessionError> {
        if let Scheme::Llm(_) = session.scheme {
            return Err(SessionError::Unsupported(format!(
                "{} infills in one shot; use infill-complete",
                session.scheme
            )));
        }
        let attempt = session.attempt(index)?;
        let stop = attempt
            .stop
            .clone()
            .ok_or_else(|| SessionError::Conflict(format!("attempt {index} has no stop yet")))?;
        match &attempt.infill {
            Some(state) => Ok(state.clone()),
            None => Ok(InfillState::new(session.start.clone(), stop, session.config.n)?),
        }
    }

    fn lm_step(&self, slot: &mut Slot, index: usize) -> Result<StepResult, SessionError> {
        let mut state = Self::lm_state(&slot.session, index)?;
        if state.is_complete() {
            return Err(SessionError::Conflict(format!("attempt {index} is already complete")));
        }
        let entry = infill::step(
            &mut state,
            self.backends.scorer.as_ref(),
            self.backends.infill_generator.as_ref(),
            &slot.session.config.lm(),
        )?;
        slot.record(Event::InfillStepped {
            attempt: index,
            entry: entry.clone(),
        })?;
        let final_story = if state.is_complete() {
            let story = state.to_story();
            slot.record(Event::Completed {
                attempt: index,
                story: story.clone(),
                exchanges: Vec::new(),
            })?;
            Some(story)
        } else {
            None
        };
        Ok(StepResult {
            entry,
            sentences: state.sentences().to_vec(),
            remaining: state.remaining(),
            final_story,
        })
    }

    pub fn infill_step(&self, id: &str, index: usize) -> Result<StepResult, SessionError> {
        self.with_slot(id, |slot| self.lm_step(slot, index))
    }

    /// Run every remaining step (LM) or the one-shot infill prompt (LLM).
    pub fn infill_complete(&self, id: &str, index: usize) -> Result<Story, SessionError> {
        self.with_slot(id, |slot| {
            let session = &slot.session;
            let attempt = session.attempt(index)?;
            if attempt.final_story.is_some() {
                return Err(SessionError::Conflict(format!("attempt {index} is already complete")));
            }
            match session.scheme {
                Scheme::Lm => {
                    if Self::lm_state(session, index)?.is_complete() {
                        // n = 2: nothing to infill
                        let story = Story::new(vec![session.start.clone(), attempt.stop.clone().expect("checked")])
                            .expect("two sentences");
                        slot.record(Event::Completed {
                            attempt: index,
                            story,
                            exchanges: Vec::new(),
                        })?;
                    }
                    while slot.session.attempts[index].final_story.is_none() {
                        self.lm_step(slot, index)?;
                    }
                }
                Scheme::Llm(_) => {
                    let stop = attempt
                        .stop
                        .clone()
                        .ok_or_else(|| SessionError::Conflict(format!("attempt {index} has no stop yet")))?;
                    let (middles, exchanges) = llm::infill_all_llm(
                        &session.start,
                        &stop,
                        session.config.n - 2,
                        self.backends.chat.as_ref(),
                        &session.config.llm(),
                    )?;
                    let story = Story::new(
                        std::iter::once(session.start.clone())
                            .chain(middles)
                            .chain([stop])
                            .collect(),
                    )
                    .expect("at least two sentences");
                    slot.record(Event::Completed {
                        attempt: index,
                        story,
                        exchanges,
                    })?;
                }
            }
            Ok(slot.session.attempts[index].final_story.clone().expect("completed"))
        })
    }

    pub fn score_attempt(&self, id: &str, index: usize) -> Result<StoryScores, SessionError> {
        self.with_slot(id, |slot| {
            let story = slot
                .session
                .attempt(index)?
                .final_story
                .clone()
                .ok_or_else(|| SessionError::Conflict(format!("attempt {index} is not finished")))?;
            let scores = metrics::score_story(
                &story,
                None,
                self.backends.sentence_embedder.as_ref(),
                self.backends.parser.as_ref(),
                EvalOptions::default(),
            )?;
            slot.record(Event::Scored {
                attempt: index,
                scores: scores.clone(),
            })?;
            Ok(scores)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const START: &str = "A husband and his wife are looking for a new home.";

    fn store(dir: &Path) -> SessionStore {
        SessionStore::open(dir, BackendSuite::stubs("<mask>")).unwrap()
    }

    fn seeded() -> SessionConfig {
        SessionConfig {
            seed: Some(7),
            ..SessionConfig::default()
        }
    }

    #[test]
    fn scheme_strings() {
        assert_eq!("lm".parse::<Scheme>().unwrap(), Scheme::Lm);
        assert_eq!(Scheme::Llm(PromptMethod::new(3).unwrap()).to_string(), "llm-method-3");
        assert!("llm-method-7".parse::<Scheme>().is_err());
        assert_eq!(serde_json::to_string(&Scheme::Lm).unwrap(), "\"lm\"");
    }

    #[test]
    fn create_validates_start() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path());
        let err = s.create_session("One. Two.", Scheme::Lm, seeded()).unwrap_err();
        assert_eq!(err.code(), "invalid_input");
        assert!(s.create_session("  ", Scheme::Lm, seeded()).is_err());
        let a = s.create_session(START, Scheme::Lm, seeded()).unwrap();
        let b = s.create_session(START, Scheme::Lm, seeded()).unwrap();
        assert_ne!(a.id, b.id);
        assert_eq!(a.attempts.len(), 1);
        assert_eq!(a.attempts[0].phrase_list_source, PhraseListSource::Generated);
        assert_eq!(a.attempts[0].phrase_list, b.attempts[0].phrase_list);
        assert!(matches!(s.get("nope"), Err(SessionError::NotFound(_))));
    }

    #[test]
    fn edits_append_attempts() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path());
        let id = s.create_session(START, Scheme::Lm, seeded()).unwrap().id;
        let before = s.get(&id).unwrap().attempts[0].clone();
        let (k, a) = s.edit_phrase_list(&id, &["dog".into(), "park".into()]).unwrap();
        assert_eq!(k, 1);
        assert_eq!(a.phrase_list_source, PhraseListSource::UserEdited);
        let (_, dup) = s.edit_phrase_list(&id, &["dog".into(), "dog".into()]).unwrap();
        assert_eq!(dup.phrase_list.tokens(), ["dog"]);
        assert_eq!(dup.warnings.len(), 1);
        let (_, empty) = s.edit_phrase_list(&id, &[]).unwrap();
        assert!(empty.phrase_list.is_empty());
        let session = s.get(&id).unwrap();
        assert_eq!(session.attempts.len(), 4);
        assert_eq!(session.attempts[0], before);
        s.generate_stop_for(&id, 3).unwrap();
        assert!(matches!(
            s.edit_phrase_list("missing", &[]),
            Err(SessionError::NotFound(_))
        ));
    }

    #[test]
    fn step_bounds_and_completion() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path());
        let id = s.create_session(START, Scheme::Lm, seeded()).unwrap().id;
        assert_eq!(s.infill_step(&id, 0).unwrap_err().code(), "conflict");
        s.generate_stop_for(&id, 0).unwrap();
        assert_eq!(s.generate_stop_for(&id, 0).unwrap_err().code(), "conflict");
        assert_eq!(s.score_attempt(&id, 0).unwrap_err().code(), "conflict");
        for remaining in [2, 1, 0] {
            assert_eq!(s.infill_step(&id, 0).unwrap().remaining, remaining);
        }
        assert_eq!(s.infill_step(&id, 0).unwrap_err().code(), "conflict");
        let a = &s.get(&id).unwrap().attempts[0];
        assert_eq!(a.final_story.as_ref().unwrap().len(), 5);
        assert_eq!(a.infill.as_ref().unwrap().trace().len(), 3);
        let scores = s.score_attempt(&id, 0).unwrap();
        assert!((0.0..=1.0).contains(&scores.relatedness.lexical_overlap));
        assert!(matches!(
            s.infill_step(&id, 9),
            Err(SessionError::AttemptNotFound { .. })
        ));
    }

    #[test]
    fn stepwise_matches_complete() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path());
        let a = s.create_session(START, Scheme::Lm, seeded()).unwrap().id;
        let b = s.create_session(START, Scheme::Lm, seeded()).unwrap().id;
        for id in [&a, &b] {
            s.generate_stop_for(id, 0).unwrap();
        }
        for _ in 0..3 {
            s.infill_step(&a, 0).unwrap();
        }
        s.infill_step(&b, 0).unwrap();
        let story = s.infill_complete(&b, 0).unwrap();
        let (sa, sb) = (s.get(&a).unwrap(), s.get(&b).unwrap());
        assert_eq!(sa.attempts[0].final_story.as_ref(), Some(&story));
        assert_eq!(sa.attempts[0].infill, sb.attempts[0].infill);
        assert_eq!(s.infill_complete(&b, 0).unwrap_err().code(), "conflict");
    }

    #[test]
    fn two_sentence_session_completes_without_steps() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path());
        let cfg = SessionConfig { n: 2, ..seeded() };
        let id = s.create_session(START, Scheme::Lm, cfg).unwrap().id;
        s.generate_stop_for(&id, 0).unwrap();
        assert_eq!(s.infill_complete(&id, 0).unwrap().len(), 2);
    }

    #[test]
    fn reload_rebuilds_identical_json() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path());
        let id = s.create_session(START, Scheme::Lm, seeded()).unwrap().id;
        s.edit_phrase_list(&id, &["home".into()]).unwrap();
        s.generate_stop_for(&id, 1).unwrap();
        s.infill_step(&id, 1).unwrap();
        s.infill_complete(&id, 1).unwrap();
        s.score_attempt(&id, 1).unwrap();
        let live = serde_json::to_string(&s.get(&id).unwrap()).unwrap();
        let replayed = Session::replay(&s.events(&id).unwrap()).unwrap();
        assert_eq!(serde_json::to_string(&replayed).unwrap(), live);
        drop(s);
        let reopened = store(dir.path());
        assert_eq!(serde_json::to_string(&reopened.get(&id).unwrap()).unwrap(), live);
        assert_eq!(reopened.list(), vec![id]);
    }

    #[test]
    fn torn_final_line_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path());
        let id = s.create_session(START, Scheme::Lm, seeded()).unwrap().id;
        let live = s.get(&id).unwrap();
        drop(s);
        let path = dir.path().join(format!("{id}.jsonl"));
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        write!(f, "{{\"at\":\"20").unwrap();
        assert_eq!(store(dir.path()).get(&id).unwrap(), live);
    }

    #[test]
    fn llm_session_flow() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path());
        let method = PromptMethod::new(1).unwrap();
        let session = s.create_session(START, Scheme::Llm(method), seeded()).unwrap();
        assert_eq!(session.attempts[0].transcript.len(), 1);
        let id = session.id;
        s.edit_phrase_list(&id, &["home".into(), "wife".into()]).unwrap();
        let a = s.generate_stop_for(&id, 1).unwrap();
        assert!(a.transcript[0].user.contains("home, wife"));
        assert_eq!(s.infill_step(&id, 1).unwrap_err().code(), "unsupported");
        assert_eq!(s.infill_complete(&id, 1).unwrap().len(), 5);
        let live = serde_json::to_string(&s.get(&id).unwrap()).unwrap();
        drop(s);
        assert_eq!(
            serde_json::to_string(&store(dir.path()).get(&id).unwrap()).unwrap(),
            live
        );
    }
}
