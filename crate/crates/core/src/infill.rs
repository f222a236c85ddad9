//! LM-scheme story infiller: repeatedly score every gap of the partial story
//! with the position scorer, pick the most likely one and let the infill
//! generator write the missing sentence there, until the story has `n`
//! sentences.

use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, PositionScorer, TextGenerator};
use crate::corpus::{first_sentence, Sentence, Story};
use crate::endpoint::LmConfig;
use crate::format;

#[derive(Debug, thiserror::Error)]
pub enum InfillError {
    #[error("target length must be at least 2, got {0}")]
    BadTarget(usize),
    #[error("story already has its target length of {0} sentences")]
    Complete(usize),
    #[error("gap {gap} is not a candidate gap")]
    NotACandidate { gap: usize },
    #[error("position scorer failed at gap {gap}: {source}")]
    Scorer { gap: usize, source: BackendError },
    #[error("position scorer returned {value} at gap {gap}, expected a probability")]
    BadProbability { gap: usize, value: f64 },
    #[error("infill generation failed: no sentence in output {0:?}")]
    EmptyInfill(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("infilling aborted after {} insertions: {source}", trace.len())]
    Aborted {
        trace: Vec<TraceEntry>,
        source: Box<InfillError>,
    },
}

/// Insertion point: the new sentence goes before `sentences[insert_before]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GapPosition {
    pub insert_before: usize,
}

impl GapPosition {
    pub fn new(insert_before: usize) -> Self {
        Self { insert_before }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapScore {
    pub gap: GapPosition,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub gap: GapPosition,
    pub sentence: Sentence,
    pub scores: Vec<GapScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StateRecord")]
pub struct InfillState {
    sentences: Vec<Sentence>,
    target_length: usize,
    trace: Vec<TraceEntry>,
}

#[derive(Deserialize)]
struct StateRecord {
    sentences: Vec<Sentence>,
    target_length: usize,
    #[serde(default)]
    trace: Vec<TraceEntry>,
}

impl TryFrom<StateRecord> for InfillState {
    type Error = String;

    fn try_from(r: StateRecord) -> Result<Self, String> {
        if r.target_length < 2 || r.sentences.len() < 2 || r.sentences.len() > r.target_length {
            return Err(format!(
                "{} sentences do not fit target length {}",
                r.sentences.len(),
                r.target_length
            ));
        }
        if r.trace.len() != r.sentences.len() - 2 {
            return Err("trace length must equal the number of infilled sentences".into());
        }
        Ok(Self {
            sentences: r.sentences,
            target_length: r.target_length,
            trace: r.trace,
        })
    }
}

impl InfillState {
    pub fn new(start: Sentence, stop: Sentence, target_length: usize) -> Result<Self, InfillError> {
        if target_length < 2 {
            return Err(InfillError::BadTarget(target_length));
        }
        Ok(Self {
            sentences: vec![start, stop],
            target_length,
            trace: Vec::new(),
        })
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn target_length(&self) -> usize {
        self.target_length
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    pub fn is_complete(&self) -> bool {
        self.sentences.len() >= self.target_length
    }

    pub fn remaining(&self) -> usize {
        self.target_length - self.sentences.len()
    }

    /// Story text with the mask marker at `gap`, in the position-sample layout.
    pub fn masked(&self, gap: GapPosition, mask: &str) -> String {
        let (left, right) = self.sentences.split_at(gap.insert_before);
        format::masked_text(left, right, mask)
    }

    /// Re-apply a recorded step.
    pub fn apply(&mut self, entry: TraceEntry) -> Result<(), InfillError> {
        let gap = entry.gap.insert_before;
        if self.is_complete() || gap == 0 || gap >= self.sentences.len() {
            return Err(InfillError::NotACandidate { gap });
        }
        self.sentences.insert(gap, entry.sentence.clone());
        self.trace.push(entry);
        Ok(())
    }

    pub fn to_story(&self) -> Story {
        Story::new(self.sentences.clone()).expect("state always holds both endpoints")
    }

    pub fn into_trace(self) -> Vec<TraceEntry> {
        self.trace
    }
}

pub fn candidate_gaps(state: &InfillState) -> Result<Vec<GapPosition>, InfillError> {
    if state.is_complete() {
        return Err(InfillError::Complete(state.target_length));
    }
    Ok((1..state.sentences.len()).map(GapPosition::new).collect())
}

/// Scores for every candidate gap, in gap order.
pub fn score_gaps(
    state: &InfillState,
    scorer: &dyn PositionScorer,
    config: &LmConfig,
) -> Result<Vec<GapScore>, InfillError> {
    candidate_gaps(state)?
        .into_iter()
        .map(|gap| {
            let p = scorer
                .score_position(&state.masked(gap, &config.markers.mask))
                .map_err(|source| InfillError::Scorer {
                    gap: gap.insert_before,
                    source,
                })?;
            if !(0.0..=1.0).contains(&p) {
                return Err(InfillError::BadProbability {
                    gap: gap.insert_before,
                    value: p,
                });
            }
            Ok(GapScore { gap, probability: p })
        })
        .collect()
}

/// First gap with the highest score.
fn argmax(scores: &[GapScore]) -> GapPosition {
    let mut best = &scores[0];
    for s in &scores[1..] {
        if s.probability > best.probability {
            best = s;
        }
    }
    best.gap
}

pub fn select_gap(
    state: &InfillState,
    scorer: &dyn PositionScorer,
    config: &LmConfig,
) -> Result<GapPosition, InfillError> {
    Ok(argmax(&score_gaps(state, scorer, config)?))
}

pub fn generate_infill(
    state: &InfillState,
    gap: GapPosition,
    generator: &dyn TextGenerator,
    config: &LmConfig,
) -> Result<Sentence, InfillError> {
    if state.is_complete() || gap.insert_before == 0 || gap.insert_before >= state.sentences.len() {
        return Err(InfillError::NotACandidate { gap: gap.insert_before });
    }
    let (left, right) = state.sentences.split_at(gap.insert_before);
    let prompt = format::infill_prompt(left, right, &config.markers);
    let raw = generator.generate(&config.request(prompt))?;
    first_sentence(&raw).ok_or(InfillError::EmptyInfill(raw))
}

/// One iteration: score all gaps, pick one, fill it.
pub fn step(
    state: &mut InfillState,
    scorer: &dyn PositionScorer,
    generator: &dyn TextGenerator,
    config: &LmConfig,
) -> Result<TraceEntry, InfillError> {
    let scores = score_gaps(state, scorer, config)?;
    let gap = argmax(&scores);
    let sentence = generate_infill(state, gap, generator, config)?;
    let entry = TraceEntry { gap, sentence, scores };
    state.apply(entry.clone())?;
    Ok(entry)
}

/// Run steps until `state` is complete; failures carry the trace so far.
pub fn complete(
    state: &mut InfillState,
    scorer: &dyn PositionScorer,
    generator: &dyn TextGenerator,
    config: &LmConfig,
) -> Result<(), InfillError> {
    while !state.is_complete() {
        if let Err(e) = step(state, scorer, generator, config) {
            return Err(InfillError::Aborted {
                trace: state.trace.clone(),
                source: Box::new(e),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfillOutcome {
    pub story: Story,
    pub trace: Vec<TraceEntry>,
}

pub fn infill_story(
    start: Sentence,
    stop: Sentence,
    n: usize,
    scorer: &dyn PositionScorer,
    generator: &dyn TextGenerator,
    config: &LmConfig,
) -> Result<InfillOutcome, InfillError> {
    let mut state = InfillState::new(start, stop, n)?;
    complete(&mut state, scorer, generator, config)?;
    Ok(InfillOutcome {
        story: state.to_story(),
        trace: state.into_trace(),
    })
}
