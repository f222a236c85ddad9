//! LLM-scheme pipeline: prompt a chat model for a stop with one of six
//! endpoint methods, ask for all middle sentences in one shot, clean the
//! chatter out of every reply and assemble the story.

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::backends::stubs::Exchange;
use crate::backends::{BackendError, ChatGenerator, GenerationParams};
use crate::corpus::{Sentence, Story};
use crate::preprocessing::PhraseList;
use crate::text;

pub const SYSTEM_PROMPT_7B: &str = "You are a talented writer. Generate sentences for a well-written narrative. If you have ethical concerns, resolve them in the story.";
pub const SYSTEM_PROMPT_70B: &str =
    "You are a talented writer. For each prompt, only generate the sentences for a well-written narrative.";

const SALIENT_PHRASES: &str = "Here is the first sentence of a narrative: {}. What are the most salient words or phrases? Give me a list, where each item is separated by a comma.";
const STOP_FROM_PHRASES: &str = "Here is the first sentence and its salient words/phrases: {}. Using this first sentence and the list of salient words/phrases, give one related closing sentence";
const STOP_RELATED: &str = "Here is the first sentence of a narrative: {}. Please give me a closing sentence which is related to the first sentence.";
const SALIENT_QUESTION: &str =
    "Here is the first sentence of a narrative: {}. What is the most salient question to propel the narrative forward?";
const STOP_ANSWERING: &str = "Here is the first sentence and relevant question for a narrative: {}. Give me ONE closing sentence that answers the most salient question without introducing new questions.";
const STOP_MATCHING: &str = "Here is the first sentence of a narrative: {}. Please give me a closing sentence that has the same character and/or same related action and/or location.";
const STOP_ENTAILING: &str =
    "Here is the first sentence of a narrative: {}. Please give me a closing sentence that entails the first sentence.";
const STOP_ENTAILED: &str = "Here is the first sentence of a narrative: {}. Please give me a closing sentence that is the entailment of the first sentence.";
const INFILL: &str = "Here is the first sentence of a narrative: {} and here is the last sentence: {}. What happens between these sentences? Please give me {} consecutive intermediate sentences.";
const LONG: &str = "Here is the first sentence of a narrative: {} and here is the last sentence: {}. What happens between these sentences? Please give the complete story.";
const BASELINE: &str = "Complete the story in {} sentences: {}.";
const ABLATION: &str = "Here is the first sentence of a narrative: {}. Please give me the next {} sentences. Make sure that the last sentence is related to the first sentence.";

/// Version tag of the [`clean_response`] rule list, recorded with every run.
pub const CLEANING_RULES_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("prompt method must be 1..=6, got {0}")]
    BadMethod(u8),
    #[error("method {0} needs its stage-one output before the stop prompt")]
    MissingIntermediate(PromptMethod),
    #[error("story length must be at least 2, got {0}")]
    BadLength(usize),
    #[error("no closing sentence in the reply")]
    NoStop { transcript: Vec<Exchange> },
    #[error("incomplete infill: wanted {expected} sentences, got {got}")]
    IncompleteInfill {
        expected: usize,
        got: usize,
        transcript: Vec<Exchange>,
    },
    #[error("chat backend failed: {source}")]
    Backend {
        source: BackendError,
        transcript: Vec<Exchange>,
    },
}

impl LlmError {
    /// Exchanges made before the failure.
    pub fn transcript(&self) -> &[Exchange] {
        match self {
            Self::NoStop { transcript }
            | Self::IncompleteInfill { transcript, .. }
            | Self::Backend { transcript, .. } => transcript,
            _ => &[],
        }
    }
}

/// One of the six endpoint prompting methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct PromptMethod(u8);

impl PromptMethod {
    pub const ALL: [PromptMethod; 6] = [Self(1), Self(2), Self(3), Self(4), Self(5), Self(6)];

    pub fn new(id: u8) -> Result<Self, LlmError> {
        if (1..=6).contains(&id) {
            Ok(Self(id))
        } else {
            Err(LlmError::BadMethod(id))
        }
    }

    pub fn id(self) -> u8 {
        self.0
    }

    /// Methods 1 and 3 ask a stage-one question before the stop prompt.
    pub fn is_two_stage(self) -> bool {
        matches!(self.0, 1 | 3)
    }
}

impl TryFrom<u8> for PromptMethod {
    type Error = LlmError;

    fn try_from(id: u8) -> Result<Self, LlmError> {
        Self::new(id)
    }
}

impl From<PromptMethod> for u8 {
    fn from(m: PromptMethod) -> u8 {
        m.0
    }
}

impl fmt::Display for PromptMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Stage-one output of a two-stage method.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intermediate {
    PhraseList(PhraseList),
    /// Stored verbatim; never part of the story.
    Question(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    pub system_prompt: String,
    pub params: GenerationParams,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            system_prompt: SYSTEM_PROMPT_70B.into(),
            params: GenerationParams {
                max_new_tokens: 512,
                ..GenerationParams::default()
            },
        }
    }
}

/// Which prompt family produced a story.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LlmVariant {
    /// Endpoint method, then the fixed-count infill prompt.
    Bookend {
        method: PromptMethod,
    },
    /// Endpoint method, then the open-ended complete-story prompt.
    Long {
        method: PromptMethod,
    },
    Baseline,
    Ablation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTranscript {
    pub variant: LlmVariant,
    pub exchanges: Vec<Exchange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intermediate: Option<Intermediate>,
    pub cleaned_story: Story,
}

/// `ONE`..`TEN`, digits above.
pub fn count_word(n: usize) -> String {
    const WORDS: [&str; 11] = [
        "ZERO", "ONE", "TWO", "THREE", "FOUR", "FIVE", "SIX", "SEVEN", "EIGHT", "NINE", "TEN",
    ];
    WORDS.get(n).map_or_else(|| n.to_string(), |w| w.to_string())
}

fn ends_with_terminator(value: &str) -> bool {
    value
        .trim_end_matches(['"', '\'', '\u{201d}', '\u{2019}', ')'])
        .ends_with(['.', '!', '?'])
}

/// Substitute `{}` slots in order. A `.` right after a slot is dropped when
/// the value already ends a sentence.
fn fill(template: &str, values: &[&str]) -> String {
    let mut pieces = template.split("{}");
    let mut out = pieces.next().unwrap_or_default().to_string();
    for (piece, value) in pieces.zip(values) {
        out.push_str(value);
        match piece.strip_prefix('.') {
            Some(rest) if ends_with_terminator(value) => out.push_str(rest),
            _ => out.push_str(piece),
        }
    }
    out
}

fn stage_one_prompt(method: PromptMethod, start: &Sentence) -> Option<String> {
    match method.0 {
        1 => Some(fill(SALIENT_PHRASES, &[start.text()])),
        3 => Some(fill(SALIENT_QUESTION, &[start.text()])),
        _ => None,
    }
}

fn stop_prompt(
    method: PromptMethod,
    start: &Sentence,
    intermediate: Option<&Intermediate>,
) -> Result<String, LlmError> {
    let s = start.text();
    Ok(match (method.0, intermediate) {
        (1, Some(Intermediate::PhraseList(l))) => fill(STOP_FROM_PHRASES, &[&format!("{s} {l}")]),
        (3, Some(Intermediate::Question(q))) => {
            fill(STOP_ANSWERING, &[&format!("{s} {}", text::normalize_whitespace(q))])
        }
        (1 | 3, _) => return Err(LlmError::MissingIntermediate(method)),
        (2, _) => fill(STOP_RELATED, &[s]),
        (4, _) => fill(STOP_MATCHING, &[s]),
        (5, _) => fill(STOP_ENTAILING, &[s]),
        (6, _) => fill(STOP_ENTAILED, &[s]),
        _ => unreachable!("method ids are validated"),
    })
}

/// User prompts for a method, in invocation order. Two-stage methods need
/// their stage-one output.
pub fn build_endpoint_prompts(
    method: PromptMethod,
    start: &Sentence,
    intermediate: Option<&Intermediate>,
) -> Result<Vec<String>, LlmError> {
    let last = stop_prompt(method, start, intermediate)?;
    Ok(stage_one_prompt(method, start).into_iter().chain([last]).collect())
}

pub fn infill_prompt(start: &Sentence, stop: &Sentence, middle_count: usize) -> String {
    fill(INFILL, &[start.text(), stop.text(), &count_word(middle_count)])
}

pub fn long_prompt(start: &Sentence, stop: &Sentence) -> String {
    fill(LONG, &[start.text(), stop.text()])
}

pub fn baseline_prompt(start: &Sentence, continuation: usize) -> String {
    fill(BASELINE, &[&count_word(continuation), start.text()])
}

pub fn ablation_prompt(start: &Sentence, continuation: usize) -> String {
    fill(ABLATION, &[start.text(), &count_word(continuation)])
}

static ROLE_LABEL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\s*\[?(assistant|user|system|ai|bot|narrator|llama|model)\]?\s*:\s*").unwrap());
static BULLET: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(?:[-*•>]+|\(?\d{1,3}[.):]|\(?[a-zA-Z][)])\s+").unwrap());
static FIELD_LABEL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)^\s*(?:(?:closing|opening|first|last|final|intermediate|middle|next)\s+)?(?:sentence|sentences|stop|start|story|answer)\s*\d*\s*:\s+",
    )
    .unwrap()
});
static NUMBER_ONLY: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\(?\d{1,3}[.):]*$").unwrap());

/// Strip role labels, bullets, numbering, field labels and bold markers
/// from the front of a fragment until nothing changes.
fn strip_noise(fragment: &str) -> String {
    let mut cur = fragment.replace("**", "").trim().to_string();
    loop {
        let next = BULLET.replace(&cur, "");
        let next = ROLE_LABEL.replace(&next, "");
        let next = FIELD_LABEL.replace(&next, "").trim().to_string();
        if next == cur {
            return cur;
        }
        cur = next;
    }
}

fn is_double_quote(c: char) -> bool {
    matches!(c, '"' | '\u{201c}' | '\u{201d}')
}

/// Drop quotes wrapping a sentence. An unmatched edge quote goes too unless
/// the sentence quotes something inside.
fn strip_quotes(sentence: &str) -> String {
    let mut cur = sentence.trim().to_string();
    loop {
        let lead = cur.starts_with(is_double_quote);
        let trail = cur.ends_with(is_double_quote);
        let inner = cur
            .trim_start_matches(is_double_quote)
            .trim_end_matches(is_double_quote);
        let interior_quotes = inner.contains(is_double_quote);
        let next = if lead && trail || (lead || trail) && !interior_quotes {
            inner.trim().to_string()
        } else {
            cur.clone()
        };
        let next = if next.len() >= 2 && next.starts_with('\'') && next.ends_with('\'') {
            next[1..next.len() - 1].trim().to_string()
        } else {
            next
        };
        if next == cur {
            return cur;
        }
        cur = next;
    }
}

fn clean_once(raw: &str) -> Vec<String> {
    let kept: Vec<String> = raw
        .lines()
        .map(strip_noise)
        .filter(|l| !l.is_empty() && !l.ends_with(':'))
        .collect();
    text::split_sentences(&kept.join(" "))
        .iter()
        .map(|s| strip_quotes(&strip_noise(s)))
        .filter(|s| !s.is_empty() && !s.ends_with(':') && !NUMBER_ONLY.is_match(s) && !text::tokenize(s).is_empty())
        .collect()
}

/// Reduce a chat reply to its sentences. Rule order: per line, strip role
/// labels, bullets and numbering, then drop lead-in lines ending in `:`;
/// split the rest into sentences and strip wrapping quotes. Repeated until
/// stable, so cleaning cleaned text changes nothing.
pub fn clean_response(raw: &str) -> Vec<Sentence> {
    let mut cur = clean_once(raw);
    for _ in 0..8 {
        let next = clean_once(&cur.join(" "));
        if next == cur {
            break;
        }
        cur = next;
    }
    cur.into_iter().filter_map(|s| Sentence::new(s).ok()).collect()
}

/// Items of a comma-separated phrase reply, ignoring lead-in lines.
pub fn parse_phrase_reply(raw: &str) -> PhraseList {
    let lines: Vec<String> = raw
        .lines()
        .map(strip_noise)
        .filter(|l| !l.is_empty() && !l.ends_with(':'))
        .collect();
    PhraseList::parse(&lines.join("\n"))
}

struct Conversation<'a> {
    chat: &'a dyn ChatGenerator,
    config: &'a LlmConfig,
    exchanges: Vec<Exchange>,
}

impl<'a> Conversation<'a> {
    fn new(chat: &'a dyn ChatGenerator, config: &'a LlmConfig) -> Self {
        Self {
            chat,
            config,
            exchanges: Vec::new(),
        }
    }

    fn ask(&mut self, user: String) -> Result<String, LlmError> {
        match self.chat.chat(&self.config.system_prompt, &user, &self.config.params) {
            Ok(response) => {
                self.exchanges.push(Exchange {
                    system: self.config.system_prompt.clone(),
                    user,
                    response: response.clone(),
                });
                Ok(response)
            }
            Err(source) => Err(LlmError::Backend {
                source,
                transcript: self.exchanges.clone(),
            }),
        }
    }

    fn stop(
        &mut self,
        method: PromptMethod,
        start: &Sentence,
        given: Option<Intermediate>,
    ) -> Result<(Sentence, Option<Intermediate>), LlmError> {
        let intermediate = match (given, stage_one_prompt(method, start)) {
            (_, None) => None,
            (Some(given), Some(_)) => Some(given),
            (None, Some(prompt)) => {
                let reply = self.ask(prompt)?;
                Some(if method.0 == 1 {
                    let list = parse_phrase_reply(&reply);
                    if list.is_empty() {
                        log::warn!("method 1 stage-one reply has no phrases");
                    }
                    Intermediate::PhraseList(list)
                } else {
                    Intermediate::Question(reply.trim().to_string())
                })
            }
        };
        let reply = self.ask(stop_prompt(method, start, intermediate.as_ref())?)?;
        match clean_response(&reply).into_iter().next() {
            Some(stop) => Ok((stop, intermediate)),
            None => Err(LlmError::NoStop {
                transcript: self.exchanges.clone(),
            }),
        }
    }

    /// Cleaned sentences of `reply` without echoed endpoints, truncated to
    /// `count`; fewer is an error.
    fn exactly(
        &self,
        reply: &str,
        count: usize,
        start: &Sentence,
        stop: Option<&Sentence>,
    ) -> Result<Vec<Sentence>, LlmError> {
        let mut sentences = drop_echoes(clean_response(reply), start, stop);
        if sentences.len() < count {
            return Err(LlmError::IncompleteInfill {
                expected: count,
                got: sentences.len(),
                transcript: self.exchanges.clone(),
            });
        }
        sentences.truncate(count);
        Ok(sentences)
    }

    fn finish(self, variant: LlmVariant, intermediate: Option<Intermediate>, story: Story) -> PromptTranscript {
        PromptTranscript {
            variant,
            exchanges: self.exchanges,
            intermediate,
            cleaned_story: story,
        }
    }
}

fn same_tokens(a: &Sentence, b: &Sentence) -> bool {
    a.tokens() == b.tokens()
}

/// Remove a repeated start at the front and a repeated stop at the back.
fn drop_echoes(mut sentences: Vec<Sentence>, start: &Sentence, stop: Option<&Sentence>) -> Vec<Sentence> {
    if sentences.first().is_some_and(|s| same_tokens(s, start)) {
        sentences.remove(0);
    }
    if let Some(stop) = stop {
        if sentences.last().is_some_and(|s| same_tokens(s, stop)) {
            sentences.pop();
        }
    }
    sentences
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopOutcome {
    pub stop: Sentence,
    pub intermediate: Option<Intermediate>,
    pub exchanges: Vec<Exchange>,
}

pub fn generate_stop_llm(
    method: PromptMethod,
    start: &Sentence,
    chat: &dyn ChatGenerator,
    config: &LlmConfig,
) -> Result<StopOutcome, LlmError> {
    generate_stop_llm_from(method, start, None, chat, config)
}

/// As [`generate_stop_llm`], but a two-stage method given its stage-one
/// output skips straight to the stop prompt.
pub fn generate_stop_llm_from(
    method: PromptMethod,
    start: &Sentence,
    intermediate: Option<Intermediate>,
    chat: &dyn ChatGenerator,
    config: &LlmConfig,
) -> Result<StopOutcome, LlmError> {
    let mut conv = Conversation::new(chat, config);
    let (stop, intermediate) = conv.stop(method, start, intermediate)?;
    Ok(StopOutcome {
        stop,
        intermediate,
        exchanges: conv.exchanges,
    })
}

/// Stage one of method 1 alone: the salient phrases of `start`.
pub fn salient_phrases_llm(
    start: &Sentence,
    chat: &dyn ChatGenerator,
    config: &LlmConfig,
) -> Result<(PhraseList, Exchange), LlmError> {
    let mut conv = Conversation::new(chat, config);
    let reply = conv.ask(fill(SALIENT_PHRASES, &[start.text()]))?;
    let exchange = conv.exchanges.pop().expect("ask records the exchange");
    Ok((parse_phrase_reply(&reply), exchange))
}

/// All middle sentences from one prompt. No call is made for zero middles.
pub fn infill_all_llm(
    start: &Sentence,
    stop: &Sentence,
    middle_count: usize,
    chat: &dyn ChatGenerator,
    config: &LlmConfig,
) -> Result<(Vec<Sentence>, Vec<Exchange>), LlmError> {
    let mut conv = Conversation::new(chat, config);
    if middle_count == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let reply = conv.ask(infill_prompt(start, stop, middle_count))?;
    let middles = conv.exactly(&reply, middle_count, start, Some(stop))?;
    Ok((middles, conv.exchanges))
}

fn assemble(start: &Sentence, middles: Vec<Sentence>, stop: Option<Sentence>) -> Story {
    let sentences: Vec<Sentence> = std::iter::once(start.clone()).chain(middles).chain(stop).collect();
    Story::new(sentences).expect("assembled stories have at least two sentences")
}

pub fn generate_story_llm(
    method: PromptMethod,
    start: &Sentence,
    n: usize,
    chat: &dyn ChatGenerator,
    config: &LlmConfig,
) -> Result<(Story, PromptTranscript), LlmError> {
    if n < 2 {
        return Err(LlmError::BadLength(n));
    }
    let mut conv = Conversation::new(chat, config);
    let (stop, intermediate) = conv.stop(method, start, None)?;
    let middles = if n == 2 {
        Vec::new()
    } else {
        let reply = conv.ask(infill_prompt(start, &stop, n - 2))?;
        conv.exactly(&reply, n - 2, start, Some(&stop))?
    };
    let story = assemble(start, middles, Some(stop));
    Ok((
        story.clone(),
        conv.finish(LlmVariant::Bookend { method }, intermediate, story),
    ))
}

/// Endpoint method, then "give the complete story": any number of middles.
pub fn generate_long_story_llm(
    method: PromptMethod,
    start: &Sentence,
    chat: &dyn ChatGenerator,
    config: &LlmConfig,
) -> Result<(Story, PromptTranscript), LlmError> {
    let mut conv = Conversation::new(chat, config);
    let (stop, intermediate) = conv.stop(method, start, None)?;
    let reply = conv.ask(long_prompt(start, &stop))?;
    let middles = drop_echoes(clean_response(&reply), start, Some(&stop));
    let story = assemble(start, middles, Some(stop));
    Ok((
        story.clone(),
        conv.finish(LlmVariant::Long { method }, intermediate, story),
    ))
}

fn continue_story(
    variant: LlmVariant,
    prompt: String,
    start: &Sentence,
    n: usize,
    chat: &dyn ChatGenerator,
    config: &LlmConfig,
) -> Result<(Story, PromptTranscript), LlmError> {
    let mut conv = Conversation::new(chat, config);
    let reply = conv.ask(prompt)?;
    let rest = conv.exactly(&reply, n - 1, start, None)?;
    let story = assemble(start, rest, None);
    Ok((story.clone(), conv.finish(variant, None, story)))
}

/// Plain left-to-right completion with no relatedness instruction.
pub fn baseline_story_llm(
    start: &Sentence,
    n: usize,
    chat: &dyn ChatGenerator,
    config: &LlmConfig,
) -> Result<(Story, PromptTranscript), LlmError> {
    if n < 2 {
        return Err(LlmError::BadLength(n));
    }
    continue_story(
        LlmVariant::Baseline,
        baseline_prompt(start, n - 1),
        start,
        n,
        chat,
        config,
    )
}

/// Single prompt asking for a continuation whose last sentence relates to
/// the first.
pub fn ablation_story_llm(
    start: &Sentence,
    n: usize,
    chat: &dyn ChatGenerator,
    config: &LlmConfig,
) -> Result<(Story, PromptTranscript), LlmError> {
    if n < 2 {
        return Err(LlmError::BadLength(n));
    }
    continue_story(
        LlmVariant::Ablation,
        ablation_prompt(start, n - 1),
        start,
        n,
        chat,
        config,
    )
}

/// Re-run a variant against its stored transcript.
pub fn replay(transcript: &PromptTranscript, start: &Sentence, config: &LlmConfig) -> Result<Story, LlmError> {
    let chat = crate::backends::stubs::ScriptedChat::from_transcript(&transcript.exchanges);
    let n = transcript.cleaned_story.len();
    let (story, _) = match transcript.variant {
        LlmVariant::Bookend { method } => generate_story_llm(method, start, n, &chat, config)?,
        LlmVariant::Long { method } => generate_long_story_llm(method, start, &chat, config)?,
        LlmVariant::Baseline => baseline_story_llm(start, n, &chat, config)?,
        LlmVariant::Ablation => ablation_story_llm(start, n, &chat, config)?,
    };
    Ok(story)
}
