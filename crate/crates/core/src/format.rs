//! Text layouts shared between training-sample construction and inference.
//! The fine-tuned models only work if both sides render prompts identically,
//! so every layout lives here.

use serde::{Deserialize, Serialize};

use crate::corpus::{join_sentences, Sentence};
use crate::preprocessing::PhraseList;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Markers {
    pub mask: String,
    pub sep: String,
    pub plist: String,
    pub stop: String,
}

impl Default for Markers {
    fn default() -> Self {
        Self {
            mask: "<mask>".into(),
            sep: "<sep>".into(),
            plist: "<plist>".into(),
            stop: "<stop>".into(),
        }
    }
}

impl Markers {
    pub fn all(&self) -> [&str; 4] {
        [&self.mask, &self.sep, &self.plist, &self.stop]
    }

    /// First marker literal found inside `text`, if any.
    pub fn find_in<'a>(&'a self, text: &str) -> Option<&'a str> {
        self.all().into_iter().find(|m| !m.is_empty() && text.contains(m))
    }
}

fn join_nonempty(parts: &[&str]) -> String {
    parts
        .iter()
        .filter(|p| !p.is_empty())
        .copied()
        .collect::<Vec<_>>()
        .join(" ")
}

/// `left… MARKER right…`
pub fn masked_text(left: &[Sentence], right: &[Sentence], mask: &str) -> String {
    join_nonempty(&[&join_sentences(left), mask, &join_sentences(right)])
}

/// `left… MASK right… SEP`; the infill generator completes the missing sentence.
pub fn infill_prompt(left: &[Sentence], right: &[Sentence], markers: &Markers) -> String {
    join_nonempty(&[&masked_text(left, right, &markers.mask), &markers.sep])
}

/// `start PLIST`; the phrase generator completes the comma-separated list.
pub fn phrase_prompt(start: &Sentence, markers: &Markers) -> String {
    join_nonempty(&[start.text(), &markers.plist])
}

/// `start PLIST t1, t2, … STOP`; the stop generator completes the stop.
pub fn stop_prompt(start: &Sentence, phrase_list: &PhraseList, markers: &Markers) -> String {
    join_nonempty(&[start.text(), &markers.plist, &phrase_list.to_string(), &markers.stop])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(t: &str) -> Sentence {
        Sentence::new(t).unwrap()
    }

    #[test]
    fn layouts() {
        let m = Markers::default();
        let (a, b, c) = (s("A a."), s("B b."), s("C c."));
        assert_eq!(
            infill_prompt(std::slice::from_ref(&a), std::slice::from_ref(&c), &m),
            "A a. <mask> C c. <sep>"
        );
        assert_eq!(masked_text(&[a.clone(), b], &[], &m.mask), "A a. B b. <mask>");
        assert_eq!(phrase_prompt(&a, &m), "A a. <plist>");
        let pl = PhraseList::from_tokens(["dog", "park"]);
        assert_eq!(stop_prompt(&a, &pl, &m), "A a. <plist> dog, park <stop>");
        assert_eq!(stop_prompt(&a, &PhraseList::default(), &m), "A a. <plist> <stop>");
    }

    #[test]
    fn finds_marker_literals() {
        let m = Markers::default();
        assert_eq!(m.find_in("a <sep> b"), Some("<sep>"));
        assert_eq!(m.find_in("plain"), None);
    }
}
