//! Text preprocessing: tokenization, persona rare-word extraction,
//! sketch construction and dataset ingestion.

mod dataset;
pub mod synthetic;
mod tokenize;
mod vocab;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

pub use dataset::{load_dataset, parse_jsonl, parse_parlai, write_jsonl, DatasetFormat, JsonlRecord};
pub use tokenize::{detokenize, is_punctuation, tokenize, PUNCTUATION};
pub use vocab::{
    Vocabulary, EOS, EOS_TOKEN, PAD, PAD_TOKEN, PERSONA_SLOT, PERSONA_TOKEN, RESERVED, UNK,
    UNK_TOKEN,
};

use crate::error::Result;

const DEFAULT_STOPWORDS: &str = include_str!("../../resources/stopwords.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopWordSet {
    words: HashSet<String>,
}

impl StopWordSet {
    /// The shipped persona-preprocessing list.
    pub fn persona_default() -> Self {
        Self::parse(DEFAULT_STOPWORDS)
    }

    /// One word per line; blank lines ignored, words lowercased.
    pub fn parse(text: &str) -> Self {
        let words = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_lowercase)
            .collect();
        StopWordSet { words }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

impl Default for StopWordSet {
    fn default() -> Self {
        Self::persona_default()
    }
}

/// Tokens that survive stop-word and punctuation removal, deduplicated
/// in order of first appearance.
pub fn extract_rare_words<S: AsRef<str>>(tokens: &[S], stop: &StopWordSet) -> Vec<String> {
    let mut seen = HashSet::new();
    tokens
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| !stop.contains(t) && !is_punctuation(t) && !RESERVED.contains(t))
        .filter(|t| seen.insert(*t))
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaTrait {
    pub text: String,
    pub tokens: Vec<String>,
    pub rare_words: Vec<String>,
}

impl PersonaTrait {
    pub fn new(text: &str, stop: &StopWordSet) -> Self {
        let tokens = tokenize(text);
        let rare_words = extract_rare_words(&tokens, stop);
        PersonaTrait {
            text: text.to_string(),
            tokens,
            rare_words,
        }
    }
}

/// Location of the persona word a slot replaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSource {
    pub persona: usize,
    pub rare_word: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Sketch {
    pub tokens: Vec<String>,
    pub slot_positions: Vec<usize>,
    pub slot_sources: Vec<SlotSource>,
}

/// Replaces every response token that equals some persona rare word with
/// `@persona`. The source is the lowest persona index holding the word,
/// then its lowest rare-word index.
pub fn sketchify<S: AsRef<str>>(response: &[S], personas: &[PersonaTrait]) -> Sketch {
    let mut sketch = Sketch::default();
    for (pos, token) in response.iter().enumerate() {
        let token = token.as_ref();
        let source = personas.iter().enumerate().find_map(|(p, tr)| {
            tr.rare_words
                .iter()
                .position(|w| w == token)
                .map(|r| SlotSource { persona: p, rare_word: r })
        });
        match source {
            Some(src) => {
                sketch.tokens.push(PERSONA_TOKEN.to_string());
                sketch.slot_positions.push(pos);
                sketch.slot_sources.push(src);
            }
            None => sketch.tokens.push(token.to_string()),
        }
    }
    sketch
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueExample {
    pub personas: Vec<PersonaTrait>,
    /// Preceding turns, oldest first, alternating speakers and ending with
    /// the partner's last utterance.
    pub turns: Vec<Vec<String>>,
    pub response: Vec<String>,
    pub sketch: Sketch,
}

impl DialogueExample {
    pub fn new(
        personas: &[impl AsRef<str>],
        turns: &[impl AsRef<str>],
        response: &str,
        stop: &StopWordSet,
    ) -> Self {
        let personas: Vec<PersonaTrait> = personas
            .iter()
            .map(|p| PersonaTrait::new(p.as_ref(), stop))
            .collect();
        let turns = turns.iter().map(|t| tokenize(t.as_ref())).collect();
        let response = tokenize(response);
        let sketch = sketchify(&response, &personas);
        DialogueExample {
            personas,
            turns,
            response,
            sketch,
        }
    }

    /// Encoder input: the last `max_turns` turns joined with EOS separators.
    /// An empty history yields a lone EOS so the encoder always has input.
    pub fn history_tokens(&self, max_turns: Option<usize>) -> Vec<String> {
        history_tokens(&self.turns, max_turns)
    }

    /// Puts the recorded persona words back into the slots.
    pub fn unsketch(&self) -> Vec<String> {
        let mut out = self.sketch.tokens.clone();
        for (&pos, src) in self.sketch.slot_positions.iter().zip(&self.sketch.slot_sources) {
            out[pos] = self.personas[src.persona].rare_words[src.rare_word].clone();
        }
        out
    }

    pub fn trait_tokens(&self) -> Vec<Vec<String>> {
        self.personas.iter().map(|p| p.tokens.clone()).collect()
    }
}

pub fn history_tokens(turns: &[Vec<String>], max_turns: Option<usize>) -> Vec<String> {
    let start = max_turns.map_or(0, |m| turns.len().saturating_sub(m));
    let mut out = Vec::new();
    for (i, turn) in turns[start..].iter().enumerate() {
        if i > 0 {
            out.push(EOS_TOKEN.to_string());
        }
        out.extend(turn.iter().cloned());
    }
    if out.is_empty() {
        out.push(EOS_TOKEN.to_string());
    }
    out
}

/// Vocabulary over every persona, history, response and sketch token.
pub fn build_vocabulary(examples: &[DialogueExample], min_count: usize) -> Result<Vocabulary> {
    let tokens = examples.iter().flat_map(|ex| {
        ex.personas
            .iter()
            .flat_map(|p| p.tokens.iter())
            .chain(ex.turns.iter().flatten())
            .chain(ex.response.iter())
            .chain(ex.sketch.tokens.iter())
            .map(String::as_str)
    });
    Vocabulary::build(tokens, min_count)
}

/// Slot tokens and total tokens over all responses.
pub fn slot_statistics(examples: &[DialogueExample]) -> (usize, usize) {
    examples.iter().fold((0, 0), |(s, t), ex| {
        (s + ex.sketch.slot_positions.len(), t + ex.response.len())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn stopword_list_is_deduplicated() {
        let stop = StopWordSet::persona_default();
        assert_eq!(stop.len(), 148);
        assert_eq!(DEFAULT_STOPWORDS.lines().count(), 148);
        for w in ["i'm", "don't", "favorite", "love", "now", "?"] {
            assert!(stop.contains(w), "{w}");
        }
        assert!(!stop.contains("papaya"));
    }

    #[test]
    fn rare_words_of_table_traits() {
        let stop = StopWordSet::default();
        assert_eq!(
            extract_rare_words(&toks(&["i", "am", "a", "bee", "farmer"]), &stop),
            ["bee", "farmer"]
        );
        assert!(extract_rare_words(&toks(&["i", "like", "to", "go"]), &stop).is_empty());
        assert_eq!(
            extract_rare_words(&toks(&["my", "favorite", "food", "is", "papaya"]), &stop),
            ["food", "papaya"]
        );
        assert_eq!(PersonaTrait::new("I'm a bee farmer", &stop).rare_words, ["bee", "farmer"]);
    }

    #[test]
    fn rare_words_drop_punctuation_and_duplicates() {
        let stop = StopWordSet::parse("");
        assert_eq!(
            extract_rare_words(&toks(&["bee", ";", "bee", "@persona", "hive"]), &stop),
            ["bee", "hive"]
        );
    }

    #[test]
    fn sketch_replaces_rare_words() {
        let stop = StopWordSet::default();
        let personas = [PersonaTrait::new("i am a bee farmer", &stop)];
        let s = sketchify(&toks(&["i", "am", "a", "bee", "farmer", "."]), &personas);
        assert_eq!(s.tokens, ["i", "am", "a", "@persona", "@persona", "."]);
        assert_eq!(s.slot_positions, [3, 4]);
        assert_eq!(
            s.slot_sources,
            [SlotSource { persona: 0, rare_word: 0 }, SlotSource { persona: 0, rare_word: 1 }]
        );
    }

    #[test]
    fn sketch_without_rare_words_is_identity() {
        let stop = StopWordSet::default();
        let personas = [PersonaTrait::new("i am a bee farmer", &stop)];
        let resp = toks(&["how", "are", "you", "?"]);
        let s = sketchify(&resp, &personas);
        assert_eq!(s.tokens, resp);
        assert!(s.slot_positions.is_empty());
    }

    #[test]
    fn sketch_every_occurrence_and_lowest_persona() {
        let stop = StopWordSet::default();
        let personas = [
            PersonaTrait::new("i grow kiwi", &stop),
            PersonaTrait::new("my favorite food is papaya", &stop),
            PersonaTrait::new("papaya trees", &stop),
        ];
        let s = sketchify(&toks(&["papaya", "is", "papaya"]), &personas);
        assert_eq!(s.tokens, ["@persona", "is", "@persona"]);
        assert_eq!(s.slot_sources[0], SlotSource { persona: 1, rare_word: 1 });
        assert_eq!(s.slot_sources[1], SlotSource { persona: 1, rare_word: 1 });
    }

    #[test]
    fn history_joins_turns_with_eos() {
        let turns = vec![toks(&["hi"]), toks(&["hey", "there"]), toks(&["sup"])];
        assert_eq!(history_tokens(&turns, None), ["hi", "<eos>", "hey", "there", "<eos>", "sup"]);
        assert_eq!(history_tokens(&turns, Some(1)), ["sup"]);
        assert_eq!(history_tokens(&[], None), ["<eos>"]);
    }

    #[test]
    fn vocabulary_over_examples() {
        let stop = StopWordSet::default();
        let ex = DialogueExample::new(&["i love papaya"], &["hi"], "papaya !", &stop);
        let v = build_vocabulary(std::slice::from_ref(&ex), 1).unwrap();
        for t in ex.response.iter().chain(ex.turns.iter().flatten()) {
            assert_ne!(v.id(t), UNK);
        }
        assert!(build_vocabulary(&[], 1).is_err());
    }

    proptest! {
        #[test]
        fn rare_word_extraction_is_idempotent(words in proptest::collection::vec("(i|a|my|bee|kiwi|[.?]|zz[a-c])", 0..20)) {
            let stop = StopWordSet::default();
            let once = extract_rare_words(&words, &stop);
            prop_assert_eq!(extract_rare_words(&once, &stop), once.clone());
            prop_assert!(once.iter().all(|w| !stop.contains(w)));
            prop_assert!(once.iter().all(|w| words.contains(w)));
        }

        #[test]
        fn sketch_round_trip(
            traits in proptest::collection::vec("(i|like|bee|kiwi|farm|red|car|[a-c]{2}) (bee|kiwi|red|my|a|[a-c]{2})", 1..5),
            response in proptest::collection::vec("(i|bee|kiwi|red|car|\\.|[a-c]{2})", 0..15),
        ) {
            let stop = StopWordSet::default();
            let ex = DialogueExample::new(&traits, &["hi"], &response.join(" "), &stop);
            prop_assert_eq!(ex.sketch.tokens.len(), ex.response.len());
            prop_assert_eq!(ex.unsketch(), ex.response.clone());
            for (i, t) in ex.sketch.tokens.iter().enumerate() {
                if ex.sketch.slot_positions.contains(&i) {
                    prop_assert_eq!(t, PERSONA_TOKEN);
                } else {
                    prop_assert_eq!(t, &ex.response[i]);
                }
            }
        }
    }
}
