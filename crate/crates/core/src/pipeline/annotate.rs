//! Raw-text annotation through pluggable token models.
//!
//! Text is split on whitespace, chunked, passed to every [`TokenModel`],
//! grouped per model and combined by the chosen ensemble. Entity offsets
//! are character (Unicode scalar) offsets into the original text.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::chunking::{chunk, ChunkSpec};
use crate::error::{Error, Result};
use crate::grouping::{group, GroupingStrategy};
use crate::labels::{extract_entities, EntityClass, Label, ModelRun, SubwordPrediction, WordPrediction, NUM_LABELS};
use crate::linking::MappingTable;
use crate::stacking::{stack_document, MetaNet};
use crate::voting::VotePolicy;

/// Something that yields subword logits for a chunk of words.
/// `word_index` in the output is relative to the chunk.
pub trait TokenModel: Send + Sync {
    fn model_id(&self) -> &str;
    fn predict(&self, words: &[String]) -> Vec<SubwordPrediction>;
}

/// Lexicon labeler for demos and fixtures. Each word becomes one subword
/// whose logits peak at `B-X`/`I-X` for a lexicon hit and `O` otherwise.
#[derive(Clone, Debug)]
pub struct DictionaryModel {
    id: String,
    lexicon: HashMap<String, EntityClass>,
    confidence: f64,
}

const BUILTIN_LEXICON: &[(&str, EntityClass)] = &[
    ("oral", EntityClass::Route),
    ("orally", EntityClass::Route),
    ("po", EntityClass::Route),
    ("iv", EntityClass::Route),
    ("intravenous", EntityClass::Route),
    ("subcutaneous", EntityClass::Route),
    ("topical", EntityClass::Route),
    ("inhaled", EntityClass::Route),
    ("daily", EntityClass::Frequency),
    ("bd", EntityClass::Frequency),
    ("tds", EntityClass::Frequency),
    ("qds", EntityClass::Frequency),
    ("nightly", EntityClass::Frequency),
    ("weekly", EntityClass::Frequency),
    ("prn", EntityClass::Frequency),
    ("tablet", EntityClass::Form),
    ("tablets", EntityClass::Form),
    ("capsule", EntityClass::Form),
    ("capsules", EntityClass::Form),
    ("injection", EntityClass::Form),
    ("cream", EntityClass::Form),
    ("inhaler", EntityClass::Form),
    ("solution", EntityClass::Form),
];

const STRENGTH_UNITS: &[&str] = &["mg", "g", "mcg", "microgram", "micrograms", "ml", "units", "%"];

impl DictionaryModel {
    pub fn new(id: impl Into<String>) -> Self {
        DictionaryModel {
            id: id.into(),
            lexicon: BUILTIN_LEXICON.iter().map(|(w, c)| (w.to_string(), *c)).collect(),
            confidence: 4.0,
        }
    }

    /// Adds the leading word of every mapping entry as a drug name.
    pub fn with_drugs_from(mut self, table: &MappingTable) -> Self {
        for entry in table.entries() {
            if let Some(first) = entry.description.split_whitespace().next() {
                let key = lookup_key(first);
                if key.len() >= 4 && key.chars().all(char::is_alphabetic) {
                    self.lexicon.entry(key).or_insert(EntityClass::Drug);
                }
            }
        }
        self
    }

    pub fn with_word(mut self, word: &str, class: EntityClass) -> Self {
        self.lexicon.insert(lookup_key(word), class);
        self
    }

    fn classify(&self, word: &str) -> Option<EntityClass> {
        let key = lookup_key(word);
        if let Some(c) = self.lexicon.get(&key) {
            return Some(*c);
        }
        let digits = key.trim_start_matches(|c: char| c.is_ascii_digit() || c == '.');
        (digits.len() < key.len() && STRENGTH_UNITS.contains(&digits)).then_some(EntityClass::Strength)
    }
}

fn lookup_key(word: &str) -> String {
    word.trim_matches(|c: char| !c.is_alphanumeric() && c != '%').to_lowercase()
}

impl TokenModel for DictionaryModel {
    fn model_id(&self) -> &str {
        &self.id
    }

    fn predict(&self, words: &[String]) -> Vec<SubwordPrediction> {
        let mut prev: Option<EntityClass> = None;
        words
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let class = self.classify(w);
                let label = match class {
                    None => Label::O,
                    Some(c) if prev == Some(c) => c.inside(),
                    Some(c) => c.begin(),
                };
                prev = class;
                let mut logits = [0.0; NUM_LABELS];
                logits[label.index()] = self.confidence;
                SubwordPrediction { text: w.clone(), word_index: i, logits }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordToken {
    pub text: String,
    pub char_start: usize,
    pub char_end: usize,
}

/// Whitespace tokenisation with character offsets.
pub fn tokenize(text: &str) -> Vec<WordToken> {
    let mut tokens = Vec::new();
    let mut current: Option<(usize, String)> = None;
    let mut pos = 0;
    for ch in text.chars() {
        if ch.is_whitespace() {
            if let Some((start, word)) = current.take() {
                tokens.push(WordToken { text: word, char_start: start, char_end: pos });
            }
        } else {
            current.get_or_insert_with(|| (pos, String::new())).1.push(ch);
        }
        pos += 1;
    }
    if let Some((start, word)) = current {
        tokens.push(WordToken { text: word, char_start: start, char_end: pos });
    }
    tokens
}

/// How per-model word predictions are combined.
#[derive(Clone, Copy, Debug)]
pub enum Ensemble<'a> {
    Vote(VotePolicy),
    Stacked(&'a MetaNet),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedEntity {
    pub char_start: usize,
    pub char_end: usize,
    pub word_start: usize,
    pub word_end: usize,
    pub class: EntityClass,
    pub label: Label,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub words: Vec<String>,
    pub labels: Vec<Label>,
    pub entities: Vec<AnnotatedEntity>,
}

pub struct Annotator {
    models: Vec<Box<dyn TokenModel>>,
    chunking: ChunkSpec,
}

impl Annotator {
    pub fn new(models: Vec<Box<dyn TokenModel>>, chunking: ChunkSpec) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::EmptyInput);
        }
        chunking.validate()?;
        Ok(Annotator { models, chunking })
    }

    pub fn n_models(&self) -> usize {
        self.models.len()
    }

    /// Word predictions of one model over the whole word sequence.
    fn run_model(
        &self,
        model: &dyn TokenModel,
        words: &[String],
        strategy: GroupingStrategy,
    ) -> Result<Vec<WordPrediction>> {
        let mut subwords = Vec::new();
        let mut offset = 0;
        for piece in chunk(words, &self.chunking) {
            for mut sw in model.predict(piece) {
                sw.word_index += offset;
                subwords.push(sw);
            }
            offset += piece.len();
        }
        let run = ModelRun { model_id: model.model_id().to_string(), doc_id: String::new(), subwords };
        group(&run, words.len(), strategy)
    }

    pub fn annotate(&self, text: &str, strategy: GroupingStrategy, ensemble: Ensemble<'_>) -> Result<Annotation> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::EmptyInput);
        }
        let words: Vec<String> = tokens.iter().map(|t| t.text.clone()).collect();
        let per_model =
            self.models.iter().map(|m| self.run_model(m.as_ref(), &words, strategy)).collect::<Result<Vec<_>>>()?;
        let combined = match ensemble {
            Ensemble::Vote(policy) => policy.voter().vote_document(&per_model)?,
            Ensemble::Stacked(net) => stack_document(net, &per_model)?,
        };
        let labels: Vec<Label> = combined.iter().map(|w| w.label).collect();
        let entities = extract_entities(&labels)
            .into_iter()
            .map(|span| AnnotatedEntity {
                char_start: tokens[span.start].char_start,
                char_end: tokens[span.end - 1].char_end,
                word_start: span.start,
                word_end: span.end,
                class: span.class,
                label: labels[span.start],
                text: words[span.start..span.end].join(" "),
            })
            .collect();
        Ok(Annotation { words, labels, entities })
    }
}
