//! The 19-label BIO vocabulary, its collapsed 10-class form, and the
//! document / prediction types shared by every stage.
//!
//! Canonical order is `O` first, then `B-X`, `I-X` for each entity class
//! in alphabetical order. One-hot feature layout and every file format
//! depend on this order.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const NUM_LABELS: usize = 19;
/// Size of the collapsed vocabulary: `O` plus the nine entity classes.
pub const NUM_CLASSES: usize = 10;

pub type Logits = [f64; NUM_LABELS];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityClass {
    #[serde(rename = "ADE")]
    Ade,
    Dosage,
    Drug,
    Duration,
    Form,
    Frequency,
    Reason,
    Route,
    Strength,
}

impl EntityClass {
    pub const ALL: [EntityClass; 9] = [
        EntityClass::Ade,
        EntityClass::Dosage,
        EntityClass::Drug,
        EntityClass::Duration,
        EntityClass::Form,
        EntityClass::Frequency,
        EntityClass::Reason,
        EntityClass::Route,
        EntityClass::Strength,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityClass::Ade => "ADE",
            EntityClass::Dosage => "Dosage",
            EntityClass::Drug => "Drug",
            EntityClass::Duration => "Duration",
            EntityClass::Form => "Form",
            EntityClass::Frequency => "Frequency",
            EntityClass::Reason => "Reason",
            EntityClass::Route => "Route",
            EntityClass::Strength => "Strength",
        }
    }

    /// Position among the nine classes (0-based).
    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn begin(self) -> Label {
        Label(1 + 2 * self as u8)
    }

    pub fn inside(self) -> Label {
        Label(2 + 2 * self as u8)
    }
}

impl fmt::Display for EntityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EntityClass::ALL.into_iter().find(|c| c.as_str() == s).ok_or_else(|| Error::UnknownLabel(s.to_string()))
    }
}

/// Index into the canonical 19-label scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Label(u8);

impl Label {
    pub const O: Label = Label(0);

    pub fn new(index: usize) -> Result<Self> {
        if index < NUM_LABELS {
            Ok(Label(index as u8))
        } else {
            Err(Error::IndexOutOfRange(index))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_o(self) -> bool {
        self.0 == 0
    }

    /// Entity class, or `None` for `O`.
    pub fn class(self) -> Option<EntityClass> {
        if self.0 == 0 {
            None
        } else {
            Some(EntityClass::ALL[(self.0 as usize - 1) / 2])
        }
    }

    pub fn is_begin(self) -> bool {
        self.0 != 0 && self.0 % 2 == 1
    }

    pub fn as_str(self) -> &'static str {
        LABEL_STRINGS[self.0 as usize]
    }

    /// Drops the B/I distinction.
    pub fn collapse(self) -> CollapsedLabel {
        CollapsedLabel(self.0.div_ceil(2))
    }

    /// Every label in canonical order.
    pub fn all() -> impl Iterator<Item = Label> {
        (0..NUM_LABELS as u8).map(Label)
    }

    /// Rank under plain string ordering of the label names, where `O`
    /// sorts after every `B-*`/`I-*` label.
    pub fn alphabetical_rank(self) -> usize {
        alphabetical_ranks()[self.0 as usize]
    }
}

const LABEL_STRINGS: [&str; NUM_LABELS] = [
    "O",
    "B-ADE",
    "I-ADE",
    "B-Dosage",
    "I-Dosage",
    "B-Drug",
    "I-Drug",
    "B-Duration",
    "I-Duration",
    "B-Form",
    "I-Form",
    "B-Frequency",
    "I-Frequency",
    "B-Reason",
    "I-Reason",
    "B-Route",
    "I-Route",
    "B-Strength",
    "I-Strength",
];

fn alphabetical_ranks() -> &'static [usize; NUM_LABELS] {
    static RANKS: OnceLock<[usize; NUM_LABELS]> = OnceLock::new();
    RANKS.get_or_init(|| {
        let mut order: Vec<usize> = (0..NUM_LABELS).collect();
        order.sort_by_key(|&i| LABEL_STRINGS[i]);
        let mut ranks = [0; NUM_LABELS];
        for (rank, idx) in order.into_iter().enumerate() {
            ranks[idx] = rank;
        }
        ranks
    })
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LABEL_STRINGS
            .iter()
            .position(|&l| l == s)
            .map(|i| Label(i as u8))
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = <std::borrow::Cow<'de, str>>::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Index into the collapsed scheme `[O, ADE, Dosage, ..., Strength]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CollapsedLabel(u8);

impl CollapsedLabel {
    pub const O: CollapsedLabel = CollapsedLabel(0);

    pub fn new(index: usize) -> Result<Self> {
        if index < NUM_CLASSES {
            Ok(CollapsedLabel(index as u8))
        } else {
            Err(Error::IndexOutOfRange(index))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn class(self) -> Option<EntityClass> {
        (self.0 != 0).then(|| EntityClass::ALL[self.0 as usize - 1])
    }

    pub fn as_str(self) -> &'static str {
        self.class().map_or("O", EntityClass::as_str)
    }
}

impl fmt::Display for CollapsedLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Owned view of the canonical scheme, for callers that want the strings.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelScheme {
    pub labels: Vec<String>,
    pub entity_classes: Vec<String>,
}

impl LabelScheme {
    pub fn canonical() -> &'static LabelScheme {
        static SCHEME: OnceLock<LabelScheme> = OnceLock::new();
        SCHEME.get_or_init(|| LabelScheme {
            labels: LABEL_STRINGS.iter().map(|s| s.to_string()).collect(),
            entity_classes: EntityClass::ALL.iter().map(|c| c.as_str().to_string()).collect(),
        })
    }

    pub fn label_index(&self, label: &str) -> Result<usize> {
        self.labels.iter().position(|l| l == label).ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn label_string(&self, index: usize) -> Result<&str> {
        self.labels.get(index).map(String::as_str).ok_or(Error::IndexOutOfRange(index))
    }

    /// Collapsed vocabulary, `O` followed by the entity classes.
    pub fn collapsed_labels(&self) -> Vec<String> {
        std::iter::once("O".to_string()).chain(self.entity_classes.iter().cloned()).collect()
    }

    pub fn is_canonical(&self) -> bool {
        self == Self::canonical()
    }
}

/// Maps a canonical label index to its collapsed index.
pub fn collapse_label(label_index: usize) -> Result<usize> {
    Ok(Label::new(label_index)?.collapse().index())
}

/// Index of the largest logit; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub words: Vec<String>,
    /// Reference labels; an `I-X` after `O` is kept as-is.
    pub gold_labels: Option<Vec<Label>>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, words: Vec<String>) -> Self {
        Document { doc_id: doc_id.into(), words, gold_labels: None }
    }

    pub fn with_gold(mut self, labels: Vec<Label>) -> Result<Self> {
        if labels.len() != self.words.len() {
            return Err(Error::LengthMismatch {
                what: "gold labels vs words",
                left: labels.len(),
                right: self.words.len(),
            });
        }
        self.gold_labels = Some(labels);
        Ok(self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubwordPrediction {
    pub text: String,
    pub word_index: usize,
    pub logits: Logits,
}

/// One model's subword predictions for one document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRun {
    pub model_id: String,
    pub doc_id: String,
    pub subwords: Vec<SubwordPrediction>,
}

impl ModelRun {
    /// Number of words implied by the largest word index.
    pub fn implied_word_count(&self) -> usize {
        self.subwords.iter().map(|s| s.word_index + 1).max().unwrap_or(0)
    }

    /// Checks ordering and full coverage of `0..n_words`.
    pub fn validate(&self, n_words: usize) -> Result<()> {
        let mut next = 0usize;
        let mut prev: Option<usize> = None;
        for sw in &self.subwords {
            let wi = sw.word_index;
            if wi >= n_words {
                return Err(Error::BadWordIndex { found: wi, reason: "beyond the document's word count" });
            }
            if let Some(p) = prev {
                if wi < p {
                    return Err(Error::BadWordIndex { found: wi, reason: "word indices must be non-decreasing" });
                }
            }
            if wi > next {
                return Err(Error::UncoveredWord { word_index: next });
            }
            next = wi + 1;
            prev = Some(wi);
        }
        if next < n_words {
            return Err(Error::UncoveredWord { word_index: next });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordPrediction {
    pub word_index: usize,
    pub label: Label,
    /// Representative word-level logits kept by the grouping strategy.
    pub logits: Option<Logits>,
}

/// A maximal run of words sharing one entity class, `[start, end)` in word
/// positions. A `B-X` label always opens a new span.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub class: EntityClass,
}

pub fn extract_entities(labels: &[Label]) -> Vec<EntitySpan> {
    let mut spans: Vec<EntitySpan> = Vec::new();
    let mut open: Option<EntitySpan> = None;
    for (i, label) in labels.iter().enumerate() {
        match label.class() {
            None => {
                spans.extend(open.take());
            }
            Some(class) => match open.as_mut() {
                Some(span) if span.class == class && !label.is_begin() => span.end = i + 1,
                _ => {
                    spans.extend(open.take());
                    open = Some(EntitySpan { start: i, end: i + 1, class });
                }
            },
        }
    }
    spans.extend(open);
    spans
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(s: &str) -> Label {
        s.parse().unwrap()
    }

    #[test]
    fn label_index_examples() {
        let scheme = LabelScheme::canonical();
        assert_eq!(scheme.label_index("O").unwrap(), 0);
        assert_eq!(scheme.label_index("B-ADE").unwrap(), 1);
        assert_eq!(scheme.label_index("I-Strength").unwrap(), 18);
        assert!(matches!(scheme.label_index("B-Foo"), Err(Error::UnknownLabel(_))));
        assert!(scheme.is_canonical());
    }

    #[test]
    fn scheme_layout() {
        let scheme = LabelScheme::canonical();
        assert_eq!(scheme.labels.len(), NUM_LABELS);
        for (k, class) in EntityClass::ALL.iter().enumerate() {
            assert_eq!(scheme.labels[1 + 2 * k], format!("B-{class}"));
            assert_eq!(scheme.labels[2 + 2 * k], format!("I-{class}"));
        }
        let mut sorted = scheme.entity_classes.clone();
        sorted.sort();
        assert_eq!(sorted, scheme.entity_classes);
    }

    #[test]
    fn string_roundtrip() {
        let scheme = LabelScheme::canonical();
        for i in 0..NUM_LABELS {
            let s = scheme.label_string(i).unwrap();
            assert_eq!(scheme.label_index(s).unwrap(), i);
            assert_eq!(Label::new(i).unwrap().as_str(), s);
        }
        assert!(scheme.label_string(19).is_err());
    }

    #[test]
    fn collapse_examples() {
        let drug = 3; // position of "Drug" in the collapsed vocabulary
        assert_eq!(collapse_label(l("B-Drug").index()).unwrap(), drug);
        assert_eq!(collapse_label(l("I-Drug").index()).unwrap(), drug);
        assert_eq!(collapse_label(0).unwrap(), 0);
        assert!(matches!(collapse_label(19), Err(Error::IndexOutOfRange(19))));
        let collapsed = LabelScheme::canonical().collapsed_labels();
        assert_eq!(collapsed[drug], "Drug");
        assert_eq!(collapsed.len(), NUM_CLASSES);
    }

    #[test]
    fn collapse_maps_two_labels_per_class() {
        let mut counts = [0usize; NUM_CLASSES];
        for label in Label::all() {
            let c = label.collapse();
            counts[c.index()] += 1;
            if let Some(class) = label.class() {
                assert_eq!(c.class(), Some(class));
                assert_eq!(c.as_str(), class.as_str());
            }
        }
        assert_eq!(counts[0], 1);
        assert!(counts[1..].iter().all(|&n| n == 2));
    }

    #[test]
    fn alphabetical_rank_puts_o_last() {
        assert_eq!(Label::O.alphabetical_rank(), NUM_LABELS - 1);
        assert!(l("B-Drug").alphabetical_rank() < l("B-Form").alphabetical_rank());
        assert!(l("B-Strength").alphabetical_rank() < l("I-ADE").alphabetical_rank());
    }

    #[test]
    fn argmax_lowest_index_wins_ties() {
        assert_eq!(argmax(&[0.0; 19]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[f64::NAN, 1.0]), 0);
    }

    #[test]
    fn validate_coverage() {
        let sw = |w| SubwordPrediction { text: "x".into(), word_index: w, logits: [0.0; NUM_LABELS] };
        let run = |ws: &[usize]| ModelRun {
            model_id: "m".into(),
            doc_id: "d".into(),
            subwords: ws.iter().map(|&w| sw(w)).collect(),
        };
        assert!(run(&[0, 0, 1, 2, 2]).validate(3).is_ok());
        assert!(matches!(run(&[0, 2]).validate(3), Err(Error::UncoveredWord { word_index: 1 })));
        assert!(matches!(run(&[0, 1]).validate(3), Err(Error::UncoveredWord { word_index: 2 })));
        assert!(run(&[1, 0]).validate(2).is_err());
        assert!(run(&[0, 3]).validate(2).is_err());
        assert!(run(&[]).validate(0).is_ok());
    }

    #[test]
    fn entity_runs() {
        let labels: Vec<Label> = ["B-Drug", "I-Drug", "O", "B-Drug", "B-Drug", "I-Form"].iter().map(|s| l(s)).collect();
        let spans = extract_entities(&labels);
        assert_eq!(
            spans,
            vec![
                EntitySpan { start: 0, end: 2, class: EntityClass::Drug },
                EntitySpan { start: 3, end: 4, class: EntityClass::Drug },
                EntitySpan { start: 4, end: 5, class: EntityClass::Drug },
                EntitySpan { start: 5, end: 6, class: EntityClass::Form },
            ]
        );
    }

    #[test]
    fn gold_length_checked() {
        let doc = Document::new("d", vec!["a".into(), "b".into()]);
        assert!(doc.clone().with_gold(vec![Label::O]).is_err());
        assert!(doc.with_gold(vec![Label::O, l("I-Drug")]).is_ok());
    }
}
