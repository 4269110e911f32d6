//! Reduces one model's subword predictions to one prediction per word.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{argmax, Label, Logits, ModelRun, SubwordPrediction, WordPrediction, NUM_LABELS};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupingStrategy {
    /// Label of the word's first subword.
    #[default]
    FirstToken,
    /// Label of the single highest subword logit.
    MaxLogit,
    /// Argmax of the element-wise mean of the subword logits.
    AverageLogit,
}

impl GroupingStrategy {
    pub const ALL: [GroupingStrategy; 3] =
        [GroupingStrategy::FirstToken, GroupingStrategy::MaxLogit, GroupingStrategy::AverageLogit];

    pub fn as_str(self) -> &'static str {
        match self {
            GroupingStrategy::FirstToken => "first-token",
            GroupingStrategy::MaxLogit => "max-logit",
            GroupingStrategy::AverageLogit => "average-logit",
        }
    }
}

impl fmt::Display for GroupingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GroupingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first-token" | "first" => Ok(GroupingStrategy::FirstToken),
            "max-logit" | "max" => Ok(GroupingStrategy::MaxLogit),
            "average-logit" | "average" | "avg" => Ok(GroupingStrategy::AverageLogit),
            other => Err(Error::InvalidConfig(format!("unknown grouping strategy {other:?}"))),
        }
    }
}

/// Groups `run` into `n_words` word predictions.
pub fn group(run: &ModelRun, n_words: usize, strategy: GroupingStrategy) -> Result<Vec<WordPrediction>> {
    run.validate(n_words)?;
    let mut out = Vec::with_capacity(n_words);
    for (word_index, pieces) in run.subwords.chunk_by(|a, b| a.word_index == b.word_index).enumerate() {
        debug_assert_eq!(pieces[0].word_index, word_index);
        let logits = group_word(pieces, strategy);
        let label = match strategy {
            GroupingStrategy::MaxLogit => max_entry(pieces).1,
            _ => Label::new(argmax(&logits))?,
        };
        out.push(WordPrediction { word_index, label, logits: Some(logits) });
    }
    Ok(out)
}

fn group_word(pieces: &[SubwordPrediction], strategy: GroupingStrategy) -> Logits {
    match strategy {
        GroupingStrategy::FirstToken => pieces[0].logits,
        GroupingStrategy::MaxLogit => pieces[max_entry(pieces).0].logits,
        GroupingStrategy::AverageLogit => {
            let mut mean = [0.0; NUM_LABELS];
            for p in pieces {
                for (m, v) in mean.iter_mut().zip(p.logits) {
                    *m += v;
                }
            }
            let n = pieces.len() as f64;
            mean.iter_mut().for_each(|m| *m /= n);
            mean
        }
    }
}

/// (subword position, label) of the largest logit; earlier subword, then
/// lower label index, wins ties.
fn max_entry(pieces: &[SubwordPrediction]) -> (usize, Label) {
    let mut best = (0, 0);
    let mut best_value = pieces[0].logits[0];
    for (s, p) in pieces.iter().enumerate() {
        for (k, &v) in p.logits.iter().enumerate() {
            if v > best_value {
                best_value = v;
                best = (s, k);
            }
        }
    }
    (best.0, Label::new(best.1).expect("logit index within scheme"))
}
