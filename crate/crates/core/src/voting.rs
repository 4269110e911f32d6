//! Word-level voting across N models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{Label, WordPrediction, NUM_LABELS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    /// Smallest label string wins; `O` sorts after every entity label.
    Alphabetical,
    /// Uniform choice among tied labels from a seeded generator.
    Random { seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum VotePolicy {
    /// A label reaching `threshold` votes wins, otherwise `O`.
    MajorityOrO { threshold: usize },
    /// Plurality label, ties resolved by `tie_break`.
    MaxVote { tie_break: TieBreak },
}

impl VotePolicy {
    /// Majority with threshold `ceil(n / 2)`, i.e. 4 for eight models.
    pub fn majority_for(n_models: usize) -> Self {
        VotePolicy::MajorityOrO { threshold: n_models.div_ceil(2).max(1) }
    }

    pub fn max_alphabetical() -> Self {
        VotePolicy::MaxVote { tie_break: TieBreak::Alphabetical }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            VotePolicy::MaxVote { tie_break: TieBreak::Random { seed } } => Some(*seed),
            _ => None,
        }
    }

    pub fn voter(&self) -> Voter {
        Voter::new(*self)
    }
}

/// A policy plus the generator state for random tie-breaks.
#[derive(Clone, Debug)]
pub struct Voter {
    policy: VotePolicy,
    rng: Option<ChaCha8Rng>,
}

impl Voter {
    pub fn new(policy: VotePolicy) -> Self {
        let rng = policy.seed().map(ChaCha8Rng::seed_from_u64);
        Voter { policy, rng }
    }

    pub fn policy(&self) -> &VotePolicy {
        &self.policy
    }

    pub fn check_voters(&self, voters: usize) -> Result<()> {
        if voters == 0 {
            return Err(Error::EmptyVote);
        }
        if let VotePolicy::MajorityOrO { threshold } = self.policy {
            if threshold == 0 || threshold > voters {
                return Err(Error::InvalidThreshold { threshold, voters });
            }
        }
        Ok(())
    }

    pub fn vote_word(&mut self, labels: &[Label]) -> Result<Label> {
        self.check_voters(labels.len())?;
        let mut counts = [0usize; NUM_LABELS];
        for l in labels {
            counts[l.index()] += 1;
        }
        match self.policy {
            VotePolicy::MajorityOrO { threshold } => {
                let qualifying = Label::all().filter(|l| counts[l.index()] >= threshold);
                Ok(qualifying.min_by_key(|l| l.alphabetical_rank()).unwrap_or(Label::O))
            }
            VotePolicy::MaxVote { tie_break } => {
                let top = *counts.iter().max().expect("non-empty");
                let tied: Vec<Label> = Label::all().filter(|l| counts[l.index()] == top).collect();
                Ok(match tie_break {
                    TieBreak::Alphabetical => *tied
                        .iter()
                        .min_by_key(|l| l.alphabetical_rank())
                        .expect("at least one label has the top count"),
                    TieBreak::Random { .. } => {
                        if tied.len() == 1 {
                            tied[0]
                        } else {
                            let rng = self.rng.as_mut().expect("random policy owns a generator");
                            tied[rng.random_range(0..tied.len())]
                        }
                    }
                })
            }
        }
    }

    /// Votes position-wise across models. Output carries no logits.
    pub fn vote_document(&mut self, per_model: &[Vec<WordPrediction>]) -> Result<Vec<WordPrediction>> {
        self.check_voters(per_model.len())?;
        let n_words = per_model[0].len();
        for preds in per_model {
            if preds.len() != n_words {
                return Err(Error::LengthMismatch {
                    what: "word predictions across models",
                    left: preds.len(),
                    right: n_words,
                });
            }
        }
        let mut column = Vec::with_capacity(per_model.len());
        (0..n_words)
            .map(|i| {
                column.clear();
                for preds in per_model {
                    let wp = &preds[i];
                    if wp.word_index != per_model[0][i].word_index {
                        return Err(Error::LengthMismatch {
                            what: "word index alignment",
                            left: wp.word_index,
                            right: per_model[0][i].word_index,
                        });
                    }
                    column.push(wp.label);
                }
                Ok(WordPrediction {
                    word_index: per_model[0][i].word_index,
                    label: self.vote_word(&column)?,
                    logits: None,
                })
            })
            .collect()
    }
}

/// Stateless convenience wrapper; a random policy starts from its seed.
pub fn vote_word(labels: &[Label], policy: &VotePolicy) -> Result<Label> {
    policy.voter().vote_word(labels)
}
