//! Stacked ensemble: per-word features from N base models, a small
//! feed-forward meta-network trained from scratch, and prediction.
//!
//! A word enters the meta-dataset only when at least `min_non_o` base
//! models predict something other than `O`; at prediction time the same
//! filter labels every other word `O` without consulting the network.

mod io;
mod net;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{Label, WordPrediction, NUM_LABELS};

pub use net::{gradient_check, train, Dense, MetaNet, TrainConfig, TrainReport};

pub const DEFAULT_MIN_NON_O: usize = 2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// One 19-way indicator per model marking its predicted label.
    #[default]
    OneHot,
    /// The models' word-level logit vectors, concatenated.
    Logits,
}

impl FeatureMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMode::OneHot => "one-hot",
            FeatureMode::Logits => "logits",
        }
    }
}

impl std::str::FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one-hot" | "onehot" => Ok(FeatureMode::OneHot),
            "logits" => Ok(FeatureMode::Logits),
            other => Err(Error::InvalidConfig(format!("unknown feature mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackedExample {
    pub features: Vec<f64>,
    pub label: Label,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackedDataset {
    pub train: Vec<StackedExample>,
    pub test: Vec<StackedExample>,
    pub feature_mode: FeatureMode,
    pub n_models: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub train_fraction: f64,
    /// Shuffle examples with this seed before splitting; positional when `None`.
    pub shuffle_seed: Option<u64>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { train_fraction: 0.8, shuffle_seed: None }
    }
}

impl StackedDataset {
    pub fn split(
        mut examples: Vec<StackedExample>,
        feature_mode: FeatureMode,
        n_models: usize,
        split: &SplitConfig,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&split.train_fraction) {
            return Err(Error::InvalidConfig(format!("train_fraction {} outside [0, 1]", split.train_fraction)));
        }
        if let Some(seed) = split.shuffle_seed {
            examples.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        let n_train = (split.train_fraction * examples.len() as f64).floor() as usize;
        let test = examples.split_off(n_train);
        Ok(StackedDataset { train: examples, test, feature_mode, n_models })
    }

    pub fn input_width(&self) -> usize {
        self.n_models * NUM_LABELS
    }
}

/// True when at least `min_non_o` of the labels are not `O`.
pub fn passes_filter<'a>(labels: impl IntoIterator<Item = &'a Label>, min_non_o: usize) -> bool {
    labels.into_iter().filter(|l| !l.is_o()).count() >= min_non_o
}

/// Feature vector for one word from the models' predictions, in model order.
pub fn word_features(preds: &[&WordPrediction], mode: FeatureMode) -> Result<Vec<f64>> {
    let mut features = vec![0.0; preds.len() * NUM_LABELS];
    for (block, wp) in features.chunks_exact_mut(NUM_LABELS).zip(preds) {
        match mode {
            FeatureMode::OneHot => block[wp.label.index()] = 1.0,
            FeatureMode::Logits => {
                let logits = wp.logits.as_ref().ok_or(Error::MissingLogits { word_index: wp.word_index })?;
                block.copy_from_slice(logits);
            }
        }
    }
    Ok(features)
}

fn check_aligned(per_model: &[Vec<WordPrediction>], n_words: usize) -> Result<()> {
    if per_model.is_empty() {
        return Err(Error::EmptyInput);
    }
    for preds in per_model {
        if preds.len() != n_words {
            return Err(Error::LengthMismatch {
                what: "model predictions vs words",
                left: preds.len(),
                right: n_words,
            });
        }
    }
    Ok(())
}

/// One example per word passing the non-`O` filter, in word order.
pub fn build_examples(
    per_model: &[Vec<WordPrediction>],
    gold: &[Label],
    mode: FeatureMode,
    min_non_o: usize,
) -> Result<Vec<StackedExample>> {
    check_aligned(per_model, gold.len())?;
    let mut examples = Vec::new();
    let mut column = Vec::with_capacity(per_model.len());
    for (i, &label) in gold.iter().enumerate() {
        column.clear();
        column.extend(per_model.iter().map(|preds| &preds[i]));
        if passes_filter(column.iter().map(|wp| &wp.label), min_non_o) {
            examples.push(StackedExample { features: word_features(&column, mode)?, label });
        }
    }
    Ok(examples)
}

/// Builds examples and applies the default positional 80/20 split.
pub fn build_stacked_dataset(
    per_model: &[Vec<WordPrediction>],
    gold: &[Label],
    mode: FeatureMode,
    min_non_o: usize,
) -> Result<StackedDataset> {
    let examples = build_examples(per_model, gold, mode, min_non_o)?;
    StackedDataset::split(examples, mode, per_model.len(), &SplitConfig::default())
}

/// Labels one document with a trained meta-network.
pub fn stack_document(net: &MetaNet, per_model: &[Vec<WordPrediction>]) -> Result<Vec<WordPrediction>> {
    if per_model.len() != net.n_models {
        return Err(Error::DimensionMismatch {
            expected: net.n_models * NUM_LABELS,
            found: per_model.len() * NUM_LABELS,
        });
    }
    let n_words = per_model.first().map_or(0, Vec::len);
    check_aligned(per_model, n_words)?;
    let mut column = Vec::with_capacity(per_model.len());
    (0..n_words)
        .map(|i| {
            column.clear();
            column.extend(per_model.iter().map(|preds| &preds[i]));
            let label = if passes_filter(column.iter().map(|wp| &wp.label), net.min_non_o) {
                net.predict(&word_features(&column, net.feature_mode)?)?
            } else {
                Label::O
            };
            Ok(WordPrediction { word_index: per_model[0][i].word_index, label, logits: None })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wp(i: usize, label: &str) -> WordPrediction {
        WordPrediction { word_index: i, label: label.parse().unwrap(), logits: None }
    }

    #[test]
    fn all_o_word_is_excluded() {
        let per_model: Vec<Vec<WordPrediction>> = (0..8).map(|_| vec![wp(0, "O")]).collect();
        let ex = build_examples(&per_model, &[Label::O], FeatureMode::OneHot, 2).unwrap();
        assert!(ex.is_empty());
    }

    #[test]
    fn one_hot_layout_matches_block_oracle() {
        let labels = ["B-Drug", "B-Drug", "O", "O", "O", "O", "O", "O"];
        let per_model: Vec<Vec<WordPrediction>> = labels.iter().map(|l| vec![wp(0, l)]).collect();
        let gold: Label = "B-Drug".parse().unwrap();
        let ex = build_examples(&per_model, &[gold], FeatureMode::OneHot, 2).unwrap();
        assert_eq!(ex.len(), 1);
        let f = &ex[0].features;
        assert_eq!(f.len(), 152);
        // independent per-block check
        let drug = 5;
        let mut expected_ones = vec![drug, 19 + drug];
        expected_ones.extend((2..8).map(|m| m * 19));
        for (pos, &v) in f.iter().enumerate() {
            let want = if expected_ones.contains(&pos) { 1.0 } else { 0.0 };
            assert_eq!(v, want, "position {pos}");
        }
        assert_eq!(f.iter().filter(|&&v| v == 1.0).count(), 8);
        assert_eq!(f.iter().filter(|&&v| v == 0.0).count(), 144);
    }

    #[test]
    fn logits_mode_requires_logits() {
        let per_model: Vec<Vec<WordPrediction>> = (0..2).map(|_| vec![wp(0, "B-Drug")]).collect();
        let err = build_examples(&per_model, &[Label::O], FeatureMode::Logits, 2).unwrap_err();
        assert!(matches!(err, Error::MissingLogits { word_index: 0 }));
    }

    #[test]
    fn eighty_twenty_split() {
        let examples: Vec<StackedExample> =
            (0..10).map(|i| StackedExample { features: vec![i as f64], label: Label::O }).collect();
        let ds = StackedDataset::split(examples.clone(), FeatureMode::OneHot, 1, &SplitConfig::default()).unwrap();
        assert_eq!(ds.train.len(), 8);
        assert_eq!(ds.test.len(), 2);
        assert_eq!(ds.train[..], examples[..8]);
        let shuffled = SplitConfig { shuffle_seed: Some(3), ..SplitConfig::default() };
        let a = StackedDataset::split(examples.clone(), FeatureMode::OneHot, 1, &shuffled).unwrap();
        let b = StackedDataset::split(examples, FeatureMode::OneHot, 1, &shuffled).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train.len(), 8);
    }

    #[test]
    fn length_mismatch() {
        let per_model = vec![vec![wp(0, "O")], vec![]];
        assert!(matches!(
            build_examples(&per_model, &[Label::O], FeatureMode::OneHot, 2),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn filtered_word_is_o_at_prediction_time() {
        let mut net = MetaNet::zeros(&[2 * NUM_LABELS, 4, NUM_LABELS], FeatureMode::OneHot, 2);
        // make the net favour B-Drug whenever it is consulted
        net.layers[1].biases[5] = 10.0;
        let per_model = vec![vec![wp(0, "B-Drug"), wp(1, "O")], vec![wp(0, "B-Form"), wp(1, "B-Drug")]];
        let out = stack_document(&net, &per_model).unwrap();
        assert_eq!(out[0].label.as_str(), "B-Drug");
        assert_eq!(out[1].label, Label::O);
        let seven: Vec<_> = per_model.iter().take(1).cloned().collect();
        assert!(matches!(stack_document(&net, &seven), Err(Error::DimensionMismatch { .. })));
    }
}
