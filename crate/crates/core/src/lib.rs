//! Word-level ensembling of clinical medication NER models.
//!
//! Per-model subword logits are grouped into word labels, combined by
//! voting or by a stacked meta-network, scored with BIO-strict and
//! collapsed classification reports, and drug mentions are linked to
//! SNOMED-CT / BNF codes.

pub mod chunking;
pub mod error;
pub mod formats;
pub mod grouping;
pub mod labels;
pub mod linking;
pub mod metrics;
pub mod pipeline;
pub mod stacking;
pub mod voting;

pub use error::{Error, Result};
pub use labels::{
    argmax, extract_entities, CollapsedLabel, Document, EntityClass, EntitySpan, Label, LabelScheme, Logits, ModelRun,
    SubwordPrediction, WordPrediction, NUM_CLASSES, NUM_LABELS,
};
