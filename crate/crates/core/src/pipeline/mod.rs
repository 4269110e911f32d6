//! File-level workflows: group, vote, stack, evaluate, link, and the
//! composed group -> vote -> eval run.
//!
//! Every workflow is deterministic given its configuration; document
//! order in outputs follows the first input file.

mod annotate;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::chunking::ChunkSpec;
use crate::error::{Error, Result};
use crate::formats::{GoldFile, LogitFile, PredictionFile, PredictionRecord, Provenance};
use crate::grouping::{group, GroupingStrategy};
use crate::labels::{Label, WordPrediction};
use crate::linking::{link_document, LinkOptions, LinkResult, MappingTable};
use crate::metrics::{confusion, report_from_confusion, ClassReport, ConfusionMatrix, EvalMode};
use crate::stacking::{
    build_examples, stack_document, train, FeatureMode, MetaNet, SplitConfig, StackedDataset, TrainConfig, TrainReport,
    DEFAULT_MIN_NON_O,
};
use crate::voting::{TieBreak, VotePolicy};

pub use annotate::{
    tokenize, AnnotatedEntity, Annotation, Annotator, DictionaryModel, Ensemble, TokenModel, WordToken,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VoteKind {
    /// `threshold` or more equal votes, else `O`.
    Majority,
    #[default]
    Max,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreakKind {
    #[default]
    Alphabetical,
    Random,
}

/// Vote settings as written in configuration; resolved against the
/// number of models at run time.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct VoteConfig {
    pub kind: VoteKind,
    /// Defaults to `ceil(n_models / 2)`.
    pub threshold: Option<usize>,
    pub tie_break: TieBreakKind,
    pub seed: u64,
}

impl VoteConfig {
    pub fn policy(&self, n_models: usize) -> Result<VotePolicy> {
        Ok(match self.kind {
            VoteKind::Majority => {
                let threshold = self.threshold.unwrap_or_else(|| n_models.div_ceil(2).max(1));
                if threshold == 0 || threshold > n_models {
                    return Err(Error::InvalidThreshold { threshold, voters: n_models });
                }
                VotePolicy::MajorityOrO { threshold }
            }
            VoteKind::Max => VotePolicy::MaxVote {
                tie_break: match self.tie_break {
                    TieBreakKind::Alphabetical => TieBreak::Alphabetical,
                    TieBreakKind::Random => TieBreak::Random { seed: self.seed },
                },
            },
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StackingConfig {
    pub feature_mode: FeatureMode,
    pub min_non_o: usize,
    pub train: TrainConfig,
    pub split: SplitConfig,
}

impl Default for StackingConfig {
    fn default() -> Self {
        StackingConfig {
            feature_mode: FeatureMode::OneHot,
            min_non_o: DEFAULT_MIN_NON_O,
            train: TrainConfig::default(),
            split: SplitConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub mode: EvalMode,
    pub include_o_in_macro: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { mode: EvalMode::BioStrict, include_o_in_macro: true }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkingConfig {
    pub mapping_path: Option<PathBuf>,
    #[serde(flatten)]
    pub options: LinkOptions,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub bind: String,
    pub metanet_path: Option<PathBuf>,
    /// Static web assets served under `/`.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig { bind: "127.0.0.1:8080".into(), metanet_path: None, static_dir: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub grouping: GroupingStrategy,
    pub vote: VoteConfig,
    pub stacking: StackingConfig,
    pub metrics: MetricsConfig,
    pub linking: LinkingConfig,
    pub chunking: ChunkSpec,
    pub service: ServiceConfig,
}

impl PipelineConfig {
    /// Overrides every seed with `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.vote.seed = seed;
        self.stacking.train.seed = seed;
        self
    }
}

fn doc_ids<'a>(ids: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    ids.collect()
}

fn same_doc_sets(reference: &[&str], other: &[&str], what: &str) -> Result<()> {
    let a: HashSet<&str> = reference.iter().copied().collect();
    let b: HashSet<&str> = other.iter().copied().collect();
    if a != b {
        let missing: Vec<&str> = a.symmetric_difference(&b).copied().collect();
        return Err(Error::CoverageGap(format!("{what}: documents not shared by every file: {missing:?}")));
    }
    Ok(())
}

/// Groups each logit file into a word prediction file. All files must
/// cover the same documents with the same word counts; when `gold` is
/// given its word counts are authoritative.
pub fn group_files(
    files: &[LogitFile],
    strategy: GroupingStrategy,
    gold: Option<&GoldFile>,
) -> Result<Vec<PredictionFile>> {
    let Some(first) = files.first() else {
        return Err(Error::EmptyInput);
    };
    let reference = doc_ids(first.documents.iter().map(|d| d.doc_id.as_str()));
    for f in &files[1..] {
        same_doc_sets(&reference, &doc_ids(f.documents.iter().map(|d| d.doc_id.as_str())), "group")?;
    }
    let runs_by_file: Vec<Vec<_>> = files.iter().map(|f| f.runs().collect()).collect();
    let mut word_counts = Vec::with_capacity(reference.len());
    for doc_id in &reference {
        let counts: Vec<usize> = runs_by_file
            .iter()
            .map(|runs: &Vec<crate::ModelRun>| {
                runs.iter().find(|r| r.doc_id == *doc_id).map_or(0, |r| r.implied_word_count())
            })
            .collect();
        let n_words = match gold.map(|g| g.get(doc_id)) {
            Some(Some(rec)) => rec.words.len(),
            Some(None) => return Err(Error::CoverageGap(format!("document {doc_id:?} missing from gold file"))),
            None => counts[0],
        };
        if let Some((i, &c)) = counts.iter().enumerate().find(|(_, &c)| c != n_words) {
            return Err(Error::CoverageGap(format!(
                "document {doc_id:?}: model {} covers {c} words, expected {n_words}",
                files[i].model_id
            )));
        }
        word_counts.push(n_words);
    }
    let provenance = Provenance::new("group", &strategy)?;
    files
        .iter()
        .zip(&runs_by_file)
        .map(|(file, runs)| {
            let documents = reference
                .iter()
                .zip(&word_counts)
                .map(|(doc_id, &n_words)| {
                    let run = runs.iter().find(|r| r.doc_id == *doc_id).expect("doc set checked");
                    let words = group(run, n_words, strategy)?;
                    Ok(PredictionRecord::from_words(*doc_id, &words))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(PredictionFile { model_id: file.model_id.clone(), provenance: Some(provenance.clone()), documents })
        })
        .collect()
}

/// Per-document word predictions of every file, aligned to `doc_order`.
fn aligned<'a>(files: &'a [PredictionFile], doc_order: &[&str]) -> Result<Vec<Vec<&'a PredictionRecord>>> {
    doc_order
        .iter()
        .map(|doc_id| {
            files
                .iter()
                .map(|f| {
                    f.get(doc_id)
                        .ok_or_else(|| Error::CoverageGap(format!("document {doc_id:?} missing from {}", f.model_id)))
                })
                .collect()
        })
        .collect()
}

fn check_models(files: &[PredictionFile]) -> Result<Vec<&str>> {
    let first = files.first().ok_or(Error::EmptyInput)?;
    let reference = doc_ids(first.documents.iter().map(|d| d.doc_id.as_str()));
    for f in &files[1..] {
        same_doc_sets(&reference, &doc_ids(f.documents.iter().map(|d| d.doc_id.as_str())), "models")?;
    }
    Ok(reference)
}

pub fn vote_files(files: &[PredictionFile], policy: &VotePolicy) -> Result<PredictionFile> {
    let order = check_models(files)?;
    let mut voter = policy.voter();
    voter.check_voters(files.len())?;
    let documents = aligned(files, &order)?
        .into_iter()
        .zip(&order)
        .map(|(records, doc_id)| {
            let per_model: Vec<Vec<WordPrediction>> = records.iter().map(|r| r.to_words()).collect();
            Ok(PredictionRecord::from_words(*doc_id, &voter.vote_document(&per_model)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut provenance = Provenance::new("vote", policy)?;
    if let Some(seed) = policy.seed() {
        provenance = provenance.with_seed("vote", seed);
    }
    Ok(PredictionFile { model_id: "vote".into(), provenance: Some(provenance), documents })
}

/// Builds the meta-dataset in document order and trains the meta-network.
pub fn stack_train(
    files: &[PredictionFile],
    gold: &GoldFile,
    config: &StackingConfig,
) -> Result<(MetaNet, TrainReport)> {
    let order = check_models(files)?;
    let mut examples = Vec::new();
    for (records, doc_id) in aligned(files, &order)?.into_iter().zip(&order) {
        let rec = gold
            .get(doc_id)
            .ok_or_else(|| Error::CoverageGap(format!("document {doc_id:?} missing from gold file")))?;
        let per_model: Vec<Vec<WordPrediction>> = records.iter().map(|r| r.to_words()).collect();
        examples.extend(build_examples(&per_model, &rec.labels, config.feature_mode, config.min_non_o)?);
    }
    let dataset = StackedDataset::split(examples, config.feature_mode, files.len(), &config.split)?;
    let (mut net, report) = train(&dataset, &config.train)?;
    net.min_non_o = config.min_non_o;
    Ok((net, report))
}

pub fn stack_predict(files: &[PredictionFile], net: &MetaNet) -> Result<PredictionFile> {
    let order = check_models(files)?;
    let documents = aligned(files, &order)?
        .into_iter()
        .zip(&order)
        .map(|(records, doc_id)| {
            let per_model: Vec<Vec<WordPrediction>> = records.iter().map(|r| r.to_words()).collect();
            Ok(PredictionRecord::from_words(*doc_id, &stack_document(net, &per_model)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let provenance = Provenance::new(
        "stack-predict",
        &serde_json::json!({
            "sizes": net.sizes(),
            "feature_mode": net.feature_mode,
            "min_non_o": net.min_non_o,
            "weights": crate::formats::config_hash(&net.layers.iter().map(|l| (&l.weights, &l.biases)).collect::<Vec<_>>())?,
        }),
    )?;
    Ok(PredictionFile { model_id: "stacked".into(), provenance: Some(provenance), documents })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: ClassReport,
    pub confusion: ConfusionMatrix,
}

impl Evaluation {
    pub fn render(&self) -> String {
        format!("{}\n{}", self.report.render(), self.confusion.render())
    }
}

/// Flattened (gold, predicted) labels over every gold document.
pub fn paired_labels(pred: &PredictionFile, gold: &GoldFile) -> Result<(Vec<Label>, Vec<Label>)> {
    let mut g = Vec::new();
    let mut p = Vec::new();
    for rec in &gold.documents {
        let pr = pred
            .get(&rec.doc_id)
            .ok_or_else(|| Error::CoverageGap(format!("document {:?} missing from predictions", rec.doc_id)))?;
        if pr.labels.len() != rec.labels.len() {
            return Err(Error::LengthMismatch {
                what: "predicted vs gold labels",
                left: pr.labels.len(),
                right: rec.labels.len(),
            });
        }
        g.extend_from_slice(&rec.labels);
        p.extend_from_slice(&pr.labels);
    }
    Ok((g, p))
}

pub fn evaluate(pred: &PredictionFile, gold: &GoldFile, config: &MetricsConfig) -> Result<Evaluation> {
    let (g, p) = paired_labels(pred, gold)?;
    let cm = confusion(&g, &p, config.mode)?;
    Ok(Evaluation { report: report_from_confusion(&cm, config.mode, config.include_o_in_macro), confusion: cm })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocumentLinks {
    pub doc_id: String,
    pub links: Vec<LinkResult>,
}

/// Links entity runs of `pred`, taking words from `words_from`.
pub fn link_predictions(
    pred: &PredictionFile,
    words_from: &GoldFile,
    table: &MappingTable,
    options: &LinkOptions,
) -> Result<Vec<DocumentLinks>> {
    pred.documents
        .iter()
        .map(|rec| {
            let words = &words_from
                .get(&rec.doc_id)
                .ok_or_else(|| Error::CoverageGap(format!("no words for document {:?}", rec.doc_id)))?
                .words;
            Ok(DocumentLinks { doc_id: rec.doc_id.clone(), links: link_document(words, &rec.labels, table, options)? })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub grouped: Vec<PathBuf>,
    pub ensemble: PathBuf,
    pub report_text: Option<PathBuf>,
    pub report_json: Option<PathBuf>,
}

/// group -> vote -> (eval when gold is given), writing every artifact
/// under `out_dir`.
pub fn run_pipeline(
    config: &PipelineConfig,
    logit_files: &[LogitFile],
    gold: Option<&GoldFile>,
    out_dir: &Path,
) -> Result<PipelineSummary> {
    std::fs::create_dir_all(out_dir)?;
    let grouped = group_files(logit_files, config.grouping, gold)?;
    let mut grouped_paths = Vec::new();
    for (i, f) in grouped.iter().enumerate() {
        let path = out_dir.join(grouped_file_name(i, &f.model_id));
        f.save(&path)?;
        grouped_paths.push(path);
    }
    let policy = config.vote.policy(grouped.len())?;
    let mut ensemble = vote_files(&grouped, &policy)?;
    if let Some(p) = ensemble.provenance.as_mut() {
        p.command = "pipeline".into();
        p.config_hash = crate::formats::config_hash(config)?;
    }
    let ensemble_path = out_dir.join("ensemble.jsonl");
    ensemble.save(&ensemble_path)?;
    let (report_text, report_json) = match gold {
        Some(gold) => {
            let eval = evaluate(&ensemble, gold, &config.metrics)?;
            let text = out_dir.join("report.txt");
            let json = out_dir.join("report.json");
            std::fs::write(&text, eval.render())?;
            std::fs::write(&json, serde_json::to_string_pretty(&eval)? + "\n")?;
            (Some(text), Some(json))
        }
        None => (None, None),
    };
    Ok(PipelineSummary { grouped: grouped_paths, ensemble: ensemble_path, report_text, report_json })
}

/// File name for the `i`-th grouped prediction file.
pub fn grouped_file_name(i: usize, model_id: &str) -> String {
    format!("grouped-{i:02}-{}.jsonl", sanitize(model_id))
}

fn sanitize(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}
