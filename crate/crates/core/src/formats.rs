//! Line-delimited JSON files exchanged between pipeline stages.
//!
//! * logit file: header `{format_version, model_id, labels}` then one
//!   `{doc_id, subwords: [{text, word_index, logits}]}` per document
//! * gold file: one `{doc_id, words, labels}` per document
//! * prediction file: header `{format_version, kind, model_id, labels,
//!   provenance?}` then one `{doc_id, labels, logits?}` per document
//!
//! Label lists in headers must equal the canonical scheme. Blank lines
//! are ignored. Floats are written in shortest round-trip form.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::labels::{Document, Label, LabelScheme, Logits, ModelRun, SubwordPrediction, WordPrediction};

pub const FORMAT_VERSION: u32 = 1;
pub const PREDICTION_KIND: &str = "word-predictions";

fn canonical_labels() -> Vec<String> {
    LabelScheme::canonical().labels.clone()
}

fn check_labels(labels: &[String], what: &str) -> Result<()> {
    if labels != LabelScheme::canonical().labels.as_slice() {
        return Err(Error::HeaderMismatch(format!("{what} label list differs from the canonical 19-label scheme")));
    }
    Ok(())
}

fn check_version(version: u32, what: &str) -> Result<()> {
    if version != FORMAT_VERSION {
        return Err(Error::HeaderMismatch(format!("{what} has unsupported format_version {version}")));
    }
    Ok(())
}

/// Non-blank lines parsed as JSON, with 1-based line numbers.
fn read_records<T: DeserializeOwned>(reader: impl Read) -> Result<Vec<(usize, T)>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Format { line: i + 1, message: e.to_string() })?;
        out.push((i + 1, value));
    }
    Ok(out)
}

fn write_record<T: Serialize>(w: &mut impl Write, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Header record or document record, decided by the presence of `doc_id`.
#[derive(Deserialize)]
#[serde(untagged)]
enum Line<H, R> {
    Record(R),
    Header(H),
}

fn split_header<H: DeserializeOwned, R: DeserializeOwned>(
    reader: impl Read,
    what: &str,
) -> Result<(H, Vec<(usize, R)>)> {
    let mut lines = read_records::<serde_json::Value>(reader)?.into_iter();
    let (_, first) = lines.next().ok_or_else(|| Error::HeaderMismatch(format!("{what} is empty")))?;
    if first.get("doc_id").is_some() {
        return Err(Error::HeaderMismatch(format!("{what} is missing its header record")));
    }
    let header = serde_json::from_value(first).map_err(|e| Error::Format { line: 1, message: e.to_string() })?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (line, value) in lines {
        let doc_id = value.get("doc_id").and_then(|v| v.as_str()).map(str::to_string);
        match serde_json::from_value::<Line<H, R>>(value) {
            Ok(Line::Record(r)) => {
                let doc_id = doc_id.unwrap_or_default();
                if !seen.insert(doc_id.clone()) {
                    return Err(Error::Format { line, message: format!("document {doc_id:?} appears twice") });
                }
                records.push((line, r));
            }
            Ok(Line::Header(_)) => {
                return Err(Error::Format { line, message: "unexpected second header".into() });
            }
            Err(e) => return Err(Error::Format { line, message: e.to_string() }),
        }
    }
    Ok((header, records))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogitHeader {
    pub format_version: u32,
    pub model_id: String,
    pub labels: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogitRecord {
    pub doc_id: String,
    pub subwords: Vec<SubwordPrediction>,
}

/// One model's subword logits for a set of documents.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitFile {
    pub model_id: String,
    pub documents: Vec<LogitRecord>,
}

impl LogitFile {
    pub fn from_runs(model_id: impl Into<String>, runs: impl IntoIterator<Item = ModelRun>) -> Self {
        LogitFile {
            model_id: model_id.into(),
            documents: runs.into_iter().map(|r| LogitRecord { doc_id: r.doc_id, subwords: r.subwords }).collect(),
        }
    }

    pub fn runs(&self) -> impl Iterator<Item = ModelRun> + '_ {
        self.documents.iter().map(|d| ModelRun {
            model_id: self.model_id.clone(),
            doc_id: d.doc_id.clone(),
            subwords: d.subwords.clone(),
        })
    }

    pub fn read(reader: impl Read) -> Result<Self> {
        let (header, records): (LogitHeader, Vec<(usize, LogitRecord)>) = split_header(reader, "logit file")?;
        check_version(header.format_version, "logit file")?;
        check_labels(&header.labels, "logit file")?;
        Ok(LogitFile { model_id: header.model_id, documents: records.into_iter().map(|(_, r)| r).collect() })
    }

    pub fn write(&self, mut w: impl Write) -> Result<()> {
        write_record(
            &mut w,
            &LogitHeader {
                format_version: FORMAT_VERSION,
                model_id: self.model_id.clone(),
                labels: canonical_labels(),
            },
        )?;
        for doc in &self.documents {
            write_record(&mut w, doc)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub doc_id: String,
    pub words: Vec<String>,
    pub labels: Vec<Label>,
}

/// Reference documents with word-level labels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GoldFile {
    pub documents: Vec<GoldRecord>,
}

impl GoldFile {
    pub fn read(reader: impl Read) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut documents = Vec::new();
        for (line, rec) in read_records::<GoldRecord>(reader)? {
            if rec.words.len() != rec.labels.len() {
                return Err(Error::Format {
                    line,
                    message: format!("{} words but {} labels", rec.words.len(), rec.labels.len()),
                });
            }
            if !seen.insert(rec.doc_id.clone()) {
                return Err(Error::Format { line, message: format!("document {:?} appears twice", rec.doc_id) });
            }
            documents.push(rec);
        }
        Ok(GoldFile { documents })
    }

    pub fn write(&self, mut w: impl Write) -> Result<()> {
        for doc in &self.documents {
            write_record(&mut w, doc)?;
        }
        Ok(())
    }

    pub fn get(&self, doc_id: &str) -> Option<&GoldRecord> {
        self.documents.iter().find(|d| d.doc_id == doc_id)
    }

    pub fn to_documents(&self) -> Vec<Document> {
        self.documents
            .iter()
            .map(|d| Document { doc_id: d.doc_id.clone(), words: d.words.clone(), gold_labels: Some(d.labels.clone()) })
            .collect()
    }
}

/// Where an output came from: command, a digest of its configuration,
/// and every seed that influenced it.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
}

impl Provenance {
    pub fn new<C: Serialize>(command: &str, config: &C) -> Result<Self> {
        Ok(Provenance { command: command.to_string(), config_hash: config_hash(config)?, seeds: BTreeMap::new() })
    }

    pub fn with_seed(mut self, name: &str, seed: u64) -> Self {
        self.seeds.insert(name.to_string(), seed);
        self
    }
}

/// SHA-256 of the compact JSON form of `config`, hex encoded.
pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    let json = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&json)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionHeader {
    pub format_version: u32,
    pub kind: String,
    pub model_id: String,
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub doc_id: String,
    pub labels: Vec<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<Vec<Logits>>,
}

impl PredictionRecord {
    /// Packs word predictions; logits are kept only if every word has them.
    pub fn from_words(doc_id: impl Into<String>, preds: &[WordPrediction]) -> Self {
        let logits: Option<Vec<Logits>> = preds.iter().map(|p| p.logits).collect();
        PredictionRecord {
            doc_id: doc_id.into(),
            labels: preds.iter().map(|p| p.label).collect(),
            logits: if preds.is_empty() { None } else { logits },
        }
    }

    pub fn to_words(&self) -> Vec<WordPrediction> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, &label)| WordPrediction { word_index: i, label, logits: self.logits.as_ref().map(|l| l[i]) })
            .collect()
    }
}

/// Word-level predictions of one model (or ensemble) for a set of documents.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionFile {
    pub model_id: String,
    pub provenance: Option<Provenance>,
    pub documents: Vec<PredictionRecord>,
}

impl PredictionFile {
    pub fn read(reader: impl Read) -> Result<Self> {
        let (header, records): (PredictionHeader, Vec<(usize, PredictionRecord)>) =
            split_header(reader, "prediction file")?;
        check_version(header.format_version, "prediction file")?;
        check_labels(&header.labels, "prediction file")?;
        if header.kind != PREDICTION_KIND {
            return Err(Error::HeaderMismatch(format!("unexpected prediction file kind {:?}", header.kind)));
        }
        for (line, rec) in &records {
            if let Some(logits) = &rec.logits {
                if logits.len() != rec.labels.len() {
                    return Err(Error::Format {
                        line: *line,
                        message: format!("{} labels but {} logit vectors", rec.labels.len(), logits.len()),
                    });
                }
            }
        }
        Ok(PredictionFile {
            model_id: header.model_id,
            provenance: header.provenance,
            documents: records.into_iter().map(|(_, r)| r).collect(),
        })
    }

    pub fn write(&self, mut w: impl Write) -> Result<()> {
        write_record(
            &mut w,
            &PredictionHeader {
                format_version: FORMAT_VERSION,
                kind: PREDICTION_KIND.to_string(),
                model_id: self.model_id.clone(),
                labels: canonical_labels(),
                provenance: self.provenance.clone(),
            },
        )?;
        for doc in &self.documents {
            write_record(&mut w, doc)?;
        }
        Ok(())
    }

    pub fn get(&self, doc_id: &str) -> Option<&PredictionRecord> {
        self.documents.iter().find(|d| d.doc_id == doc_id)
    }
}

macro_rules! file_io {
    ($ty:ty) => {
        impl $ty {
            pub fn load(path: impl AsRef<Path>) -> Result<Self> {
                Self::read(std::fs::File::open(path)?)
            }

            pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
                let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
                self.write(&mut w)?;
                w.flush()?;
                Ok(())
            }

            pub fn to_bytes(&self) -> Vec<u8> {
                let mut out = Vec::new();
                self.write(&mut out).expect("writing to a Vec cannot fail");
                out
            }
        }
    };
}

file_io!(LogitFile);
file_io!(GoldFile);
file_io!(PredictionFile);

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::NUM_LABELS;

    fn logit_file() -> LogitFile {
        let mut logits = [0.0; NUM_LABELS];
        logits[5] = 2.5;
        logits[0] = -0.1;
        LogitFile {
            model_id: "m0".into(),
            documents: vec![LogitRecord {
                doc_id: "d1".into(),
                subwords: vec![
                    SubwordPrediction { text: "Para".into(), word_index: 0, logits },
                    SubwordPrediction { text: "##ce".into(), word_index: 0, logits },
                ],
            }],
        }
    }

    #[test]
    fn logit_file_roundtrip() {
        let f = logit_file();
        let bytes = f.to_bytes();
        let back = LogitFile::read(bytes.as_slice()).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.to_bytes(), bytes);
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.starts_with("{\"format_version\":1,\"model_id\":\"m0\",\"labels\":[\"O\",\"B-ADE\""));
    }

    #[test]
    fn header_labels_must_be_canonical() {
        let text = String::from_utf8(logit_file().to_bytes()).unwrap().replace("\"B-ADE\"", "\"B-AE\"");
        assert!(matches!(LogitFile::read(text.as_bytes()), Err(Error::HeaderMismatch(_))));
    }

    #[test]
    fn duplicate_document_rejected() {
        let mut f = logit_file();
        f.documents.push(f.documents[0].clone());
        assert!(matches!(LogitFile::read(f.to_bytes().as_slice()), Err(Error::Format { line: 3, .. })));
    }

    #[test]
    fn short_logits_rejected() {
        let text = format!(
            "{}\n{{\"doc_id\":\"d\",\"subwords\":[{{\"text\":\"a\",\"word_index\":0,\"logits\":[1.0,2.0]}}]}}\n",
            String::from_utf8(logit_file().to_bytes()).unwrap().lines().next().unwrap()
        );
        assert!(matches!(LogitFile::read(text.as_bytes()), Err(Error::Format { line: 2, .. })));
    }

    #[test]
    fn gold_file_checks_lengths() {
        let good = "{\"doc_id\":\"a\",\"words\":[\"x\",\"y\"],\"labels\":[\"B-Drug\",\"O\"]}\n\n";
        let g = GoldFile::read(good.as_bytes()).unwrap();
        assert_eq!(g.documents[0].labels[0].as_str(), "B-Drug");
        let bad = "{\"doc_id\":\"a\",\"words\":[\"x\"],\"labels\":[\"B-Drug\",\"O\"]}\n";
        assert!(GoldFile::read(bad.as_bytes()).is_err());
        let unknown = "{\"doc_id\":\"a\",\"words\":[\"x\"],\"labels\":[\"B-Dose\"]}\n";
        assert!(GoldFile::read(unknown.as_bytes()).is_err());
    }

    #[test]
    fn prediction_file_roundtrip_with_provenance() {
        let preds = vec![
            WordPrediction { word_index: 0, label: "B-Drug".parse().unwrap(), logits: Some([0.5; NUM_LABELS]) },
            WordPrediction { word_index: 1, label: Label::O, logits: Some([-1.0; NUM_LABELS]) },
        ];
        let f = PredictionFile {
            model_id: "ensemble".into(),
            provenance: Some(Provenance::new("vote", &"cfg").unwrap().with_seed("vote", 42)),
            documents: vec![PredictionRecord::from_words("d1", &preds)],
        };
        let bytes = f.to_bytes();
        let back = PredictionFile::read(bytes.as_slice()).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.documents[0].to_words(), preds);
    }

    #[test]
    fn config_hash_is_stable() {
        let a = config_hash(&serde_json::json!({"a": 1})).unwrap();
        assert_eq!(a.len(), 64);
        assert_eq!(a, config_hash(&serde_json::json!({"a": 1})).unwrap());
        assert_ne!(a, config_hash(&serde_json::json!({"a": 2})).unwrap());
    }
}
