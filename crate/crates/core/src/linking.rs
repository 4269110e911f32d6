//! Entity linking of drug mentions to SNOMED-CT and BNF.
//!
//! The mapping sheet is cleaned (deduplicated on normalised description
//! plus SNOMED code, non-drug rows dropped by a stop-word list) and then
//! searched with a normalised Levenshtein similarity. BNF links are
//! always a keyword search URL; SNOMED links need a matched code.

use std::collections::{BTreeSet, HashSet};
use std::io::Read;
use std::path::Path;

use percent_encoding::{utf8_percent_encode, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{extract_entities, EntityClass, Label};

pub const DEFAULT_STOP_WORDS: [&str; 6] = ["system", "ostomy", "bag", "filter", "piece", "closure"];
pub const DEFAULT_THRESHOLD: f64 = 0.8;

/// A row as read from the mapping sheet, before validation.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingRow {
    pub snomed_code: Option<String>,
    pub bnf_code: Option<String>,
    pub dmd_code: Option<String>,
    pub description: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingEntry {
    pub snomed_code: String,
    pub bnf_code: String,
    pub dmd_code: Option<String>,
    pub description: String,
}

impl From<&MappingEntry> for MappingRow {
    fn from(e: &MappingEntry) -> Self {
        MappingRow {
            snomed_code: Some(e.snomed_code.clone()),
            bnf_code: Some(e.bnf_code.clone()),
            dmd_code: e.dmd_code.clone(),
            description: Some(e.description.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanStats {
    pub input: usize,
    pub malformed: usize,
    pub duplicates: usize,
    pub after_dedup: usize,
    pub stop_word_filtered: usize,
    pub kept: usize,
}

/// Lowercase and collapse runs of whitespace to single spaces.
pub fn normalize(text: &str) -> String {
    text.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Debug)]
struct IndexedEntry {
    normalized: String,
    words: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct MappingTable {
    entries: Vec<MappingEntry>,
    stop_words: BTreeSet<String>,
    index: Vec<IndexedEntry>,
}

impl MappingTable {
    pub fn entries(&self) -> &[MappingEntry] {
        &self.entries
    }

    pub fn stop_words(&self) -> &BTreeSet<String> {
        &self.stop_words
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_rows(&self) -> Vec<MappingRow> {
        self.entries.iter().map(MappingRow::from).collect()
    }

    /// True when `description` contains a stop word as a whole word.
    pub fn is_stopped(&self, description: &str) -> bool {
        contains_stop_word(&normalize(description), &self.stop_words)
    }

    /// Reads and cleans a mapping CSV with the default stop words.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<(Self, CleanStats)> {
        let rows = read_mapping_csv(std::fs::File::open(path)?)?;
        Ok(load_and_clean(rows, default_stop_words()))
    }
}

pub fn default_stop_words() -> BTreeSet<String> {
    DEFAULT_STOP_WORDS.iter().map(|s| s.to_string()).collect()
}

fn contains_stop_word(normalized: &str, stop_words: &BTreeSet<String>) -> bool {
    normalized.split(' ').any(|w| stop_words.contains(w))
}

fn non_empty(field: &Option<String>) -> Option<&str> {
    field.as_deref().map(str::trim).filter(|s| !s.is_empty())
}

/// Validates, deduplicates (first occurrence wins) and stop-word filters
/// mapping rows. Malformed rows are skipped and counted.
pub fn load_and_clean(
    rows: impl IntoIterator<Item = MappingRow>,
    stop_words: BTreeSet<String>,
) -> (MappingTable, CleanStats) {
    let stop_words: BTreeSet<String> = stop_words.iter().map(|s| normalize(s)).collect();
    let mut stats = CleanStats::default();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut entries = Vec::new();
    let mut index = Vec::new();
    for row in rows {
        stats.input += 1;
        let (Some(code), Some(description)) = (non_empty(&row.snomed_code), non_empty(&row.description)) else {
            stats.malformed += 1;
            continue;
        };
        let normalized = normalize(description);
        if !seen.insert((normalized.clone(), code.to_string())) {
            stats.duplicates += 1;
            continue;
        }
        stats.after_dedup += 1;
        if contains_stop_word(&normalized, &stop_words) {
            stats.stop_word_filtered += 1;
            continue;
        }
        index.push(IndexedEntry { words: normalized.split(' ').map(str::to_string).collect(), normalized });
        entries.push(MappingEntry {
            snomed_code: code.to_string(),
            bnf_code: row.bnf_code.as_deref().map(str::trim).unwrap_or_default().to_string(),
            dmd_code: non_empty(&row.dmd_code).map(str::to_string),
            description: description.to_string(),
        });
    }
    stats.kept = entries.len();
    (MappingTable { entries, stop_words, index }, stats)
}

/// Parses a mapping CSV. Columns are located by header name; `snomed_code`,
/// `bnf_code` and `description` are required, `dmd_code` is optional.
pub fn read_mapping_csv(reader: impl Read) -> Result<Vec<MappingRow>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
    let column =
        |name: &str| find(name).ok_or_else(|| Error::HeaderMismatch(format!("mapping file has no {name:?} column")));
    let snomed = column("snomed_code")?;
    let bnf = column("bnf_code")?;
    let description = column("description")?;
    let dmd = find("dmd_code");
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let get = |i: usize| record.get(i).map(str::to_string);
        rows.push(MappingRow {
            snomed_code: get(snomed),
            bnf_code: get(bnf),
            dmd_code: dmd.and_then(get),
            description: get(description),
        });
    }
    Ok(rows)
}

pub fn write_mapping_csv(rows: &[MappingRow], writer: impl std::io::Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().quote_style(csv::QuoteStyle::Always).from_writer(writer);
    w.write_record(["snomed_code", "bnf_code", "dmd_code", "description"])?;
    for row in rows {
        w.write_record([
            row.snomed_code.as_deref().unwrap_or_default(),
            row.bnf_code.as_deref().unwrap_or_default(),
            row.dmd_code.as_deref().unwrap_or_default(),
            row.description.as_deref().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.chars().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - levenshtein / max(len)`; two empty strings are identical.
pub fn similarity(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(a, b) as f64 / longest as f64
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct UrlTemplates {
    /// `{code}` is replaced by the SNOMED concept id.
    pub snomed: String,
    /// `{query}` is replaced by the percent-encoded search keyword.
    pub bnf: String,
}

impl Default for UrlTemplates {
    fn default() -> Self {
        UrlTemplates {
            snomed: "https://termbrowser.nhs.uk/?perspective=full&conceptId1={code}&edition=uk-edition".into(),
            bnf: "https://bnf.nice.org.uk/search/?q={query}".into(),
        }
    }
}

impl UrlTemplates {
    pub fn snomed_url(&self, code: &str) -> String {
        self.snomed.replace("{code}", &utf8_percent_encode(code, NON_ALPHANUMERIC).to_string())
    }

    pub fn bnf_url(&self, query: &str) -> String {
        self.bnf.replace("{query}", &utf8_percent_encode(query, NON_ALPHANUMERIC).to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkMatch {
    pub entry: MappingEntry,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkResult {
    pub query: String,
    pub matched: Option<LinkMatch>,
    pub snomed_url: Option<String>,
    pub bnf_url: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkOptions {
    pub threshold: f64,
    pub urls: UrlTemplates,
    /// Entity classes whose runs are linked.
    pub classes: Vec<EntityClass>,
}

impl Default for LinkOptions {
    fn default() -> Self {
        LinkOptions { threshold: DEFAULT_THRESHOLD, urls: UrlTemplates::default(), classes: vec![EntityClass::Drug] }
    }
}

/// Best similarity of `query` against one entry's words and full text.
fn entry_score(query: &str, entry: &IndexedEntry) -> f64 {
    entry.words.iter().map(|w| similarity(query, w)).fold(similarity(query, &entry.normalized), f64::max)
}

pub fn fuzzy_link(query: &str, table: &MappingTable, options: &LinkOptions) -> Result<LinkResult> {
    let normalized = normalize(query);
    if normalized.is_empty() {
        return Err(Error::EmptyQuery);
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, entry) in table.index.iter().enumerate() {
        let score = entry_score(&normalized, entry);
        if score >= options.threshold && best.is_none_or(|(_, s)| score > s) {
            best = Some((i, score));
        }
    }
    let matched = best.map(|(i, score)| LinkMatch { entry: table.entries[i].clone(), score });
    Ok(LinkResult {
        query: query.trim().to_string(),
        snomed_url: matched.as_ref().map(|m| options.urls.snomed_url(&m.entry.snomed_code)),
        bnf_url: options.urls.bnf_url(query.trim()),
        matched,
    })
}

/// Links every entity run of the configured classes, joining its words
/// with single spaces.
pub fn link_document<S: AsRef<str>>(
    words: &[S],
    labels: &[Label],
    table: &MappingTable,
    options: &LinkOptions,
) -> Result<Vec<LinkResult>> {
    if words.len() != labels.len() {
        return Err(Error::LengthMismatch { what: "words vs labels", left: words.len(), right: labels.len() });
    }
    extract_entities(labels)
        .into_iter()
        .filter(|span| options.classes.contains(&span.class))
        .map(|span| {
            let query = words[span.start..span.end].iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" ");
            fuzzy_link(&query, table, options)
        })
        .collect()
}
