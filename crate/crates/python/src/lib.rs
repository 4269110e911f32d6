//! Python bindings. Labels cross the boundary as strings, structured
//! results as plain dicts and lists.

use medner::chunking::ChunkSpec;
use medner::grouping::{group as group_run, GroupingStrategy};
use medner::labels::collapse_label as collapse_index;
use medner::linking::{fuzzy_link, levenshtein as lev, similarity as sim, CleanStats, LinkOptions};
use medner::metrics::{report as class_report, EvalMode};
use medner::pipeline::{Annotator, DictionaryModel, Ensemble, TieBreakKind, TokenModel, VoteConfig, VoteKind};
use medner::stacking::{build_examples, stack_document, train, FeatureMode, SplitConfig, StackedDataset, TrainConfig};
use medner::{Error, Label, LabelScheme, ModelRun, SubwordPrediction, WordPrediction, NUM_LABELS};
use pyo3::create_exception;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

create_exception!(pymedner, MednerError, PyValueError);

fn to_py_err(e: Error) -> PyErr {
    let message = format!("{}: {e}", e.kind());
    match e {
        Error::Io(_) => PyOSError::new_err(message),
        _ => MednerError::new_err(message),
    }
}

trait OrPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> OrPy<T> for medner::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(to_py_err)
    }
}

/// Converts any serializable value through Python's `json` module.
fn to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| MednerError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_labels(labels: &[String]) -> PyResult<Vec<Label>> {
    labels.iter().map(|s| s.parse::<Label>().py_err()).collect()
}

fn label_strings(labels: impl IntoIterator<Item = Label>) -> Vec<String> {
    labels.into_iter().map(|l| l.as_str().to_string()).collect()
}

fn logits_array(values: &[f64]) -> PyResult<[f64; NUM_LABELS]> {
    values.try_into().map_err(|_| MednerError::new_err(format!("expected {NUM_LABELS} logits, got {}", values.len())))
}

fn word_predictions(labels: &[String]) -> PyResult<Vec<WordPrediction>> {
    Ok(parse_labels(labels)?
        .into_iter()
        .enumerate()
        .map(|(i, label)| WordPrediction { word_index: i, label, logits: None })
        .collect())
}

fn vote_config(policy: &str, threshold: Option<usize>, tie_break: &str, seed: u64) -> PyResult<VoteConfig> {
    let kind = match policy {
        "max" => VoteKind::Max,
        "majority" => VoteKind::Majority,
        other => return Err(MednerError::new_err(format!("unknown vote policy {other:?}"))),
    };
    let tie_break = match tie_break {
        "alphabetical" => TieBreakKind::Alphabetical,
        "random" => TieBreakKind::Random,
        other => return Err(MednerError::new_err(format!("unknown tie break {other:?}"))),
    };
    Ok(VoteConfig { kind, threshold, tie_break, seed })
}

/// The 19 canonical labels in order.
#[pyfunction]
fn label_scheme() -> Vec<String> {
    LabelScheme::canonical().labels.clone()
}

#[pyfunction]
fn entity_classes() -> Vec<String> {
    LabelScheme::canonical().entity_classes.clone()
}

#[pyfunction]
fn label_index(label: &str) -> PyResult<usize> {
    LabelScheme::canonical().label_index(label).py_err()
}

#[pyfunction]
fn label_string(index: usize) -> PyResult<String> {
    LabelScheme::canonical().label_string(index).map(str::to_string).py_err()
}

#[pyfunction]
fn collapse_label(index: usize) -> PyResult<usize> {
    collapse_index(index).py_err()
}

#[pyfunction]
#[pyo3(signature = (words, max_len = 128, soft_start = 100, boundary = "."))]
fn chunk(words: Vec<String>, max_len: usize, soft_start: usize, boundary: &str) -> PyResult<Vec<Vec<String>>> {
    let spec = ChunkSpec { max_len, soft_start, boundary_token: boundary.to_string() };
    spec.validate().py_err()?;
    Ok(medner::chunking::chunk(&words, &spec).into_iter().map(<[String]>::to_vec).collect())
}

/// Groups `(text, word_index, logits)` subwords into one `(label, logits)`
/// pair per word.
#[pyfunction]
#[pyo3(signature = (subwords, n_words, strategy = "first-token"))]
fn group(
    subwords: Vec<(String, usize, Vec<f64>)>,
    n_words: usize,
    strategy: &str,
) -> PyResult<Vec<(String, Vec<f64>)>> {
    let strategy: GroupingStrategy = strategy.parse().py_err()?;
    let run = ModelRun {
        model_id: String::new(),
        doc_id: String::new(),
        subwords: subwords
            .into_iter()
            .map(|(text, word_index, logits)| {
                Ok(SubwordPrediction { text, word_index, logits: logits_array(&logits)? })
            })
            .collect::<PyResult<_>>()?,
    };
    Ok(group_run(&run, n_words, strategy)
        .py_err()?
        .into_iter()
        .map(|w| (w.label.as_str().to_string(), w.logits.map_or_else(Vec::new, |l| l.to_vec())))
        .collect())
}

#[pyfunction]
#[pyo3(signature = (labels, policy = "max", threshold = None, tie_break = "alphabetical", seed = 0))]
fn vote(labels: Vec<String>, policy: &str, threshold: Option<usize>, tie_break: &str, seed: u64) -> PyResult<String> {
    let policy = vote_config(policy, threshold, tie_break, seed)?.policy(labels.len()).py_err()?;
    let label = medner::voting::vote_word(&parse_labels(&labels)?, &policy).py_err()?;
    Ok(label.as_str().to_string())
}

/// Votes a whole document given one label list per model.
#[pyfunction]
#[pyo3(signature = (per_model, policy = "max", threshold = None, tie_break = "alphabetical", seed = 0))]
fn vote_document(
    per_model: Vec<Vec<String>>,
    policy: &str,
    threshold: Option<usize>,
    tie_break: &str,
    seed: u64,
) -> PyResult<Vec<String>> {
    let policy = vote_config(policy, threshold, tie_break, seed)?.policy(per_model.len()).py_err()?;
    let preds = per_model.iter().map(|l| word_predictions(l)).collect::<PyResult<Vec<_>>>()?;
    let voted = policy.voter().vote_document(&preds).py_err()?;
    Ok(label_strings(voted.into_iter().map(|w| w.label)))
}

/// Classification report as a dict; `text` holds the rendered table.
#[pyfunction]
#[pyo3(signature = (gold, pred, mode = "bio-strict", include_o_in_macro = true))]
fn report<'py>(
    py: Python<'py>,
    gold: Vec<String>,
    pred: Vec<String>,
    mode: &str,
    include_o_in_macro: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let mode: EvalMode = mode.parse().py_err()?;
    let rep = class_report(&parse_labels(&gold)?, &parse_labels(&pred)?, mode, include_o_in_macro).py_err()?;
    let out = to_py(py, &rep)?;
    out.set_item("text", rep.render())?;
    Ok(out)
}

#[pyfunction]
fn similarity(a: &str, b: &str) -> f64 {
    sim(a, b)
}

#[pyfunction]
fn levenshtein(a: &str, b: &str) -> usize {
    lev(a, b)
}

#[pyclass(name = "MappingTable", module = "pymedner", frozen)]
struct PyMappingTable {
    inner: medner::linking::MappingTable,
    stats: CleanStats,
}

#[pymethods]
impl PyMappingTable {
    /// Reads and cleans a mapping CSV.
    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        let (inner, stats) = medner::linking::MappingTable::load_csv(path).py_err()?;
        Ok(PyMappingTable { inner, stats })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.stats)
    }

    fn entries<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.entries())
    }

    #[pyo3(signature = (term, threshold = None))]
    fn link<'py>(&self, py: Python<'py>, term: &str, threshold: Option<f64>) -> PyResult<Bound<'py, PyAny>> {
        let mut options = LinkOptions::default();
        if let Some(t) = threshold {
            options.threshold = t;
        }
        to_py(py, &fuzzy_link(term, &self.inner, &options).py_err()?)
    }
}

#[pyclass(name = "MetaNet", module = "pymedner", frozen)]
struct PyMetaNet {
    inner: medner::stacking::MetaNet,
}

#[pymethods]
impl PyMetaNet {
    /// Trains a one-hot stacking network; returns `(net, report)`.
    #[staticmethod]
    #[pyo3(signature = (per_model, gold, hidden_width = 128, learning_rate = 1e-3, epochs = 50, batch_size = 64, seed = 0, min_non_o = 2))]
    #[allow(clippy::too_many_arguments)]
    fn train<'py>(
        py: Python<'py>,
        per_model: Vec<Vec<String>>,
        gold: Vec<String>,
        hidden_width: usize,
        learning_rate: f64,
        epochs: usize,
        batch_size: usize,
        seed: u64,
        min_non_o: usize,
    ) -> PyResult<(Self, Bound<'py, PyAny>)> {
        let preds = per_model.iter().map(|l| word_predictions(l)).collect::<PyResult<Vec<_>>>()?;
        let examples = build_examples(&preds, &parse_labels(&gold)?, FeatureMode::OneHot, min_non_o).py_err()?;
        let dataset =
            StackedDataset::split(examples, FeatureMode::OneHot, preds.len(), &SplitConfig::default()).py_err()?;
        let config = TrainConfig { hidden_width, learning_rate, epochs, batch_size, seed, shuffle: true };
        let (mut net, rep) = py.detach(|| train(&dataset, &config)).py_err()?;
        net.min_non_o = min_non_o;
        Ok((PyMetaNet { inner: net }, to_py(py, &rep)?))
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(PyMetaNet { inner: medner::stacking::MetaNet::load(path).py_err()? })
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(PyMetaNet { inner: medner::stacking::MetaNet::from_bytes(data).py_err()? })
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        self.inner.save(path).py_err()
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.to_bytes())
    }

    #[getter]
    fn n_models(&self) -> usize {
        self.inner.n_models
    }

    #[getter]
    fn sizes(&self) -> Vec<usize> {
        self.inner.sizes()
    }

    #[getter]
    fn feature_mode(&self) -> &'static str {
        self.inner.feature_mode.as_str()
    }

    fn probabilities(&self, features: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.probabilities(&features).py_err()
    }

    /// Labels a document given one label list per model.
    fn predict(&self, per_model: Vec<Vec<String>>) -> PyResult<Vec<String>> {
        let preds = per_model.iter().map(|l| word_predictions(l)).collect::<PyResult<Vec<_>>>()?;
        let out = stack_document(&self.inner, &preds).py_err()?;
        Ok(label_strings(out.into_iter().map(|w| w.label)))
    }
}

/// Annotates raw text with the dictionary labeler, optionally seeded with
/// drug names from a mapping table.
#[pyfunction]
#[pyo3(signature = (text, table = None, strategy = "first-token"))]
fn annotate<'py>(
    py: Python<'py>,
    text: &str,
    table: Option<&PyMappingTable>,
    strategy: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let mut model = DictionaryModel::new("dictionary");
    if let Some(t) = table {
        model = model.with_drugs_from(&t.inner);
    }
    let models: Vec<Box<dyn TokenModel>> = vec![Box::new(model)];
    let annotator = Annotator::new(models, ChunkSpec::default()).py_err()?;
    let policy = medner::voting::VotePolicy::max_alphabetical();
    let annotation = annotator.annotate(text, strategy.parse().py_err()?, Ensemble::Vote(policy)).py_err()?;
    to_py(py, &annotation)
}

#[pyfunction]
fn version() -> String {
    env!("CARGO_PKG_VERSION").to_string()
}

#[pymodule]
fn pymedner(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MednerError", m.py().get_type::<MednerError>())?;
    m.add_function(wrap_pyfunction!(label_scheme, m)?)?;
    m.add_function(wrap_pyfunction!(entity_classes, m)?)?;
    m.add_function(wrap_pyfunction!(label_index, m)?)?;
    m.add_function(wrap_pyfunction!(label_string, m)?)?;
    m.add_function(wrap_pyfunction!(collapse_label, m)?)?;
    m.add_function(wrap_pyfunction!(chunk, m)?)?;
    m.add_function(wrap_pyfunction!(group, m)?)?;
    m.add_function(wrap_pyfunction!(vote, m)?)?;
    m.add_function(wrap_pyfunction!(vote_document, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    m.add_function(wrap_pyfunction!(similarity, m)?)?;
    m.add_function(wrap_pyfunction!(levenshtein, m)?)?;
    m.add_function(wrap_pyfunction!(annotate, m)?)?;
    m.add_function(wrap_pyfunction!(version, m)?)?;
    m.add_class::<PyMappingTable>()?;
    m.add_class::<PyMetaNet>()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vote_config_parsing() {
        assert!(vote_config("max", None, "random", 3).is_ok());
        let c = vote_config("majority", None, "alphabetical", 0).unwrap();
        assert_eq!(c.policy(8).unwrap(), medner::voting::VotePolicy::MajorityOrO { threshold: 4 });
    }

    #[test]
    fn logits_must_have_nineteen_entries() {
        Python::initialize();
        assert!(logits_array(&[0.0; 19]).is_ok());
        assert!(logits_array(&[0.0; 3]).is_err());
    }

    #[test]
    fn module_functions_from_python() {
        Python::initialize();
        Python::attach(|py| {
            let m = PyModule::new(py, "pymedner").unwrap();
            pymedner(&m).unwrap();
            let labels: Vec<String> = m.getattr("label_scheme").unwrap().call0().unwrap().extract().unwrap();
            assert_eq!(labels.len(), 19);
            let voted: String =
                m.getattr("vote").unwrap().call1((vec!["B-Drug", "O", "B-Drug"],)).unwrap().extract().unwrap();
            assert_eq!(voted, "B-Drug");
            let rep = m.getattr("report").unwrap().call1((vec!["B-Drug", "O"], vec!["B-Drug", "B-Drug"])).unwrap();
            let p: f64 = rep.get_item("macro_avg").unwrap().get_item("precision").unwrap().extract().unwrap();
            assert_eq!(p, 0.25);
        });
    }
}
