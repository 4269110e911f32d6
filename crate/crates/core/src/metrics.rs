//! Classification reports and confusion matrices over word labels.
//!
//! Per-class precision and recall use a zero-division convention of 0.
//! Classes with neither gold nor predicted occurrences are left out of
//! the report and of every average.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{Label, LabelScheme, NUM_CLASSES, NUM_LABELS};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    /// B-X and I-X are distinct classes (19 classes).
    #[default]
    BioStrict,
    /// B/I merged into the entity class (10 classes).
    Collapsed,
}

impl EvalMode {
    pub fn class_names(self) -> Vec<String> {
        let scheme = LabelScheme::canonical();
        match self {
            EvalMode::BioStrict => scheme.labels.clone(),
            EvalMode::Collapsed => scheme.collapsed_labels(),
        }
    }

    pub fn n_classes(self) -> usize {
        match self {
            EvalMode::BioStrict => NUM_LABELS,
            EvalMode::Collapsed => NUM_CLASSES,
        }
    }

    fn class_of(self, label: Label) -> usize {
        match self {
            EvalMode::BioStrict => label.index(),
            EvalMode::Collapsed => label.collapse().index(),
        }
    }
}

impl std::str::FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bio-strict" | "strict" | "bio" => Ok(EvalMode::BioStrict),
            "collapsed" | "non-bio" => Ok(EvalMode::Collapsed),
            other => Err(Error::InvalidConfig(format!("unknown evaluation mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    /// `counts[gold][predicted]`
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn support(&self, class: usize) -> usize {
        self.counts[class].iter().sum()
    }

    pub fn predicted(&self, class: usize) -> usize {
        self.counts.iter().map(|row| row[class]).sum()
    }

    pub fn get(&self, gold: usize, predicted: usize) -> usize {
        self.counts[gold][predicted]
    }

    /// Table restricted to classes that occur in gold or predictions.
    pub fn render(&self) -> String {
        let active: Vec<usize> = (0..self.classes.len()).filter(|&c| self.support(c) + self.predicted(c) > 0).collect();
        let width = active
            .iter()
            .map(|&c| self.classes[c].len())
            .chain(active.iter().map(|&c| self.support(c).to_string().len()))
            .max()
            .unwrap_or(1)
            .max("gold\\pred".len());
        let mut out = String::new();
        let _ = write!(out, "{:>width$}", "gold\\pred");
        for &c in &active {
            let _ = write!(out, " {:>width$}", self.classes[c]);
        }
        out.push('\n');
        for &g in &active {
            let _ = write!(out, "{:>width$}", self.classes[g]);
            for &p in &active {
                let _ = write!(out, " {:>width$}", self.counts[g][p]);
            }
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub predicted: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub mode: EvalMode,
    /// Classes with gold or predicted support, in canonical order.
    pub per_class: Vec<ClassMetrics>,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub accuracy: f64,
    pub total_support: usize,
    pub include_o_in_macro: bool,
}

impl ClassReport {
    pub fn class(&self, name: &str) -> Option<&ClassMetrics> {
        self.per_class.iter().find(|c| c.class == name)
    }

    /// Plain-text table: one row per class, then accuracy and the averages.
    pub fn render(&self) -> String {
        let name_w = self.per_class.iter().map(|c| c.class.len()).max().unwrap_or(0).max("weighted avg".len());
        let mut out = String::new();
        let _ = writeln!(out, "{:>name_w$} {:>9} {:>9} {:>9} {:>9}", "", "precision", "recall", "f1-score", "support");
        out.push('\n');
        for c in &self.per_class {
            let _ = writeln!(
                out,
                "{:>name_w$} {:>9.4} {:>9.4} {:>9.4} {:>9}",
                c.class, c.precision, c.recall, c.f1, c.support
            );
        }
        out.push('\n');
        let _ = writeln!(
            out,
            "{:>name_w$} {:>9} {:>9} {:>9.4} {:>9}",
            "accuracy", "", "", self.accuracy, self.total_support
        );
        for (name, avg) in [("macro avg", self.macro_avg), ("weighted avg", self.weighted_avg)] {
            let _ = writeln!(
                out,
                "{:>name_w$} {:>9.4} {:>9.4} {:>9.4} {:>9}",
                name, avg.precision, avg.recall, avg.f1, self.total_support
            );
        }
        out
    }
}

impl fmt::Display for ClassReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

fn check_inputs(gold: &[Label], pred: &[Label]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::LengthMismatch { what: "gold vs predicted labels", left: gold.len(), right: pred.len() });
    }
    if gold.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

pub fn confusion(gold: &[Label], pred: &[Label], mode: EvalMode) -> Result<ConfusionMatrix> {
    check_inputs(gold, pred)?;
    let n = mode.n_classes();
    let mut counts = vec![vec![0usize; n]; n];
    for (&g, &p) in gold.iter().zip(pred) {
        counts[mode.class_of(g)][mode.class_of(p)] += 1;
    }
    Ok(ConfusionMatrix { classes: mode.class_names(), counts })
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn report(gold: &[Label], pred: &[Label], mode: EvalMode, include_o_in_macro: bool) -> Result<ClassReport> {
    Ok(report_from_confusion(&confusion(gold, pred, mode)?, mode, include_o_in_macro))
}

pub fn report_from_confusion(cm: &ConfusionMatrix, mode: EvalMode, include_o_in_macro: bool) -> ClassReport {
    let total = cm.total();
    let mut per_class = Vec::new();
    let mut macro_sum = [0.0; 3];
    let mut macro_n = 0usize;
    let mut weighted_sum = [0.0; 3];
    for c in 0..cm.classes.len() {
        let support = cm.support(c);
        let predicted = cm.predicted(c);
        if support + predicted == 0 {
            continue;
        }
        let tp = cm.get(c, c);
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        if c != 0 || include_o_in_macro {
            macro_sum[0] += precision;
            macro_sum[1] += recall;
            macro_sum[2] += f1;
            macro_n += 1;
        }
        let w = support as f64;
        weighted_sum[0] += w * precision;
        weighted_sum[1] += w * recall;
        weighted_sum[2] += w * f1;
        per_class.push(ClassMetrics { class: cm.classes[c].clone(), precision, recall, f1, support, predicted });
    }
    let avg = |sums: [f64; 3], n: f64| {
        if n == 0.0 {
            Averages { precision: 0.0, recall: 0.0, f1: 0.0 }
        } else {
            Averages { precision: sums[0] / n, recall: sums[1] / n, f1: sums[2] / n }
        }
    };
    ClassReport {
        mode,
        per_class,
        macro_avg: avg(macro_sum, macro_n as f64),
        weighted_avg: avg(weighted_sum, total as f64),
        accuracy: ratio(cm.correct(), total),
        total_support: total,
        include_o_in_macro,
    }
}
