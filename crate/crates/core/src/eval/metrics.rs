use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        let n = labels.len();
        ConfusionMatrix {
            labels,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn from_pairs(labels: Vec<String>, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Data(format!(
                "{} true labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut m = Self::new(labels);
        for (&t, &p) in truth.iter().zip(predicted) {
            m.add(t, p)?;
        }
        Ok(m)
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let n = self.n_classes();
        if truth >= n || predicted >= n {
            return Err(Error::Data(format!(
                "class pair ({truth}, {predicted}) outside 0..{n}"
            )));
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|k| self.counts[k][k]).sum()
    }

    pub fn row_sum(&self, k: usize) -> u64 {
        self.counts[k].iter().sum()
    }

    pub fn col_sum(&self, k: usize) -> u64 {
        self.counts.iter().map(|r| r[k]).sum()
    }

    /// Header row of predicted labels, one row per true label.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("true\\predicted");
        for l in &self.labels {
            s.push(',');
            s.push_str(l);
        }
        s.push('\n');
        for (l, row) in self.labels.iter().zip(&self.counts) {
            s.push_str(l);
            for c in row {
                s.push_str(&format!(",{c}"));
            }
            s.push('\n');
        }
        s
    }

    /// Right-aligned monospace grid.
    pub fn to_text_grid(&self) -> String {
        let w = self
            .labels
            .iter()
            .map(|l| l.chars().count())
            .chain(self.counts.iter().flatten().map(|c| c.to_string().len()))
            .max()
            .unwrap_or(1)
            .max(4);
        let mut s = format!("{:>w$} |", "T\\P");
        for l in &self.labels {
            s.push_str(&format!(" {l:>w$}"));
        }
        s.push('\n');
        s.push_str(&"-".repeat(w + 2 + (w + 1) * self.labels.len()));
        s.push('\n');
        for (l, row) in self.labels.iter().zip(&self.counts) {
            s.push_str(&format!("{l:>w$} |"));
            for c in row {
                s.push_str(&format!(" {c:>w$}"));
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `1 − recall`; `None` when the class has no samples in the split.
    pub error_rate: Option<f64>,
    /// Set when the class was never predicted (precision forced to 0).
    pub precision_undefined: bool,
    /// Set when the class has no samples (recall forced to 0).
    pub recall_undefined: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modality: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub split: String,
    /// Digest of the evaluated sample ids; reports are comparable only when equal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_fingerprint: Option<String>,
    pub samples: u64,
    pub accuracy: f64,
    /// Always "macro": headline precision/recall/F1 are unweighted class means.
    pub averaging: String,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
    pub warnings: Vec<String>,
}

/// `tp / denom`, or 0 (flagged) when `denom` is 0.
fn ratio(tp: u64, denom: u64) -> (f64, bool) {
    if denom == 0 {
        (0.0, true)
    } else {
        (tp as f64 / denom as f64, false)
    }
}

/// Harmonic mean, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

impl EvalReport {
    pub fn from_confusion(name: impl Into<String>, split: impl Into<String>, confusion: ConfusionMatrix) -> Result<Self> {
        let total = confusion.total();
        if total == 0 {
            return Err(Error::Data("cannot report on an empty split".into()));
        }
        let mut warnings = Vec::new();
        let per_class: Vec<ClassMetrics> = (0..confusion.n_classes())
            .map(|k| {
                let tp = confusion.counts[k][k];
                let support = confusion.row_sum(k);
                let (precision, precision_undefined) = ratio(tp, confusion.col_sum(k));
                let (recall, recall_undefined) = ratio(tp, support);
                let label = confusion.labels[k].clone();
                if precision_undefined {
                    warnings.push(format!("class {label} was never predicted; precision set to 0"));
                }
                if recall_undefined {
                    warnings.push(format!("class {label} has no samples; recall set to 0"));
                }
                ClassMetrics {
                    label,
                    support,
                    precision,
                    recall,
                    f1: f1_score(precision, recall),
                    error_rate: (!recall_undefined).then_some(1.0 - recall),
                    precision_undefined,
                    recall_undefined,
                }
            })
            .collect();
        let c = per_class.len() as f64;
        let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / c;
        Ok(EvalReport {
            name: name.into(),
            modality: None,
            seed: None,
            split: split.into(),
            split_fingerprint: None,
            samples: total,
            accuracy: confusion.trace() as f64 / total as f64,
            averaging: "macro".into(),
            macro_precision: mean(|m| m.precision),
            macro_recall: mean(|m| m.recall),
            macro_f1: mean(|m| m.f1),
            per_class,
            confusion,
            warnings,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    /// Human-readable summary: headline metrics, per-class table, confusion grid.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{} [{} split, {} samples]\naccuracy {:.2}%  precision {:.2}%  recall {:.2}%  F1 {:.2}%  (macro)\n\n",
            self.name,
            self.split,
            self.samples,
            100.0 * self.accuracy,
            100.0 * self.macro_precision,
            100.0 * self.macro_recall,
            100.0 * self.macro_f1
        );
        s.push_str(&format!(
            "{:<8} {:>7} {:>9} {:>9} {:>9} {:>9}\n",
            "class", "support", "precision", "recall", "f1", "error"
        ));
        for m in &self.per_class {
            let err = m.error_rate.map_or("-".to_string(), |e| format!("{:.4}", e));
            s.push_str(&format!(
                "{:<8} {:>7} {:>9.4} {:>9.4} {:>9.4} {:>9}\n",
                m.label, m.support, m.precision, m.recall, m.f1, err
            ));
        }
        s.push('\n');
        s.push_str(&self.confusion.to_text_grid());
        for w in &self.warnings {
            s.push_str(&format!("warning: {w}\n"));
        }
        s
    }
}

/// Per-class `1 − recall`; `None` for classes absent from the split.
pub fn class_error_rates(report: &EvalReport) -> Vec<Option<f64>> {
    report.per_class.iter().map(|m| m.error_rate).collect()
}

/// Cohen's κ between two annotations of the same items.
///
/// Computed in integers as `(n·A − Σ r_k c_k) / (n² − Σ r_k c_k)`, where `A`
/// is the agreement count and `r`, `c` the two marginals. This equals
/// `(p_o − p_e)/(1 − p_e)` without the rounding of the probability form.
/// When `p_e = 1` (both annotators give one identical constant label) κ is 1.
pub fn cohens_kappa(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Data(format!(
            "kappa needs two non-empty label lists of equal length, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let k = a.iter().chain(b).max().expect("non-empty") + 1;
    let mut rows = vec![0u128; k];
    let mut cols = vec![0u128; k];
    let mut agree = 0u128;
    for (&x, &y) in a.iter().zip(b) {
        rows[x] += 1;
        cols[y] += 1;
        agree += u128::from(x == y);
    }
    let n = a.len() as u128;
    let chance: u128 = rows.iter().zip(&cols).map(|(r, c)| r * c).sum();
    if chance == n * n {
        return Ok(1.0);
    }
    let num = (n * agree) as f64 - chance as f64;
    let den = (n * n - chance) as f64;
    Ok(num / den)
}
