use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::EvalReport;
use crate::error::{Error, Result};

/// Hex SHA-256 over the split name and its sample ids in the given order.
pub fn split_fingerprint<S: AsRef<str>>(split: &str, ids: &[S]) -> String {
    let mut h = Sha256::new();
    h.update(split.as_bytes());
    for id in ids {
        h.update([0u8]);
        h.update(id.as_ref().as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub runs: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
    /// Percentage points relative to the baseline's mean.
    pub accuracy_delta_pp: f64,
    pub macro_f1_delta_pp: f64,
    /// Mean per-class error rate across runs; `None` where undefined.
    pub class_error: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    pub split: String,
    pub class_labels: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

/// Groups reports by name (first-appearance order), averages over seeds,
/// and reports deltas against `baseline`.
pub fn compare_runs(reports: &[EvalReport], baseline: &str) -> Result<Comparison> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Usage("compare needs at least one report".into()))?;
    for r in reports {
        if r.split != first.split || r.confusion.labels != first.confusion.labels {
            return Err(Error::Usage(format!(
                "report {} covers split {:?} with classes {:?}, but {} covers {:?} with {:?}",
                r.name, r.split, r.confusion.labels, first.name, first.split, first.confusion.labels
            )));
        }
        if let (Some(a), Some(b)) = (&r.split_fingerprint, &first.split_fingerprint) {
            if a != b {
                return Err(Error::Usage(format!(
                    "reports {} and {} were evaluated on different samples (fingerprints {} vs {})",
                    first.name,
                    r.name,
                    &b[..12.min(b.len())],
                    &a[..12.min(a.len())]
                )));
            }
        }
    }
    let mut names: Vec<&str> = Vec::new();
    for r in reports {
        if !names.contains(&r.name.as_str()) {
            names.push(&r.name);
        }
    }
    if !names.contains(&baseline) {
        return Err(Error::Usage(format!(
            "baseline {baseline:?} is not among the reports {names:?}"
        )));
    }
    let n_classes = first.confusion.n_classes();
    let mut rows: Vec<ComparisonRow> = names
        .iter()
        .map(|&name| {
            let group: Vec<&EvalReport> = reports.iter().filter(|r| r.name == name).collect();
            let (accuracy_mean, accuracy_std) = mean_std(&group.iter().map(|r| r.accuracy).collect::<Vec<_>>());
            let (macro_f1_mean, macro_f1_std) = mean_std(&group.iter().map(|r| r.macro_f1).collect::<Vec<_>>());
            let class_error = (0..n_classes)
                .map(|k| {
                    let vals: Option<Vec<f64>> = group.iter().map(|r| r.per_class[k].error_rate).collect();
                    vals.map(|v| mean_std(&v).0)
                })
                .collect();
            ComparisonRow {
                name: name.to_string(),
                runs: group.len(),
                accuracy_mean,
                accuracy_std,
                macro_f1_mean,
                macro_f1_std,
                accuracy_delta_pp: 0.0,
                macro_f1_delta_pp: 0.0,
                class_error,
            }
        })
        .collect();
    let base = rows.iter().find(|r| r.name == baseline).expect("checked above").clone();
    for r in &mut rows {
        r.accuracy_delta_pp = 100.0 * (r.accuracy_mean - base.accuracy_mean);
        r.macro_f1_delta_pp = 100.0 * (r.macro_f1_mean - base.macro_f1_mean);
    }
    Ok(Comparison {
        baseline: baseline.to_string(),
        split: first.split.clone(),
        class_labels: first.confusion.labels.clone(),
        rows,
    })
}

fn pct(v: Option<f64>) -> String {
    v.map_or("NA".into(), |x| format!("{:.2}", 100.0 * x))
}

impl Comparison {
    /// Headline table: one row per run name, values in percent.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from(
            "name,runs,accuracy_mean,accuracy_std,macro_f1_mean,macro_f1_std,accuracy_delta_pp,macro_f1_delta_pp\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{:.2},{:.2},{:.2},{:.2},{:+.2},{:+.2}",
                r.name,
                r.runs,
                100.0 * r.accuracy_mean,
                100.0 * r.accuracy_std,
                100.0 * r.macro_f1_mean,
                100.0 * r.macro_f1_std,
                r.accuracy_delta_pp,
                r.macro_f1_delta_pp
            );
        }
        s
    }

    /// Class-wise error rates in percent, one column per run name.
    pub fn class_error_csv(&self) -> String {
        let mut s = String::from("class");
        for r in &self.rows {
            s.push(',');
            s.push_str(&r.name);
        }
        s.push('\n');
        for (k, label) in self.class_labels.iter().enumerate() {
            s.push_str(label);
            for r in &self.rows {
                s.push(',');
                s.push_str(&pct(r.class_error[k]));
            }
            s.push('\n');
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("baseline: {} ({} split)\n", self.baseline, self.split);
        let _ = writeln!(s, "{:<16} {:>4} {:>16} {:>16} {:>10} {:>10}", "name", "runs", "accuracy %", "macro F1 %", "Δacc pp", "ΔF1 pp");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<16} {:>4} {:>9.2} ± {:<4.2} {:>9.2} ± {:<4.2} {:>+10.2} {:>+10.2}",
                r.name,
                r.runs,
                100.0 * r.accuracy_mean,
                100.0 * r.accuracy_std,
                100.0 * r.macro_f1_mean,
                100.0 * r.macro_f1_std,
                r.accuracy_delta_pp,
                r.macro_f1_delta_pp
            );
        }
        s
    }

    /// Grouped bar chart of class-wise error rates.
    pub fn error_chart_svg(&self) -> String {
        const PALETTE: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];
        let groups = self.class_labels.len().max(1);
        let bars = self.rows.len().max(1);
        let (left, right, top, bottom) = (60.0, 20.0, 40.0, 60.0);
        let bar_w = 14.0;
        let group_w = bar_w * bars as f64 + 16.0;
        let plot_w = group_w * groups as f64;
        let plot_h = 240.0;
        let width = left + plot_w + right;
        let height = top + plot_h + bottom;
        let y_of = |v: f64| top + plot_h * (1.0 - v);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="13">Class-wise error rate (%)</text>"#,
            width / 2.0
        );
        for tick in 0..=5 {
            let v = tick as f64 / 5.0;
            let y = y_of(v);
            let _ = writeln!(
                s,
                r##"<line x1="{left}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#dddddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{:.0}</text>"##,
                left + plot_w,
                left - 6.0,
                y + 4.0,
                100.0 * v
            );
        }
        for (g, label) in self.class_labels.iter().enumerate() {
            let gx = left + g as f64 * group_w + 8.0;
            for (b, row) in self.rows.iter().enumerate() {
                let x = gx + b as f64 * bar_w;
                match row.class_error[g] {
                    Some(e) => {
                        let e = e.clamp(0.0, 1.0);
                        let _ = writeln!(
                            s,
                            r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{}"><title>{} {}: {:.2}%</title></rect>"#,
                            y_of(e),
                            bar_w - 2.0,
                            plot_h * e,
                            PALETTE[b % PALETTE.len()],
                            row.name,
                            label,
                            100.0 * e
                        );
                    }
                    None => {
                        let _ = writeln!(
                            s,
                            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="9">NA</text>"#,
                            x + bar_w / 2.0,
                            y_of(0.0) - 3.0
                        );
                    }
                }
            }
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{label}</text>"#,
                gx + bar_w * bars as f64 / 2.0,
                top + plot_h + 16.0
            );
        }
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#333333"/>"##,
            y_of(0.0),
            left + plot_w,
            y_of(0.0)
        );
        for (b, row) in self.rows.iter().enumerate() {
            let x = left + b as f64 * 120.0;
            let y = height - 18.0;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{:.1}" width="10" height="10" fill="{}"/><text x="{:.1}" y="{y:.1}">{}</text>"#,
                y - 9.0,
                PALETTE[b % PALETTE.len()],
                x + 14.0,
                row.name
            );
        }
        s.push_str("</svg>\n");
        s
    }
}
