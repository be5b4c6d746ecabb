//! Confusion matrices, classification metrics and report files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const REPORT_VERSION: u32 = 1;

/// Rows are the true class, columns the predicted class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub class_names: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn k(&self) -> usize {
        self.class_names.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k()).map(|i| self.counts[i][i]).sum()
    }

    pub fn supports(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn predicted_totals(&self) -> Vec<u64> {
        (0..self.k())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }

    /// Reorders classes: new class `i` is old class `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> ConfusionMatrix {
        ConfusionMatrix {
            class_names: order.iter().map(|&i| self.class_names[i].clone()).collect(),
            counts: order
                .iter()
                .map(|&i| order.iter().map(|&j| self.counts[i][j]).collect())
                .collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("truth\\predicted");
        for n in &self.class_names {
            s.push(',');
            s.push_str(n);
        }
        s.push('\n');
        for (n, row) in self.class_names.iter().zip(&self.counts) {
            s.push_str(n);
            for c in row {
                let _ = write!(s, ",{c}");
            }
            s.push('\n');
        }
        s
    }
}

pub fn confusion(truth: &[usize], pred: &[usize], class_names: &[String]) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::Dimension {
            expected: truth.len(),
            got: pred.len(),
        });
    }
    let k = class_names.len();
    let mut counts = vec![vec![0u64; k]; k];
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= k || p >= k {
            return Err(Error::Config(format!(
                "label {} outside [0, {k})",
                t.max(p)
            )));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        class_names: class_names.to_vec(),
        counts,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Set when a zero denominator forced a value of 0.
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Attack-class figures of a binary run, the layout of the headline table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Headline {
    pub positive_class: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionStats {
    pub rmse: f64,
    /// `None` when the truth is constant.
    pub r2: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub version: u32,
    /// `binary`, `multiclass`, `per-attack:<name>` or free text.
    pub mode: String,
    pub class_names: Vec<String>,
    pub total: u64,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub headline: Option<Headline>,
    pub zero_division: bool,
    pub regression: Option<RegressionStats>,
    /// How labels become numbers for `regression`.
    pub label_encoding: String,
    /// Seconds per stage; kept out of `metrics.json`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<BTreeMap<String, f64>>,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Every classification figure, derived from the matrix alone.
pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 || cm.k() == 0 {
        return Err(Error::Empty("confusion matrix has no counts".into()));
    }
    let supports = cm.supports();
    let predicted = cm.predicted_totals();
    let mut per_class = Vec::with_capacity(cm.k());
    for c in 0..cm.k() {
        let tp = cm.counts[c][c];
        let (precision, p_undef) = ratio(tp, predicted[c]);
        let (recall, r_undef) = ratio(tp, supports[c]);
        let (f1, f_undef) = if precision + recall > 0.0 {
            (2.0 * precision * recall / (precision + recall), false)
        } else {
            (0.0, true)
        };
        per_class.push(ClassMetrics {
            class: cm.class_names[c].clone(),
            precision,
            recall,
            f1,
            support: supports[c],
            precision_undefined: p_undef,
            recall_undefined: r_undef,
            f1_undefined: f_undef,
        });
    }
    let k = cm.k() as f64;
    let macro_avg = Averages {
        precision: per_class.iter().map(|m| m.precision).sum::<f64>() / k,
        recall: per_class.iter().map(|m| m.recall).sum::<f64>() / k,
        f1: per_class.iter().map(|m| m.f1).sum::<f64>() / k,
    };
    let n = total as f64;
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        per_class.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / n
    };
    let weighted_avg = Averages {
        precision: weighted(|m| m.precision),
        recall: weighted(|m| m.recall),
        f1: weighted(|m| m.f1),
    };
    let accuracy = cm.trace() as f64 / n;
    let headline = (cm.k() == 2).then(|| Headline {
        positive_class: per_class[1].class.clone(),
        accuracy,
        precision: per_class[1].precision,
        recall: per_class[1].recall,
        f1: per_class[1].f1,
    });
    let zero_division = per_class
        .iter()
        .any(|m| m.precision_undefined || m.recall_undefined || m.f1_undefined);
    Ok(MetricsReport {
        version: REPORT_VERSION,
        mode: if cm.k() == 2 { "binary" } else { "multiclass" }.to_string(),
        class_names: cm.class_names.clone(),
        total,
        accuracy,
        per_class,
        macro_avg,
        weighted_avg,
        headline,
        zero_division,
        regression: None,
        label_encoding: "class index in class_names order; prediction is the argmax label".into(),
        timing: None,
    })
}

/// RMSE and R² between numerically encoded truth and predictions.
pub fn regression_fit_stats(truth: &[f64], pred: &[f64]) -> Result<RegressionStats> {
    if truth.len() != pred.len() {
        return Err(Error::Dimension {
            expected: truth.len(),
            got: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::Empty("no values".into()));
    }
    let n = truth.len() as f64;
    let ss_res: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p).powi(2)).sum();
    let mean = truth.iter().sum::<f64>() / n;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    Ok(RegressionStats {
        rmse: (ss_res / n).sqrt(),
        r2: (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot),
    })
}

/// Confusion matrix, metrics and regression figures for label vectors.
pub fn evaluate_labels(truth: &[usize], pred: &[usize], class_names: &[String]) -> Result<(ConfusionMatrix, MetricsReport)> {
    let cm = confusion(truth, pred, class_names)?;
    let mut report = metrics(&cm)?;
    let t: Vec<f64> = truth.iter().map(|&v| v as f64).collect();
    let p: Vec<f64> = pred.iter().map(|&v| v as f64).collect();
    report.regression = Some(regression_fit_stats(&t, &p)?);
    Ok((cm, report))
}

fn pct(v: f64) -> String {
    format!("{:.2}%", v * 100.0)
}

/// Human-readable tables.
pub fn render_markdown(report: &MetricsReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Evaluation ({})\n", report.mode);
    if let Some(h) = &report.headline {
        let _ = writeln!(s, "| Accuracy | Precision | Recall | F1 score |");
        let _ = writeln!(s, "|---|---|---|---|");
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} |\n",
            pct(h.accuracy),
            pct(h.precision),
            pct(h.recall),
            pct(h.f1)
        );
        let _ = writeln!(s, "Positive class: `{}`.\n", h.positive_class);
    }
    let _ = writeln!(s, "| Class | Precision | Recall | F1 score | Support |");
    let _ = writeln!(s, "|---|---|---|---|---|");
    for m in &report.per_class {
        let flag = if m.precision_undefined || m.recall_undefined { " *" } else { "" };
        let _ = writeln!(
            s,
            "| {}{} | {} | {} | {} | {} |",
            m.class,
            flag,
            pct(m.precision),
            pct(m.recall),
            pct(m.f1),
            m.support
        );
    }
    let _ = writeln!(s, "| Accuracy (overall) | | | {} | {} |", pct(report.accuracy), report.total);
    for (name, a) in [("Macro Avg", &report.macro_avg), ("Weighted Avg", &report.weighted_avg)] {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} |",
            name,
            pct(a.precision),
            pct(a.recall),
            pct(a.f1),
            report.total
        );
    }
    if report.zero_division {
        let _ = writeln!(s, "\n\\* undefined ratio (zero denominator) reported as 0.");
    }
    if let Some(r) = &report.regression {
        let r2 = r.r2.map_or("n/a (constant truth)".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(s, "\nRMSE {:.4}, R² {} ({}).", r.rmse, r2, report.label_encoding);
    }
    s
}

/// Writes `metrics.json`, `confusion.csv` and `metrics.md` into `dir`.
/// Timing is left out so reruns produce identical files.
pub fn emit_report(report: &MetricsReport, cm: &ConfusionMatrix, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stored = MetricsReport {
        timing: None,
        ..report.clone()
    };
    let json = serde_json::to_string_pretty(&stored)?;
    let write = |name: &str, body: &str| {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
    };
    write("metrics.json", &json)?;
    write("confusion.csv", &cm.to_csv())?;
    write("metrics.md", &render_markdown(report))
}

pub fn read_report(path: &Path) -> Result<MetricsReport> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&s)?)
}
