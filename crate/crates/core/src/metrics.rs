//! Confusion matrices and one-vs-rest metrics. All metrics are percentages.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grade::DamageGrade;

const K: usize = DamageGrade::COUNT;

/// Rows are true grades, columns predicted grades, both in [`DamageGrade::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfusionMatrix {
    pub counts: [[u64; K]; K],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..K).map(|k| self.counts[k][k]).sum()
    }

    pub fn get(&self, truth: DamageGrade, pred: DamageGrade) -> u64 {
        self.counts[truth.index()][pred.index()]
    }

    pub fn add(&mut self, truth: DamageGrade, pred: DamageGrade) {
        self.counts[truth.index()][pred.index()] += 1;
    }

    /// One-vs-rest collapse around `positive`.
    pub fn binary_counts(&self, positive: DamageGrade) -> BinaryCounts {
        self.collapse(|g| g == positive)
    }

    fn collapse(&self, is_positive: impl Fn(DamageGrade) -> bool) -> BinaryCounts {
        let mut c = BinaryCounts::default();
        for t in DamageGrade::ALL {
            for p in DamageGrade::ALL {
                let n = self.get(t, p);
                match (is_positive(t), is_positive(p)) {
                    (true, true) => c.tp += n,
                    (false, true) => c.fp += n,
                    (true, false) => c.fn_ += n,
                    (false, false) => c.tn += n,
                }
            }
        }
        c
    }
}

pub fn confusion_matrix(truth: &[DamageGrade], pred: &[DamageGrade]) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::LengthMismatch {
            left: truth.len(),
            right: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::EmptyInput("no samples to evaluate".into()));
    }
    let mut cm = ConfusionMatrix::default();
    for (t, p) in truth.iter().zip(pred) {
        cm.add(*t, *p);
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub overall_accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: BinaryCounts,
    /// Set when nothing was predicted positive; precision is then reported as 0.
    #[serde(default)]
    pub precision_undefined: bool,
    /// Set when no sample is truly positive; recall is then reported as 0.
    #[serde(default)]
    pub recall_undefined: bool,
}

/// `2PR / (P + R)`, or 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

fn percent(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64 * 100.0)
}

pub fn metrics_from_counts(c: BinaryCounts) -> BinaryMetrics {
    let total = c.tp + c.fp + c.fn_ + c.tn;
    let precision = percent(c.tp, c.tp + c.fp);
    let recall = percent(c.tp, c.tp + c.fn_);
    let p = precision.unwrap_or(0.0);
    let r = recall.unwrap_or(0.0);
    BinaryMetrics {
        overall_accuracy: percent(c.tp + c.tn, total).unwrap_or(0.0),
        precision: p,
        recall: r,
        f1: f1_score(p, r),
        counts: c,
        precision_undefined: precision.is_none(),
        recall_undefined: recall.is_none(),
    }
}

pub fn binary_metrics(cm: &ConfusionMatrix, positive: DamageGrade) -> BinaryMetrics {
    metrics_from_counts(cm.binary_counts(positive))
}

/// Any damage grade against no damage, with damaged as the positive class.
pub fn damaged_vs_undamaged(cm: &ConfusionMatrix) -> BinaryMetrics {
    metrics_from_counts(cm.collapse(DamageGrade::is_damaged))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigReport {
    pub name: String,
    pub confusion: ConfusionMatrix,
    /// Keyed by grade name.
    pub per_grade: IndexMap<String, BinaryMetrics>,
    pub all_damage: BinaryMetrics,
}

impl ConfigReport {
    pub fn new(name: impl Into<String>, cm: ConfusionMatrix) -> Self {
        Self {
            name: name.into(),
            confusion: cm,
            per_grade: DamageGrade::ALL
                .iter()
                .map(|g| (g.name().to_string(), binary_metrics(&cm, *g)))
                .collect(),
            all_damage: damaged_vs_undamaged(&cm),
        }
    }

    pub fn grade(&self, g: DamageGrade) -> &BinaryMetrics {
        &self.per_grade[g.name()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub configs: Vec<ConfigReport>,
    pub pipeline_meta: serde_json::Value,
}

impl Report {
    pub fn new(
        configs: Vec<(String, ConfusionMatrix)>,
        pipeline_meta: serde_json::Value,
    ) -> Result<Self> {
        if configs.is_empty() {
            return Err(Error::EmptyInput(
                "report needs at least one confusion matrix".into(),
            ));
        }
        Ok(Self {
            configs: configs
                .into_iter()
                .map(|(n, cm)| ConfigReport::new(n, cm))
                .collect(),
            pipeline_meta,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }

    fn columns(c: &ConfigReport) -> Vec<&BinaryMetrics> {
        std::iter::once(&c.all_damage)
            .chain(DamageGrade::ALL.iter().map(|g| c.grade(*g)))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("config,metric,all_damage_grades");
        for g in DamageGrade::ALL {
            s.push(',');
            s.push_str(g.name());
        }
        s.push('\n');
        for c in &self.configs {
            let cols = Self::columns(c);
            for (metric, get) in METRIC_ROWS {
                let _ = write!(s, "{},{}", c.name, metric.to_lowercase().replace(' ', "_"));
                for m in &cols {
                    let _ = write!(s, ",{:.2}", get(m));
                }
                s.push('\n');
            }
        }
        s
    }

    /// One block per configuration: overall accuracy, precision, recall and F1
    /// against the damaged-vs-undamaged column and the four grades.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| | All damage grades |");
        for g in DamageGrade::ALL {
            let _ = write!(s, " {} |", g.label());
        }
        s.push_str("\n|---|---:|---:|---:|---:|---:|\n");
        for c in &self.configs {
            let _ = writeln!(s, "| **{}** | | | | | |", c.name);
            let cols = Self::columns(c);
            for (metric, get) in METRIC_ROWS {
                let _ = write!(s, "| {metric} |");
                for m in &cols {
                    let _ = write!(s, " {:.2} |", get(m));
                }
                s.push('\n');
            }
        }
        s
    }
}

type MetricGetter = fn(&BinaryMetrics) -> f64;

const METRIC_ROWS: [(&str, MetricGetter); 4] = [
    ("Overall accuracy", |m| m.overall_accuracy),
    ("Precision", |m| m.precision),
    ("Recall", |m| m.recall),
    ("F1 score", |m| m.f1),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportPaths {
    pub json: PathBuf,
    pub csv: PathBuf,
    pub markdown: PathBuf,
}

/// Writes `report.json`, `report.csv` and `report.md` into `dir`.
pub fn emit_report(report: &Report, dir: &Path) -> Result<ReportPaths> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = ReportPaths {
        json: dir.join("report.json"),
        csv: dir.join("report.csv"),
        markdown: dir.join("report.md"),
    };
    let write = |p: &Path, s: String| std::fs::write(p, s).map_err(|e| Error::io(p, e));
    write(&paths.json, report.to_json()?)?;
    write(&paths.csv, report.to_csv())?;
    write(&paths.markdown, report.to_markdown())?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use DamageGrade::*;

    #[test]
    fn hand_computed_binary_case() {
        // truth negative: 8 right, 2 wrong; truth positive: 1 wrong, 9 right
        let m = metrics_from_counts(BinaryCounts {
            tp: 9,
            fp: 2,
            fn_: 1,
            tn: 8,
        });
        assert!((m.precision - 81.818_181_818).abs() < 1e-6);
        assert!((m.recall - 90.0).abs() < 1e-12);
        assert!((m.f1 - 85.714_285_714).abs() < 1e-6);
        assert!((m.overall_accuracy - 85.0).abs() < 1e-12);
    }

    #[test]
    fn f1_from_reported_precision_recall() {
        assert!((f1_score(84.62, 100.0) - 91.67).abs() < 0.01);
        assert_eq!(f1_score(0.0, 0.0), 0.0);
    }

    #[test]
    fn zero_denominators_flagged() {
        let cm = confusion_matrix(&[NoDamage, NoDamage], &[NoDamage, NoDamage]).unwrap();
        let m = binary_metrics(&cm, Heavy);
        assert!(m.precision_undefined && m.recall_undefined);
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert_eq!(m.overall_accuracy, 100.0);
    }

    #[test]
    fn single_off_diagonal() {
        let cm = confusion_matrix(&[Heavy], &[Extreme]).unwrap();
        assert_eq!(cm.get(Heavy, Extreme), 1);
        assert_eq!(cm.total(), 1);
        assert_eq!(cm.trace(), 0);
    }

    #[test]
    fn everything_damaged_called_undamaged() {
        let cm =
            confusion_matrix(&[Heavy, Extreme, Destruction, NoDamage], &[NoDamage; 4]).unwrap();
        assert_eq!(damaged_vs_undamaged(&cm).recall, 0.0);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            confusion_matrix(&[Heavy], &[]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn markdown_blocks() {
        let cm = confusion_matrix(&DamageGrade::ALL, &DamageGrade::ALL).unwrap();
        let r = Report::new(
            vec![("VLS generic".into(), cm), ("Real-world DIM".into(), cm)],
            serde_json::Value::Null,
        )
        .unwrap();
        let md = r.to_markdown();
        assert_eq!(md.matches("| F1 score |").count(), 2);
        assert!(md.contains("| Overall accuracy | 100.00 | 100.00 | 100.00 | 100.00 | 100.00 |"));
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["configs"][0]["confusion"][1][1], 1);
        assert_eq!(json["configs"][0]["per_grade"]["heavy"]["f1"], 100.0);
    }
}
