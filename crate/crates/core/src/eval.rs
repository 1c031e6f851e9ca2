//! Clip-level scene and frame-level event scoring.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// 1 where `p > threshold`, else 0.
pub fn binarize_events(probs: &[f64], threshold: f64) -> Vec<u8> {
    probs.iter().map(|&p| u8::from(p > threshold)).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Counts {
    /// `2TP / (2TP + FP + FN)`, zero when nothing is predicted or present.
    pub fn f_score(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }

    fn add(&mut self, o: Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FScores {
    pub micro: f64,
    pub macro_: f64,
    pub per_class: Vec<f64>,
}

fn pooled(counts: &[Counts]) -> FScores {
    let mut total = Counts::default();
    for &c in counts {
        total.add(c);
    }
    let per_class: Vec<f64> = counts.iter().map(Counts::f_score).collect();
    FScores {
        micro: total.f_score(),
        macro_: per_class.iter().sum::<f64>() / per_class.len() as f64,
        per_class,
    }
}

/// Per-class counts over binary `[frames, n_classes]` rolls.
pub fn event_counts(pred: &[u8], reference: &[u8], n_classes: usize) -> Result<Vec<Counts>> {
    if pred.len() != reference.len() || n_classes == 0 || pred.len() % n_classes != 0 {
        return Err(Error::shape(format!(
            "event rolls of {} and {} cells do not share a {n_classes}-class layout",
            pred.len(),
            reference.len()
        )));
    }
    let mut counts = vec![Counts::default(); n_classes];
    for (i, (&p, &r)) in pred.iter().zip(reference).enumerate() {
        let c = &mut counts[i % n_classes];
        match (p != 0, r != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(counts)
}

/// Frame-based micro/macro F over stacked rolls; macro averages all classes,
/// silent ones included.
pub fn event_fscores(pred: &[u8], reference: &[u8], n_classes: usize) -> Result<FScores> {
    Ok(pooled(&event_counts(pred, reference, n_classes)?))
}

fn check_classes(pred: &[usize], reference: &[usize], n: usize) -> Result<()> {
    if pred.len() != reference.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} references",
            pred.len(),
            reference.len()
        )));
    }
    if let Some(&bad) = pred.iter().chain(reference).find(|&&c| c >= n) {
        return Err(Error::Label(format!("class {bad} out of range for {n} classes")));
    }
    Ok(())
}

pub fn scene_fscores(pred: &[usize], reference: &[usize], n: usize) -> Result<FScores> {
    if reference.is_empty() {
        return Err(Error::Input("no clips to score".into()));
    }
    check_classes(pred, reference, n)?;
    let mut counts = vec![Counts::default(); n];
    for (&p, &r) in pred.iter().zip(reference) {
        if p == r {
            counts[p].tp += 1;
        } else {
            counts[p].fp += 1;
            counts[r].fn_ += 1;
        }
    }
    Ok(pooled(&counts))
}

/// Row-normalized confusion matrix in percent; a row is `None` when its
/// class has no reference clips.
pub fn confusion_recall(pred: &[usize], reference: &[usize], n: usize) -> Result<Vec<Option<Vec<f64>>>> {
    check_classes(pred, reference, n)?;
    let mut raw = vec![vec![0u64; n]; n];
    for (&p, &r) in pred.iter().zip(reference) {
        raw[r][p] += 1;
    }
    Ok(raw
        .into_iter()
        .map(|row| {
            let total: u64 = row.iter().sum();
            (total > 0).then(|| row.iter().map(|&c| 100.0 * c as f64 / total as f64).collect())
        })
        .collect())
}

/// Metrics of one trained model on a held-out split. Fields of a head the
/// model lacks are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub scene_micro_f: Option<f64>,
    pub scene_macro_f: Option<f64>,
    pub event_micro_f: Option<f64>,
    pub event_macro_f: Option<f64>,
    pub per_scene_f: Vec<f64>,
    pub per_event_f: Vec<f64>,
    pub confusion: Vec<Option<Vec<f64>>>,
}

pub const REPORT_COLUMNS: [&str; 4] = ["scene_micro_f", "scene_macro_f", "event_micro_f", "event_macro_f"];

impl MetricReport {
    pub fn from_predictions(
        scene: Option<(&[usize], &[usize], usize)>,
        events: Option<(&[u8], &[u8], usize)>,
    ) -> Result<Self> {
        let mut report = MetricReport {
            scene_micro_f: None,
            scene_macro_f: None,
            event_micro_f: None,
            event_macro_f: None,
            per_scene_f: Vec::new(),
            per_event_f: Vec::new(),
            confusion: Vec::new(),
        };
        if let Some((pred, reference, n)) = scene {
            let f = scene_fscores(pred, reference, n)?;
            report.scene_micro_f = Some(f.micro);
            report.scene_macro_f = Some(f.macro_);
            report.per_scene_f = f.per_class;
            report.confusion = confusion_recall(pred, reference, n)?;
        }
        if let Some((pred, reference, m)) = events {
            let f = event_fscores(pred, reference, m)?;
            report.event_micro_f = Some(f.micro);
            report.event_macro_f = Some(f.macro_);
            report.per_event_f = f.per_class;
        }
        Ok(report)
    }

    /// Values in [`REPORT_COLUMNS`] order.
    pub fn headline(&self) -> [Option<f64>; 4] {
        [
            self.scene_micro_f,
            self.scene_macro_f,
            self.event_micro_f,
            self.event_macro_f,
        ]
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(format!("report: {e}")))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Format(format!("report: {e}")))
    }
}

/// Formats a metric for CSV output; missing values become empty cells.
pub fn csv_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}
