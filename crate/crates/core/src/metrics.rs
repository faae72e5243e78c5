//! Confusion-matrix accounting and evaluation reports.
//!
//! The positive class is "interfered". Ratios with a zero denominator are
//! reported as 0 with the matching `*_undefined` flag set.

use std::ops::{Add, AddAssign};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cnn::Model;
use crate::dataset::{Dataset, Label, LabeledSample};
use crate::error::{invalid, Result};
use crate::receiver::{receive, window_peaks, ReceiverConfig};
use crate::scenario::ScenarioConfig;
use crate::zc::zc_root;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn record(&mut self, truth: Label, predicted: Label) {
        match (truth, predicted) {
            (Label::Interfered, Label::Interfered) => self.tp += 1,
            (Label::Clean, Label::Interfered) => self.fp += 1,
            (Label::Clean, Label::Clean) => self.tn += 1,
            (Label::Interfered, Label::Clean) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

impl Add for ConfusionMatrix {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl AddAssign for ConfusionMatrix {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Harmonic mean of precision and recall; `None` when both are zero.
pub fn f1_score(precision: f64, recall: f64) -> Option<f64> {
    let s = precision + recall;
    (s > 0.0).then(|| 2.0 * precision * recall / s)
}

pub fn derive(cm: &ConfusionMatrix) -> Result<Metrics> {
    if cm.total() == 0 {
        return invalid("confusion matrix is empty");
    }
    let (accuracy, _) = ratio(cm.tp + cm.tn, cm.total());
    let (precision, precision_undefined) = ratio(cm.tp, cm.tp + cm.fp);
    let (recall, recall_undefined) = ratio(cm.tp, cm.tp + cm.fn_);
    let (f1, f1_undefined) = match f1_score(precision, recall) {
        Some(f) => (f, false),
        None => (0.0, true),
    };
    Ok(Metrics {
        accuracy,
        precision,
        recall,
        f1,
        precision_undefined,
        recall_undefined,
        f1_undefined,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub snr_db: f64,
    pub interf_power_db: Option<f64>,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    pub train_time_s: Option<f64>,
    pub inference_time_s: f64,
    pub per_cell: Vec<CellReport>,
    pub config: Option<serde_json::Value>,
}

impl EvalReport {
    /// Builds a report from per-sample decisions, grouping by grid cell.
    pub fn from_predictions(samples: &[LabeledSample], predicted: &[Label], inference_time_s: f64) -> Result<Self> {
        if samples.is_empty() || samples.len() != predicted.len() {
            return invalid("need one prediction per sample and at least one sample");
        }
        let mut confusion = ConfusionMatrix::default();
        let mut cells: Vec<(f64, Option<f64>, ConfusionMatrix)> = Vec::new();
        for (s, &p) in samples.iter().zip(predicted) {
            confusion.record(s.label, p);
            let idx = match cells
                .iter()
                .position(|c| c.0 == s.snr_db && c.1 == s.interf_power_db)
            {
                Some(i) => i,
                None => {
                    cells.push((s.snr_db, s.interf_power_db, ConfusionMatrix::default()));
                    cells.len() - 1
                }
            };
            cells[idx].2.record(s.label, p);
        }
        cells.sort_by(|a, b| {
            a.0.total_cmp(&b.0).then_with(|| match (a.1, b.1) {
                (None, None) => std::cmp::Ordering::Equal,
                (None, Some(_)) => std::cmp::Ordering::Less,
                (Some(_), None) => std::cmp::Ordering::Greater,
                (Some(x), Some(y)) => x.total_cmp(&y),
            })
        });
        let per_cell = cells
            .into_iter()
            .map(|(snr_db, interf_power_db, confusion)| {
                Ok(CellReport {
                    snr_db,
                    interf_power_db,
                    confusion,
                    metrics: derive(&confusion)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            confusion,
            metrics: derive(&confusion)?,
            train_time_s: None,
            inference_time_s,
            per_cell,
            config: None,
        })
    }

    /// One row per grid cell. Clean cells leave `interf_power_db` empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("snr_db,interf_power_db,tp,fp,tn,fn,accuracy,precision,recall,f1\n");
        for c in &self.per_cell {
            let interf = c.interf_power_db.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                c.snr_db,
                interf,
                c.confusion.tp,
                c.confusion.fp,
                c.confusion.tn,
                c.confusion.fn_,
                c.metrics.accuracy,
                c.metrics.precision,
                c.metrics.recall,
                c.metrics.f1
            ));
        }
        out
    }
}

/// Classifies every sample with the model and reports wall-clock inference time.
pub fn evaluate(model: &Model<f32>, dataset: &Dataset) -> Result<EvalReport> {
    if dataset.is_empty() {
        return invalid("dataset is empty");
    }
    let started = Instant::now();
    let predicted = dataset
        .samples
        .par_iter()
        .map(|s| model.predict(&s.features).map(|(label, _)| label))
        .collect::<Result<Vec<_>>>()?;
    let elapsed = started.elapsed().as_secs_f64();
    EvalReport::from_predictions(&dataset.samples, &predicted, elapsed)
}

/// Second-peak rule of the correlation receiver.
///
/// Interference is declared when the wanted preamble's own window fails the
/// threshold, or when any other window's peak clears it.
pub fn baseline_decision(pdp: &[f64], threshold: f64, n_cs: usize, expected_v: usize) -> Label {
    let peaks = window_peaks(pdp, n_cs);
    let primary_ok = peaks
        .get(expected_v)
        .is_some_and(|p| p.value > threshold);
    let second = peaks
        .iter()
        .any(|p| p.window != expected_v && p.value > threshold);
    if !primary_ok || second {
        Label::Interfered
    } else {
        Label::Clean
    }
}

/// Regenerates each sample's received signal from its provenance and labels it
/// with [`baseline_decision`].
pub fn baseline_compare(dataset: &Dataset, receiver_cfg: &ReceiverConfig) -> Result<EvalReport> {
    let Some(scenario) = dataset.meta.scenario.as_ref() else {
        return invalid("dataset carries no generating scenario; cannot regenerate observations");
    };
    if dataset.is_empty() {
        return invalid("dataset is empty");
    }
    let started = Instant::now();
    let predicted = dataset
        .samples
        .par_iter()
        .map(|s| baseline_label(s, scenario, receiver_cfg))
        .collect::<Result<Vec<_>>>()?;
    let elapsed = started.elapsed().as_secs_f64();
    EvalReport::from_predictions(&dataset.samples, &predicted, elapsed)
}

fn baseline_label(s: &LabeledSample, scenario: &ScenarioConfig, cfg: &ReceiverConfig) -> Result<Label> {
    let mut sc = scenario.clone();
    sc.signal.root_u = s.seq_idx_signal;
    if let Some(u) = s.seq_idx_interf {
        sc.interferer.root_u = u;
    }
    let obs = sc.observe(s.snr_db, s.interf_power_db, s.seed)?;
    let num = &sc.numerology;
    let root = zc_root(sc.signal.root_u, num.n_zc)?;
    let (pdp, det) = receive(&obs.per_antenna, num, &root, sc.signal.n_cs, cfg)?;
    Ok(baseline_decision(&pdp, det.threshold, sc.signal.n_cs, sc.signal.preamble_index_v))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cm(tp: u64, fp: u64, tn: u64, fn_: u64) -> ConfusionMatrix {
        ConfusionMatrix { tp, fp, tn, fn_ }
    }

    #[test]
    fn perfect_classifier() {
        let m = derive(&cm(5, 0, 5, 0)).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn reported_triples_are_consistent() {
        assert!((f1_score(0.756, 0.805).unwrap() - 0.780).abs() <= 1e-3);
        assert!((f1_score(0.847, 0.925).unwrap() - 0.884).abs() <= 1e-3);
    }

    #[test]
    fn zero_denominators_are_flagged() {
        let m = derive(&cm(0, 0, 4, 0)).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert!(m.precision_undefined && m.recall_undefined && m.f1_undefined);
        assert_eq!(m.precision, 0.0);
        assert!(m.f1.is_finite());
        assert!(derive(&ConfusionMatrix::default()).is_err());
    }

    #[test]
    fn f1_lies_between_precision_and_recall() {
        for (p, r) in [(0.1, 0.9), (0.5, 0.5), (0.99, 0.3)] {
            let f = f1_score(p, r).unwrap();
            assert!(f >= f64::min(p, r) - 1e-15 && f <= f64::max(p, r) + 1e-15);
        }
    }

    fn sample(label: Label, snr: f64, interf: Option<f64>) -> LabeledSample {
        LabeledSample {
            features: Vec::new(),
            label,
            snr_db: snr,
            interf_power_db: interf,
            seq_idx_signal: 22,
            seq_idx_interf: interf.map(|_| 22),
            seed: 0,
        }
    }

    #[test]
    fn always_interfered_on_balanced_set() {
        let samples = vec![
            sample(Label::Clean, -6.0, None),
            sample(Label::Clean, -9.0, None),
            sample(Label::Interfered, -6.0, Some(-6.0)),
            sample(Label::Interfered, -9.0, Some(-30.0)),
        ];
        let r = EvalReport::from_predictions(&samples, &[Label::Interfered; 4], 0.0).unwrap();
        assert_eq!(r.metrics.accuracy, 0.5);
        assert_eq!(r.metrics.recall, 1.0);
        let sum = r
            .per_cell
            .iter()
            .fold(ConfusionMatrix::default(), |acc, c| acc + c.confusion);
        assert_eq!(sum, r.confusion);
        assert_eq!(r.per_cell.len(), 4);
        assert_eq!(r.per_cell[0].snr_db, -9.0);
        assert_eq!(r.per_cell[0].interf_power_db, None);
        assert_eq!(r.to_csv().lines().count(), 5);
    }

    #[test]
    fn report_metrics_recompute_from_counts() {
        let samples = vec![
            sample(Label::Clean, -6.0, None),
            sample(Label::Interfered, -6.0, Some(-6.0)),
            sample(Label::Interfered, -6.0, Some(-6.0)),
        ];
        let preds = [Label::Interfered, Label::Interfered, Label::Clean];
        let r = EvalReport::from_predictions(&samples, &preds, 0.0).unwrap();
        assert_eq!(derive(&r.confusion).unwrap(), r.metrics);
        assert_eq!(r.confusion, cm(1, 1, 0, 1));
    }

    #[test]
    fn second_peak_rule() {
        let mut pdp = vec![1.0; 839];
        assert_eq!(baseline_decision(&pdp, 13.0, 13, 32), Label::Interfered);
        pdp[416] = 100.0;
        assert_eq!(baseline_decision(&pdp, 13.0, 13, 32), Label::Clean);
        pdp[39] = 50.0;
        assert_eq!(baseline_decision(&pdp, 13.0, 13, 32), Label::Interfered);
    }
}
