use std::path::Path;

use serde::{Deserialize, Serialize};

use super::gain::{compute_gain, tt_reduction_pct};
use crate::error::Result;

/// One grid cell: a class selection on one backbone at one training size,
/// averaged over repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// Species name for A-type rows, "Mixed" for B-type rows.
    pub label: String,
    pub mixed: bool,
    pub backbone: String,
    pub n_classes: usize,
    pub f: f64,
    pub train_per_class: usize,
    pub ta_baseline: Option<f64>,
    pub ta_proposed: Option<f64>,
    pub ta_baseline_sd: Option<f64>,
    pub ta_proposed_sd: Option<f64>,
    pub gain_pp: Option<f64>,
    pub gain_rel_pct: Option<f64>,
    pub tt_baseline_s: Option<f64>,
    pub tt_proposed_s: Option<f64>,
    pub tt_reduction_pct: Option<f64>,
    /// `TT_b / TT_p`.
    pub tt_speedup: Option<f64>,
    pub epochs_baseline: Option<f64>,
    pub epochs_proposed: Option<f64>,
    pub params_baseline: Option<usize>,
    pub params_proposed: Option<usize>,
    /// Confidence similarity of the selected classes, when logits exist.
    pub similarity_pct: Option<f64>,
    pub repeats: usize,
    pub threads: usize,
}

impl ReportRow {
    /// Fills the derived comparison fields from the measured ones.
    pub fn derive_comparisons(&mut self) {
        if let (Some(b), Some(p)) = (self.ta_baseline, self.ta_proposed) {
            let g = compute_gain(b, p);
            self.gain_pp = Some(g.pp);
            self.gain_rel_pct = g.rel_pct;
        }
        if let (Some(b), Some(p)) = (self.tt_baseline_s, self.tt_proposed_s) {
            self.tt_reduction_pct = tt_reduction_pct(b, p);
            self.tt_speedup = (p > 0.0).then(|| b / p);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub seed: u64,
    pub threads: usize,
    /// Deviations and interpretation notes recorded during the run.
    #[serde(default)]
    pub notes: Vec<String>,
}

impl ExperimentReport {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    /// Copy with every wall-clock derived field cleared, for comparing runs.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        for row in &mut r.rows {
            row.tt_baseline_s = None;
            row.tt_proposed_s = None;
            row.tt_reduction_pct = None;
            row.tt_speedup = None;
        }
        r
    }
}

fn mean_of<T>(rows: &[&ReportRow], get: impl Fn(&ReportRow) -> Option<T>) -> Option<f64>
where
    T: Into<f64>,
{
    let vals: Vec<f64> = rows.iter().filter_map(|r| get(r).map(Into::into)).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Unweighted mean of every numeric column over `rows`. Gains and the TT
/// reduction are recomputed from the averaged accuracies and times.
pub fn average_row(rows: &[&ReportRow]) -> ReportRow {
    let first = rows.first();
    let mut avg = ReportRow {
        label: "Average".into(),
        mixed: false,
        backbone: first.map(|r| r.backbone.clone()).unwrap_or_default(),
        n_classes: first.map_or(0, |r| r.n_classes),
        f: first.map_or(0.0, |r| r.f),
        train_per_class: first.map_or(0, |r| r.train_per_class),
        ta_baseline: mean_of(rows, |r| r.ta_baseline),
        ta_proposed: mean_of(rows, |r| r.ta_proposed),
        ta_baseline_sd: None,
        ta_proposed_sd: None,
        gain_pp: None,
        gain_rel_pct: None,
        tt_baseline_s: mean_of(rows, |r| r.tt_baseline_s),
        tt_proposed_s: mean_of(rows, |r| r.tt_proposed_s),
        tt_reduction_pct: None,
        tt_speedup: None,
        epochs_baseline: mean_of(rows, |r| r.epochs_baseline),
        epochs_proposed: mean_of(rows, |r| r.epochs_proposed),
        params_baseline: None,
        params_proposed: None,
        similarity_pct: mean_of(rows, |r| r.similarity_pct),
        repeats: first.map_or(0, |r| r.repeats),
        threads: first.map_or(0, |r| r.threads),
    };
    avg.derive_comparisons();
    avg
}
