//! Triplet mAP, person-wise top-k metrics, anticipation exclusions and
//! threshold sweeps.

mod ap;
mod inference;
mod personwise;
mod triplets;
#[cfg(test)]
mod tests;

pub use ap::{average_precision, mean_ap, rank_and_match, ranking_order, rare_categories, MapSummary};
pub use inference::predict_triplets;
pub use personwise::{personwise_topk, set_scores, HumanResult, PersonScores, PersonwiseSummary, TripletId};
pub use triplets::{
    anticipation_filter, ground_truth, match_triplet, EvalFrame, GtPair, GtTriplet, PredictedTriplet,
};

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::RARE_THRESHOLD;
use crate::error::{Error, Result};

/// JSON schema of [`MetricsReport`].
pub const REPORT_SCHEMA: &str = include_str!("../../schema/metrics_report.schema.json");

/// Whether evaluation boxes come from annotations or from a detector.
///
/// In oracle mode only keyframes holding at least one prediction are
/// scored. In detection mode every keyframe is scored, so annotated
/// triplets of keyframes without predictions count as misses and their
/// humans as empty predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    #[default]
    Oracle,
    Detection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub mode: EvalMode,
    pub tau_a: usize,
    pub k: usize,
    pub threshold: f64,
    pub rare_threshold: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mode: EvalMode::Oracle,
            tau_a: 0,
            k: 5,
            threshold: 0.3,
            rare_threshold: RARE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportCounts {
    pub frames: usize,
    pub humans: usize,
    pub predictions: usize,
    pub gt_triplets: usize,
    pub categories: usize,
    pub rare_categories: usize,
    pub nonrare_categories: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub mode: EvalMode,
    pub tau_a: usize,
    pub k: usize,
    pub threshold: f64,
    pub map_full: f64,
    pub map_nonrare: f64,
    pub map_rare: f64,
    pub personwise: PersonScores,
    pub counts: ReportCounts,
    /// Effective configuration of the run that produced the report.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

/// Predictions and frames actually scored under `cfg`.
pub fn scored_subset(preds: &[PredictedTriplet], frames: &[EvalFrame], mode: EvalMode) -> (Vec<PredictedTriplet>, Vec<EvalFrame>) {
    let preds = anticipation_filter(preds, frames);
    let frames = match mode {
        EvalMode::Detection => frames.to_vec(),
        EvalMode::Oracle => {
            let with: HashSet<(u32, u32)> = preds.iter().map(|p| (p.video, p.frame)).collect();
            frames.iter().filter(|f| with.contains(&f.key())).cloned().collect()
        }
    };
    (preds, frames)
}

/// Score predictions against evaluation frames built for `cfg.tau_a`.
pub fn evaluate(preds: &[PredictedTriplet], frames: &[EvalFrame], cfg: &EvalConfig) -> MetricsReport {
    let (preds, frames) = scored_subset(preds, frames, cfg.mode);
    let gts: Vec<GtTriplet> = frames.iter().flat_map(EvalFrame::triplets).collect();
    let rare = rare_categories(&gts, cfg.rare_threshold);
    let map = mean_ap(&preds, &gts, &rare);
    let pw = personwise_topk(&preds, &frames, cfg.k, cfg.threshold);
    MetricsReport {
        mode: cfg.mode,
        tau_a: cfg.tau_a,
        k: cfg.k,
        threshold: cfg.threshold,
        map_full: map.full,
        map_nonrare: map.nonrare,
        map_rare: map.rare,
        personwise: pw.mean,
        counts: ReportCounts {
            frames: frames.len(),
            humans: pw.humans.len(),
            predictions: preds.len(),
            gt_triplets: gts.len(),
            categories: map.categories,
            rare_categories: map.rare_categories,
            nonrare_categories: map.nonrare_categories,
        },
        config: None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
    pub accuracy: f64,
    pub f1: f64,
}

/// `0.05, 0.10, ..., 0.95`.
pub fn default_thresholds() -> Vec<f64> {
    (1..20).map(|i| i as f64 * 5.0 / 100.0).collect()
}

/// Person-wise top-k scores at each threshold.
pub fn threshold_sweep(preds: &[PredictedTriplet], frames: &[EvalFrame], cfg: &EvalConfig, thresholds: &[f64]) -> Vec<SweepRow> {
    let (preds, frames) = scored_subset(preds, frames, cfg.mode);
    thresholds
        .iter()
        .map(|&threshold| {
            let s = personwise_topk(&preds, &frames, cfg.k, threshold).mean;
            SweepRow {
                threshold,
                recall: s.recall,
                precision: s.precision,
                accuracy: s.accuracy,
                f1: s.f1,
            }
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn write_predictions(path: impl AsRef<Path>, preds: &[PredictedTriplet]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for p in preds {
        serde_json::to_writer(&mut out, p).map_err(|e| Error::Io(e.into()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictedTriplet>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: PredictedTriplet =
            serde_json::from_str(&line).map_err(|e| Error::Schema(format!("predictions line {}: {e}", i + 1)))?;
        if !(0.0..=1.0).contains(&p.confidence) {
            return Err(Error::Schema(format!("predictions line {}: confidence outside [0, 1]", i + 1)));
        }
        out.push(p);
    }
    Ok(out)
}
