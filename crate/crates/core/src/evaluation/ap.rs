use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::triplets::{match_triplet, GtTriplet, PredictedTriplet};
use crate::geometry::iou;

/// Confidence descending, then frame, human box and object box ascending.
pub fn ranking_order(a: &PredictedTriplet, b: &PredictedTriplet) -> Ordering {
    let boxes = |p: &PredictedTriplet| {
        let mut k = p.human_box.coords().to_vec();
        k.extend(p.object_box.coords());
        k
    };
    b.confidence
        .total_cmp(&a.confidence)
        .then((a.video, a.frame).cmp(&(b.video, b.frame)))
        .then_with(|| {
            boxes(a)
                .iter()
                .zip(boxes(b).iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

/// True/false positive flags of `preds` in ranked order. Each prediction
/// takes the unmatched ground truth it overlaps best (minimum of the two
/// box IoUs), if any.
pub fn rank_and_match(preds: &[PredictedTriplet], gts: &[GtTriplet]) -> Vec<bool> {
    let mut ranked: Vec<&PredictedTriplet> = preds.iter().collect();
    ranked.sort_by(|a, b| ranking_order(a, b));
    let mut by_frame: HashMap<(u32, u32), Vec<usize>> = HashMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_frame.entry((g.video, g.frame)).or_default().push(i);
    }
    let mut used = vec![false; gts.len()];
    ranked
        .iter()
        .map(|p| {
            let mut best: Option<(f64, usize)> = None;
            for &i in by_frame.get(&(p.video, p.frame)).map(Vec::as_slice).unwrap_or(&[]) {
                let g = &gts[i];
                if used[i] || !match_triplet(p, g) {
                    continue;
                }
                let ov = iou(&p.human_box, &g.human_box).min(iou(&p.object_box, &g.object_box));
                if best.is_none_or(|(b, _)| ov > b) {
                    best = Some((ov, i));
                }
            }
            match best {
                Some((_, i)) => {
                    used[i] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// All-point interpolated area under the precision-recall curve of one
/// triplet category. `None` when the category has no ground truth.
pub fn average_precision(preds: &[PredictedTriplet], gts: &[GtTriplet]) -> Option<f64> {
    if gts.is_empty() {
        return None;
    }
    let hits = rank_and_match(preds, gts);
    let n = gts.len() as f64;
    let mut precision = Vec::with_capacity(hits.len());
    let mut tp = 0.0;
    for (i, &h) in hits.iter().enumerate() {
        if h {
            tp += 1.0;
        }
        precision.push(tp / (i + 1) as f64);
    }
    // precision envelope from the right
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    Some(hits.iter().zip(&precision).filter(|(h, _)| **h).map(|(_, p)| p / n).sum())
}

/// Categories with fewer than `threshold` ground-truth instances.
pub fn rare_categories(gts: &[GtTriplet], threshold: usize) -> BTreeSet<(usize, usize)> {
    let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for g in gts {
        *counts.entry(g.category()).or_default() += 1;
    }
    counts.into_iter().filter(|&(_, n)| n < threshold).map(|(c, _)| c).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSummary {
    pub full: f64,
    pub nonrare: f64,
    pub rare: f64,
    pub categories: usize,
    pub rare_categories: usize,
    pub nonrare_categories: usize,
    /// AP of every scored category.
    #[serde(skip)]
    pub per_category: BTreeMap<(usize, usize), f64>,
}

/// Mean AP over the categories present in `gts`, and over its rare and
/// non-rare parts. An empty part scores 0.
pub fn mean_ap(preds: &[PredictedTriplet], gts: &[GtTriplet], rare: &BTreeSet<(usize, usize)>) -> MapSummary {
    let mut gt_by: BTreeMap<(usize, usize), Vec<GtTriplet>> = BTreeMap::new();
    for g in gts {
        gt_by.entry(g.category()).or_default().push(g.clone());
    }
    let mut pred_by: HashMap<(usize, usize), Vec<PredictedTriplet>> = HashMap::new();
    for p in preds {
        if gt_by.contains_key(&(p.object_class, p.predicate)) {
            pred_by.entry((p.object_class, p.predicate)).or_default().push(p.clone());
        }
    }
    let per_category: BTreeMap<(usize, usize), f64> = gt_by
        .iter()
        .map(|(c, g)| {
            let p = pred_by.get(c).map(Vec::as_slice).unwrap_or(&[]);
            (*c, average_precision(p, g).expect("category has ground truth"))
        })
        .collect();
    let mean = |it: Vec<f64>| if it.is_empty() { 0.0 } else { it.iter().sum::<f64>() / it.len() as f64 };
    let rare_aps: Vec<f64> = per_category.iter().filter(|(c, _)| rare.contains(c)).map(|(_, a)| *a).collect();
    let nonrare_aps: Vec<f64> = per_category.iter().filter(|(c, _)| !rare.contains(c)).map(|(_, a)| *a).collect();
    MapSummary {
        full: mean(per_category.values().copied().collect()),
        rare_categories: rare_aps.len(),
        nonrare_categories: nonrare_aps.len(),
        rare: mean(rare_aps),
        nonrare: mean(nonrare_aps),
        categories: per_category.len(),
        per_category,
    }
}
