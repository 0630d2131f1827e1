use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::triplets::{pair_overlap, EvalFrame, PredictedTriplet};
use crate::geometry::{iou, BoundingBox};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PersonScores {
    pub recall: f64,
    pub precision: f64,
    pub accuracy: f64,
    pub f1: f64,
}

/// Example-based multi-label scores of a predicted set `z` against `y`.
/// `None` when both sets are empty; any other case with an empty side
/// scores zero everywhere.
pub fn set_scores<T: Ord>(y: &BTreeSet<T>, z: &BTreeSet<T>) -> Option<PersonScores> {
    if y.is_empty() && z.is_empty() {
        return None;
    }
    if y.is_empty() || z.is_empty() {
        return Some(PersonScores::default());
    }
    let inter = y.intersection(z).count() as f64;
    let union = y.union(z).count() as f64;
    let (ny, nz) = (y.len() as f64, z.len() as f64);
    Some(PersonScores {
        recall: inter / ny,
        precision: inter / nz,
        accuracy: inter / union,
        f1: 2.0 * inter / (ny + nz),
    })
}

/// Identity of a triplet inside one human's sets. Predictions on a pair
/// that matches no annotated pair can never be correct.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TripletId {
    Annotated { object: u32, predicate: usize },
    Unmatched { pair: usize, predicate: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct HumanResult {
    pub video: u32,
    pub frame: u32,
    pub human: u32,
    /// Whether the human has any annotated triplet.
    pub annotated: bool,
    pub scores: PersonScores,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PersonwiseSummary {
    /// Unweighted mean over every scored human. Recall averages only over
    /// annotated humans, where it is defined.
    pub mean: PersonScores,
    pub humans: Vec<HumanResult>,
}

fn box_key(b: &BoundingBox) -> [u64; 4] {
    b.coords().map(f64::to_bits)
}

/// Person-wise top-`k` scores over `frames`.
///
/// Predicted pairs are first assigned one-to-one to annotated pairs,
/// greedily by descending product of the human and object IoUs (both must
/// exceed 0.5). Unassigned predicted pairs count against the annotated
/// human their subject box overlaps best (IoU > 0.5). Each human keeps the
/// `k` most confident triplets whose confidence exceeds `threshold`.
pub fn personwise_topk(preds: &[PredictedTriplet], frames: &[EvalFrame], k: usize, threshold: f64) -> PersonwiseSummary {
    let mut by_frame: HashMap<(u32, u32), Vec<&PredictedTriplet>> = HashMap::new();
    for p in preds {
        by_frame.entry((p.video, p.frame)).or_default().push(p);
    }
    let mut humans = Vec::new();
    for f in frames {
        let fp = by_frame.get(&f.key()).map(Vec::as_slice).unwrap_or(&[]);
        // distinct predicted pairs in first-seen order
        let mut pair_index: HashMap<([u64; 4], [u64; 4]), usize> = HashMap::new();
        let mut pairs: Vec<(BoundingBox, BoundingBox, Vec<&PredictedTriplet>)> = Vec::new();
        for &p in fp {
            let key = (box_key(&p.human_box), box_key(&p.object_box));
            let i = *pair_index.entry(key).or_insert_with(|| {
                pairs.push((p.human_box, p.object_box, Vec::new()));
                pairs.len() - 1
            });
            pairs[i].2.push(p);
        }
        let mut cand = Vec::new();
        for (pi, (hb, ob, _)) in pairs.iter().enumerate() {
            for (gi, g) in f.pairs.iter().enumerate() {
                if let Some(s) = pair_overlap((hb, ob), (&g.human_box, &g.object_box)) {
                    cand.push((s, pi, gi));
                }
            }
        }
        cand.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
        let mut assigned: Vec<Option<usize>> = vec![None; pairs.len()];
        let mut taken = vec![false; f.pairs.len()];
        for (_, pi, gi) in cand {
            if assigned[pi].is_none() && !taken[gi] {
                assigned[pi] = Some(gi);
                taken[gi] = true;
            }
        }
        // owner human of every predicted pair
        let owner: Vec<Option<u32>> = pairs
            .iter()
            .zip(&assigned)
            .map(|((hb, _, _), a)| match a {
                Some(gi) => Some(f.pairs[*gi].human),
                None => {
                    let mut best: Option<(f64, u32)> = None;
                    for (h, b) in &f.humans {
                        let v = iou(hb, b);
                        if v > 0.5 && best.is_none_or(|(bv, _)| v > bv) {
                            best = Some((v, *h));
                        }
                    }
                    best.map(|(_, h)| h)
                }
            })
            .collect();

        for &(h, _) in &f.humans {
            let y: BTreeSet<TripletId> = f
                .pairs
                .iter()
                .filter(|g| g.human == h)
                .flat_map(|g| {
                    g.predicates.iter().map(|&predicate| TripletId::Annotated {
                        object: g.object,
                        predicate,
                    })
                })
                .collect();
            let mut scored: Vec<(f64, TripletId)> = Vec::new();
            for (pi, (_, _, ps)) in pairs.iter().enumerate() {
                if owner[pi] != Some(h) {
                    continue;
                }
                for p in ps {
                    let id = match assigned[pi] {
                        Some(gi) => TripletId::Annotated {
                            object: f.pairs[gi].object,
                            predicate: p.predicate,
                        },
                        None => TripletId::Unmatched {
                            pair: pi,
                            predicate: p.predicate,
                        },
                    };
                    if p.confidence > threshold {
                        scored.push((p.confidence, id));
                    }
                }
            }
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut z = BTreeSet::new();
            for (_, id) in scored {
                if z.len() == k {
                    break;
                }
                z.insert(id);
            }
            if let Some(scores) = set_scores(&y, &z) {
                humans.push(HumanResult {
                    video: f.video,
                    frame: f.frame,
                    human: h,
                    annotated: !y.is_empty(),
                    scores,
                });
            }
        }
    }
    let n = humans.len().max(1) as f64;
    let sum = |get: fn(&PersonScores) -> f64| humans.iter().map(|h| get(&h.scores)).sum::<f64>() / n;
    let annotated: Vec<f64> = humans.iter().filter(|h| h.annotated).map(|h| h.scores.recall).collect();
    PersonwiseSummary {
        mean: PersonScores {
            recall: annotated.iter().sum::<f64>() / annotated.len().max(1) as f64,
            precision: sum(|s| s.precision),
            accuracy: sum(|s| s.accuracy),
            f1: sum(|s| s.f1),
        },
        humans,
    }
}
