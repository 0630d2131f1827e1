use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::data::Video;
use crate::geometry::{iou, BoundingBox};

/// One scored ⟨human, predicate, object⟩ hypothesis in a keyframe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictedTriplet {
    pub video: u32,
    /// Keyframe timestamp the prediction is anchored at.
    pub frame: u32,
    pub human_box: BoundingBox,
    pub object_box: BoundingBox,
    pub object_class: usize,
    pub predicate: usize,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_track: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_track: Option<u32>,
}

/// One annotated triplet.
#[derive(Debug, Clone, PartialEq)]
pub struct GtTriplet {
    pub video: u32,
    pub frame: u32,
    pub human: u32,
    pub object: u32,
    pub human_box: BoundingBox,
    pub object_box: BoundingBox,
    pub object_class: usize,
    pub predicate: usize,
}

impl GtTriplet {
    pub fn category(&self) -> (usize, usize) {
        (self.object_class, self.predicate)
    }
}

/// A ground-truth pair at the evaluated keyframe with the predicates it
/// holds at the label keyframe.
#[derive(Debug, Clone, PartialEq)]
pub struct GtPair {
    pub human: u32,
    pub object: u32,
    pub human_box: BoundingBox,
    pub object_box: BoundingBox,
    pub object_class: usize,
    pub predicates: BTreeSet<usize>,
}

/// Ground truth of one evaluated keyframe.
///
/// Boxes are those of the evaluated (anchor) keyframe. Under anticipation
/// only pairs and humans still present at the label keyframe are kept;
/// pairs that vanish are listed so that predictions on them can be dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalFrame {
    pub video: u32,
    pub frame: u32,
    pub humans: Vec<(u32, BoundingBox)>,
    pub pairs: Vec<GtPair>,
    pub vanished: Vec<(BoundingBox, BoundingBox)>,
}

impl EvalFrame {
    pub fn triplets(&self) -> impl Iterator<Item = GtTriplet> + '_ {
        self.pairs.iter().flat_map(move |p| {
            p.predicates.iter().map(move |&predicate| GtTriplet {
                video: self.video,
                frame: self.frame,
                human: p.human,
                object: p.object,
                human_box: p.human_box,
                object_box: p.object_box,
                object_class: p.object_class,
                predicate,
            })
        })
    }

    pub fn key(&self) -> (u32, u32) {
        (self.video, self.frame)
    }
}

/// Evaluation frames for anticipation gap `tau_a` (0 is detection).
///
/// Every keyframe `t` whose label keyframe `t + tau_a` exists is evaluated.
pub fn ground_truth(videos: &[Video], tau_a: usize) -> Vec<EvalFrame> {
    let mut out = Vec::new();
    for video in videos {
        for pos in 0..video.len() {
            if pos + tau_a >= video.len() {
                break;
            }
            let (now, later) = (video.frame(pos), video.frame(pos + tau_a));
            let humans = video
                .humans_at(pos)
                .into_iter()
                .filter(|&h| later.box_of(h).is_some())
                .map(|h| (h, now.box_of(h).expect("visible human")))
                .collect();
            let mut pairs = Vec::new();
            let mut vanished = Vec::new();
            for (h, o) in video.candidate_pairs(pos) {
                let (hb, ob) = (now.box_of(h).expect("visible"), now.box_of(o).expect("visible"));
                if later.box_of(h).is_none() || later.box_of(o).is_none() {
                    vanished.push((hb, ob));
                    continue;
                }
                pairs.push(GtPair {
                    human: h,
                    object: o,
                    human_box: hb,
                    object_box: ob,
                    object_class: video.class_of(o),
                    predicates: later.labels(h, o).cloned().unwrap_or_default(),
                });
            }
            out.push(EvalFrame {
                video: video.id,
                frame: now.t,
                humans,
                pairs,
                vanished,
            });
        }
    }
    out
}

/// True iff both boxes overlap with IoU strictly above 0.5 and the object
/// class and predicate agree. Frames are assumed equal.
pub fn match_triplet(pred: &PredictedTriplet, gt: &GtTriplet) -> bool {
    pred.object_class == gt.object_class
        && pred.predicate == gt.predicate
        && iou(&pred.human_box, &gt.human_box) > 0.5
        && iou(&pred.object_box, &gt.object_box) > 0.5
}

pub(crate) fn pair_overlap(a: (&BoundingBox, &BoundingBox), b: (&BoundingBox, &BoundingBox)) -> Option<f64> {
    let (ih, io) = (iou(a.0, b.0), iou(a.1, b.1));
    (ih > 0.5 && io > 0.5).then_some(ih * io)
}

/// Drop predictions outside the evaluated frames and predictions whose
/// pair is best matched by a pair that is gone at the label keyframe.
pub fn anticipation_filter(preds: &[PredictedTriplet], frames: &[EvalFrame]) -> Vec<PredictedTriplet> {
    let index: HashMap<(u32, u32), &EvalFrame> = frames.iter().map(|f| (f.key(), f)).collect();
    preds
        .iter()
        .filter(|p| {
            let Some(f) = index.get(&(p.video, p.frame)) else {
                return false;
            };
            let pb = (&p.human_box, &p.object_box);
            let kept = f
                .pairs
                .iter()
                .filter_map(|g| pair_overlap(pb, (&g.human_box, &g.object_box)))
                .fold(f64::NEG_INFINITY, f64::max);
            let gone = f
                .vanished
                .iter()
                .filter_map(|(h, o)| pair_overlap(pb, (h, o)))
                .fold(f64::NEG_INFINITY, f64::max);
            gone == f64::NEG_INFINITY || kept >= gone
        })
        .cloned()
        .collect()
}

