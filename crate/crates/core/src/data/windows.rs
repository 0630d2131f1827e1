use serde::{Deserialize, Serialize};

use super::Video;
use crate::geometry::BoundingBox;

/// How sliding windows are cut from a video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    /// Window length `L` in keyframes.
    pub length: usize,
    /// Anticipation gap in keyframes; 0 is plain detection.
    pub tau_a: usize,
    /// Keep only anchors whose pair is visible in all `L` preceding keyframes.
    pub full_history_only: bool,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            length: 6,
            tau_a: 0,
            full_history_only: false,
        }
    }
}

/// One human-object pair observed over `L` keyframes, with the labels of
/// the keyframe to be predicted.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub video: u32,
    pub human: u32,
    pub object: u32,
    pub object_class: usize,
    /// Keyframe position of the last observation.
    pub anchor: usize,
    /// Keyframe position whose labels form the target.
    pub label_pos: usize,
    /// Keyframe positions of the `L` slots, oldest first, after padding.
    pub slots: Vec<usize>,
    /// Human and object boxes per slot.
    pub boxes: Vec<(BoundingBox, BoundingBox)>,
    /// Multi-hot predicate vector of the label frame.
    pub target: Vec<bool>,
    pub flipped: bool,
}

impl WindowSample {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.target.iter().enumerate().filter(|(_, &y)| y).map(|(i, _)| i)
    }
}

/// All windows of a video, anchors in time order and pairs in
/// [`Video::candidate_pairs`] order.
///
/// A pair visible in fewer than `L` keyframes of `[anchor - L + 1, anchor]`
/// is front-padded by repeating its earliest observation. Anchors whose
/// label frame `anchor + tau_a` lies beyond the video are skipped.
pub fn build_windows(video: &Video, cfg: &WindowConfig, n_predicates: usize) -> Vec<WindowSample> {
    assert!(cfg.length >= 1, "window length must be positive");
    let l = cfg.length;
    let mut out = Vec::new();
    for anchor in 0..video.len() {
        let label_pos = anchor + cfg.tau_a;
        if label_pos >= video.len() {
            break;
        }
        let first = (anchor + 1).saturating_sub(l);
        let label_frame = video.frame(label_pos);
        for (h, o) in video.candidate_pairs(anchor) {
            let observed: Vec<usize> = (first..=anchor)
                .filter(|&p| {
                    let f = video.frame(p);
                    f.box_of(h).is_some() && f.box_of(o).is_some()
                })
                .collect();
            if cfg.full_history_only && observed.len() < l {
                continue;
            }
            let mut slots = vec![observed[0]; l - observed.len()];
            slots.extend_from_slice(&observed);
            let boxes = slots
                .iter()
                .map(|&p| {
                    let f = video.frame(p);
                    (f.box_of(h).expect("present"), f.box_of(o).expect("present"))
                })
                .collect();
            let mut target = vec![false; n_predicates];
            if let Some(preds) = label_frame.labels(h, o) {
                for &p in preds {
                    target[p] = true;
                }
            }
            out.push(WindowSample {
                video: video.id,
                human: h,
                object: o,
                object_class: video.class_of(o),
                anchor,
                label_pos,
                slots,
                boxes,
                target,
                flipped: false,
            });
        }
    }
    out
}

/// Mirror every box of a window about the vertical axis of the frame.
/// Labels are untouched; applying it twice restores the input.
pub fn horizontal_flip(sample: &WindowSample, frame_width: f64) -> WindowSample {
    WindowSample {
        boxes: sample
            .boxes
            .iter()
            .map(|(h, o)| (h.flip_horizontal(frame_width), o.flip_horizontal(frame_width)))
            .collect(),
        flipped: !sample.flipped,
        ..sample.clone()
    }
}
