//! Gathering the features of a batch of windows into dense inputs.

use std::collections::{BTreeMap, HashMap};

use super::config::{ModelConfig, WindowMode};
use crate::data::{Video, WindowSample};
use crate::error::{Error, Result};
use crate::features::{FeatureSource, GAZE_SIZE};
use crate::geometry::{spatial_mask, MASK_SIZE};
use crate::tensor::{Segment, Tensor};

/// A keyframe of a video as seen by the model, possibly mirrored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SceneKey {
    pub video: u32,
    pub pos: usize,
    pub flipped: bool,
}

/// Where one sample's temporal sequence reads its rows from.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleLayout {
    /// Pair rows of the sequence, in order.
    pub pair_rows: Vec<usize>,
    /// Positional-encoding index of each sequence row.
    pub pe_index: Vec<usize>,
    /// Sequence row holding the pair at the last window position.
    pub output_row: usize,
    /// Scene of each of the `L` context slots.
    pub context_scenes: Vec<usize>,
    /// Gaze row of the sample's human for each context slot.
    pub context_gaze: Vec<usize>,
}

/// Dense model inputs for a batch of windows.
///
/// Every candidate pair of every referenced keyframe is embedded once;
/// pairs are stored contiguously per scene so the spatial encoder can run
/// over scene segments.
#[derive(Debug, Clone)]
pub struct BatchInput {
    pub scenes: Vec<SceneKey>,
    /// Pair-row range of each scene.
    pub scene_segments: Vec<Segment>,
    /// `(human, object)` track ids of every pair row.
    pub pairs: Vec<(u32, u32)>,
    pub v_s: Tensor,
    pub v_o: Tensor,
    pub v_rel: Tensor,
    /// `[P, 2, 27, 27]` binary masks.
    pub masks: Tensor,
    pub semantic: Tensor,
    /// Whether the object of each pair row is a person.
    pub object_is_human: Vec<bool>,
    /// Gaze row of the subject of each pair row.
    pub pair_gaze: Vec<usize>,
    /// `[G, 1, 64, 64]` gaze heatmaps, one per (scene, human).
    pub gaze: Tensor,
    pub samples: Vec<SampleLayout>,
    /// `[N, n_outputs]` multi-hot targets.
    pub targets: Tensor,
}

impl BatchInput {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    /// Collect features for `windows`. Every window must have exactly
    /// `config.window` slots and a target of `config.n_outputs()` entries.
    pub fn build(
        config: &ModelConfig,
        windows: &[WindowSample],
        videos: &[Video],
        features: &FeatureSource,
    ) -> Result<Self> {
        let by_id: HashMap<u32, &Video> = videos.iter().map(|v| (v.id, v)).collect();
        let video_of = |id: u32| {
            by_id
                .get(&id)
                .copied()
                .ok_or_else(|| Error::Integrity(format!("window refers to unknown video {id}")))
        };
        if features.visual_dim() != config.visual_dim || features.semantic_dim() != config.semantic_dim {
            return Err(Error::Dimension(format!(
                "features are {}/{} wide, model expects {}/{}",
                features.visual_dim(),
                features.semantic_dim(),
                config.visual_dim,
                config.semantic_dim
            )));
        }

        let mut scene_ids: BTreeMap<SceneKey, usize> = BTreeMap::new();
        for w in windows {
            if w.slots.len() != config.window {
                return Err(Error::Shape(format!(
                    "window has {} slots, model expects {}",
                    w.slots.len(),
                    config.window
                )));
            }
            if w.target.len() != config.n_outputs() {
                return Err(Error::Shape(format!(
                    "target has {} entries, model predicts {}",
                    w.target.len(),
                    config.n_outputs()
                )));
            }
            for &pos in &w.slots {
                scene_ids.entry(SceneKey { video: w.video, pos, flipped: w.flipped }).or_insert(0);
            }
        }
        let scenes: Vec<SceneKey> = scene_ids.keys().copied().collect();
        for (i, v) in scene_ids.values_mut().enumerate() {
            *v = i;
        }

        let (dv, ds) = (config.visual_dim, config.semantic_dim);
        let mut pairs = Vec::new();
        let mut segments = Vec::with_capacity(scenes.len());
        let (mut v_s, mut v_o, mut v_rel) = (Vec::new(), Vec::new(), Vec::new());
        let (mut masks, mut semantic, mut gaze) = (Vec::new(), Vec::new(), Vec::new());
        let mut object_is_human = Vec::new();
        let mut pair_gaze = Vec::new();
        let mut pair_row: HashMap<(usize, u32, u32), usize> = HashMap::new();
        let mut gaze_row: HashMap<(usize, u32), usize> = HashMap::new();

        for (si, key) in scenes.iter().enumerate() {
            let video = video_of(key.video)?;
            let frame = video.frame(key.pos);
            let start = pairs.len();
            let mut subject_cache: HashMap<u32, Vec<f64>> = HashMap::new();
            for h in video.humans_at(key.pos) {
                gaze_row.insert((si, h), gaze_row.len());
                gaze.extend(features.gaze(video, key.pos, h, key.flipped)?);
                subject_cache.insert(h, features.subject(video, key.pos, h)?);
            }
            for (h, o) in video.candidate_pairs(key.pos) {
                let missing = |id| Error::Integrity(format!("track {id} not visible at t={}", frame.t));
                let mut hb = frame.box_of(h).ok_or_else(|| missing(h))?;
                let mut ob = frame.box_of(o).ok_or_else(|| missing(o))?;
                if key.flipped {
                    hb = hb.flip_horizontal(video.width);
                    ob = ob.flip_horizontal(video.width);
                }
                pair_row.insert((si, h, o), pairs.len());
                pairs.push((h, o));
                v_s.extend_from_slice(&subject_cache[&h]);
                v_o.extend(features.object(video, key.pos, o)?);
                v_rel.extend(features.relation(video, key.pos, h, o)?);
                masks.extend(spatial_mask(&hb, &ob).to_f64());
                semantic.extend_from_slice(features.semantic(video.class_of(o))?);
                object_is_human.push(video.is_human(o));
                pair_gaze.push(gaze_row[&(si, h)]);
            }
            segments.push(Segment::new(start, pairs.len() - start));
        }
        let p = pairs.len();
        let g = gaze_row.len();
        for (name, data, d) in [("subject", &v_s, dv), ("object", &v_o, dv), ("relation", &v_rel, dv)] {
            if data.len() != p * d {
                return Err(Error::Dimension(format!("{name} features are not {d} wide")));
            }
        }

        let mut samples = Vec::with_capacity(windows.len());
        let mut targets = Vec::with_capacity(windows.len() * config.n_outputs());
        for w in windows {
            let scene_of = |pos: usize| scene_ids[&SceneKey { video: w.video, pos, flipped: w.flipped }];
            let context_scenes: Vec<usize> = w.slots.iter().map(|&pos| scene_of(pos)).collect();
            let context_gaze = context_scenes
                .iter()
                .map(|&s| {
                    gaze_row
                        .get(&(s, w.human))
                        .copied()
                        .ok_or_else(|| Error::Integrity(format!("human {} missing from a window slot", w.human)))
                })
                .collect::<Result<Vec<_>>>()?;
            let row_of = |s: usize| {
                pair_row.get(&(s, w.human, w.object)).copied().ok_or_else(|| {
                    Error::Integrity(format!("pair ({}, {}) missing from a window slot", w.human, w.object))
                })
            };
            let layout = match config.window_mode {
                WindowMode::Pairwise => {
                    let pair_rows = context_scenes.iter().map(|&s| row_of(s)).collect::<Result<Vec<_>>>()?;
                    SampleLayout {
                        pe_index: (0..pair_rows.len()).collect(),
                        output_row: pair_rows.len() - 1,
                        pair_rows,
                        context_scenes,
                        context_gaze,
                    }
                }
                WindowMode::Framewise => {
                    // each distinct keyframe once, encoded at its last slot
                    let mut last_slot: BTreeMap<usize, usize> = BTreeMap::new();
                    for (slot, &pos) in w.slots.iter().enumerate() {
                        last_slot.insert(pos, slot);
                    }
                    let mut pair_rows = Vec::new();
                    let mut pe_index = Vec::new();
                    let mut output_row = 0;
                    for (&pos, &slot) in &last_slot {
                        let s = scene_of(pos);
                        let seg = segments[s];
                        if pos == w.anchor {
                            output_row = pair_rows.len() + (row_of(s)? - seg.start);
                        }
                        pair_rows.extend(seg.start..seg.start + seg.len);
                        pe_index.extend(std::iter::repeat_n(slot, seg.len));
                    }
                    SampleLayout {
                        pair_rows,
                        pe_index,
                        output_row,
                        context_scenes,
                        context_gaze,
                    }
                }
            };
            samples.push(layout);
            targets.extend(w.target.iter().map(|&y| if y { 1.0 } else { 0.0 }));
        }

        Ok(Self {
            scenes,
            scene_segments: segments,
            pairs,
            v_s: Tensor::new(vec![p, dv], v_s)?,
            v_o: Tensor::new(vec![p, dv], v_o)?,
            v_rel: Tensor::new(vec![p, dv], v_rel)?,
            masks: Tensor::new(vec![p, 2, MASK_SIZE, MASK_SIZE], masks)?,
            semantic: Tensor::new(vec![p, ds], semantic)?,
            object_is_human,
            pair_gaze,
            gaze: Tensor::new(vec![g, 1, GAZE_SIZE, GAZE_SIZE], gaze)?,
            samples,
            targets: Tensor::new(vec![windows.len(), config.n_outputs()], targets)?,
        })
    }
}
