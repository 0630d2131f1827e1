//! Scripted synthetic videos in which gaze foreshadows interactions.
//!
//! Every person owns a hand-held object overlapping their box. Per keyframe
//! a person is either attending to that object or not (a two-state Markov
//! chain that starts inattentive). Attending people look at the object's
//! center; the others have no gaze target. Labels follow the script:
//!
//! - own object: `next_to` always, `watch` while attending, `hold` on the
//!   keyframe after an attending one;
//! - distractor objects: a fixed spatial relation per distractor class;
//! - other people and other people's objects: no label.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FrameRecord, GazeRecord, HoiRecord, TrackRecord, Video, VideoRecord, Vocabulary, HUMAN_CLASS};
use crate::error::{Error, Result};
use crate::features::stream_seed;
use crate::geometry::BoundingBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistractorSpec {
    pub class: String,
    pub relation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub train_videos: usize,
    pub val_videos: usize,
    /// Keyframes per video.
    pub frames: usize,
    pub humans: usize,
    pub distractors: usize,
    pub width: f64,
    pub height: f64,
    /// Probability of starting to attend on a keyframe after an inattentive one.
    pub attend_onset: f64,
    /// Probability of still attending on a keyframe after an attentive one.
    pub attend_persist: f64,
    pub handheld_classes: Vec<String>,
    pub distractor_classes: Vec<DistractorSpec>,
    pub near_relation: String,
    pub gaze_action: String,
    pub followup_action: String,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        let s = |x: &str| x.to_string();
        Self {
            train_videos: 20,
            val_videos: 10,
            frames: 8,
            humans: 2,
            distractors: 1,
            width: 640.0,
            height: 360.0,
            attend_onset: 0.5,
            attend_persist: 0.7,
            handheld_classes: vec![s("cup"), s("cell_phone"), s("book"), s("bottle")],
            distractor_classes: vec![
                DistractorSpec { class: s("chair"), relation: s("behind") },
                DistractorSpec { class: s("tv"), relation: s("in_front_of") },
            ],
            near_relation: s("next_to"),
            gaze_action: s("watch"),
            followup_action: s("hold"),
        }
    }
}

/// Generated splits plus the label tallies emitted by the script.
#[derive(Debug, Clone)]
pub struct GeneratedScenario {
    pub train: Vec<Video>,
    pub val: Vec<Video>,
    /// Scripted predicate occurrences per split (`[train, val]`).
    pub predicate_tallies: [Vec<usize>; 2],
}

struct Resolved {
    handheld: Vec<usize>,
    distractors: Vec<(usize, usize)>,
    near: usize,
    watch: usize,
    follow: usize,
}

fn resolve(spec: &ScenarioSpec, vocab: &Vocabulary) -> Result<Resolved> {
    let obj = |n: &str| vocab.object_id(n).ok_or_else(|| Error::Schema(format!("unknown object class '{n}'")));
    let pred = |n: &str| vocab.predicate_id(n).ok_or_else(|| Error::Schema(format!("unknown predicate '{n}'")));
    if spec.frames == 0 || spec.humans == 0 || spec.handheld_classes.is_empty() {
        return Err(Error::Schema("scenario needs frames, humans and hand-held classes".into()));
    }
    if spec.distractors > 0 && spec.distractor_classes.is_empty() {
        return Err(Error::Schema("distractors requested but no distractor classes given".into()));
    }
    for p in [spec.attend_onset, spec.attend_persist] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Schema(format!("probability {p} outside [0, 1]")));
        }
    }
    if !(spec.width > 0.0 && spec.height >= 200.0) {
        return Err(Error::Schema("frame must be at least 200 pixels tall".into()));
    }
    Ok(Resolved {
        handheld: spec.handheld_classes.iter().map(|c| obj(c)).collect::<Result<_>>()?,
        distractors: spec
            .distractor_classes
            .iter()
            .map(|d| Ok((obj(&d.class)?, pred(&d.relation)?)))
            .collect::<Result<_>>()?,
        near: pred(&spec.near_relation)?,
        watch: pred(&spec.gaze_action)?,
        follow: pred(&spec.followup_action)?,
    })
}

fn clamp_box(x1: f64, y1: f64, x2: f64, y2: f64, w: f64, h: f64) -> BoundingBox {
    let (x1, x2) = (x1.clamp(0.0, w - 2.0), x2.clamp(0.0, w));
    let (y1, y2) = (y1.clamp(0.0, h - 2.0), y2.clamp(0.0, h));
    BoundingBox::new(x1, y1, x2.max(x1 + 1.0), y2.max(y1 + 1.0)).expect("non-degenerate by construction")
}

fn generate_video(spec: &ScenarioSpec, r: &Resolved, id: u32, seed: u64, tally: &mut [usize]) -> VideoRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (spec.width, spec.height);
    let n = spec.frames;
    let mut tracks: Vec<TrackRecord> = Vec::new();
    let mut frames: Vec<FrameRecord> = (0..n as u32)
        .map(|t| FrameRecord { t, hois: Vec::new(), gaze: Vec::new() })
        .collect();
    let mut next_id = 1u32;
    let slot = w / spec.humans as f64;
    for k in 0..spec.humans {
        let (hid, oid) = (next_id, next_id + 1);
        next_id += 2;
        let class = r.handheld[rng.random_range(0..r.handheld.len())];
        let mut cx = slot * (k as f64 + 0.5) + rng.random_range(-0.1..0.1) * slot;
        let hw = rng.random_range(0.35..0.5) * slot.min(200.0);
        let hh = rng.random_range(180.0..230.0f64).min(h - 20.0);
        let bottom = rng.random_range((h - 60.0).max(hh)..h);
        let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let size = rng.random_range(30.0..45.0);
        let mut human = TrackRecord { track_id: hid, class_id: HUMAN_CLASS, boxes: Default::default() };
        let mut object = TrackRecord { track_id: oid, class_id: class, boxes: Default::default() };
        let mut attending = false;
        let mut was_attending = false;
        for t in 0..n {
            if t > 0 {
                cx = (cx + rng.random_range(-6.0..6.0)).clamp(hw / 2.0 + size, w - hw / 2.0 - size);
                attending = if attending {
                    rng.random::<f64>() < spec.attend_persist
                } else {
                    rng.random::<f64>() < spec.attend_onset
                };
            }
            let hb = clamp_box(cx - hw / 2.0, bottom - hh, cx + hw / 2.0, bottom, w, h);
            let (ox, oy) = (cx + side * 0.4 * hw, bottom - 0.55 * hh);
            let ob = clamp_box(ox - size / 2.0, oy - size / 2.0, ox + size / 2.0, oy + size / 2.0, w, h);
            human.boxes.insert(t as u32, hb);
            object.boxes.insert(t as u32, ob);
            let mut preds = vec![r.near];
            if attending {
                preds.push(r.watch);
            }
            if t > 0 && was_attending {
                preds.push(r.follow);
            }
            preds.sort_unstable();
            preds.dedup();
            for &p in &preds {
                tally[p] += 1;
            }
            frames[t].hois.push(HoiRecord { h: hid, o: oid, predicates: preds });
            let center = ob.center();
            frames[t].gaze.push(GazeRecord { h: hid, point: attending.then_some([center.0, center.1]) });
            was_attending = attending;
        }
        tracks.push(human);
        tracks.push(object);
    }
    let humans: Vec<u32> = tracks.iter().filter(|t| t.class_id == HUMAN_CLASS).map(|t| t.track_id).collect();
    for _ in 0..spec.distractors {
        let (class, relation) = r.distractors[rng.random_range(0..r.distractors.len())];
        let size = rng.random_range(40.0..70.0);
        let x = rng.random_range(0.0..(w - size));
        let y = rng.random_range(2.0..20.0);
        let start = rng.random_range(0..=n / 3);
        let end = rng.random_range((2 * n / 3).max(start)..n);
        let mut tr = TrackRecord { track_id: next_id, class_id: class, boxes: Default::default() };
        next_id += 1;
        for t in start..=end {
            let dx = rng.random_range(-3.0..3.0);
            tr.boxes.insert(t as u32, clamp_box(x + dx, y, x + dx + size, y + size, w, h));
            for &hid in &humans {
                tally[relation] += 1;
                frames[t].hois.push(HoiRecord { h: hid, o: tr.track_id, predicates: vec![relation] });
            }
        }
        tracks.push(tr);
    }
    VideoRecord { id, width: w, height: h, fps_keyframe: 1.0, tracks, frames }
}

/// Deterministic train/validation splits for `spec`.
pub fn generate_scenario(spec: &ScenarioSpec, vocab: &Vocabulary, seed: u64) -> Result<GeneratedScenario> {
    let r = resolve(spec, vocab)?;
    let np = vocab.n_predicates();
    let mut tallies = [vec![0; np], vec![0; np]];
    let mut splits = [Vec::new(), Vec::new()];
    let counts = [spec.train_videos, spec.val_videos];
    let mut id = 0u32;
    for s in 0..2 {
        for i in 0..counts[s] {
            let rec = generate_video(spec, &r, id, stream_seed(&[seed, s as u64, i as u64]), &mut tallies[s]);
            splits[s].push(Video::from_record(rec)?);
            id += 1;
        }
    }
    let [train, val] = splits;
    Ok(GeneratedScenario { train, val, predicate_tallies: tallies })
}
