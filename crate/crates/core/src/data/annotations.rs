use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

/// Class id reserved for people.
pub const HUMAN_CLASS: usize = 0;

/// On-disk annotation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationFile {
    pub videos: Vec<VideoRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoRecord {
    pub id: u32,
    pub width: f64,
    pub height: f64,
    pub fps_keyframe: f64,
    pub tracks: Vec<TrackRecord>,
    pub frames: Vec<FrameRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackRecord {
    pub track_id: u32,
    pub class_id: usize,
    pub boxes: BTreeMap<u32, BoundingBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub t: u32,
    #[serde(default)]
    pub hois: Vec<HoiRecord>,
    #[serde(default)]
    pub gaze: Vec<GazeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoiRecord {
    pub h: u32,
    pub o: u32,
    pub predicates: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GazeRecord {
    pub h: u32,
    /// `None` marks a person whose gaze target is unknown or off-screen.
    pub point: Option<[f64; 2]>,
}

/// Identity-stamped trajectory of one entity.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityTrack {
    pub track_id: u32,
    pub class_id: usize,
    pub boxes: BTreeMap<u32, BoundingBox>,
}

impl EntityTrack {
    pub fn is_human(&self) -> bool {
        self.class_id == HUMAN_CLASS
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HoiLabel {
    pub human: u32,
    pub object: u32,
    pub predicates: BTreeSet<usize>,
}

/// One keyframe: who is visible, which interactions hold, where people look.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameAnnotation {
    pub t: u32,
    /// Visible entities sorted by track id.
    pub entities: Vec<(u32, BoundingBox)>,
    pub hoi_labels: Vec<HoiLabel>,
    pub gaze_targets: BTreeMap<u32, Option<(f64, f64)>>,
}

impl FrameAnnotation {
    pub fn box_of(&self, track: u32) -> Option<BoundingBox> {
        self.entities
            .binary_search_by_key(&track, |e| e.0)
            .ok()
            .map(|i| self.entities[i].1)
    }

    pub fn labels(&self, human: u32, object: u32) -> Option<&BTreeSet<usize>> {
        self.hoi_labels
            .iter()
            .find(|l| l.human == human && l.object == object)
            .map(|l| &l.predicates)
    }
}

/// A validated video: tracks plus keyframes in increasing time order.
#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub id: u32,
    pub width: f64,
    pub height: f64,
    pub fps_keyframe: f64,
    tracks: BTreeMap<u32, EntityTrack>,
    frames: Vec<FrameAnnotation>,
}

impl Video {
    pub fn frames(&self) -> &[FrameAnnotation] {
        &self.frames
    }

    pub fn frame(&self, pos: usize) -> &FrameAnnotation {
        &self.frames[pos]
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn position_of(&self, t: u32) -> Option<usize> {
        self.frames.binary_search_by_key(&t, |f| f.t).ok()
    }

    pub fn tracks(&self) -> impl Iterator<Item = &EntityTrack> {
        self.tracks.values()
    }

    pub fn track(&self, id: u32) -> Option<&EntityTrack> {
        self.tracks.get(&id)
    }

    pub fn class_of(&self, id: u32) -> usize {
        self.tracks[&id].class_id
    }

    pub fn is_human(&self, id: u32) -> bool {
        self.class_of(id) == HUMAN_CLASS
    }

    /// Humans visible at keyframe position `pos`, by track id.
    pub fn humans_at(&self, pos: usize) -> Vec<u32> {
        self.frames[pos]
            .entities
            .iter()
            .map(|e| e.0)
            .filter(|&id| self.is_human(id))
            .collect()
    }

    /// Ordered (human, other) pairs co-present at `pos`, self pairs excluded.
    /// Humans may fill the object slot.
    pub fn candidate_pairs(&self, pos: usize) -> Vec<(u32, u32)> {
        let ents = &self.frames[pos].entities;
        let mut out = Vec::new();
        for &(h, _) in ents.iter().filter(|e| self.is_human(e.0)) {
            for &(o, _) in ents {
                if o != h {
                    out.push((h, o));
                }
            }
        }
        out
    }

    pub fn to_record(&self) -> VideoRecord {
        VideoRecord {
            id: self.id,
            width: self.width,
            height: self.height,
            fps_keyframe: self.fps_keyframe,
            tracks: self
                .tracks
                .values()
                .map(|t| TrackRecord {
                    track_id: t.track_id,
                    class_id: t.class_id,
                    boxes: t.boxes.clone(),
                })
                .collect(),
            frames: self
                .frames
                .iter()
                .map(|f| FrameRecord {
                    t: f.t,
                    hois: f
                        .hoi_labels
                        .iter()
                        .map(|l| HoiRecord {
                            h: l.human,
                            o: l.object,
                            predicates: l.predicates.iter().copied().collect(),
                        })
                        .collect(),
                    gaze: f
                        .gaze_targets
                        .iter()
                        .map(|(&h, p)| GazeRecord {
                            h,
                            point: p.map(|(x, y)| [x, y]),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    /// Check referential integrity and build the in-memory form.
    pub fn from_record(rec: VideoRecord) -> Result<Self> {
        let vid = rec.id;
        let ctx = |msg: String| format!("video {vid}: {msg}");
        for (name, v) in [("width", rec.width), ("height", rec.height), ("fps_keyframe", rec.fps_keyframe)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Schema(ctx(format!("{name} must be positive, got {v}"))));
            }
        }
        let mut frame_ts = BTreeSet::new();
        for f in &rec.frames {
            if !frame_ts.insert(f.t) {
                return Err(Error::Integrity(ctx(format!("keyframe t={} listed twice", f.t))));
            }
        }
        let mut tracks = BTreeMap::new();
        for tr in rec.tracks {
            if let Some(&t) = tr.boxes.keys().find(|t| !frame_ts.contains(t)) {
                return Err(Error::Integrity(ctx(format!(
                    "track {} has a box at t={t}, which is not a keyframe",
                    tr.track_id
                ))));
            }
            let track = EntityTrack {
                track_id: tr.track_id,
                class_id: tr.class_id,
                boxes: tr.boxes,
            };
            if tracks.insert(track.track_id, track).is_some() {
                return Err(Error::Integrity(ctx(format!("duplicate track id {}", tr.track_id))));
            }
        }
        let mut frames: Vec<FrameRecord> = rec.frames;
        frames.sort_by_key(|f| f.t);
        let mut out = Vec::with_capacity(frames.len());
        for f in frames {
            let t = f.t;
            let entities: Vec<(u32, BoundingBox)> = tracks
                .values()
                .filter_map(|tr: &EntityTrack| tr.boxes.get(&t).map(|b| (tr.track_id, *b)))
                .collect();
            let present = |id: u32| entities.binary_search_by_key(&id, |e| e.0).is_ok();
            let human = |id: u32| tracks.get(&id).is_some_and(|tr: &EntityTrack| tr.is_human());
            let mut seen = BTreeSet::new();
            let mut hoi_labels = Vec::new();
            for h in f.hois {
                if !present(h.h) || !human(h.h) {
                    return Err(Error::Integrity(ctx(format!(
                        "t={t}: interaction subject {} is not a visible human",
                        h.h
                    ))));
                }
                if !present(h.o) {
                    return Err(Error::Integrity(ctx(format!(
                        "t={t}: interaction target {} is not visible",
                        h.o
                    ))));
                }
                if h.h == h.o {
                    return Err(Error::Integrity(ctx(format!("t={t}: self interaction of {}", h.h))));
                }
                if !seen.insert((h.h, h.o)) {
                    return Err(Error::Integrity(ctx(format!(
                        "t={t}: pair ({}, {}) labelled twice",
                        h.h, h.o
                    ))));
                }
                hoi_labels.push(HoiLabel {
                    human: h.h,
                    object: h.o,
                    predicates: h.predicates.into_iter().collect(),
                });
            }
            let mut gaze_targets = BTreeMap::new();
            for g in f.gaze {
                if !present(g.h) || !human(g.h) {
                    return Err(Error::Integrity(ctx(format!("t={t}: gaze of {} who is not a visible human", g.h))));
                }
                if gaze_targets.insert(g.h, g.point.map(|p| (p[0], p[1]))).is_some() {
                    return Err(Error::Integrity(ctx(format!("t={t}: two gaze targets for {}", g.h))));
                }
            }
            out.push(FrameAnnotation {
                t,
                entities,
                hoi_labels,
                gaze_targets,
            });
        }
        Ok(Video {
            id: rec.id,
            width: rec.width,
            height: rec.height,
            fps_keyframe: rec.fps_keyframe,
            tracks,
            frames: out,
        })
    }
}

/// Parse and validate an annotation document.
pub fn parse_annotations(json: &str) -> Result<Vec<Video>> {
    let file: AnnotationFile = serde_json::from_str(json).map_err(|e| Error::Schema(e.to_string()))?;
    let mut ids = BTreeSet::new();
    file.videos
        .into_iter()
        .map(|v| {
            if !ids.insert(v.id) {
                return Err(Error::Integrity(format!("duplicate video id {}", v.id)));
            }
            Video::from_record(v)
        })
        .collect()
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<Video>> {
    parse_annotations(&std::fs::read_to_string(path)?)
}

pub fn write_annotations(path: impl AsRef<Path>, videos: &[Video]) -> Result<()> {
    let file = AnnotationFile {
        videos: videos.iter().map(Video::to_record).collect(),
    };
    let json = serde_json::to_string_pretty(&file).map_err(|e| Error::Schema(e.to_string()))?;
    std::fs::write(path, json)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"videos":[{"id":1,"width":640,"height":480,"fps_keyframe":1,
        "tracks":[{"track_id":1,"class_id":0,"boxes":{"0":[10,10,100,200]}},
                  {"track_id":2,"class_id":5,"boxes":{"0":[80,100,140,160]}}],
        "frames":[{"t":0,"hois":[{"h":1,"o":2,"predicates":[6,10]}],"gaze":[{"h":1,"point":[110,130]}]}]}]}"#;

    #[test]
    fn minimal_file_loads() {
        let v = parse_annotations(MINIMAL).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].frames().len(), 1);
        let f = v[0].frame(0);
        assert_eq!(f.entities.len(), 2);
        assert_eq!(f.labels(1, 2).unwrap().iter().copied().collect::<Vec<_>>(), vec![6, 10]);
        assert_eq!(f.gaze_targets[&1], Some((110.0, 130.0)));
        assert_eq!(v[0].candidate_pairs(0), vec![(1, 2)]);
    }

    #[test]
    fn dangling_track_is_an_integrity_error() {
        let bad = MINIMAL.replace(r#""o":2"#, r#""o":9"#);
        assert!(matches!(parse_annotations(&bad), Err(Error::Integrity(_))));
    }

    #[test]
    fn non_human_subject_is_rejected() {
        let bad = MINIMAL.replace(r#""h":1,"o":2"#, r#""h":2,"o":1"#);
        assert!(matches!(parse_annotations(&bad), Err(Error::Integrity(_))));
    }

    #[test]
    fn duplicate_track_ids_are_rejected() {
        let bad = MINIMAL.replace(r#""track_id":2"#, r#""track_id":1"#);
        assert!(matches!(parse_annotations(&bad), Err(Error::Integrity(_))));
    }

    #[test]
    fn schema_errors() {
        let missing = MINIMAL.replace(r#""fps_keyframe":1,"#, "");
        assert!(matches!(parse_annotations(&missing), Err(Error::Schema(_))));
        let wrong_type = MINIMAL.replace(r#""width":640"#, r#""width":"wide""#);
        assert!(matches!(parse_annotations(&wrong_type), Err(Error::Schema(_))));
        let degenerate = MINIMAL.replace("[80,100,140,160]", "[80,100,80,160]");
        assert!(matches!(parse_annotations(&degenerate), Err(Error::Schema(_))));
        let extra = MINIMAL.replace(r#""id":1,"#, r#""id":1,"colour":3,"#);
        assert!(matches!(parse_annotations(&extra), Err(Error::Schema(_))));
    }

    #[test]
    fn box_off_keyframe_is_rejected() {
        let bad = MINIMAL.replace(r#""0":[80,100,140,160]"#, r#""3":[80,100,140,160]"#);
        assert!(matches!(parse_annotations(&bad), Err(Error::Integrity(_))));
    }

    #[test]
    fn record_round_trip() {
        let v = parse_annotations(MINIMAL).unwrap();
        let back = Video::from_record(v[0].to_record()).unwrap();
        assert_eq!(back, v[0]);
    }
}
