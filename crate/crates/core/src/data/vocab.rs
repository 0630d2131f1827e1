use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const OBJECTS: [&str; 78] = [
    "person", "bicycle", "motorcycle", "car", "bus", "truck", "train", "aircraft", "watercraft",
    "traffic_light", "stop_sign", "bench", "bird", "cat", "dog", "horse", "sheep", "cow", "elephant",
    "bear", "zebra", "giraffe", "backpack", "umbrella", "handbag", "suitcase", "frisbee", "skis",
    "snowboard", "ball", "kite", "baseball_bat", "skateboard", "surfboard", "racket", "bottle", "cup",
    "fork", "knife", "spoon", "bowl", "banana", "sandwich", "orange", "cake", "chair", "sofa",
    "potted_plant", "bed", "dining_table", "toilet", "tv", "laptop", "mouse", "remote", "keyboard",
    "cell_phone", "microwave", "oven", "sink", "refrigerator", "book", "clock", "vase", "scissors",
    "teddy_bear", "toy", "guitar", "piano", "camera", "stool", "baby_seat", "baby_walker", "stroller",
    "crab", "penguin", "fish", "screen",
];

const SPATIAL: [&str; 8] = [
    "above", "away", "behind", "beneath", "in_front_of", "inside", "next_to", "towards",
];

const ACTIONS: [&str; 42] = [
    "bite", "carry", "caress", "chase", "clean", "close", "cut", "drive", "feed", "get_off", "get_on",
    "grab", "hit", "hold", "hold_hand_of", "hug", "kick", "kiss", "knock", "lean_on", "lick", "lift",
    "open", "pat", "play", "point_to", "press", "pull", "push", "release", "ride", "shake_hand_with",
    "shout_at", "smell", "speak_to", "squeeze", "throw", "touch", "use", "watch", "wave", "wave_hand_to",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredicateVocab {
    pub spatial: Vec<String>,
    pub action: Vec<String>,
}

/// Object classes and predicates. Predicate ids enumerate the spatial
/// relations first, then the actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vocabulary {
    pub objects: Vec<String>,
    pub predicates: PredicateVocab,
}

impl Default for Vocabulary {
    /// 78 object classes (class 0 is `person`), 8 spatial relations and 42 actions.
    fn default() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect();
        Self {
            objects: s(&OBJECTS),
            predicates: PredicateVocab {
                spatial: s(&SPATIAL),
                action: s(&ACTIONS),
            },
        }
    }
}

impl Vocabulary {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let v: Vocabulary = serde_json::from_str(&text).map_err(|e| Error::Schema(e.to_string()))?;
        if v.objects.is_empty() || v.n_predicates() == 0 {
            return Err(Error::Schema("vocabulary needs objects and predicates".into()));
        }
        Ok(v)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Schema(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn n_objects(&self) -> usize {
        self.objects.len()
    }

    pub fn n_spatial(&self) -> usize {
        self.predicates.spatial.len()
    }

    pub fn n_predicates(&self) -> usize {
        self.predicates.spatial.len() + self.predicates.action.len()
    }

    pub fn predicate_name(&self, id: usize) -> Option<&str> {
        let ns = self.n_spatial();
        if id < ns {
            Some(&self.predicates.spatial[id])
        } else {
            self.predicates.action.get(id - ns).map(String::as_str)
        }
    }

    pub fn predicate_id(&self, name: &str) -> Option<usize> {
        (0..self.n_predicates()).find(|&i| self.predicate_name(i) == Some(name))
    }

    pub fn object_id(&self, name: &str) -> Option<usize> {
        self.objects.iter().position(|o| o == name)
    }

    /// Check that every class and predicate id used by `videos` is known.
    pub fn check(&self, videos: &[super::Video]) -> Result<()> {
        for v in videos {
            for tr in v.tracks() {
                if tr.class_id >= self.n_objects() {
                    return Err(Error::Integrity(format!(
                        "video {}: track {} has class {} outside the vocabulary",
                        v.id, tr.track_id, tr.class_id
                    )));
                }
            }
            for f in v.frames() {
                for l in &f.hoi_labels {
                    if let Some(p) = l.predicates.iter().find(|&&p| p >= self.n_predicates()) {
                        return Err(Error::Integrity(format!(
                            "video {} t={}: predicate {p} outside the vocabulary",
                            v.id, f.t
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}
