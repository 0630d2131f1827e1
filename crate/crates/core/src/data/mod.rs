//! Annotations, sliding windows, epoch sampling and augmentation.

mod annotations;
mod sampling;
mod scenario;
mod stats;
mod vocab;
mod windows;

pub use annotations::{
    load_annotations, parse_annotations, write_annotations, AnnotationFile, EntityTrack, FrameAnnotation, FrameRecord,
    GazeRecord, HoiLabel, HoiRecord, TrackRecord, Video, VideoRecord, HUMAN_CLASS,
};
pub use sampling::{random_flips, sample_epoch, sample_epoch_shuffled, Batch, WindowSampling};
pub use scenario::{generate_scenario, DistractorSpec, GeneratedScenario, ScenarioSpec};
pub use stats::{class_statistics, ClassStatistics, RARE_THRESHOLD};
pub use vocab::{PredicateVocab, Vocabulary};
pub use windows::{build_windows, horizontal_flip, WindowConfig, WindowSample};

/// Bundled six-keyframe fixture: two people, a cup and a ball that leaves
/// before the last keyframe.
pub fn two_person_park() -> Vec<Video> {
    parse_annotations(include_str!("../../fixtures/two_person_park.json")).expect("bundled fixture is valid")
}
