use super::triplets::PredictedTriplet;
use crate::data::{build_windows, Video, WindowConfig, WindowSample};
use crate::error::Result;
use crate::features::FeatureSource;
use crate::model::{BatchInput, Model};

/// Score every window of `videos` and emit one triplet per (window,
/// predicate), anchored at the window's last keyframe.
pub fn predict_triplets(
    model: &Model,
    videos: &[Video],
    features: &FeatureSource,
    windows: &WindowConfig,
    batch_windows: usize,
) -> Result<Vec<PredictedTriplet>> {
    let n_out = model.config().n_outputs();
    let mut out = Vec::new();
    for video in videos {
        let all: Vec<WindowSample> = build_windows(video, windows, n_out);
        for chunk in all.chunks(batch_windows.max(1)) {
            let input = BatchInput::build(model.config(), chunk, std::slice::from_ref(video), features)?;
            let z = model.infer(&input)?;
            for (r, w) in chunk.iter().enumerate() {
                let (hb, ob) = *w.boxes.last().expect("windows are non-empty");
                let frame = video.frame(w.anchor).t;
                for (predicate, &confidence) in z.row(r).iter().enumerate() {
                    out.push(PredictedTriplet {
                        video: w.video,
                        frame,
                        human_box: hb,
                        object_box: ob,
                        object_class: w.object_class,
                        predicate,
                        confidence,
                        human_track: Some(w.human),
                        object_track: Some(w.object),
                    });
                }
            }
        }
    }
    Ok(out)
}
