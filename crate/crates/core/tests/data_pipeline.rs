use std::collections::{BTreeMap, BTreeSet};

use gazehoi::data::{
    build_windows, class_statistics, generate_scenario, horizontal_flip, parse_annotations, sample_epoch,
    two_person_park, Video, Vocabulary, WindowConfig, WindowSample, RARE_THRESHOLD,
};
use gazehoi::geometry::{spatial_mask, BoundingBox};

const N_PRED: usize = 50;

/// Visibility of the fixture's tracks per keyframe, written out by hand.
fn park_presence() -> Vec<BTreeSet<u32>> {
    let all = |ids: &[u32]| ids.iter().copied().collect::<BTreeSet<_>>();
    vec![
        all(&[1, 3, 4]),
        all(&[1, 2, 3, 4]),
        all(&[1, 2, 3, 4]),
        all(&[1, 2, 3, 4]),
        all(&[1, 2, 3, 4]),
        all(&[1, 2, 3]),
    ]
}

fn park_humans() -> BTreeSet<u32> {
    [1, 2].into_iter().collect()
}

fn oracle_window_count(tau: usize) -> usize {
    let p = park_presence();
    (0..p.len())
        .filter(|a| a + tau < p.len())
        .map(|a| {
            let humans = p[a].intersection(&park_humans()).count();
            humans * (p[a].len() - 1)
        })
        .sum()
}

fn windows_for(video: &Video, length: usize, tau_a: usize) -> Vec<WindowSample> {
    let cfg = WindowConfig { length, tau_a, full_history_only: false };
    build_windows(video, &cfg, N_PRED)
}

#[test]
fn fixture_has_four_pairs_at_the_last_keyframe() {
    let v = &two_person_park()[0];
    assert_eq!(v.len(), 6);
    assert_eq!(v.candidate_pairs(5), vec![(1, 2), (1, 3), (2, 1), (2, 3)]);
}

#[test]
fn fixture_window_counts_match_presence_table() {
    let v = &two_person_park()[0];
    for tau in [0, 1, 3, 5, 7] {
        assert_eq!(windows_for(v, 6, tau).len(), oracle_window_count(tau), "tau_a = {tau}");
    }
    assert_eq!(oracle_window_count(1), 26);
    assert!(windows_for(v, 6, 7).is_empty());
}

#[test]
fn anticipation_drops_out_of_range_label_frames() {
    let v = &two_person_park()[0];
    for tau in [1, 3, 5, 7] {
        for w in windows_for(v, 6, tau) {
            assert_eq!(w.label_pos, w.anchor + tau);
            assert!(w.label_pos < v.len());
        }
    }
}

#[test]
fn detection_labels_come_from_the_anchor() {
    let v = &two_person_park()[0];
    for w in windows_for(v, 6, 0) {
        assert_eq!(w.label_pos, w.anchor);
        let f = v.frame(w.anchor);
        assert!(f.box_of(w.human).is_some() && f.box_of(w.object).is_some());
        let want: BTreeSet<usize> = f.labels(w.human, w.object).cloned().unwrap_or_default();
        let got: BTreeSet<usize> = w.positives().collect();
        assert_eq!(got, want);
    }
}

#[test]
fn anticipation_targets_use_the_future_frame() {
    let v = &two_person_park()[0];
    let ws = windows_for(v, 6, 1);
    // (1, 2) at anchor 3 is labelled 'watch' at keyframe 4
    let w = ws.iter().find(|w| w.anchor == 3 && w.human == 1 && w.object == 2).unwrap();
    assert_eq!(w.positives().collect::<Vec<_>>(), vec![47]);
    // (2, 4) at anchor 4: the ball is gone at keyframe 5, so no label
    let w = ws.iter().find(|w| w.anchor == 4 && w.human == 2 && w.object == 4).unwrap();
    assert_eq!(w.positives().count(), 0);
}

#[test]
fn short_histories_are_front_padded() {
    let v = &two_person_park()[0];
    let ws = windows_for(v, 6, 0);
    let w = ws.iter().find(|w| w.anchor == 2 && w.human == 2 && w.object == 4).unwrap();
    assert_eq!(w.slots, vec![1, 1, 1, 1, 1, 2]);
    assert_eq!(w.boxes[0], w.boxes[4]);
    assert_eq!(w.boxes[5].0, v.frame(2).box_of(2).unwrap());
}

fn single_pair_video(frames: usize) -> Video {
    let boxes = |b: [f64; 4]| (0..frames).map(|t| (t.to_string(), b)).collect::<BTreeMap<_, _>>();
    let doc = serde_json::json!({"videos": [{
        "id": 0, "width": 100, "height": 100, "fps_keyframe": 1,
        "tracks": [
            {"track_id": 1, "class_id": 0, "boxes": boxes([0.0, 0.0, 10.0, 10.0])},
            {"track_id": 2, "class_id": 3, "boxes": boxes([5.0, 5.0, 20.0, 20.0])}
        ],
        "frames": (0..frames).map(|t| serde_json::json!({"t": t})).collect::<Vec<_>>()
    }]});
    parse_annotations(&doc.to_string()).unwrap().remove(0)
}

#[test]
fn full_history_switch() {
    let v = single_pair_video(6);
    let all = windows_for(&v, 6, 0);
    assert_eq!(all.len(), 6);
    assert!(all.iter().all(|w| w.slots.len() == 6));
    let cfg = WindowConfig { length: 6, tau_a: 0, full_history_only: true };
    let full = build_windows(&v, &cfg, N_PRED);
    assert_eq!(full.len(), 1);
    assert_eq!(full[0].anchor, 5);
    assert_eq!(full[0].slots, vec![0, 1, 2, 3, 4, 5]);
}

#[test]
fn flip_arithmetic_and_involution() {
    let b = BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
    assert_eq!(b.flip_horizontal(100.0).coords(), [90.0, 0.0, 100.0, 10.0]);
    let v = &two_person_park()[0];
    for w in windows_for(v, 6, 1) {
        let f = horizontal_flip(&w, v.width);
        assert_eq!(f.target, w.target);
        assert!(f.flipped);
        assert_eq!(horizontal_flip(&f, v.width), w);
        for ((h, o), (fh, fo)) in w.boxes.iter().zip(&f.boxes) {
            // recomputing the mask from flipped boxes mirrors the original
            assert_eq!(spatial_mask(fh, fo), spatial_mask(h, o).mirrored());
        }
    }
}

#[test]
fn epoch_batches_cover_each_video_once() {
    let scen = generate_scenario(
        &gazehoi::data::ScenarioSpec { train_videos: 10, val_videos: 0, frames: 4, ..Default::default() },
        &Vocabulary::default(),
        3,
    )
    .unwrap();
    let per_video: Vec<Vec<WindowSample>> = scen.train.iter().map(|v| windows_for(v, 3, 0)).collect();
    let ids: Vec<u32> = scen.train.iter().map(|v| v.id).collect();

    let batches = sample_epoch(&per_video, &ids, 3, 11);
    assert_eq!(batches.len(), 4);
    let mut seen: Vec<u32> = batches.iter().flat_map(|b| b.videos.clone()).collect();
    seen.sort_unstable();
    assert_eq!(seen, ids);
    for b in &batches {
        let distinct: BTreeSet<u32> = b.videos.iter().copied().collect();
        assert_eq!(distinct.len(), b.videos.len());
        assert!(b.windows.iter().all(|w| b.videos.contains(&w.video)));
    }
    // flattened output is a permutation of every window
    let key = |w: &WindowSample| (w.video, w.anchor, w.human, w.object);
    let mut flat: Vec<_> = batches.iter().flat_map(|b| b.windows.iter().map(key)).collect();
    let mut all: Vec<_> = per_video.iter().flatten().map(key).collect();
    flat.sort_unstable();
    all.sort_unstable();
    assert_eq!(flat, all);

    assert_eq!(sample_epoch(&per_video, &ids, 3, 11), batches);
    assert_ne!(sample_epoch(&per_video, &ids, 3, 12), batches);

    let four = sample_epoch(&per_video[..4], &ids[..4], 2, 0);
    assert_eq!(four.len(), 2);
    assert!(four.iter().all(|b| b.videos.len() == 2 && b.videos[0] != b.videos[1]));
}

#[test]
fn fixture_statistics() {
    let videos = two_person_park();
    let s = class_statistics(&videos, N_PRED);
    let (hold, cup) = (21, 36);
    assert_eq!(s.triplet_counts[&(cup, hold)], 3);
    assert_eq!(s.predicate_counts[0], 0);
    assert_eq!(s.predicate_counts[hold], 3);
    let total = s.triplet_counts.len();
    let rare = s.rare(RARE_THRESHOLD);
    let nonrare = s.nonrare(RARE_THRESHOLD);
    assert_eq!(rare.len() + nonrare.len(), total);
    assert!(rare.iter().all(|k| !nonrare.contains(k)));
    // recount every category with a threshold of 2
    let recount = s.triplet_counts.values().filter(|&&n| n < 2).count();
    assert_eq!(s.rare(2).len(), recount);
}

#[test]
fn scenario_is_deterministic_and_counts_frames() {
    let spec = gazehoi::data::ScenarioSpec { train_videos: 2, val_videos: 1, frames: 6, ..Default::default() };
    let vocab = Vocabulary::default();
    let a = generate_scenario(&spec, &vocab, 5).unwrap();
    let b = generate_scenario(&spec, &vocab, 5).unwrap();
    assert_eq!(a.train, b.train);
    assert_eq!(a.val, b.val);
    assert_eq!(a.train.iter().map(|v| v.frames().len()).sum::<usize>(), 12);
    let c = generate_scenario(&spec, &vocab, 6).unwrap();
    assert_ne!(a.train, c.train);
}

#[test]
fn scenario_tallies_match_recount() {
    let spec = gazehoi::data::ScenarioSpec { train_videos: 6, val_videos: 3, ..Default::default() };
    let vocab = Vocabulary::default();
    let g = generate_scenario(&spec, &vocab, 1).unwrap();
    assert_eq!(class_statistics(&g.train, N_PRED).predicate_counts, g.predicate_tallies[0]);
    assert_eq!(class_statistics(&g.val, N_PRED).predicate_counts, g.predicate_tallies[1]);
    vocab.check(&g.train).unwrap();
}

#[test]
fn scenario_gaze_follows_the_script() {
    let vocab = Vocabulary::default();
    let g = generate_scenario(&Default::default(), &vocab, 2).unwrap();
    let (watch, hold) = (vocab.predicate_id("watch").unwrap(), vocab.predicate_id("hold").unwrap());
    for v in &g.train {
        for h in v.tracks().filter(|t| t.is_human()) {
            let mut prev_watch = false;
            for (pos, f) in v.frames().iter().enumerate() {
                let own = f.hoi_labels.iter().find(|l| l.human == h.track_id && l.predicates.contains(&6)).unwrap();
                let watching = own.predicates.contains(&watch);
                assert_eq!(f.gaze_targets[&h.track_id].is_some(), watching);
                assert_eq!(own.predicates.contains(&hold), pos > 0 && prev_watch);
                if let Some(p) = f.gaze_targets[&h.track_id] {
                    let ob = f.box_of(own.object).unwrap();
                    assert_eq!(ob.center(), p);
                }
                prev_watch = watching;
            }
            // never attending on the first keyframe
            assert!(v.frame(0).gaze_targets[&h.track_id].is_none());
        }
    }
}
