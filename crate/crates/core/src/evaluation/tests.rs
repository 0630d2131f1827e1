use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::two_person_park;
use crate::geometry::BoundingBox;

fn bx(x: f64) -> BoundingBox {
    BoundingBox::new(x, 0.0, x + 10.0, 10.0).unwrap()
}

fn pred(frame: u32, h: f64, o: f64, class: usize, predicate: usize, confidence: f64) -> PredictedTriplet {
    PredictedTriplet {
        video: 0,
        frame,
        human_box: bx(h),
        object_box: bx(o),
        object_class: class,
        predicate,
        confidence,
        human_track: None,
        object_track: None,
    }
}

fn gt(frame: u32, h: f64, o: f64, class: usize, predicate: usize) -> GtTriplet {
    GtTriplet {
        video: 0,
        frame,
        human: h as u32,
        object: o as u32 + 1000,
        human_box: bx(h),
        object_box: bx(o),
        object_class: class,
        predicate,
    }
}

#[test]
fn triplet_matching_rules() {
    let g = gt(0, 0.0, 100.0, 3, 7);
    assert!(match_triplet(&pred(0, 0.0, 100.0, 3, 7, 0.9), &g));
    assert!(!match_triplet(&pred(0, 0.0, 100.0, 3, 8, 0.9), &g));
    assert!(!match_triplet(&pred(0, 0.0, 100.0, 4, 7, 0.9), &g));
    // [0,10] vs [0,15] on x with equal heights: IoU = 10/15
    let mut p = pred(0, 0.0, 100.0, 3, 7, 0.9);
    p.human_box = BoundingBox::new(0.0, 0.0, 15.0, 10.0).unwrap();
    assert!(match_triplet(&p, &g));
    // [0,10] vs [0,20]: IoU exactly 0.5 is not enough
    p.human_box = BoundingBox::new(0.0, 0.0, 20.0, 10.0).unwrap();
    assert!(!match_triplet(&p, &g));
}

#[test]
fn ap_small_cases() {
    let g = [gt(0, 0.0, 100.0, 3, 7)];
    assert_eq!(average_precision(&[pred(0, 0.0, 100.0, 3, 7, 0.9)], &g), Some(1.0));
    let ranked = [pred(0, 0.0, 100.0, 3, 7, 0.4), pred(0, 50.0, 100.0, 3, 7, 0.9)];
    assert_eq!(average_precision(&ranked, &g), Some(0.5));
    assert_eq!(average_precision(&ranked, &[]), None);
    assert_eq!(average_precision(&[], &g), Some(0.0));
    // a duplicate detection of a matched instance is a false positive
    let dup = [pred(0, 0.0, 100.0, 3, 7, 0.9), pred(0, 0.0, 100.0, 3, 7, 0.8)];
    assert_eq!(rank_and_match(&dup, &g), vec![true, false]);
}

/// AP by enumerating every prefix of the ranked list. Predictions either
/// reproduce one annotated box pair exactly or hit nothing, so a hit is
/// the first occurrence of its instance in rank order.
fn prefix_oracle(conf: &[f64], target: &[Option<usize>], n_gt: usize) -> f64 {
    let mut order: Vec<usize> = (0..conf.len()).collect();
    order.sort_by(|&a, &b| conf[b].total_cmp(&conf[a]).then(a.cmp(&b)));
    let mut claimed = BTreeSet::new();
    let hits: Vec<bool> = order.iter().map(|&i| target[i].is_some_and(|t| claimed.insert(t))).collect();
    let pr: Vec<(f64, f64)> = (1..=hits.len())
        .map(|k| {
            let tp = hits[..k].iter().filter(|&&h| h).count() as f64;
            (tp / n_gt as f64, tp / k as f64)
        })
        .collect();
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for k in 0..pr.len() {
        let best_p = pr[k..].iter().map(|x| x.1).fold(0.0, f64::max);
        ap += (pr[k].0 - prev_r) * best_p;
        prev_r = pr[k].0;
    }
    ap
}

#[test]
fn ap_matches_prefix_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..300 {
        let n_gt = rng.random_range(1..6);
        let n_pred = rng.random_range(0..20);
        let gts: Vec<GtTriplet> = (0..n_gt).map(|i| gt(0, 100.0 * i as f64, 50.0 + 100.0 * i as f64, 1, 2)).collect();
        let mut preds = Vec::new();
        let mut conf = Vec::new();
        let mut target = Vec::new();
        for j in 0..n_pred {
            // distinct confidences keep the oracle's tie rule irrelevant
            let c = rng.random_range(0.0..1.0) + j as f64 * 1e-9;
            let t = rng.random_bool(0.6).then(|| rng.random_range(0..n_gt));
            let (h, o) = match t {
                Some(i) => (100.0 * i as f64, 50.0 + 100.0 * i as f64),
                None => (5000.0 + j as f64 * 20.0, 9000.0),
            };
            preds.push(pred(0, h, o, 1, 2, c));
            conf.push(c);
            target.push(t);
        }
        let got = average_precision(&preds, &gts).unwrap();
        let want = prefix_oracle(&conf, &target, n_gt);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        // rank-preserving rescaling leaves AP unchanged
        let scaled: Vec<_> = preds.iter().map(|p| PredictedTriplet { confidence: p.confidence * 0.37, ..p.clone() }).collect();
        assert_eq!(average_precision(&scaled, &gts).unwrap(), got);
    }
}

#[test]
fn ties_are_broken_by_frame_then_boxes() {
    let g = [gt(1, 0.0, 100.0, 3, 7)];
    let a = pred(2, 0.0, 100.0, 3, 7, 0.5);
    let b = pred(1, 0.0, 100.0, 3, 7, 0.5);
    // b (frame 1) ranks first and is the hit
    assert_eq!(rank_and_match(&[a.clone(), b.clone()], &g), vec![true, false]);
    assert_eq!(average_precision(&[a, b], &g), Some(1.0));
}

#[test]
fn mean_ap_over_three_categories() {
    let gts = vec![gt(0, 0.0, 100.0, 1, 1), gt(0, 0.0, 100.0, 1, 2), gt(0, 0.0, 100.0, 2, 1), gt(1, 0.0, 100.0, 2, 1)];
    let preds = vec![
        pred(0, 0.0, 100.0, 1, 1, 0.9),
        pred(0, 0.0, 100.0, 1, 2, 0.2),
        pred(0, 200.0, 100.0, 1, 2, 0.8),
        pred(1, 0.0, 100.0, 2, 1, 0.7),
        // category without ground truth is ignored
        pred(0, 0.0, 100.0, 9, 9, 0.99),
    ];
    let ap11 = average_precision(&preds[..1], &gts[..1]).unwrap();
    let ap12 = average_precision(&preds[1..3], &gts[1..2]).unwrap();
    let ap21 = average_precision(&preds[3..4], &gts[2..4]).unwrap();
    assert_eq!((ap11, ap12, ap21), (1.0, 0.5, 0.5));
    let rare: BTreeSet<_> = [(1, 2)].into_iter().collect();
    let m = mean_ap(&preds, &gts, &rare);
    assert!((m.full - (ap11 + ap12 + ap21) / 3.0).abs() < 1e-15);
    assert_eq!(m.rare, ap12);
    assert!((m.nonrare - (ap11 + ap21) / 2.0).abs() < 1e-15);
    assert_eq!(m.categories, m.rare_categories + m.nonrare_categories);

    let perfect: Vec<_> = gts.iter().map(|g| pred(g.frame, 0.0, 100.0, g.object_class, g.predicate, 1.0)).collect();
    let counted = rare_categories(&gts, 2);
    assert_eq!(counted, [(1, 1), (1, 2)].into_iter().collect());
    let m = mean_ap(&perfect, &gts, &counted);
    assert_eq!((m.full, m.rare, m.nonrare), (1.0, 1.0, 1.0));
}

fn set(items: &[u8]) -> BTreeSet<u8> {
    items.iter().copied().collect()
}

#[test]
fn set_metric_conventions() {
    let s = set_scores(&set(b"ab"), &set(b"ac")).unwrap();
    assert_eq!((s.recall, s.precision, s.f1), (0.5, 0.5, 0.5));
    assert!((s.accuracy - 1.0 / 3.0).abs() < 1e-15);
    let same = set_scores(&set(b"abc"), &set(b"abc")).unwrap();
    assert_eq!(same, PersonScores { recall: 1.0, precision: 1.0, accuracy: 1.0, f1: 1.0 });
    assert_eq!(set_scores(&set(b"ab"), &set(b"")).unwrap(), PersonScores::default());
    assert_eq!(set_scores(&set(b""), &set(b"a")).unwrap(), PersonScores::default());
    assert_eq!(set_scores::<u8>(&set(b""), &set(b"")), None);
}

/// Perfect predictions: every annotated triplet at confidence 0.9, every
/// other predicate of every pair at 0.1.
fn oracle_predictions(frames: &[EvalFrame], n_pred: usize) -> Vec<PredictedTriplet> {
    let mut out = Vec::new();
    for f in frames {
        for p in &f.pairs {
            for c in 0..n_pred {
                out.push(PredictedTriplet {
                    video: f.video,
                    frame: f.frame,
                    human_box: p.human_box,
                    object_box: p.object_box,
                    object_class: p.object_class,
                    predicate: c,
                    confidence: if p.predicates.contains(&c) { 0.9 } else { 0.1 },
                    human_track: Some(p.human),
                    object_track: Some(p.object),
                });
            }
        }
    }
    out
}

#[test]
fn perfect_predictions_on_the_fixture() {
    let videos = two_person_park();
    for tau in [0, 1, 3] {
        let frames = ground_truth(&videos, tau);
        let preds = oracle_predictions(&frames, 50);
        let r = evaluate(&preds, &frames, &EvalConfig { tau_a: tau, ..EvalConfig::default() });
        assert_eq!(r.map_full, 1.0, "tau {tau}");
        assert_eq!(r.personwise.recall, 1.0);
        assert_eq!(r.personwise.f1, 1.0);
        let pw = personwise_topk(&preds, &frames, 5, 0.3);
        for h in &pw.humans {
            let s = h.scores;
            assert!(s.accuracy <= s.recall.min(s.precision) + 1e-15);
        }
    }
}

#[test]
fn personwise_properties_on_noisy_predictions() {
    let videos = two_person_park();
    let frames = ground_truth(&videos, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut preds = oracle_predictions(&frames, 50);
    for p in &mut preds {
        p.confidence = rng.random_range(0.0..1.0);
    }
    for k in [1, 3, 5] {
        for h in personwise_topk(&preds, &frames, k, 0.3).humans {
            let s = h.scores;
            assert!(s.accuracy <= s.recall.min(s.precision) + 1e-15);
            if s.recall + s.precision > 0.0 {
                let hm = 2.0 * s.recall * s.precision / (s.recall + s.precision);
                assert!((s.f1 - hm).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn unmatched_pairs_count_against_the_nearest_human() {
    let videos = two_person_park();
    let frames = ground_truth(&videos, 0);
    // keyframe 2: human 1 holds the cup (track 3)
    let f = frames.iter().find(|f| f.frame == 2).unwrap().clone();
    let cup = f.pairs.iter().find(|p| p.human == 1 && p.object == 3).unwrap();
    let mut good = PredictedTriplet {
        video: f.video,
        frame: f.frame,
        human_box: cup.human_box,
        object_box: cup.object_box,
        object_class: 36,
        predicate: 21,
        confidence: 0.9,
        human_track: None,
        object_track: None,
    };
    // a phantom object far away from every annotated one
    let phantom = PredictedTriplet {
        object_box: BoundingBox::new(600.0, 300.0, 630.0, 340.0).unwrap(),
        confidence: 0.8,
        ..good.clone()
    };
    let h1 = |preds: &[PredictedTriplet]| {
        let pw = personwise_topk(preds, std::slice::from_ref(&f), 5, 0.3);
        pw.humans.iter().find(|h| h.human == 1).unwrap().scores
    };
    let alone = h1(std::slice::from_ref(&good));
    let with_phantom = h1(&[good.clone(), phantom]);
    assert!(alone.recall > 0.0);
    assert_eq!(alone.precision, 1.0);
    assert_eq!((with_phantom.recall, with_phantom.precision), (alone.recall, 0.5));
    // threshold above every confidence: nothing predicted
    good.confidence = 0.2;
    let pw = personwise_topk(&[good], std::slice::from_ref(&f), 5, 0.3);
    assert_eq!(pw.humans.iter().find(|h| h.human == 1).unwrap().scores.recall, 0.0);
}

#[test]
fn detection_mode_counts_empty_frames() {
    let videos = two_person_park();
    let frames = ground_truth(&videos, 0);
    let all = oracle_predictions(&frames, 50);
    // keep predictions of the first three keyframes only
    let some: Vec<_> = all.iter().filter(|p| p.frame < 3).cloned().collect();
    let oracle = evaluate(&some, &frames, &EvalConfig::default());
    let det = evaluate(&some, &frames, &EvalConfig { mode: EvalMode::Detection, ..EvalConfig::default() });
    assert_eq!(oracle.counts.frames, 3);
    assert_eq!(det.counts.frames, 6);
    let missing: usize = frames.iter().filter(|f| f.frame >= 3).map(|f| f.triplets().count()).sum();
    assert_eq!(det.counts.gt_triplets, oracle.counts.gt_triplets + missing);
    assert!(det.map_full <= oracle.map_full);
    assert_eq!(oracle.map_full, 1.0);
    // every frame predicted: the two modes agree
    let a = evaluate(&all, &frames, &EvalConfig::default());
    let b = evaluate(&all, &frames, &EvalConfig { mode: EvalMode::Detection, ..EvalConfig::default() });
    assert_eq!((a.map_full, a.counts), (b.map_full, b.counts));
}

#[test]
fn anticipation_ground_truth_on_the_fixture() {
    let videos = two_person_park();
    let frames = ground_truth(&videos, 1);
    assert_eq!(frames.len(), 5);
    // keyframe 0 -> 1: human 2 appears later, nothing vanishes
    assert_eq!(frames[0].humans.len(), 1);
    assert!(frames[0].vanished.is_empty());
    // keyframe 4 -> 5: the ball (track 4) is gone
    assert_eq!(frames[4].vanished.len(), 2);
    // labels come from the later keyframe: watch (47) of 1 -> 2 at t = 4
    let p = frames[3].pairs.iter().find(|p| p.human == 1 && p.object == 2).unwrap();
    assert_eq!(p.predicates, [47].into_iter().collect());
    // a prediction on a vanished pair is dropped
    let (hb, ob) = frames[4].vanished[0];
    let p = PredictedTriplet {
        video: 7,
        frame: 4,
        human_box: hb,
        object_box: ob,
        object_class: 29,
        predicate: 24,
        confidence: 0.9,
        human_track: None,
        object_track: None,
    };
    assert!(anticipation_filter(std::slice::from_ref(&p), &frames).is_empty());
    let kept = PredictedTriplet { frame: 3, ..p };
    assert_eq!(anticipation_filter(std::slice::from_ref(&kept), &frames).len(), 1);
    assert!(ground_truth(&videos, 6).is_empty());
}

#[test]
fn sweep_recall_is_monotone() {
    let videos = two_person_park();
    let frames = ground_truth(&videos, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut preds = oracle_predictions(&frames, 50);
    for p in &mut preds {
        p.confidence = (p.confidence + rng.random_range(-0.3..0.3)).clamp(0.0, 0.99);
    }
    let th = default_thresholds();
    assert_eq!(th.len(), 19);
    assert_eq!((th[0], th[18]), (0.05, 0.95));
    let rows = threshold_sweep(&preds, &frames, &EvalConfig::default(), &th);
    for w in rows.windows(2) {
        assert!(w[1].recall <= w[0].recall + 1e-15);
    }
    let top = threshold_sweep(&preds, &frames, &EvalConfig::default(), &[0.995]);
    assert_eq!(top[0].recall, 0.0);
    let csv = sweep_csv(&rows).unwrap();
    assert_eq!(csv.lines().count(), 20);
    assert!(csv.starts_with("threshold,recall,precision,accuracy,f1"));
}

#[test]
fn predictions_round_trip_as_json_lines() {
    let preds = vec![pred(0, 0.0, 100.0, 3, 7, 0.25), PredictedTriplet { human_track: Some(4), ..pred(1, 5.0, 9.0, 1, 2, 1.0) }];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.jsonl");
    write_predictions(&path, &preds).unwrap();
    assert_eq!(read_predictions(&path).unwrap(), preds);
    std::fs::write(&path, "{\"video\": 0}\n").unwrap();
    assert!(matches!(read_predictions(&path), Err(Error::Schema(_))));
}
