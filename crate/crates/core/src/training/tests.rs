use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::two_person_park;
use crate::features::FeatureConfig;
use crate::model::ModelConfig;
use crate::tensor::{ParamStore, Tensor};

#[test]
fn unit_count_weight_is_one() {
    for beta in [0.0, 0.5, 0.9, 0.9999] {
        assert_eq!(class_weights(&[1], beta), vec![1.0]);
    }
    assert_eq!(class_weights(&[0], 0.9999), vec![1.0 - 0.9999]);
}

#[test]
fn gamma_zero_unit_counts_is_bce() {
    let p = [0.2, 0.7, 0.95, 0.5];
    let y = [true, false, true, false];
    let bce: f64 = p
        .iter()
        .zip(&y)
        .map(|(&p, &y): (&f64, &bool)| if y { -p.ln() } else { -(1.0 - p).ln() })
        .sum::<f64>()
        / 4.0;
    assert_eq!(cb_focal_loss(&p, &y, &[1; 4], 0.9999, 0.0), bce);
}

#[test]
fn documented_scalar_case() {
    let beta: f64 = 0.9999;
    // 1 - beta^10 = 10 b - 45 b^2 + 120 b^3 - ... with b = 1e-4
    let b: f64 = 1e-4;
    let one_minus = 10.0 * b - 45.0 * b * b + 120.0 * b.powi(3) - 210.0 * b.powi(4) + 252.0 * b.powi(5);
    let weight = b / one_minus;
    let want = weight * 0.5f64.sqrt() * std::f64::consts::LN_2;
    let got = cb_focal_loss(&[0.5], &[true], &[10], beta, 0.5);
    assert!((got - want).abs() < 1e-12 * want, "{got} vs {want}");
}

#[test]
fn cb_focal_is_nonnegative_and_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let n = rng.random_range(0..50usize);
        let gamma = rng.random_range(0.0..3.0);
        let p1: f64 = rng.random_range(0.0..1.0);
        let p2: f64 = rng.random_range(0.0..1.0);
        let (lo, hi) = if p1 < p2 { (p1, p2) } else { (p2, p1) };
        let l_lo = cb_focal_loss(&[lo], &[true], &[n], 0.99, gamma);
        let l_hi = cb_focal_loss(&[hi], &[true], &[n], 0.99, gamma);
        assert!(l_lo >= 0.0 && l_hi >= 0.0);
        assert!(l_hi <= l_lo);
    }
}

#[test]
fn equal_counts_scale_bce() {
    let p = [0.3, 0.6, 0.8];
    let y = [false, true, true];
    let w = class_weights(&[7], 0.99)[0];
    for (pi, yi) in p.iter().zip(&y) {
        let cb = cb_focal_loss(&[*pi], &[*yi], &[7], 0.99, 0.0);
        let bce = cb_focal_loss(&[*pi], &[*yi], &[1], 0.99, 0.0);
        assert_eq!(cb, w * bce);
    }
}

#[test]
fn graph_focal_matches_scalar_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let counts = [0, 1, 5, 40, 1000];
    let rows: Vec<Vec<f64>> = (0..3).map(|_| (0..5).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
    let ys: Vec<Vec<bool>> = (0..3).map(|_| (0..5).map(|_| rng.random_bool(0.4)).collect()).collect();
    let params = ParamStore::new();
    let mut g = Graph::new(&params);
    let p = g.input(Tensor::from_rows(&rows).unwrap());
    let y = Tensor::from_rows(&ys.iter().map(|r| r.iter().map(|&b| b as u8 as f64).collect()).collect::<Vec<_>>()).unwrap();
    let l = g.binary_focal(p, y, &class_weights(&counts, 0.9999), 0.5).unwrap();
    let want: f64 = rows.iter().zip(&ys).map(|(r, y)| cb_focal_loss(r, y, &counts, 0.9999, 0.5)).sum::<f64>() / 3.0;
    assert!((g.value(l).data()[0] - want).abs() < 1e-12);
}

#[test]
fn margin_loss_cases() {
    assert_eq!(mlm_loss(&[3.0, 1.0, 0.5], &[true, false, false]).unwrap(), 0.0);
    assert_eq!(mlm_loss(&[0.2, 0.2], &[true, false]).unwrap(), 1.0);
    assert!(matches!(mlm_loss(&[0.1, 0.2], &[false, false]), Err(Error::NoPositiveLabel)));
    // three classes, positives {0, 2}: pairs (0,1) and (2,1)
    let s = [0.4, 0.9, -0.3];
    let want = ((1.0 - 0.4 + 0.9f64).max(0.0) + (1.0 - (-0.3) + 0.9f64).max(0.0)) / 2.0;
    assert!((mlm_loss(&s, &[true, false, true]).unwrap() - want).abs() < 1e-15);

    let params = ParamStore::new();
    let mut g = Graph::new(&params);
    let sv = g.input(Tensor::from_rows(&[s.to_vec()]).unwrap());
    let l = g.margin_rank(sv, Tensor::from_rows(&[vec![1.0, 0.0, 1.0]]).unwrap()).unwrap();
    assert!((g.value(l).data()[0] - want).abs() < 1e-15);
}

fn scalar_store(v: f64) -> (ParamStore, crate::tensor::ParamId) {
    let mut s = ParamStore::new();
    let id = s.add("x", Tensor::new(vec![1], vec![v]).unwrap());
    (s, id)
}

fn grads_for(store: &ParamStore, id: crate::tensor::ParamId, grad: f64) -> crate::tensor::Gradients {
    // loss = grad * x gives exactly this gradient
    let mut g = Graph::new(store);
    let x = g.param(id);
    let l = g.scale(x, grad);
    let l = g.sum(l);
    g.backward(l).unwrap()
}

#[test]
fn adamw_zero_gradient_cases() {
    let (mut s, id) = scalar_store(2.0);
    let grads = grads_for(&s, id, 0.0);
    let mut opt = AdamW::new(&s, AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() });
    opt.step(&mut s, &grads, 0.1).unwrap();
    assert_eq!(s.get(id).data()[0], 2.0);

    let mut opt = AdamW::new(&s, AdamWConfig::default());
    opt.step(&mut s, &grads, 0.1).unwrap();
    assert_eq!(s.get(id).data()[0], 2.0 * (1.0 - 0.1 * 1e-2));
}

#[test]
fn adamw_three_step_trajectory() {
    let (mut s, id) = scalar_store(1.0);
    let mut opt = AdamW::new(&s, AdamWConfig::default());
    let gs = [0.5, -1.5, 2.0];
    let lrs = [0.1, 0.05, 0.2];
    let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
    for t in 0..3 {
        let grads = grads_for(&s, id, gs[t]);
        opt.step(&mut s, &grads, lrs[t]).unwrap();
        x -= lrs[t] * 1e-2 * x;
        m = 0.9 * m + 0.1 * gs[t];
        v = 0.999 * v + 0.001 * gs[t] * gs[t];
        let mh = m / (1.0 - 0.9f64.powi(t as i32 + 1));
        let vh = v / (1.0 - 0.999f64.powi(t as i32 + 1));
        x -= lrs[t] * mh / (vh.sqrt() + 1e-8);
        assert!((s.get(id).data()[0] - x).abs() < 1e-10);
    }
}

#[test]
fn schedule_shape() {
    let s = LrSchedule::default();
    let spe = 10;
    assert_eq!(s.lr(0, spe, 0), 1e-8);
    assert_eq!(s.lr(3, spe, 0), 1e-4);
    let last_warm = s.lr(2, spe, spe - 1);
    assert!((last_warm - 1e-4).abs() / 1e-4 < 1.0 / (3 * spe) as f64 + 1e-12);
    let mut prev = f64::INFINITY;
    for e in 3..25 {
        for st in 0..spe {
            let lr = s.lr(e, spe, st);
            assert!(lr <= prev);
            prev = lr;
        }
    }
    assert!((s.lr(24, spe, 0) - 1e-5).abs() < 1e-18);
    // warmup increases step by step
    assert!(s.lr(1, spe, 3) > s.lr(1, spe, 2));
}

fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        visual_dim: 8,
        semantic_dim: 4,
        subject_dim: 6,
        object_dim: 6,
        relation_dim: 4,
        mask_dim: 4,
        gaze_dim: 4,
        mask_channels: [2, 3],
        gaze_channels: [2, 3],
        ffn_dim: 16,
        heads: 2,
        window: 3,
        dropout: 0.0,
        ..ModelConfig::default()
    }
}

#[test]
fn loss_falls_on_a_small_overfit_set() {
    let mc = tiny_model_config();
    let mut model = Model::new(mc.clone(), 0).unwrap();
    let videos = two_person_park();
    let fc = FeatureConfig { visual_dim: 8, semantic_dim: 4, ..FeatureConfig::default() };
    let features = FeatureSource::synthetic(&fc, 78);
    let wcfg = WindowConfig { length: 3, ..WindowConfig::default() };
    let windows: Vec<_> = build_windows(&videos[0], &wcfg, 50).into_iter().filter(|w| w.positives().count() > 0).take(5).collect();
    assert_eq!(windows.len(), 5);
    let input = BatchInput::build(&mc, &windows, &videos, &features).unwrap();
    let lc = LossConfig::default();
    let weights = lc.weights(&[1; 50]);
    let mut opt = AdamW::new(model.params(), AdamWConfig::default());
    let mut losses = Vec::new();
    for _ in 0..50 {
        let (l, grads) = {
            let mut g = Graph::new(model.params());
            let out = model.forward(&mut g, &input, &mut Pass::eval()).unwrap();
            let l = batch_loss(&mut g, &out.heads, &mc.heads_spec, &input.targets, &lc, &weights).unwrap();
            (g.value(l).data()[0], g.backward(l).unwrap())
        };
        losses.push(l);
        opt.step(model.params_mut(), &grads, 1e-2).unwrap();
    }
    assert!(losses[49] < 0.5 * losses[0], "{} -> {}", losses[0], losses[49]);
}

#[test]
fn softmax_heads_train_on_rows_with_a_positive() {
    use crate::model::{HeadActivation, HeadSpec};
    let mc = ModelConfig {
        heads_spec: vec![
            HeadSpec { name: "spatial".into(), classes: 8, activation: HeadActivation::Softmax },
            HeadSpec { name: "action".into(), classes: 42, activation: HeadActivation::Sigmoid },
        ],
        ..tiny_model_config()
    };
    let model = Model::new(mc.clone(), 0).unwrap();
    let videos = two_person_park();
    let fc = FeatureConfig { visual_dim: 8, semantic_dim: 4, ..FeatureConfig::default() };
    let features = FeatureSource::synthetic(&fc, 78);
    let wcfg = WindowConfig { length: 3, ..WindowConfig::default() };
    let windows = build_windows(&videos[0], &wcfg, 50);
    let input = BatchInput::build(&mc, &windows, &videos, &features).unwrap();
    for kind in [LossKind::CbFocal, LossKind::Bce, LossKind::Focal, LossKind::Mlm] {
        let lc = LossConfig { kind, ..LossConfig::default() };
        let mut g = Graph::new(model.params());
        let out = model.forward(&mut g, &input, &mut Pass::eval()).unwrap();
        let l = batch_loss(&mut g, &out.heads, &mc.heads_spec, &input.targets, &lc, &lc.weights(&[3; 50])).unwrap();
        assert!(g.value(l).data()[0].is_finite() && g.value(l).data()[0] > 0.0);
        g.backward(l).unwrap();
    }
}

#[test]
fn training_is_reproducible() {
    let mc = ModelConfig { dropout: 0.1, ..tiny_model_config() };
    let videos = two_person_park();
    let fc = FeatureConfig { visual_dim: 8, semantic_dim: 4, ..FeatureConfig::default() };
    let features = FeatureSource::synthetic(&fc, 78);
    let data = TrainData { videos: &videos, features: &features, windows: WindowConfig { length: 3, ..WindowConfig::default() } };
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 1,
        schedule: LrSchedule { peak: 1e-2, warmup_epochs: 1, epochs: 3, ..LrSchedule::default() },
        ..TrainConfig::default()
    };
    let run = |seed| {
        let mut model = Model::new(mc.clone(), 1).unwrap();
        let log = train(&mut model, &data, &cfg, seed, &mut ()).unwrap();
        (log_to_jsonl(&log), model.params().get(model.params().ids().next().unwrap()).clone())
    };
    let (a, pa) = run(5);
    let (b, pb) = run(5);
    assert_eq!(a, b);
    assert_eq!(pa, pb);
    assert_eq!(a.lines().count(), 3);
    let (c, _) = run(6);
    assert_ne!(a, c);
    let first: EpochRecord = serde_json::from_str(a.lines().next().unwrap()).unwrap();
    assert_eq!(first.epoch, 0);
    assert!(first.mean_loss.is_finite());
}

#[test]
fn unseen_classes_keep_the_loss_finite() {
    let w = class_weights(&[0, 0, 3], 0.9999);
    assert!(w.iter().all(|x| x.is_finite() && *x > 0.0));
    assert!(cb_focal_loss(&[0.3, 0.9, 0.1], &[false, true, false], &[0, 0, 3], 0.9999, 0.5).is_finite());
}
