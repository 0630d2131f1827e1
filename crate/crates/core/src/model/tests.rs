use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{build_windows, horizontal_flip, two_person_park, WindowConfig, WindowSample};
use crate::features::{FeatureConfig, FeatureSource};

fn tiny_config() -> ModelConfig {
    ModelConfig {
        visual_dim: 6,
        semantic_dim: 4,
        subject_dim: 4,
        object_dim: 4,
        relation_dim: 3,
        mask_dim: 3,
        gaze_dim: 5,
        mask_channels: [2, 3],
        gaze_channels: [2, 3],
        ffn_dim: 8,
        heads: 3,
        window: 3,
        dropout: 0.0,
        ..ModelConfig::default()
    }
}

fn features(config: &ModelConfig) -> FeatureSource {
    let fc = FeatureConfig {
        visual_dim: config.visual_dim,
        semantic_dim: config.semantic_dim,
        ..FeatureConfig::default()
    };
    FeatureSource::synthetic(&fc, 78)
}

fn park_windows(config: &ModelConfig) -> Vec<WindowSample> {
    let v = &two_person_park()[0];
    let cfg = WindowConfig {
        length: config.window,
        ..WindowConfig::default()
    };
    build_windows(v, &cfg, config.n_outputs())
}

fn park_batch(config: &ModelConfig, windows: &[WindowSample]) -> BatchInput {
    BatchInput::build(config, windows, &two_person_park(), &features(config)).unwrap()
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn attention_single_key_returns_its_value() {
    let params = ParamStore::new();
    let mut g = Graph::new(&params);
    let q = g.input(Tensor::from_rows(&[vec![0.3, -2.0], vec![5.0, 1.0]]).unwrap());
    let k = g.input(Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap());
    let v = g.input(Tensor::from_rows(&[vec![7.0, -1.0, 2.0]]).unwrap());
    let out = attention(&mut g, q, k, v, None).unwrap();
    for r in 0..2 {
        assert_eq!(g.value(out).row(r), &[7.0, -1.0, 2.0]);
    }
}

#[test]
fn attention_equal_logits_average_values() {
    let params = ParamStore::new();
    let mut g = Graph::new(&params);
    let q = g.input(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
    let k = g.input(Tensor::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap());
    let v = g.input(Tensor::from_rows(&[vec![1.0, 4.0], vec![3.0, 0.0]]).unwrap());
    let out = attention(&mut g, q, k, v, None).unwrap();
    let got = g.value(out).row(0);
    assert!((got[0] - 2.0).abs() < 1e-12 && (got[1] - 2.0).abs() < 1e-12);
}

#[test]
fn attention_two_by_two_by_hand() {
    let params = ParamStore::new();
    let mut g = Graph::new(&params);
    let qv = [[1.0, 0.0], [0.5, -1.0]];
    let kv = [[1.0, 2.0], [0.0, 1.0]];
    let vv = [[1.0, 2.0], [3.0, 4.0]];
    let rows = |m: [[f64; 2]; 2]| Tensor::from_rows(&[m[0].to_vec(), m[1].to_vec()]).unwrap();
    let (q, k, v) = (g.input(rows(qv)), g.input(rows(kv)), g.input(rows(vv)));
    let out = attention(&mut g, q, k, v, None).unwrap();
    for i in 0..2 {
        let s0 = (qv[i][0] * kv[0][0] + qv[i][1] * kv[0][1]) / 2f64.sqrt();
        let s1 = (qv[i][0] * kv[1][0] + qv[i][1] * kv[1][1]) / 2f64.sqrt();
        let p0 = s0.exp() / (s0.exp() + s1.exp());
        for j in 0..2 {
            let want = p0 * vv[0][j] + (1.0 - p0) * vv[1][j];
            assert!((g.value(out).at(i, j) - want).abs() < 1e-6);
        }
    }
}

#[test]
fn attention_mask_blocks_keys() {
    let params = ParamStore::new();
    let mut g = Graph::new(&params);
    let q = g.input(Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap());
    let k = g.input(Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap());
    let v = g.input(Tensor::from_rows(&[vec![10.0], vec![20.0]]).unwrap());
    let mask = Tensor::from_rows(&[vec![0.0, f64::NEG_INFINITY], vec![f64::NEG_INFINITY, 0.0]]).unwrap();
    let out = attention(&mut g, q, k, v, Some(&mask)).unwrap();
    assert_eq!(g.value(out).data(), &[10.0, 20.0]);
    let bad = g.input(Tensor::zeros(&[3, 1]));
    assert!(matches!(attention(&mut g, q, k, bad, None), Err(Error::Shape(_))));
}

#[test]
fn fused_segment_attention_matches_composed_heads() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let params = ParamStore::new();
    let mut g = Graph::new(&params);
    let (heads, dk) = (3, 2);
    let q = g.input(random_tensor(&mut rng, &[7, heads * dk]));
    let k = g.input(random_tensor(&mut rng, &[5, heads * dk]));
    let v = g.input(random_tensor(&mut rng, &[5, heads * dk]));
    let seg_q = [Segment::new(0, 4), Segment::new(4, 3)];
    let seg_k = [Segment::new(0, 2), Segment::new(2, 3)];
    let fused = g.segment_attention(q, k, v, heads, &seg_q, &seg_k).unwrap();
    let fused = g.value(fused).clone();
    for (sq, sk) in seg_q.iter().zip(&seg_k) {
        for h in 0..heads {
            let qi: Vec<usize> = (sq.start..sq.start + sq.len).collect();
            let ki: Vec<usize> = (sk.start..sk.start + sk.len).collect();
            let qs = g.gather_rows(q, &qi).unwrap();
            let qs = g.slice_cols(qs, h * dk, dk).unwrap();
            let ks = g.gather_rows(k, &ki).unwrap();
            let ks = g.slice_cols(ks, h * dk, dk).unwrap();
            let vs = g.gather_rows(v, &ki).unwrap();
            let vs = g.slice_cols(vs, h * dk, dk).unwrap();
            let out = attention(&mut g, qs, ks, vs, None).unwrap();
            for (r, &row) in qi.iter().enumerate() {
                for c in 0..dk {
                    assert!((g.value(out).at(r, c) - fused.at(row, h * dk + c)).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn sinusoidal_table() {
    let pe = sinusoidal_pe(4, 8);
    for c in 0..8 {
        assert_eq!(pe.at(0, c), if c % 2 == 0 { 0.0 } else { 1.0 });
    }
    assert!(sinusoidal_pe(30, 16).data().iter().all(|v| (-1.0..=1.0).contains(v)));
    // frequencies via exp/ln instead of powf
    for p in 0..4 {
        for i in 0..4 {
            let freq = (-(2.0 * i as f64) * 10000f64.ln() / 8.0).exp();
            assert!((pe.at(p, 2 * i) - (p as f64 * freq).sin()).abs() < 1e-12);
            assert!((pe.at(p, 2 * i + 1) - (p as f64 * freq).cos()).abs() < 1e-12);
        }
    }
}

#[test]
fn embedded_pairs_have_norm_sqrt_five() {
    let config = tiny_config();
    let model = Model::new(config.clone(), 1).unwrap();
    let batch = park_batch(&config, &park_windows(&config));
    let mut g = Graph::new(model.params());
    let e = model.embed(&mut g, &batch).unwrap();
    let x = g.value(e.pairs);
    assert_eq!(x.shape(), &[batch.n_pairs(), config.pair_dim()]);
    for r in 0..x.rows() {
        let n: f64 = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 5f64.sqrt()).abs() < 1e-5, "row {r} norm {n}");
    }
}

#[test]
fn zero_semantic_vector_leaves_four_components() {
    let config = tiny_config();
    let model = Model::new(config.clone(), 1).unwrap();
    let mut batch = park_batch(&config, &park_windows(&config));
    batch.semantic = Tensor::zeros(batch.semantic.shape());
    let mut g = Graph::new(model.params());
    let e = model.embed(&mut g, &batch).unwrap();
    let x = g.value(e.pairs);
    for r in 0..x.rows() {
        let n: f64 = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 2.0).abs() < 1e-9);
    }
}

#[test]
fn concat_mode_appends_gaze() {
    let config = ModelConfig {
        gaze_mode: GazeMode::Concat,
        ..tiny_config()
    };
    let model = Model::new(config.clone(), 1).unwrap();
    let batch = park_batch(&config, &park_windows(&config));
    let mut g = Graph::new(model.params());
    let e = model.embed(&mut g, &batch).unwrap();
    assert_eq!(g.shape(e.pairs), &[batch.n_pairs(), 23]);
    let x = g.value(e.pairs);
    let n: f64 = x.row(0).iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((n - 6f64.sqrt()).abs() < 1e-5);
    assert_eq!(model.temporal_layout(), vec![TemporalLayerKind::Plain; 3]);
}

#[test]
fn temporal_layout_has_one_cross_layer() {
    let model = Model::new(tiny_config(), 0).unwrap();
    assert_eq!(
        model.temporal_layout(),
        vec![TemporalLayerKind::Cross, TemporalLayerKind::Plain, TemporalLayerKind::Plain]
    );
    let none = Model::new(ModelConfig { gaze_mode: GazeMode::None, ..tiny_config() }, 0).unwrap();
    assert_eq!(none.temporal_layout()[0], TemporalLayerKind::Cross);
    assert!(none.params().lookup("embed.gaze.proj.w").is_none());
}

fn spatial_run(model: &Model, x: &Tensor, segments: &[Segment]) -> (Tensor, Tensor) {
    let mut g = Graph::new(model.params());
    let xv = g.input(x.clone());
    let (r, c) = model.spatial_encode(&mut g, xv, segments, &mut Pass::eval()).unwrap();
    (g.value(r).clone(), g.value(c).clone())
}

#[test]
fn spatial_encoder_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for token in [true, false] {
        let config = ModelConfig { global_token: token, ..tiny_config() };
        let d = config.pair_dim();
        let model = Model::new(config, 3).unwrap();
        let x = random_tensor(&mut rng, &[5, d]);
        let perm = [3, 0, 4, 1, 2];
        let mut px = Vec::new();
        for &p in &perm {
            px.extend_from_slice(x.row(p));
        }
        let px = Tensor::new(vec![5, d], px).unwrap();
        let seg = [Segment::new(0, 5)];
        let (r, c) = spatial_run(&model, &x, &seg);
        let (pr, pc) = spatial_run(&model, &px, &seg);
        for (i, &p) in perm.iter().enumerate() {
            for j in 0..d {
                assert!((pr.at(i, j) - r.at(p, j)).abs() < 1e-10);
            }
        }
        for j in 0..d {
            assert!((pc.at(0, j) - c.at(0, j)).abs() < 1e-10);
        }
    }
}

#[test]
fn spatial_encoder_shapes_and_duplicates() {
    let config = tiny_config();
    let d = config.pair_dim();
    let model = Model::new(config, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let one = random_tensor(&mut rng, &[1, d]);
    let (r, c) = spatial_run(&model, &one, &[Segment::new(0, 1)]);
    assert_eq!((r.shape(), c.shape()), (&[1, d][..], &[1, d][..]));

    let mut dup = one.data().to_vec();
    dup.extend_from_slice(one.data());
    let dup = Tensor::new(vec![2, d], dup).unwrap();
    let (r, _) = spatial_run(&model, &dup, &[Segment::new(0, 2)]);
    assert_eq!(r.row(0), r.row(1));
}

#[test]
fn eval_forward_is_deterministic_and_shaped() {
    let config = tiny_config();
    let model = Model::new(config.clone(), 5).unwrap();
    let windows = park_windows(&config);
    let batch = park_batch(&config, &windows);
    let a = model.infer(&batch).unwrap();
    let b = model.infer(&batch).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.shape(), &[windows.len(), 50]);
    assert!(a.data().iter().all(|p| (0.0..=1.0).contains(p)));
    // the same window alone yields the same prediction
    let single = park_batch(&config, &windows[3..4]);
    let s = model.infer(&single).unwrap();
    for (x, y) in s.row(0).iter().zip(a.row(3)) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn dropout_only_in_training() {
    let config = ModelConfig { dropout: 0.3, ..tiny_config() };
    let model = Model::new(config.clone(), 5).unwrap();
    let batch = park_batch(&config, &park_windows(&config));
    let eval = model.infer(&batch).unwrap();
    let train = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new(model.params());
        let out = model.forward(&mut g, &batch, &mut Pass::train(&mut rng, 0.3)).unwrap();
        g.value(out.z).clone()
    };
    assert_eq!(train(1), train(1));
    assert_ne!(train(1), eval);
    assert_ne!(train(1), train(2));
}

#[test]
fn heads_normalize() {
    let config = ModelConfig {
        heads_spec: vec![
            HeadSpec { name: "spatial".into(), classes: 8, activation: HeadActivation::Softmax },
            HeadSpec { name: "action".into(), classes: 42, activation: HeadActivation::Sigmoid },
        ],
        ..tiny_config()
    };
    let model = Model::new(config.clone(), 0).unwrap();
    let batch = park_batch(&config, &park_windows(&config));
    let z = model.infer(&batch).unwrap();
    for r in 0..z.rows() {
        let s: f64 = z.row(r)[..8].iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
    let mut sig = model.clone();
    for id in sig.params().ids().collect::<Vec<_>>() {
        if sig.params().name(id).starts_with("head.action") {
            let shape = sig.params().get(id).shape().to_vec();
            *sig.params_mut().get_mut(id) = Tensor::zeros(&shape);
        }
    }
    let mut g = Graph::new(sig.params());
    let zero_in = g.input(Tensor::zeros(&[2, config.pair_dim()]));
    let (heads, z) = sig.predict(&mut g, zero_in).unwrap();
    assert_eq!(g.shape(z), &[2, 50]);
    assert_eq!(heads[1].offset, 8);
    assert!(g.value(heads[1].probs).data().iter().all(|&p| p == 0.5));
}

#[test]
fn context_without_gaze_is_projected_global() {
    let config = ModelConfig { gaze_mode: GazeMode::None, ..tiny_config() };
    let model = Model::new(config.clone(), 2).unwrap();
    let batch = park_batch(&config, &park_windows(&config));
    let mut g = Graph::new(model.params());
    let out = model.forward(&mut g, &batch, &mut Pass::eval()).unwrap();
    let ctx = g.value(out.context.unwrap()).clone();
    assert_eq!(ctx.shape(), &[batch.len() * 3, config.pair_dim()]);
    // recompute row 0: W c + b + pe(0)
    let c = g.value(out.global).row(batch.samples[0].context_scenes[0]).to_vec();
    let w = model.params().get(model.params().lookup("context.proj.w").unwrap());
    let b = model.params().get(model.params().lookup("context.proj.b").unwrap());
    let pe = sinusoidal_pe(3, config.pair_dim());
    for j in 0..config.pair_dim() {
        let want: f64 = (0..c.len()).map(|i| c[i] * w.at(i, j)).sum::<f64>() + b.data()[j] + pe.at(0, j);
        assert!((ctx.at(0, j) - want).abs() < 1e-10);
    }
}

#[test]
fn earliest_context_frame_influences_the_output() {
    let config = tiny_config();
    let model = Model::new(config.clone(), 8).unwrap();
    let windows = park_windows(&config);
    let batch = park_batch(&config, &windows[windows.len() - 1..]);
    let run = |bump: f64| {
        let mut g = Graph::new(model.params());
        let e = model.embed(&mut g, &batch).unwrap();
        let (refined, global) = model.spatial_encode(&mut g, e.pairs, &batch.scene_segments, &mut Pass::eval()).unwrap();
        let s = &batch.samples[0];
        let ctx = model
            .build_context(&mut g, global, e.gaze, &s.context_scenes, &s.context_gaze, &[0, 1, 2])
            .unwrap()
            .unwrap();
        let mut delta = Tensor::zeros(g.shape(ctx));
        delta.data_mut()[0] = bump;
        let delta = g.input(delta);
        let ctx = g.add(ctx, delta).unwrap();
        let seq = g.gather_rows(refined, &s.pair_rows).unwrap();
        let segs = [Segment::new(0, 3)];
        let f = model.temporal_encode(&mut g, seq, Some(ctx), &segs, &segs, &[2], &mut Pass::eval()).unwrap();
        g.value(f).clone()
    };
    let base = run(0.0);
    assert_eq!(base, run(0.0));
    assert!(base.data().iter().zip(run(0.5).data()).any(|(a, b)| (a - b).abs() > 1e-9));
}

#[test]
fn framewise_windows_run() {
    let config = ModelConfig { window_mode: WindowMode::Framewise, ..tiny_config() };
    let model = Model::new(config.clone(), 2).unwrap();
    let windows = park_windows(&config);
    let batch = park_batch(&config, &windows);
    for (s, w) in batch.samples.iter().zip(&windows) {
        let key = batch.pairs[s.pair_rows[s.output_row]];
        assert_eq!(key, (w.human, w.object));
        assert_eq!(*s.pe_index.last().unwrap(), 2);
    }
    let z = model.infer(&batch).unwrap();
    assert_eq!(z.shape(), &[windows.len(), 50]);
}

#[test]
fn flipped_windows_use_mirrored_masks() {
    let config = tiny_config();
    let windows = park_windows(&config);
    let v = &two_person_park()[0];
    let flipped: Vec<_> = windows.iter().map(|w| horizontal_flip(w, v.width)).collect();
    let a = park_batch(&config, &windows[..1]);
    let b = park_batch(&config, &flipped[..1]);
    assert!(b.scenes.iter().all(|s| s.flipped));
    assert_eq!(a.v_s, b.v_s);
    assert_ne!(a.masks, b.masks);
}

#[test]
fn batch_rejects_wrong_window_length() {
    let config = tiny_config();
    let other = ModelConfig { window: 4, ..tiny_config() };
    let w = park_windows(&other);
    let err = BatchInput::build(&config, &w, &two_person_park(), &features(&config)).unwrap_err();
    assert!(matches!(err, Error::Shape(_)));
}

#[test]
fn checkpoint_round_trip() {
    let config = ModelConfig { pe_mode: PeMode::Learned, ..tiny_config() };
    let model = Model::new(config.clone(), 7).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&model, &path).unwrap();
    let back = load_checkpoint(&path, Some(&config)).unwrap();
    for id in model.params().ids() {
        let (a, b) = (model.params().get(id), back.params().get(id));
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(*y, *x as f32 as f64);
        }
    }
    let other = ModelConfig { heads: 2, ..config };
    assert!(matches!(load_checkpoint(&path, Some(&other)), Err(Error::CheckpointMismatch(_))));
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(load_checkpoint(&path, None), Err(Error::CheckpointMismatch(_))));
}

/// Central differences on sampled entries of every parameter tensor.
fn check_gradients(config: ModelConfig, seed: u64) {
    let mut model = Model::new(config.clone(), seed).unwrap();
    let windows = park_windows(&config);
    let batch = park_batch(&config, &windows[..4]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    // zero biases put ReLU exactly on its kink for blank mask patches
    for id in model.params().ids().collect::<Vec<_>>() {
        for v in model.params_mut().get_mut(id).data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let weights = random_tensor(&mut rng, &[4, config.n_outputs()]);
    let graph_loss = |g: &mut Graph, m: &Model| {
        let out = m.forward(g, &batch, &mut Pass::eval()).unwrap();
        let wz = g.mul_const(out.z, weights.clone()).unwrap();
        g.sum(wz)
    };
    let loss_of = |m: &Model| {
        let mut g = Graph::new(m.params());
        let l = graph_loss(&mut g, m);
        g.value(l).data()[0]
    };
    let grads = {
        let mut g = Graph::new(model.params());
        let l = graph_loss(&mut g, &model);
        g.backward(l).unwrap()
    };
    let h = 1e-6;
    for id in model.params().ids().collect::<Vec<_>>() {
        let n = model.params().get(id).len();
        let picks: Vec<usize> = if n <= 12 { (0..n).collect() } else { (0..12).map(|_| rng.random_range(0..n)).collect() };
        let analytic = grads.get(id).expect("every parameter receives a gradient");
        let (mut num, mut ana) = (Vec::new(), Vec::new());
        for &i in &picks {
            let orig = model.params().get(id).data()[i];
            model.params_mut().get_mut(id).data_mut()[i] = orig + h;
            let up = loss_of(&model);
            model.params_mut().get_mut(id).data_mut()[i] = orig - h;
            let down = loss_of(&model);
            model.params_mut().get_mut(id).data_mut()[i] = orig;
            num.push((up - down) / (2.0 * h));
            ana.push(analytic.data()[i]);
        }
        let diff: f64 = num.iter().zip(&ana).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = num.iter().map(|a| a * a).sum::<f64>().sqrt().max(ana.iter().map(|a| a * a).sum::<f64>().sqrt());
        let name = model.params().name(id).to_string();
        // gradients that vanish analytically are compared against an absolute floor
        assert!(diff <= 1e-4 * scale.max(1e-4), "{name}: |num - ana| = {diff}, scale {scale}");
    }
}

#[test]
fn model_gradients_match_finite_differences() {
    check_gradients(tiny_config(), 11);
    check_gradients(ModelConfig { activation: Activation::Gelu, pe_mode: PeMode::Learned, ..tiny_config() }, 12);
}
