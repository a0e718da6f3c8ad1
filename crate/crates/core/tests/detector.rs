use callscope::dataset::{AnnotationBox, SpeciesVocab};
use callscope::detector::targets::GtBox;
use callscope::detector::train::{step_rng, Trainer};
use callscope::detector::{softmax_rows, Checkpoint, Detector, ModelConfig, PeContext, TrainingSet};
use callscope::dsp::DspConfig;
use callscope::nn::{init, Graph, Tensor};
use callscope::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn image(h: usize, w: usize, seed: u64) -> Tensor {
    let t = init::normal(&mut ChaCha8Rng::seed_from_u64(seed), &[1, h, w], 1.0);
    let d = t.data().iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
    Tensor::new(vec![1, h, w], d)
}

fn toy_gts() -> Vec<GtBox> {
    vec![
        GtBox { bbox: [3.0, 2.0, 11.0, 9.0], class: 0 },
        GtBox { bbox: [16.0, 6.0, 27.0, 14.0], class: 1 },
    ]
}

fn ctx(w: usize) -> PeContext {
    PeContext { x_offset: 0.0, window_width: w as f64 }
}

#[test]
fn backbone_and_pyramid_shapes_follow_strides() {
    let det = Detector::new(ModelConfig::small(3)).unwrap();
    let mut g = Graph::no_grad();
    let x = g.input(image(188, 512, 1));
    let f = det.features(&mut g, x).unwrap();
    let expect = [(94, 256), (47, 128), (24, 64), (12, 32), (6, 16)];
    for (l, &(h, w)) in expect.iter().enumerate() {
        let (c, fh, fw) = g.value(f.backbone[l]).dims3();
        assert_eq!((fh, fw), (h, w), "C{}", l + 2);
        assert_eq!(c, [16, 24, 32, 48, 64][l]);
        assert_eq!(g.value(f.attended[l]).shape(), g.value(f.backbone[l]).shape());
        assert_eq!(g.value(f.pyramid[l]).dims3(), (24, h, w));
    }
}

#[test]
fn construction_is_deterministic_in_the_seed() {
    let a = Detector::new(ModelConfig::toy(2)).unwrap();
    let b = Detector::new(ModelConfig::toy(2)).unwrap();
    let c = Detector::new(ModelConfig { seed: 1, ..ModelConfig::toy(2) }).unwrap();
    assert_eq!(a.params.digest(), b.params.digest());
    assert_ne!(a.params.digest(), c.params.digest());
}

#[test]
fn weights_from_another_architecture_are_rejected() {
    let other = Detector::new(ModelConfig::toy(3)).unwrap();
    let r = Detector::with_params(ModelConfig::toy(2), other.params);
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn zero_input_pyramid_is_constant_per_channel_and_responds_to_input() {
    // Bias-free FPN on a constant backbone output is spatially constant.
    let det = Detector::new(ModelConfig { use_attention: false, ..ModelConfig::toy(2) }).unwrap();
    let mut g = Graph::no_grad();
    let x = g.input(Tensor::zeros(&[1, 16, 32]));
    let f = det.features(&mut g, x).unwrap();
    let base = g.value(f.pyramid[1]).clone();
    let (c, h, w) = base.dims3();
    for ch in 0..c {
        // Interior positions only; 3x3 zero padding changes the border.
        let v = base.data()[ch * h * w + w + 1];
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                assert!((base.data()[ch * h * w + y * w + x] - v).abs() < 1e-12);
            }
        }
    }
    let mut g2 = Graph::no_grad();
    let x2 = g2.input(image(16, 32, 4));
    let f2 = det.features(&mut g2, x2).unwrap();
    assert!(g2.value(f2.pyramid[1]).data().iter().zip(base.data()).any(|(a, b)| (a - b).abs() > 1e-6));
}

#[test]
fn rcnn_probabilities_sum_to_one_and_identical_rois_agree() {
    let det = Detector::new(ModelConfig::toy(2)).unwrap();
    let mut g = Graph::no_grad();
    let x = g.input(image(16, 32, 2));
    let f = det.features(&mut g, x).unwrap();
    let rois = vec![[2.0, 1.0, 10.0, 8.0], [2.0, 1.0, 10.0, 8.0], [12.0, 4.0, 30.0, 15.0]];
    let (logits, deltas) = det.roi_heads(&mut g, &f.pyramid, &rois, ctx(32));
    let p = softmax_rows(g.value(logits));
    assert_eq!(g.value(deltas).dims2(), (3, 8));
    for r in 0..3 {
        let s: f64 = p[r * 3..r * 3 + 3].iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
    assert_eq!(p[0..3], p[3..6]);
}

#[test]
fn zeroed_pe_projection_makes_heads_position_blind() {
    let mut det = Detector::new(ModelConfig::toy(2)).unwrap();
    let proj = det.rcnn.pe_proj.as_ref().unwrap().w;
    det.params.get_mut(proj).data_mut().fill(0.0);
    let run = |offset: f64| {
        let mut g = Graph::no_grad();
        let x = g.input(image(16, 32, 3));
        let f = det.features(&mut g, x).unwrap();
        let (l, _) = det.roi_heads(&mut g, &f.pyramid, &[[4.0, 3.0, 12.0, 9.0]], PeContext { x_offset: offset, window_width: 64.0 });
        g.value(l).clone()
    };
    assert_eq!(run(0.0), run(30.0));
    let proj_live = Detector::new(ModelConfig::toy(2)).unwrap();
    let mut g = Graph::no_grad();
    let x = g.input(image(16, 32, 3));
    let f = proj_live.features(&mut g, x).unwrap();
    let (a, _) = proj_live.roi_heads(&mut g, &f.pyramid, &[[4.0, 3.0, 12.0, 9.0]], PeContext { x_offset: 0.0, window_width: 64.0 });
    let (b, _) = proj_live.roi_heads(&mut g, &f.pyramid, &[[4.0, 3.0, 12.0, 9.0]], PeContext { x_offset: 30.0, window_width: 64.0 });
    assert_ne!(g.value(a), g.value(b));
}

#[test]
fn roi_level_assignment_is_clamped() {
    let det = Detector::new(ModelConfig::small(1)).unwrap();
    assert_eq!(det.roi_level(&[0.0, 0.0, 1.0, 1.0]), 0);
    assert_eq!(det.roi_level(&[0.0, 0.0, 224.0, 224.0]), 2);
    assert_eq!(det.roi_level(&[0.0, 0.0, 448.0, 448.0]), 3);
    assert_eq!(det.roi_level(&[0.0, 0.0, 5000.0, 5000.0]), 4);
}

#[test]
fn empty_ground_truth_gives_finite_background_only_loss() {
    let det = Detector::new(ModelConfig::toy(2)).unwrap();
    let mut g = Graph::new();
    let (_, losses, plan) = det.loss(&mut g, &image(16, 32, 5), &[], ctx(32), None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(losses.is_finite());
    assert_eq!(losses.rpn_reg, 0.0);
    assert_eq!(losses.rcnn_reg, 0.0);
    assert!(losses.rpn_obj > 0.0);
    assert!(plan.rcnn.labels.iter().all(|&l| l == 0));
}

fn fixed_loss(det: &Detector, img: &Tensor, plan: &callscope::detector::targets::TrainPlan, grad: bool) -> (f64, Vec<Option<Tensor>>) {
    let mut g = if grad { Graph::new() } else { Graph::no_grad() };
    let (total, l, _) = det.loss(&mut g, img, &toy_gts(), ctx(32), Some(plan), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let grads = if grad { g.backward(total, det.params.len()) } else { Vec::new() };
    (l.total(), grads)
}

#[test]
fn full_model_gradient_matches_central_differences() {
    let mut det = Detector::new(ModelConfig::toy(2)).unwrap();
    let img = image(16, 32, 6);
    let mut g = Graph::new();
    let (_, _, plan) = det.loss(&mut g, &img, &toy_gts(), ctx(32), None, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert!(plan.rcnn.foreground > 0 && plan.rpn.positives > 0);
    let (_, grads) = fixed_loss(&det, &img, &plan, true);
    let eps = 1e-5;
    let mut checked = 0;
    let ids: Vec<_> = det.params.ids().collect();
    for id in ids {
        let n = det.params.get(id).len();
        let an = grads[id.0].clone().unwrap_or_else(|| Tensor::zeros(det.params.get(id).shape()));
        for i in [0, n / 2, n - 1] {
            let orig = det.params.get(id).data()[i];
            det.params.get_mut(id).data_mut()[i] = orig + eps;
            let up = fixed_loss(&det, &img, &plan, false).0;
            det.params.get_mut(id).data_mut()[i] = orig - eps;
            let down = fixed_loss(&det, &img, &plan, false).0;
            det.params.get_mut(id).data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * eps);
            let a = an.data()[i];
            assert!(
                (fd - a).abs() <= 1e-4 * fd.abs().max(a.abs()) + 1e-7,
                "{}[{i}]: fd {fd} vs analytic {a}",
                det.params.name(id)
            );
            checked += 1;
        }
    }
    assert!(checked > 60);
}

#[test]
fn small_gradient_step_lowers_the_fixed_plan_loss() {
    let mut det = Detector::new(ModelConfig::toy(2)).unwrap();
    let img = image(16, 32, 7);
    let mut g = Graph::new();
    let (_, _, plan) = det.loss(&mut g, &img, &toy_gts(), ctx(32), None, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let (before, grads) = fixed_loss(&det, &img, &plan, true);
    let ids: Vec<_> = det.params.ids().collect();
    for id in ids {
        if let Some(gr) = &grads[id.0] {
            let p = det.params.get_mut(id);
            for (w, d) in p.data_mut().iter_mut().zip(gr.data()) {
                *w -= 1e-3 * d;
            }
        }
    }
    let after = fixed_loss(&det, &img, &plan, false).0;
    assert!(after < before, "{after} >= {before}");
}

#[test]
fn detections_are_sorted_clipped_and_above_the_floor() {
    let det = Detector::new(ModelConfig::toy(2)).unwrap();
    let img = image(16, 32, 8);
    let dets = det.detect(img.data(), 16, 32, ctx(32), 0.0).unwrap();
    assert!(!dets.is_empty());
    for w in dets.windows(2) {
        assert!(w[0].score >= w[1].score);
    }
    for d in &dets {
        assert!(d.bbox[0] >= 0.0 && d.bbox[2] <= 32.0 && d.bbox[1] >= 0.0 && d.bbox[3] <= 16.0);
        assert!(d.class < 2 && d.score > 0.0 && d.score <= 1.0);
    }
    assert!(det.detect(img.data(), 16, 32, ctx(32), 1.1).unwrap().is_empty());
}

fn tiny_dsp() -> DspConfig {
    DspConfig {
        sample_rate: 16000,
        n_fft: 256,
        hop: 64,
        f_min: 500.0,
        f_max: 6000.0,
        out_height: 24,
        out_width: 64,
        window_stride: 32,
        ..Default::default()
    }
}

fn tiny_set(dsp: &DspConfig) -> TrainingSet {
    let sr = dsp.sample_rate as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let noise = init::normal(&mut rng, &[(3.0 * sr) as usize], 0.01);
    let mut s = noise.into_data();
    let mut anns = Vec::new();
    for (k, &(t, f, class)) in [(0.4, 2000.0, 0usize), (1.3, 4000.0, 1), (2.2, 2500.0, 0)].iter().enumerate() {
        for i in 0..(0.15 * sr) as usize {
            let n = (t * sr) as usize + i;
            s[n] += 0.5 * (2.0 * std::f64::consts::PI * f * i as f64 / sr).sin();
        }
        anns.push(AnnotationBox {
            t_start: t,
            t_end: t + 0.15,
            f_low: f - 300.0,
            f_high: f + 300.0,
            species_id: class,
            source_file: format!("rec{k}.wav"),
        });
    }
    TrainingSet::from_memory(vec![("rec.wav".into(), s, anns)], dsp).unwrap()
}

fn train_cfg() -> ModelConfig {
    let mut cfg = ModelConfig::toy(2);
    cfg.train.crop_width = 32;
    cfg
}

#[test]
fn training_is_deterministic_and_resume_matches_uninterrupted() {
    let dsp = tiny_dsp();
    let set = tiny_set(&dsp);
    assert!(set.window_count() > 3);
    let vocab = SpeciesVocab::from_latin_names(&["Grus grus", "Anas crecca"]).unwrap();

    let mut a = Trainer::new(train_cfg(), &set).unwrap();
    let log_a: Vec<_> = (0..6).map(|_| a.step().unwrap()).collect();
    let mut b = Trainer::new(train_cfg(), &set).unwrap();
    let log_b: Vec<_> = (0..6).map(|_| b.step().unwrap()).collect();
    for (x, y) in log_a.iter().zip(&log_b) {
        assert_eq!((x.losses, x.t0, x.crop_x0), (y.losses, y.t0, y.crop_x0));
    }
    assert_eq!(a.detector.params.digest(), b.detector.params.digest());

    let mut c = Trainer::new(train_cfg(), &set).unwrap();
    for _ in 0..3 {
        c.step().unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    Checkpoint::new(&c.detector, &dsp, &vocab, c.step, Some(&c.optimizer)).unwrap().save(&path).unwrap();
    drop(c);
    let ck = Checkpoint::load(&path).unwrap();
    assert_eq!(ck.step, 3);
    let mut r = Trainer::resume(ck.detector().unwrap(), ck.optimizer.clone().unwrap(), ck.step, &set);
    let tail: Vec<_> = (0..3).map(|_| r.step().unwrap()).collect();
    for (x, y) in tail.iter().zip(&log_a[3..]) {
        assert_eq!(x.losses, y.losses);
    }
    assert_eq!(r.detector.params.digest(), a.detector.params.digest());
}

#[test]
fn crops_see_annotated_calls() {
    let dsp = tiny_dsp();
    let set = tiny_set(&dsp);
    let cfg = ModelConfig { train: callscope::detector::TrainConfig { crop_on_call_prob: 1.0, ..train_cfg().train }, ..train_cfg() };
    let with_boxes = (0..40)
        .filter(|&s| !callscope::detector::train::sample_crop(&set, &cfg, &mut step_rng(0, s)).gts.is_empty())
        .count();
    // Most fixture windows hold no call; those crop uniformly.
    assert!(with_boxes >= 5, "{with_boxes}");
    let s = callscope::detector::train::sample_crop(&set, &cfg, &mut step_rng(0, 0));
    assert_eq!(s.image.dims3(), (1, 24, 32));
    for g in &s.gts {
        assert!(g.bbox[0] >= 0.0 && g.bbox[2] <= 32.0 && g.bbox[0] < g.bbox[2]);
    }
}

#[test]
fn non_finite_audio_is_rejected() {
    let dsp = tiny_dsp();
    let s = vec![f64::NAN; 2 * dsp.sample_rate as usize];
    let r = TrainingSet::from_memory(vec![("bad.wav".into(), s, vec![])], &dsp);
    assert!(matches!(r, Err(Error::Validation(m)) if m.contains("bad.wav")));
}

#[test]
fn non_finite_loss_reports_divergence_with_the_window() {
    let dsp = tiny_dsp();
    let set = tiny_set(&dsp);
    let mut t = Trainer::new(train_cfg(), &set).unwrap();
    let id = t.detector.params.find("rcnn.cls.bias").unwrap();
    t.detector.params.get_mut(id).data_mut()[0] = f64::NAN;
    match t.step() {
        Err(Error::Diverged { step, message }) => {
            assert_eq!(step, 0);
            assert!(message.contains("rec.wav") && message.contains("t0="), "{message}");
        }
        other => panic!("expected divergence, got {:?}", other.map(|r| r.total)),
    }
}
