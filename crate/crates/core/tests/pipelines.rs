mod common;

use jointseg::losses::LossConfig;
use jointseg::metrics::PairScore;
use jointseg::nets::{init_params, unet_forward, Part};
use jointseg::pipelines::{
    binarize, coupling_gradient_norm, evaluate, evaluate_audited, evaluate_with, jdl_gradients, message_pass, predict,
    train, train_audited, train_baseline, AccessLog, MaskSource, ModelParams, PipelineKind, Prediction, Stage,
    TrainConfig,
};
use jointseg::synthdata::{generate_dataset, Sample, SceneSpec};
use jointseg::tensor::{Graph, Mode, Tensor};
use jointseg::{Error, Mask};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_spec() -> SceneSpec {
    SceneSpec {
        height: 32,
        width: 32,
        ..SceneSpec::default()
    }
}

fn small_config(kind: PipelineKind, epochs: usize, seed: u64) -> TrainConfig {
    let mut c = TrainConfig::desk(kind);
    c.arch.base_channels = 4;
    c.epochs = epochs;
    c.seed = seed;
    c
}

fn data(count: usize, seed: u64) -> Vec<Sample> {
    generate_dataset(&small_spec(), seed, count, 1).unwrap()
}

#[test]
fn message_pass_identity_zero_and_derivative() {
    let s = &data(1, 3)[0];
    let mut g = Graph::<f64>::new();
    let img = g.constant(s.image.cast());
    for (fill, expect_image) in [(1.0, true), (0.0, false)] {
        let m = g.constant(Tensor::full(&[32, 32], fill));
        let out = message_pass(&mut g, img, m).unwrap();
        let v = g.value(out).data().to_vec();
        if expect_image {
            assert_eq!(v, g.value(img).data());
        } else {
            assert!(v.iter().all(|&x| x == 0.0));
        }
    }
    let m = g.param(Tensor::full(&[32, 32], 0.3));
    let out = message_pass(&mut g, img, m).unwrap();
    let s_out = g.reduce_sum(out);
    g.backward(s_out).unwrap();
    assert_eq!(g.grad(m).unwrap(), g.value(img).data());

    let wrong = g.constant(Tensor::full(&[16, 32], 1.0));
    assert!(matches!(message_pass(&mut g, img, wrong), Err(Error::ShapeMismatch { .. })));
}

/// Epoch means of the single-phase part of a two-step history.
fn phase_ends(model: &jointseg::pipelines::TrainedModel) -> Vec<(f64, f64)> {
    if model.kind() != PipelineKind::TwoStep {
        let h = &model.history;
        return vec![(h[0].total, h[h.len() - 1].total)];
    }
    let (m, _) = model.config.two_step_split();
    let h = &model.history;
    vec![(h[0].total, h[m - 1].total), (h[m].total, h[h.len() - 1].total)]
}

#[test]
fn loss_falls_for_every_pipeline_and_seed() {
    let d = data(32, 11);
    for kind in PipelineKind::ALL {
        for seed in 0..3 {
            let m = train(&d, &small_config(kind, 30, seed)).unwrap();
            assert_eq!(m.history.len(), 30);
            let (first, last) = (m.history[0].total, m.history[29].total);
            assert!(last < first, "{kind} seed {seed}: {first} -> {last}");
            for (a, b) in phase_ends(&m) {
                assert!(b < a, "{kind} seed {seed} phase: {a} -> {b}");
            }
        }
    }
}

#[test]
fn training_is_deterministic() {
    let d = data(8, 2);
    for kind in PipelineKind::ALL {
        let c = small_config(kind, 2, 5);
        let a = train(&d, &c).unwrap();
        let b = train(&d, &c).unwrap();
        assert_eq!(a.params, b.params, "{kind}");
        assert_eq!(a.history_csv(), b.history_csv());
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        a.params.write_checkpoint(&mut ca).unwrap();
        b.params.write_checkpoint(&mut cb).unwrap();
        assert_eq!(ca, cb);
    }
}

#[test]
fn mask_gradient_couples_the_networks() {
    let d = data(4, 8);
    let c = small_config(PipelineKind::Jdl, 1, 0);
    for seed in 0..3 {
        let myo = init_params::<f64>(&c.arch, Part::Full, seed).unwrap();
        let scar = init_params::<f64>(&c.arch, Part::Full, seed + 1).unwrap();
        let live = coupling_gradient_norm(&myo, &scar, &d, &c.loss, false).unwrap();
        let cut = coupling_gradient_norm(&myo, &scar, &d, &c.loss, true).unwrap();
        assert!(live > 0.0, "seed {seed}");
        assert_eq!(cut, 0.0);

        // λ = 0 and β_M = 0 with the mask cut leave θ_M without any signal
        let silent = LossConfig {
            lambda: 0.0,
            beta_m: 0.0,
            ..c.loss.clone()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, gm, _) = jdl_gradients(&myo, &scar, &d, &silent, true, Mode::Train, &mut rng).unwrap();
        assert_eq!(gm.norm(), 0.0);

        // ablation changes the myocardium update, not the scar update
        let run = |detach| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            jdl_gradients(&myo, &scar, &d, &c.loss, detach, Mode::Train, &mut rng).unwrap()
        };
        let (la, gma, gsa) = run(false);
        let (lb, gmb, gsb) = run(true);
        assert_eq!(la, lb);
        assert_ne!(gma, gmb);
        assert_eq!(gsa, gsb);
    }
}

#[test]
fn parameter_set_counts() {
    let d = data(4, 1);
    let expect = [
        (PipelineKind::Jdl, 2),
        (PipelineKind::Direct, 1),
        (PipelineKind::TwoStep, 2),
        (PipelineKind::Mtl, 3),
    ];
    for (kind, n) in expect {
        let m = train(&d, &small_config(kind, 2, 0)).unwrap();
        assert_eq!(m.kind(), kind);
        assert_eq!(m.params.set_count(), n);
    }
    assert!(train_baseline(PipelineKind::Jdl, &d, &small_config(PipelineKind::Jdl, 1, 0)).is_err());
}

#[test]
fn mtl_scar_decoder_does_not_touch_myocardium_output() {
    let d = data(2, 4);
    let m = train(&d, &small_config(PipelineKind::Mtl, 1, 0)).unwrap();
    let before = predict(&m.params, &d[0]).unwrap();
    let ModelParams::Mtl(mut p) = m.params else { unreachable!() };
    for (_, t) in p.decoder_s.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += 0.25);
    }
    let after = predict(&ModelParams::Mtl(p), &d[0]).unwrap();
    assert_eq!(before.myo, after.myo);
    assert_ne!(before.scar, after.scar);
}

#[test]
fn two_step_reads_ground_truth_only_in_training() {
    let d = data(6, 9);
    let log = AccessLog::new();
    let m = train_audited(&d, &small_config(PipelineKind::TwoStep, 2, 0), &log).unwrap();
    let (myo_epochs, scar_epochs) = m.config.two_step_split();
    assert_eq!((myo_epochs, scar_epochs), (1, 1));
    assert_eq!(log.count(MaskSource::GroundTruth, Stage::Train), d.len() * scar_epochs);
    assert_eq!(log.count(MaskSource::Predicted, Stage::Train), 0);

    let eval_log = AccessLog::new();
    evaluate_audited(&m.params, &d, 0.5, &eval_log).unwrap();
    assert_eq!(eval_log.count(MaskSource::GroundTruth, Stage::Predict), 0);
    assert_eq!(eval_log.count(MaskSource::Predicted, Stage::Predict), d.len());

    // predictions cannot depend on the ground-truth myocardium
    let blanked = Sample::new(
        d[0].id.clone(),
        d[0].image.clone(),
        Mask::zeros(32, 32),
        Mask::zeros(32, 32),
    )
    .unwrap();
    assert_eq!(predict(&m.params, &d[0]).unwrap(), predict(&m.params, &blanked).unwrap());
}

#[test]
fn predictions_are_probabilities_and_jdl_composes() {
    let d = data(3, 6);
    for kind in PipelineKind::ALL {
        let m = train(&d, &small_config(kind, 2, 2)).unwrap();
        let p = predict(&m.params, &d[0]).unwrap();
        assert_eq!(p.myo.is_none(), kind == PipelineKind::Direct);
        for t in p.myo.iter().chain([&p.scar]) {
            assert_eq!(t.shape(), [32, 32]);
            assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    let m = train(&d, &small_config(PipelineKind::Jdl, 1, 2)).unwrap();
    let ModelParams::Jdl { myo, scar } = &m.params else { unreachable!() };
    let mut g = Graph::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let img = g.constant(d[1].image.clone());
    let pm = myo.bind(&mut g, false);
    let lm = unet_forward(&mut g, &pm, myo.arch(), img, Mode::Eval, &mut rng).unwrap();
    let pm = g.softmax_channel(lm).unwrap();
    let fg = g.channel(pm, 1).unwrap();
    let masked = message_pass(&mut g, img, fg).unwrap();
    let ps = scar.bind(&mut g, false);
    let ls = unet_forward(&mut g, &ps, scar.arch(), masked, Mode::Eval, &mut rng).unwrap();
    let sp = g.softmax_channel(ls).unwrap();
    let sfg = g.channel(sp, 1).unwrap();
    let got = predict(&m.params, &d[1]).unwrap();
    assert_eq!(got.scar.data(), g.value(sfg).data());
    assert_eq!(got.myo.unwrap().data(), g.value(fg).data());
}

#[test]
fn binarize_threshold_rule() {
    let at = |v: f32| binarize(&Tensor::full(&[3, 4], v), 0.5).unwrap();
    assert_eq!(at(0.6).count(), 12);
    assert_eq!(at(0.4).count(), 0);
    assert_eq!(at(0.5).count(), 12);
}

#[test]
fn oracle_model_scores_perfectly() {
    let spec = SceneSpec {
        noise_std: 0.0,
        clutter_count: (0, 0),
        ..small_spec()
    };
    let d = generate_dataset(&spec, 4, 20, 1).unwrap();
    let m = common::oracle_direct(&small_config(PipelineKind::Direct, 1, 0).arch);
    let r = evaluate(&m, &d, 0.5).unwrap();
    let s = &r.scar_summary;
    for stats in [&s.dice, &s.precision, &s.recall] {
        let st = stats.as_ref().unwrap();
        assert_eq!((st.mean, st.min), (1.0, 1.0));
    }
    assert!(r.myo.is_none());
}

#[test]
fn zero_predictor_and_metrics_agreement() {
    let d: Vec<Sample> = data(30, 12).into_iter().filter(|s| !s.scar.is_empty()).collect();
    assert!(!d.is_empty());
    let r = evaluate_with(&d, 0.5, |s| {
        Ok(Prediction {
            myo: None,
            scar: Tensor::zeros(&[s.dims().0, s.dims().1]),
        })
    })
    .unwrap();
    assert!(r.scar.iter().all(|p| p.dice == 0.0 && p.recall == 0.0 && !p.precision_defined));

    let m = train(&d, &small_config(PipelineKind::Jdl, 1, 0)).unwrap();
    let r = evaluate(&m.params, &d, 0.5).unwrap();
    for (s, score) in d.iter().zip(&r.scar) {
        let p = predict(&m.params, s).unwrap();
        let direct = PairScore::score(&s.id, &s.scar, &binarize(&p.scar, 0.5).unwrap()).unwrap();
        assert_eq!(&direct, score);
    }
    assert!(evaluate(&m.params, &[], 0.5).is_err());
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let d = data(2, 5);
    for kind in PipelineKind::ALL {
        let m = train(&d, &small_config(kind, 2, 0)).unwrap();
        let mut buf = Vec::new();
        m.params.write_checkpoint(&mut buf).unwrap();
        let back = ModelParams::read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back.kind(), kind);
        assert_eq!(predict(&back, &d[1]).unwrap(), predict(&m.params, &d[1]).unwrap());
    }
}

#[test]
fn divergence_reports_the_epoch() {
    let d = data(4, 1);
    let mut c = small_config(PipelineKind::Direct, 3, 0);
    c.lr = 1e30;
    match train(&d, &c) {
        Err(Error::Divergence { epoch }) => assert!((1..=3).contains(&epoch)),
        other => panic!("expected divergence, got {:?}", other.map(|m| m.history)),
    }
}

#[test]
fn invalid_config_lists_every_problem() {
    let mut c = small_config(PipelineKind::TwoStep, 1, 0);
    c.batch_size = 0;
    c.lr = 0.0;
    match train(&data(2, 1), &c) {
        Err(Error::Config(p)) => assert!(p.len() >= 3, "{p:?}"),
        other => panic!("{:?}", other.map(|m| m.kind())),
    }
}
