use csiam_core::autodiff::{ParamKind, Tape};
use csiam_core::encoder::{CSiamModel, Ctx, Mode};
use csiam_core::gradsuite::tiny_model_config;
use csiam_core::losses::{contrastive_loss, ContrastiveConfig};
use csiam_core::rng::rng_for;
use csiam_core::train::{
    add_variational_noise, augment_view, augmented_branch, batch_gradients, clip_global_norm,
    global_norm, target_branch, train_step, train_until, AugmentConfig, Batch, RunConfig,
    StepOptions, TempoMode, ToyData, TrainState,
};
use csiam_core::{Features64, Tensor64};
use proptest::prelude::*;

fn toy_state(cfg: &RunConfig) -> TrainState<f32> {
    TrainState::new(CSiamModel::new(cfg.model_config(), cfg.train.seed).unwrap())
}

#[test]
fn identical_seeds_give_identical_runs() {
    let cfg = RunConfig::toy();
    let data = ToyData::new(&cfg.data).unwrap();
    let run = || {
        let mut log = Vec::new();
        let s = train_until(
            toy_state(&cfg),
            &data,
            &cfg,
            5,
            &StepOptions::default(),
            |_, r| {
                log.push(r.clone());
                Ok(())
            },
        )
        .unwrap();
        (log, s.model.params.checksum())
    };
    let (a, ca) = run();
    let (b, cb) = run();
    assert_eq!(a, b);
    assert_eq!(ca, cb);
    assert!(a.iter().all(|r| !r.skipped));
}

#[test]
fn zero_lambda_reduces_to_transducer_loss() {
    let mut cfg = RunConfig::toy();
    cfg.loss.lambda_unsup = 0.0;
    let data = ToyData::new(&cfg.data).unwrap();
    let model = CSiamModel::<f32>::new(cfg.model_config(), 3).unwrap();
    let full: Batch<f32> = data.sample_batch(&cfg.train, 0);
    let sup_only = Batch {
        sup: full.sup.clone(),
        unsup: Vec::new(),
    };
    let opts = StepOptions::default();
    let (r1, c1, g1) = batch_gradients(&model, &model.params, &full, &cfg, 0, &opts)
        .unwrap()
        .unwrap();
    let (r2, c2, g2) = batch_gradients(&model, &model.params, &sup_only, &cfg, 0, &opts)
        .unwrap()
        .unwrap();
    assert_eq!(r1, r2);
    assert_eq!((c1, c2), (0.0, 0.0));
    assert_eq!(g1, g2);
}

#[test]
fn short_run_reduces_loss() {
    let cfg = RunConfig::toy();
    let data = ToyData::new(&cfg.data).unwrap();
    let mut totals = Vec::new();
    train_until(
        toy_state(&cfg),
        &data,
        &cfg,
        200,
        &StepOptions::default(),
        |_, r| {
            totals.push(r.total_loss);
            Ok(())
        },
    )
    .unwrap();
    let tail = totals[180..].iter().sum::<f64>() / 20.0;
    assert!(
        tail <= 0.5 * totals[0],
        "first {} last-20 mean {tail}",
        totals[0]
    );
}

#[test]
fn non_finite_input_skips_the_update() {
    let cfg = RunConfig::toy();
    let data = ToyData::new(&cfg.data).unwrap();
    let state = toy_state(&cfg);
    let mut batch: Batch<f32> = data.sample_batch(&cfg.train, 0);
    batch.sup[0].features.frames_mut().data_mut()[3] = f32::NAN;
    let (next, r) = train_step(&state, &batch, &cfg, &StepOptions::default()).unwrap();
    assert!(r.skipped);
    assert_eq!(next.step, 1);
    assert_eq!(next.model.params.checksum(), state.model.params.checksum());
}

#[test]
fn variational_noise_statistics() {
    let model = CSiamModel::<f64>::new(RunConfig::toy().model_config(), 1).unwrap();
    let std = 0.02;
    let before = add_variational_noise(&model.params, std, 9, 10, &mut rng_for(0, &[])).unwrap();
    assert_eq!(before.checksum(), model.params.checksum());

    let mut deltas = Vec::new();
    let mut seed = 0;
    while deltas.len() < 100_000 {
        let noisy =
            add_variational_noise(&model.params, std, 10, 10, &mut rng_for(seed, &[])).unwrap();
        for ((_, p), (_, q)) in model.params.iter().zip(noisy.iter()) {
            let d = p
                .tensor
                .data()
                .iter()
                .zip(q.tensor.data())
                .map(|(a, b)| b - a);
            if p.kind == ParamKind::Weight {
                deltas.extend(d);
            } else {
                assert!(d.into_iter().all(|x| x == 0.0), "{} changed", p.name);
            }
        }
        seed += 1;
    }
    let n = deltas.len() as f64;
    let mean = deltas.iter().sum::<f64>() / n;
    let sd = (deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(mean.abs() < 4.0 * std / n.sqrt(), "mean {mean}");
    assert!((sd / std - 1.0).abs() < 0.01, "std {sd}");
}

fn dense_mask_aug() -> AugmentConfig {
    AugmentConfig {
        tempo: TempoMode::Uniform,
        mask_prob: 0.2,
        mask_span: 4,
        ..AugmentConfig::default()
    }
}

fn tiny_input() -> Features64 {
    let x = Tensor64::from_fn(&[24, 3], |k| ((k * 37 % 11) as f64 - 5.0) / 3.0);
    Features64::new(x).unwrap()
}

/// Contrastive parameter gradients with the target produced by `target`.
fn contrastive_grads(
    model: &CSiamModel<f64>,
    target: impl for<'t> Fn(&'t Tape<f64>) -> csiam_core::autodiff::Var<'t, f64>,
) -> Vec<Tensor64> {
    let x = tiny_input();
    let enc = model.cfg.encoder.clone();
    let view = augment_view(&x, &dense_mask_aug(), &enc, &mut rng_for(4, &[])).unwrap();
    assert!(!view.batch.anchors.is_empty());
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &model.params, Mode::Train, rng_for(5, &[]));
    let pred = augmented_branch(model, &ctx, &view).unwrap();
    let loss = contrastive_loss(
        pred,
        target(&tape),
        &view.batch,
        &ContrastiveConfig::default(),
        &mut rng_for(6, &[]),
    )
    .unwrap();
    tape.backward(loss).unwrap().param_grads(&model.params)
}

#[test]
fn stop_gradient_matches_a_detached_target() {
    let model = CSiamModel::<f64>::new(tiny_model_config(), 2).unwrap();
    let x = tiny_input();
    let detached = {
        let tape = Tape::new();
        target_branch(&model, &tape, &model.params, &x, false)
            .unwrap()
            .tensor()
    };
    let stopped = contrastive_grads(&model, |t| {
        target_branch(&model, t, &model.params, &x, false).unwrap()
    });
    let constant = contrastive_grads(&model, |t| t.constant(detached.clone()));
    let bypass = contrastive_grads(&model, |t| {
        target_branch(&model, t, &model.params, &x, true).unwrap()
    });
    let diff = |a: &[Tensor64], b: &[Tensor64]| {
        a.iter()
            .zip(b)
            .flat_map(|(p, q)| p.data().iter().zip(q.data()).map(|(u, v)| (u - v).abs()))
            .fold(0.0, f64::max)
    };
    assert!(diff(&stopped, &constant) < 1e-12);
    assert!(diff(&stopped, &bypass) > 1e-6);
}

proptest! {
    #[test]
    fn clipping_bounds_the_global_norm(
        data in prop::collection::vec(-50.0f64..50.0, 1..64),
        limit in 0.1f64..100.0,
    ) {
        let mut g = vec![Tensor64::new(vec![data.len()], data.clone()).unwrap()];
        let before = clip_global_norm(&mut g, limit).unwrap();
        let after = global_norm(&g);
        prop_assert!(after <= limit + 1e-6);
        if before <= limit {
            prop_assert_eq!(g[0].data(), &data[..]);
        } else {
            prop_assert!((after - limit).abs() < 1e-6 * limit.max(1.0));
        }
    }
}
