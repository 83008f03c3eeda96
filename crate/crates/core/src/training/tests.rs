use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autograd::{grad_check, MODEL_EPS};
use crate::models::{ModelConfig, ModelVariant};
use crate::rnn_cells::{CellConfig, CellKind};
use crate::time_embedding::{ElapsedTimes, TimeEmbedConfig, TimeUnit};

fn standard_bce(y: &[u8], p: &[f64]) -> f64 {
    let total: f64 = y
        .iter()
        .zip(p)
        .map(|(&y, &p)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if y == 1 {
                p.ln()
            } else {
                (1.0 - p).ln()
            }
        })
        .sum();
    -total / y.len() as f64
}

#[test]
fn weighted_bce_examples() {
    assert_abs_diff_eq!(weighted_bce(&[1], &[1.0 - 1e-12], 0.7).unwrap(), 0.0, epsilon = 1e-11);
    let v = weighted_bce(&[1], &[0.5], 0.7).unwrap();
    assert_abs_diff_eq!(v, 0.485203, epsilon = 1e-6);
    assert_abs_diff_eq!(v, 0.7 * 2f64.ln(), epsilon = 1e-15);
    assert!(weighted_bce(&[1, 0], &[0.0, 1.0], 0.7).unwrap().is_finite());
    assert!(weighted_bce(&[], &[], 0.7).is_err());
    assert!(weighted_bce(&[1], &[0.5, 0.5], 0.7).is_err());
}

proptest! {
    #[test]
    fn half_delta_is_half_standard_bce(pairs in prop::collection::vec((0u8..2, 0.0f64..1.0), 1..30)) {
        let (y, p): (Vec<u8>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assert_eq!(weighted_bce(&y, &p, 0.5).unwrap(), 0.5 * standard_bce(&y, &p));
    }

    #[test]
    fn weighted_bce_is_non_negative(pairs in prop::collection::vec((0u8..2, 0.0f64..1.0), 1..30), delta in 0.01f64..0.99) {
        let (y, p): (Vec<u8>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assert!(weighted_bce(&y, &p, delta).unwrap() >= 0.0);
    }

    #[test]
    fn graph_bce_matches_plain(pairs in prop::collection::vec((0u8..2, 0.001f64..0.999), 1..10), delta in 0.01f64..0.99) {
        let (y, p): (Vec<u8>, Vec<f64>) = pairs.into_iter().unzip();
        let mut g = Graph::new();
        let vars: Vec<Var> = p.iter().map(|&v| g.constant(Tensor::scalar(v))).collect();
        let loss = weighted_bce_var(&mut g, &y, &vars, delta).unwrap();
        prop_assert!((g.value(loss).item() - weighted_bce(&y, &p, delta).unwrap()).abs() < 1e-14);
    }
}

#[test]
fn weighted_bce_is_zero_only_at_clamp_limits() {
    let at_limits = weighted_bce(&[1, 0], &[1.0, 0.0], 0.7).unwrap();
    assert!(at_limits < 1e-11);
    assert!(weighted_bce(&[1, 0], &[0.9, 0.1], 0.7).unwrap() > 1e-3);
}

#[test]
fn weighted_bce_graph_gradient() {
    let err = grad_check(&[Tensor::vector(vec![0.3, 0.8, 0.55])], 1e-6, |g, v| {
        let ps: Vec<Var> = (0..3).map(|i| g.select(v[0], i)).collect::<Result<_>>()?;
        weighted_bce_var(g, &[1, 0, 1], &ps, 0.7)
    })
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

fn toy_config(variant: ModelVariant, dropout_rate: f64) -> ModelConfig {
    ModelConfig {
        variant,
        cell: CellConfig::new(CellKind::Gru, 4, 3).unwrap(),
        n_features: 2,
        d_model: 4,
        mlp_hidden: 5,
        demographic_size: 1,
        horizon: variant.is_autoencoder().then_some(2),
        dropout_rate,
    }
}

fn toy_model(variant: ModelVariant, seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Model::init(
        toy_config(variant, 0.0),
        TimeEmbedConfig::new(4, 10.0).unwrap(),
        TimeUnit::Years,
        &mut rng,
    )
    .unwrap()
}

/// Positive samples have feature values shifted up by one.
fn separable_samples(count: usize, visits: usize, seed: u64) -> Vec<WindowedSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let label = (i % 2) as u8;
            let shift = if label == 1 { 1.0 } else { -1.0 };
            let data = (0..visits * 2).map(|_| shift + rng.random_range(-0.3..0.3)).collect();
            let mut e: Vec<f64> = (0..visits).map(|_| rng.random_range(0.5..2.0)).collect();
            e[0] = 0.0;
            WindowedSample {
                patient_id: format!("s{i}"),
                x: Tensor::matrix(visits, 2, data).unwrap(),
                elapsed: ElapsedTimes::new(e, TimeUnit::Years).unwrap(),
                demographics: vec![rng.random_range(0.0..1.0)],
                label,
                scenario: (visits, 1),
            }
        })
        .collect()
}

fn cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        learning_rate: 0.01,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    for bad in [
        TrainConfig { delta: 1.0, ..TrainConfig::default() },
        TrainConfig { delta: 0.0, ..TrainConfig::default() },
        TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
        TrainConfig { l2_lambda: -1.0, ..TrainConfig::default() },
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}

#[test]
fn adam_zero_gradient_leaves_params() {
    let mut model = toy_model(ModelVariant::TaRnn, 1);
    let before = model.params.clone();
    let zeros = model.params.map(&mut |t| Tensor::zeros(t.shape()));
    let mut state = AdamState::new(&model.params);
    adam_step(&mut model.params, &zeros, &mut state, &TrainConfig::default()).unwrap();
    assert_eq!(model.params, before);
    assert_eq!(state.t, 1);
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let mut model = toy_model(ModelVariant::TaRnn, 1);
    let before = model.params.clone();
    let mut k = 0.0;
    let grads = model.params.map(&mut |t| {
        k += 1.0;
        t.map(|_| if k as i64 % 2 == 0 { 0.37 * k } else { -2.5 * k })
    });
    let cfg = TrainConfig::default();
    let mut state = AdamState::new(&model.params);
    adam_step(&mut model.params, &grads, &mut state, &cfg).unwrap();
    let mut deltas = Vec::new();
    let mut old = Vec::new();
    before.visit("", &mut |_, _, t| old.push(t.clone()));
    let mut i = 0;
    model.params.visit("", &mut |_, _, t| {
        for (a, b) in t.data().iter().zip(old[i].data()) {
            deltas.push(a - b);
        }
        i += 1;
    });
    for d in deltas {
        assert_abs_diff_eq!(d.abs(), cfg.learning_rate, epsilon = 1e-9);
    }
}

#[test]
fn adam_rejects_nan_gradient_by_name() {
    let mut model = toy_model(ModelVariant::TaRnn, 1);
    let before = model.params.clone();
    let mut grads = model.params.map(&mut |t| Tensor::zeros(t.shape()));
    grads.mlp_out.bias.data_mut()[0] = f64::NAN;
    let mut state = AdamState::new(&model.params);
    let err = adam_step(&mut model.params, &grads, &mut state, &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Numeric(ref m) if m.contains("mlp_out.bias")), "{err}");
    assert_eq!(model.params, before);
    assert_eq!(state.t, 0);
}

#[test]
fn zero_epochs_returns_initial_params() {
    let samples = separable_samples(10, 3, 1);
    let init = toy_model(ModelVariant::TaRnn, 3);
    let (model, history) = train(
        init.config.clone(),
        init.time,
        init.unit,
        &samples,
        &cfg(0),
        None,
    )
    .unwrap();
    assert_eq!(model, init);
    assert!(history.epochs.is_empty());
}

#[test]
fn loss_decreases_on_separable_toy_set() {
    let samples = separable_samples(10, 3, 2);
    for variant in [ModelVariant::TaRnn, ModelVariant::TaRnnAe] {
        let mut model = toy_model(variant, 5);
        let history = fit(&mut model, &samples, &cfg(5), None).unwrap();
        let losses = history.losses();
        assert_eq!(losses.len(), 5);
        for w in losses.windows(2) {
            assert!(w[1] < w[0], "{variant}: {losses:?}");
        }
    }
}

#[test]
fn training_is_deterministic() {
    let samples = separable_samples(12, 3, 4);
    let val = separable_samples(6, 3, 5);
    let mut cfg_drop = toy_config(ModelVariant::TaRnn, 0.3);
    cfg_drop.dropout_rate = 0.3;
    let time = TimeEmbedConfig::new(4, 10.0).unwrap();
    let run = || train(cfg_drop.clone(), time, TimeUnit::Years, &samples, &cfg(4), Some(&val)).unwrap();
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(a, b);
    assert_eq!(ha, hb);
    assert_eq!(ha.to_csv(), hb.to_csv());
    assert!(ha.epochs.iter().all(|e| e.validation.is_some()));
    assert!(ha.to_csv().starts_with("epoch,loss,val_f2"));
}

#[test]
fn heavy_l2_shrinks_weights() {
    let samples = separable_samples(16, 3, 6);
    let plain = toy_model(ModelVariant::TaRnn, 8);
    let mut free = plain.clone();
    let mut shrunk = plain.clone();
    fit(&mut free, &samples, &cfg(10), None).unwrap();
    let heavy = TrainConfig { l2_lambda: 10.0, ..cfg(10) };
    fit(&mut shrunk, &samples, &heavy, None).unwrap();
    assert!(shrunk.params.weight_norm_sq() < free.params.weight_norm_sq());
    assert!(shrunk.params.weight_norm_sq() < plain.params.weight_norm_sq());
}

#[test]
fn mixed_window_lengths_are_rejected() {
    let mut samples = separable_samples(4, 3, 1);
    samples.extend(separable_samples(2, 4, 2));
    let mut model = toy_model(ModelVariant::TaRnn, 1);
    let err = fit(&mut model, &samples, &cfg(1), None).unwrap_err();
    assert!(matches!(err, Error::Data(ref m) if m.contains("mixed window")), "{err}");
}

#[test]
fn batch_loss_gradient_matches_finite_differences() {
    let samples = separable_samples(4, 3, 9);
    let batch: Vec<&WindowedSample> = samples.iter().collect();
    for variant in [ModelVariant::TaRnn, ModelVariant::TaRnnAe] {
        let model = toy_model(variant, 10);
        let mut flat = Vec::new();
        model.params.visit("", &mut |_, _, t| flat.push(t.clone()));
        let tcfg = TrainConfig { l2_lambda: 0.01, ..cfg(1) };
        let err = grad_check(&flat, MODEL_EPS, |g, vars| {
            let mut it = vars.iter();
            let p = model.params.map(&mut |_| *it.next().expect("one var per leaf"));
            let mut preds = Vec::new();
            for s in &batch {
                let out = forward(g, &model.config, &model.time, model.unit, &p, s.inputs(), &mut Mode::Eval)?;
                preds.push(out.y_hat);
            }
            let labels: Vec<u8> = batch.iter().map(|s| s.label).collect();
            let loss = weighted_bce_var(g, &labels, &preds, tcfg.delta)?;
            let pen = l2_penalty(g, &p)?.expect("model has weights");
            let pen = g.affine(pen, tcfg.l2_lambda, 0.0);
            g.add(loss, pen)
        })
        .unwrap();
        assert!(err < 1e-4, "{variant}: {err}");
    }
}

#[test]
fn batch_objective_matches_plain_loss() {
    let samples = separable_samples(5, 3, 11);
    let model = toy_model(ModelVariant::TaRnn, 2);
    let batch: Vec<&WindowedSample> = samples.iter().collect();
    let (g, _, loss) = batch_objective(&model, &batch, &cfg(1), &mut Mode::Eval).unwrap();
    let preds = predict_all(&model, &samples).unwrap();
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    assert_abs_diff_eq!(g.value(loss).item(), weighted_bce(&labels, &preds, 0.7).unwrap(), epsilon = 1e-14);
}
