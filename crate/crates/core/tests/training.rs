mod common;

use polymatch::gradcheck::{check_model_gradients, relative_error, run_suite, toy_instance};
use polymatch::nn::{
    clip_gradients, evaluate_accuracy, forward, train, Activation, Gradients, LrSchedule, Model,
    ModelArch, Pooling, RunStatus, TrainConfig, Workspace,
};
use polymatch::{Degree, FeatureConfig};
use proptest::prelude::*;

use common::{latent_model, logistic_regression_accuracy, separable_toy, toy_product, ToyTask};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn toy_arch(vocab: usize) -> ModelArch {
    ModelArch {
        vocab_size: vocab,
        embed_dim: 8,
        dim: 2,
        hidden: 16,
        pooling: Pooling::Max,
        activation: Activation::Tanh,
    }
}

#[test]
fn analytic_gradients_match_finite_differences() {
    for entry in run_suite(3, 1e-5).unwrap() {
        assert!(
            entry.outcome.max_rel_error < 1e-5,
            "degree {} instance {}: {:?}",
            entry.degree,
            entry.instance,
            entry.outcome
        );
        let (model, _) = toy_instance(entry.degree, entry.instance).unwrap();
        assert_eq!(entry.outcome.checked, model.num_parameters());
    }
}

#[test]
fn gradients_hold_with_relu_and_mean_pooling() {
    for degree in Degree::ALL {
        let (mut model, batch) = toy_instance(degree, 11).unwrap();
        model.encoder.pooling = Pooling::Mean;
        model.head.activation = Activation::Relu;
        let outcome = check_model_gradients(&model, &batch, 1e-5).unwrap();
        assert!(outcome.max_rel_error < 1e-5, "{degree}: {outcome:?}");
    }
}

#[test]
fn degree_two_log_eta_gradient_is_interaction_chain() {
    for seed in 0..3 {
        let (model, batch) = toy_instance(Degree::Two, seed).unwrap();
        let (_, g) = model.backward(&batch).unwrap();
        // d feature_{3d+i} / d log eta = eta u_i v_i = feature_{3d+i}, so the
        // log-eta gradient is sum_h sum_i W1[h, 3d+i] dL/dW1[h, 3d+i].
        let d = model.encoder.dim;
        let w1 = &model.head.layer1;
        let expected: f64 = w1
            .weight
            .chunks_exact(w1.in_dim)
            .zip(g.layer1_weight.chunks_exact(w1.in_dim))
            .map(|(w, gw)| (3 * d..4 * d).map(|i| w[i] * gw[i]).sum::<f64>())
            .sum();
        let got = g.log_eta.unwrap();
        assert!(
            (got - expected).abs() <= 1e-12 * expected.abs().max(1e-6),
            "{got} vs {expected}"
        );

        let step = 1e-5;
        let mut probe = model.clone();
        let base = probe.log_eta.unwrap();
        probe.log_eta = Some(base + step);
        let plus = probe.loss(&batch).unwrap();
        probe.log_eta = Some(base - step);
        let minus = probe.loss(&batch).unwrap();
        let numeric = (plus - minus) / (2.0 * step);
        assert!(
            relative_error(got, numeric, 1e-8) < 1e-5,
            "{got} vs {numeric}"
        );
    }
}

#[test]
fn head_symmetric_in_u_and_v_ignores_swap() {
    for degree in Degree::ALL {
        let (mut model, batch) = toy_instance(degree, 5).unwrap();
        let d = model.encoder.dim;
        let in_dim = model.head.layer1.in_dim;
        for row in model.head.layer1.weight.chunks_exact_mut(in_dim) {
            let (u_cols, rest) = row.split_at_mut(d);
            u_cols.copy_from_slice(&rest[..d]);
        }
        for ex in &batch {
            let a = forward(&ex.premise, &ex.hypothesis, &model).unwrap();
            let b = forward(&ex.hypothesis, &ex.premise, &model).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-12, "{a:?} vs {b:?}");
            }
        }
    }
}

/// Validation reuses the training pairs so the drop-triggered decay tracks
/// fitting progress rather than noise on a handful of held-out pairs.
fn toy_for_fitting() -> ToyTask {
    let mut task = separable_toy(24, 0.02, 0);
    task.dataset.val = task.dataset.train.clone();
    task
}

#[test]
fn toy_task_is_separable_for_the_oracle() {
    let task = toy_for_fitting();
    let train = &task.dataset.train;
    let x: Vec<Vec<f64>> = train
        .iter()
        .map(|e| toy_product(&task.latents, e).to_vec())
        .collect();
    let y: Vec<usize> = train.iter().map(|e| e.label.index()).collect();
    assert!(x.len() > 300);
    assert_eq!(logistic_regression_accuracy(&x, &y, 3, 4000), 1.0);
}

#[test]
fn toy_task_reaches_high_train_accuracy() {
    let task = toy_for_fitting();
    for seed in SEEDS {
        let mut model = latent_model(&task, 16, Degree::Two, 1.0, seed);
        let tc = TrainConfig {
            max_epochs: 100,
            batch_size: 4,
            seed,
            ..Default::default()
        };
        train(&mut model, &task.dataset, &tc).unwrap();
        let acc = evaluate_accuracy(&model, &task.dataset.train, &mut Workspace::new()).unwrap();
        assert!(acc >= 0.99, "seed {seed}: train accuracy {acc}");
    }
}

#[test]
fn first_epoch_lowers_training_loss() {
    let task = toy_for_fitting();
    for seed in SEEDS {
        let mut model = latent_model(&task, 16, Degree::Two, 1.0, seed);
        let before = model.loss(&task.dataset.train).unwrap();
        let tc = TrainConfig {
            max_epochs: 1,
            batch_size: 4,
            seed,
            ..Default::default()
        };
        train(&mut model, &task.dataset, &tc).unwrap();
        let after = model.loss(&task.dataset.train).unwrap();
        assert!(after < before, "seed {seed}: {before} -> {after}");
    }
}

#[test]
fn training_is_bit_reproducible() {
    let task = separable_toy(16, 0.02, 3);
    let feature = FeatureConfig::new(Degree::Three, 2.0).unwrap().learnable();
    let tc = TrainConfig {
        max_epochs: 6,
        batch_size: 5,
        seed: 9,
        ..Default::default()
    };
    let run = || {
        let mut model = Model::init(&toy_arch(16), &feature, 4).unwrap();
        let record = train(&mut model, &task.dataset, &tc).unwrap();
        (model, record)
    };
    let (m1, r1) = run();
    let (m2, r2) = run();
    assert_eq!(r1, r2);
    assert_eq!(m1, m2);
    let mut csv1 = Vec::new();
    let mut csv2 = Vec::new();
    r1.write_epochs_csv(&mut csv1).unwrap();
    r2.write_epochs_csv(&mut csv2).unwrap();
    assert_eq!(csv1, csv2);
    assert_eq!(r1.summary_json()["epochs_run"], 6);
}

#[test]
fn recorded_learning_rates_follow_the_two_decays() {
    let task = separable_toy(20, 0.02, 1);
    let feature = FeatureConfig::new(Degree::Two, 4.0).unwrap();
    for seed in SEEDS {
        let mut model = Model::init(&toy_arch(20), &feature, seed).unwrap();
        let tc = TrainConfig {
            max_epochs: 25,
            batch_size: 8,
            seed,
            ..Default::default()
        };
        let record = train(&mut model, &task.dataset, &tc).unwrap();
        assert_eq!(record.status, RunStatus::Completed);
        assert_eq!(record.epochs[0].learning_rate, 0.1);
        for (i, w) in record.epochs.windows(2).enumerate() {
            let dropped =
                i > 0 && record.epochs[i].val_accuracy < record.epochs[i - 1].val_accuracy;
            let factor = if dropped { 0.2 } else { 0.99 };
            assert_eq!(w[1].learning_rate, w[0].learning_rate * factor);
        }
        let best = record
            .epochs
            .iter()
            .map(|e| e.val_accuracy)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(record.best_val_accuracy, best);
        let first_best = record
            .epochs
            .iter()
            .find(|e| e.val_accuracy == best)
            .unwrap();
        assert_eq!(record.best_epoch, first_best.epoch);
    }
}

#[test]
fn scripted_validation_drop_gives_the_expected_rates() {
    let mut s = LrSchedule::new(&TrainConfig::default());
    let mut lrs = vec![s.lr()];
    for val in [0.50, 0.60, 0.55] {
        s.end_epoch(val);
        lrs.push(s.lr());
    }
    assert_eq!(lrs, vec![0.1, 0.099, 0.09801, 0.019602]);
}

#[test]
fn empty_splits_are_rejected() {
    let mut task = separable_toy(8, 0.0, 0);
    task.dataset.val.clear();
    let mut model = Model::init(&toy_arch(8), &FeatureConfig::default(), 0).unwrap();
    assert!(train(&mut model, &task.dataset, &TrainConfig::default()).is_err());
}

fn gradients_from(values: Vec<f64>) -> Gradients {
    let model = Model::init(&toy_arch(4), &FeatureConfig::default(), 0).unwrap();
    let mut g = Gradients::zeros_like(&model);
    let mut it = values.into_iter().cycle();
    for (_, t) in g.tensors_mut() {
        for x in t.iter_mut() {
            *x = it.next().unwrap();
        }
    }
    g
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clipped_norm_never_exceeds_threshold(
        values in proptest::collection::vec(-1e3f64..1e3, 1..40),
        clip in 1e-3f64..50.0,
    ) {
        let mut g = gradients_from(values);
        let before = g.global_norm();
        let reported = clip_gradients(&mut g, clip);
        prop_assert_eq!(reported, before);
        prop_assert!(g.global_norm() <= clip + 1e-9);
        if before <= clip {
            prop_assert_eq!(g.global_norm(), before);
        }
    }

    #[test]
    fn schedule_multiplies_by_exactly_one_factor(vals in proptest::collection::vec(0.0f64..1.0, 1..30)) {
        let mut s = LrSchedule::new(&TrainConfig::default());
        let mut prev_val: Option<f64> = None;
        for v in vals {
            let lr = s.lr();
            let dropped = s.end_epoch(v);
            prop_assert_eq!(dropped, prev_val.is_some_and(|p| v < p));
            let expected = lr * if dropped { 0.2 } else { 0.99 };
            prop_assert_eq!(s.lr(), expected);
            prev_val = Some(v);
        }
    }
}
