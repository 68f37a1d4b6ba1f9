use gflsim_core::attack::{
    pair_features, train_attack_model, AttackTraining, AttackVariant, AttentionNet, BinaryClassifier, FeatureOptions,
    Mlp, ShadowPairSet,
};
use gflsim_core::eval::accuracy;
use gflsim_core::graph::{generate_sbm, make_split, SbmParams};
use gflsim_core::nn::{init_model, one_hot, predict, train_local, Adam, ArchKind, ModelArch};
use gflsim_core::rng::stream;
use ndarray::Array2;
use rand::Rng;

fn cliques() -> SbmParams {
    SbmParams {
        num_blocks: 2,
        nodes_per_block: 10,
        p_in: 1.0,
        p_out: 0.0,
        feature_dim: 4,
        feature_shift: 4.0,
    }
}

/// Plain two-class logistic regression by gradient descent; returns
/// training accuracy.
fn logistic_regression_accuracy(x: &Array2<f64>, labels: &[usize]) -> f64 {
    let (n, d) = x.dim();
    let mut w = vec![0.0; d + 1];
    for _ in 0..2000 {
        let mut g = vec![0.0; d + 1];
        for i in 0..n {
            let z: f64 = w[d] + (0..d).map(|j| w[j] * x[[i, j]]).sum::<f64>();
            let err = 1.0 / (1.0 + (-z).exp()) - labels[i] as f64;
            for j in 0..d {
                g[j] += err * x[[i, j]];
            }
            g[d] += err;
        }
        for j in 0..=d {
            w[j] -= 0.1 * g[j] / n as f64;
        }
    }
    let correct = (0..n)
        .filter(|&i| {
            let z: f64 = w[d] + (0..d).map(|j| w[j] * x[[i, j]]).sum::<f64>();
            (z > 0.0) == (labels[i] == 1)
        })
        .count();
    correct as f64 / n as f64
}

#[test]
fn zero_epochs_leave_model_unchanged() {
    let g = generate_sbm(&cliques(), 1).unwrap();
    let mut m = init_model(ModelArch::new(ArchKind::Sage), 4, 2, 3).unwrap();
    let before = m.clone();
    let mut adam = Adam::for_model(&m, 0.01);
    let trace = train_local(
        &mut m,
        &g,
        g.features(),
        &one_hot(g.labels(), 2),
        &[0, 1, 15],
        0,
        &mut adam,
    )
    .unwrap();
    assert!(trace.is_empty());
    assert_eq!(m, before);
}

#[test]
fn separable_cliques_are_fitted_exactly() {
    let g = generate_sbm(&cliques(), 2).unwrap();
    assert_eq!(logistic_regression_accuracy(g.features(), g.labels()), 1.0);
    let all: Vec<usize> = (0..g.num_nodes()).collect();
    for kind in ArchKind::ALL {
        let mut m = init_model(ModelArch::new(kind), 4, 2, 7).unwrap();
        let mut adam = Adam::for_model(&m, 0.01);
        train_local(&mut m, &g, g.features(), &one_hot(g.labels(), 2), &all, 100, &mut adam).unwrap();
        let p = predict(&m, &g, g.features()).unwrap();
        assert_eq!(accuracy(&p, g.labels(), &all), 1.0, "{kind}");
    }
}

#[test]
fn training_loss_decreases_on_block_fixture() {
    let params = SbmParams {
        num_blocks: 4,
        nodes_per_block: 30,
        p_in: 0.2,
        p_out: 0.02,
        feature_dim: 8,
        feature_shift: 1.0,
    };
    for seed in 0..3 {
        let g = generate_sbm(&params, seed).unwrap();
        let split = make_split(&g, 0.3, 0.2, seed).unwrap();
        for kind in ArchKind::ALL {
            let mut m = init_model(ModelArch::new(kind), 8, 4, seed).unwrap();
            let mut adam = Adam::for_model(&m, 0.01);
            let trace = train_local(
                &mut m,
                &g,
                g.features(),
                &one_hot(g.labels(), 4),
                &split.train,
                100,
                &mut adam,
            )
            .unwrap();
            assert_eq!(trace.len(), 100);
            assert!(
                trace[99] <= trace[0],
                "{kind} seed {seed}: {} > {}",
                trace[99],
                trace[0]
            );
        }
    }
}

fn check_classifier_gradients(net: &mut dyn BinaryClassifier, dim: usize) {
    let mut rng = stream(99, &[1]);
    let x = Array2::from_shape_fn((5, dim), |_| rng.random_range(-1.5..1.5));
    let y = [1.0, 0.0, 1.0, 1.0, 0.0];
    let (_, grads) = net.bce_loss_and_grads(&x, &y);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for t in 0..grads.len() {
        let shape = net.params()[t].dim();
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                let orig = net.params()[t][[r, c]];
                net.params_mut()[t][[r, c]] = orig + h;
                let up = net.bce_loss(&x, &y);
                net.params_mut()[t][[r, c]] = orig - h;
                let down = net.bce_loss(&x, &y);
                net.params_mut()[t][[r, c]] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = grads[t][[r, c]];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
    }
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn mlp_gradients_match_finite_differences() {
    let dim = 8 + 4 * 3;
    let mut net = Mlp::new(dim, &mut stream(1, &[]));
    check_classifier_gradients(&mut net, dim);
}

#[test]
fn attention_gradients_match_finite_differences() {
    let classes = 3;
    let mut net = AttentionNet::new(8, classes, &mut stream(2, &[]));
    // nudge the zero-initialised biases so every path carries gradient
    let mut rng = stream(3, &[]);
    for p in net.params_mut() {
        p.mapv_inplace(|v| v + rng.random_range(-0.1..0.1));
    }
    check_classifier_gradients(&mut net, 8 + 4 * classes);
}

fn separable_shadow() -> ShadowPairSet {
    let mut rng = stream(4, &[]);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for i in 0..200 {
        let mut p: Vec<f64> = (0..4).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
        let positive = i % 2 == 0;
        // negatives: mostly class 0, plus a reversed fifth of p
        let q: Vec<f64> = if positive {
            p.clone()
        } else {
            (0..4)
                .map(|k| 0.2 * p[3 - k] + if k == 0 { 0.8 } else { 0.0 })
                .collect()
        };
        features.extend(pair_features(&p, &q).values);
        labels.push(positive);
    }
    let n = labels.len();
    ShadowPairSet {
        pairs: (0..n).map(|i| (i, i + n)).collect(),
        labels,
        features: Array2::from_shape_vec((n, 8 + 16), features).unwrap(),
        options: FeatureOptions::default(),
        classes: 4,
    }
}

#[test]
fn separable_shadow_set_reaches_perfect_train_auc() {
    let shadow = separable_shadow();
    // a single threshold on the Chebyshev distance separates the classes
    let cheb: Vec<(f64, bool)> = shadow
        .labels
        .iter()
        .enumerate()
        .map(|(i, &l)| (shadow.features[[i, 3]], l))
        .collect();
    let max_pos = cheb.iter().filter(|c| c.1).map(|c| c.0).fold(0.0, f64::max);
    let min_neg = cheb.iter().filter(|c| !c.1).map(|c| c.0).fold(f64::INFINITY, f64::min);
    assert!(max_pos < min_neg);

    for variant in [AttackVariant::Mlp, AttackVariant::Attention] {
        let settings = AttackTraining {
            variant,
            epochs: 200,
            ..AttackTraining::default()
        };
        let trained = train_attack_model(&shadow, &settings, 5).unwrap();
        assert_eq!(trained.train_auc, 1.0, "{variant:?}");
        let scores = trained.model.score(&shadow.features);
        assert!(scores.iter().all(|&s| s > 0.0 && s < 1.0));
    }
}

#[test]
fn untrained_attack_is_near_chance() {
    let shadow = separable_shadow();
    let mut flipped = shadow.clone();
    // random labels remove any signal an untrained model could stumble on
    let mut rng = stream(8, &[]);
    flipped.labels.iter_mut().for_each(|l| *l = rng.random_bool(0.5));
    let settings = AttackTraining {
        epochs: 0,
        ..AttackTraining::default()
    };
    let trained = train_attack_model(&flipped, &settings, 6).unwrap();
    assert!((trained.train_auc - 0.5).abs() <= 0.1, "{}", trained.train_auc);
    assert!(trained.loss_trace.is_empty());
}

#[test]
fn attack_training_is_deterministic_and_rejects_single_class() {
    let shadow = separable_shadow();
    let settings = AttackTraining {
        epochs: 5,
        ..AttackTraining::default()
    };
    let a = train_attack_model(&shadow, &settings, 9).unwrap();
    let b = train_attack_model(&shadow, &settings, 9).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.loss_trace, b.loss_trace);

    let mut one_class = shadow.clone();
    one_class.labels.iter_mut().for_each(|l| *l = true);
    assert!(train_attack_model(&one_class, &settings, 9).is_err());
}
