use super::*;
use rand::Rng;

fn random_input(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim).map(|_| rng.random_range(0.0..1.0)).collect()
}

#[test]
fn huber_reference_points() {
    assert_eq!(huber(0.0, 0.0), (0.0, 0.0));
    assert_eq!(huber(0.5, 0.0), (0.125, 0.5));
    assert_eq!(huber(2.0, 0.0), (1.5, 1.0));
    assert_eq!(huber(-2.0, 0.0), (1.5, -1.0));
    for d in [-3.0, -1.0, -0.3, 0.0, 0.7, 1.0, 5.0] {
        assert!(huber(d, 0.0).1.abs() <= 1.0);
    }
}

#[test]
fn zero_net_outputs_bias() {
    let mut net = PredictorNet::zeros(3, 2, 4).unwrap();
    net.layers.accuracy_head.bias[0] = 0.7;
    net.layers.proxy_head.bias = vec![0.25, -0.5];
    assert_eq!(
        net.forward_accuracy(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap(),
        0.7
    );
    assert_eq!(net.forward_proxy(&[1.0, 2.0, 3.0]).unwrap(), (0.25, -0.5));
}

#[test]
fn hand_set_scalar_net() {
    // one arch input, one recipe input, width 1
    let mut net = PredictorNet::zeros(1, 1, 1).unwrap();
    net.layers.encoder.weights = vec![2.0];
    net.layers.encoder.bias = vec![-1.0];
    net.layers.hidden.weights = vec![3.0, 0.5];
    net.layers.accuracy_head.weights = vec![0.25];
    net.layers.accuracy_head.bias = vec![0.1];
    // relu(2*1-1)=1, relu(3*1+0.5*2)=4, 0.25*4+0.1
    assert_eq!(net.forward_accuracy(&[1.0, 2.0]).unwrap(), 1.1);
    // encoder output clipped by relu: relu(0.5*2)=1
    assert_eq!(net.forward_accuracy(&[0.0, 2.0]).unwrap(), 0.35);
}

#[test]
fn init_is_deterministic_and_bounded() {
    let a = PredictorNet::init(10, 5, 7).unwrap();
    assert!(a.layers.accuracy_head.weights.iter().all(|&w| w == 0.0));
    assert_eq!(a, PredictorNet::init(10, 5, 7).unwrap());
    assert_ne!(a, PredictorNet::init(10, 5, 8).unwrap());
    let limit = (6.0f64 / 10.0).sqrt();
    assert!(a.layers.encoder.weights.iter().all(|w| w.abs() <= limit));
    assert!(a.layers.encoder.bias.iter().all(|&b| b == 0.0));
    assert_eq!(
        (a.arch_dim(), a.recipe_dim(), a.width()),
        (10, 5, EMBEDDING_WIDTH)
    );
}

#[test]
fn shape_errors() {
    let net = PredictorNet::init(4, 2, 0).unwrap();
    assert!(matches!(
        net.forward_accuracy(&[0.0; 5]),
        Err(Error::Shape {
            expected: 6,
            actual: 5
        })
    ));
    assert!(matches!(
        net.forward_proxy(&[0.0; 6]),
        Err(Error::Shape {
            expected: 4,
            actual: 6
        })
    ));
    assert!(PredictorNet::init(0, 0, 0).is_err());
    assert!(PredictorNet::with_width(3, 0, 0, 0).is_err());
}

#[test]
fn recipe_only_net() {
    let net = PredictorNet::init(0, 6, 3).unwrap();
    assert_eq!(net.arch_dim(), 0);
    assert!(net
        .forward_accuracy(&random_input(6, 1))
        .unwrap()
        .is_finite());
}

fn randomize_head(net: &mut PredictorNet, seed: u64) {
    let w = random_input(net.width(), 300 + seed);
    net.layers.accuracy_head.weights = w.iter().map(|v| v - 0.5).collect();
    for l in net.layers.all_mut() {
        for (i, b) in l.bias.iter_mut().enumerate() {
            *b = 0.05 * (i as f64 % 3.0 - 1.0);
        }
    }
}

#[test]
fn gradients_match_finite_differences() {
    let mut checked = 0;
    for seed in 0..20u64 {
        let mut net = PredictorNet::init(12, 7, seed).unwrap();
        randomize_head(&mut net, seed);
        let x = random_input(19, 100 + seed);
        let target = random_input(1, 200 + seed)[0];
        let r = gradient_check(&net, &x, target).unwrap();
        if r.skipped_kink {
            continue;
        }
        checked += 1;
        assert!(r.max_rel_error < 1e-4, "seed {seed}: {}", r.max_rel_error);
    }
    assert!(checked >= 18);
}

#[test]
fn gradient_check_in_linear_huber_regime() {
    let mut net = PredictorNet::init(5, 3, 11).unwrap();
    randomize_head(&mut net, 1);
    let x = random_input(8, 12);
    let y = net.forward_accuracy(&x).unwrap();
    let r = gradient_check(&net, &x, y + 4.0).unwrap();
    assert!(!r.skipped_kink);
    assert!(r.max_rel_error < 1e-4);
}

#[test]
fn kink_is_skipped() {
    let net = PredictorNet::init(3, 1, 2).unwrap();
    let x = random_input(4, 3);
    let y = net.forward_accuracy(&x).unwrap();
    assert!(gradient_check(&net, &x, y - 1.0).unwrap().skipped_kink);
}

fn accuracy_set(n: usize, dim: usize, seed: u64, f: impl Fn(&[f64]) -> f64) -> Vec<AccuracySample> {
    (0..n)
        .map(|i| {
            let x = random_input(dim, seed * 10_000 + i as u64);
            let accuracy = f(&x);
            AccuracySample { x, accuracy }
        })
        .collect()
}

#[test]
fn finetune_phase_one_freezes_encoder() {
    let mut net = PredictorNet::init(6, 2, 5).unwrap();
    let before = net.clone();
    let data = accuracy_set(40, 8, 1, |x| 0.5 + 0.1 * x[0]);
    let cfg = FinetuneConfig {
        phase_epochs: 5,
        phase2_lr_factor: 0.0,
        ..FinetuneConfig::default()
    };
    finetune_accuracy(&mut net, &data, None, &cfg, 0).unwrap();
    assert_eq!(net.layers.encoder, before.layers.encoder);
    assert_eq!(net.layers.proxy_head, before.layers.proxy_head);
    assert_ne!(net.layers.hidden, before.layers.hidden);
    assert_ne!(net.layers.accuracy_head, before.layers.accuracy_head);

    let cfg = FinetuneConfig {
        phase_epochs: 5,
        ..FinetuneConfig::default()
    };
    let mut net2 = before.clone();
    let report = finetune_accuracy(&mut net2, &data, None, &cfg, 0).unwrap();
    assert_ne!(net2.layers.encoder, before.layers.encoder);
    assert_eq!(net2.layers.proxy_head, before.layers.proxy_head);
    assert_eq!(report.epochs_run, 10);
    assert_eq!(report.loss_trace.len(), 10);
}

#[test]
fn pretraining_touches_only_encoder_and_proxy_head() {
    let mut net = PredictorNet::init(6, 2, 5).unwrap();
    let before = net.clone();
    let samples: Vec<ProxySample> = (0..50)
        .map(|i| {
            let arch = random_input(6, i);
            ProxySample {
                flops_norm: arch.iter().sum::<f64>() / 6.0,
                params_norm: arch[0],
                arch,
            }
        })
        .collect();
    let cfg = PretrainConfig {
        epochs: 3,
        ..PretrainConfig::default()
    };
    let r = pretrain_proxy(&mut net, &samples, &cfg, 0).unwrap();
    assert!(net.pretrained);
    assert_eq!(r.epochs_run, 3);
    assert_eq!(net.layers.hidden, before.layers.hidden);
    assert_eq!(net.layers.accuracy_head, before.layers.accuracy_head);
    assert_ne!(net.layers.encoder, before.layers.encoder);
    assert_ne!(net.layers.proxy_head, before.layers.proxy_head);
}

#[test]
fn single_sample_is_memorized() {
    let mut net = PredictorNet::init(6, 3, 9).unwrap();
    let data = vec![AccuracySample {
        x: random_input(9, 4),
        accuracy: 0.73,
    }];
    let r = finetune_accuracy(&mut net, &data, None, &FinetuneConfig::default(), 1).unwrap();
    assert!(r.train_mse < 1e-6, "{}", r.train_mse);
}

#[test]
fn repeated_sample_pretraining_converges() {
    let mut net = PredictorNet::init(8, 0, 2).unwrap();
    let arch = random_input(8, 6);
    let samples = vec![
        ProxySample {
            arch,
            flops_norm: 0.4,
            params_norm: 0.6,
        };
        64
    ];
    let r = pretrain_proxy(&mut net, &samples, &PretrainConfig::default(), 3).unwrap();
    assert!(r.val_mse < 1e-4, "{}", r.val_mse);
}

#[test]
fn pretraining_ranks_a_linear_target() {
    let dim = 12;
    let w: Vec<f64> = (0..dim).map(|i| 0.02 + i as f64 / 100.0).collect();
    let samples: Vec<ProxySample> = (0..1000)
        .map(|i| {
            let arch = random_input(dim, 50_000 + i);
            let f = arch.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            ProxySample {
                arch,
                flops_norm: f,
                params_norm: 0.5 * f,
            }
        })
        .collect();
    let mut net = PredictorNet::init(dim, 0, 4).unwrap();
    let r = pretrain_proxy(&mut net, &samples, &PretrainConfig::default(), 5).unwrap();
    assert!(
        r.val_rank_correlation.unwrap() > 0.99,
        "{:?}",
        r.val_rank_correlation
    );
}

#[test]
fn sgd_option_trains() {
    let data = accuracy_set(50, 6, 8, |x| 0.4 + 0.3 * x[0]);
    let mut cfg = FinetuneConfig::default();
    cfg.train.optimizer = OptimizerKind::Sgd;
    cfg.train.learning_rate = 0.05;
    let mut net = PredictorNet::init(4, 2, 0).unwrap();
    let r = finetune_accuracy(&mut net, &data, None, &cfg, 0).unwrap();
    assert!(r.loss_trace.last() < r.loss_trace.first());
    assert!(r.train_mse < 0.01, "{}", r.train_mse);
}

#[test]
fn learns_a_linear_target() {
    let dim = 10;
    let w: Vec<f64> = (0..dim).map(|i| (i as f64 - 4.5) / 40.0).collect();
    let f = |x: &[f64]| 0.6 + x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
    let train = accuracy_set(300, dim, 1, f);
    let val = accuracy_set(100, dim, 2, f);
    let mut net = PredictorNet::init(6, 4, 0).unwrap();
    let r = finetune_accuracy(&mut net, &train, Some(&val), &FinetuneConfig::default(), 0).unwrap();
    assert!(
        r.val_rank_correlation.unwrap() > 0.99,
        "{:?}",
        r.val_rank_correlation
    );
}

#[test]
fn training_is_deterministic() {
    let data = accuracy_set(30, 8, 3, |x| 0.5 + 0.2 * x[1]);
    let run = || {
        let mut net = PredictorNet::init(5, 3, 1).unwrap();
        let r = finetune_accuracy(&mut net, &data, None, &FinetuneConfig::default(), 42).unwrap();
        (net, r)
    };
    assert_eq!(run(), run());
}

#[test]
fn labels_outside_unit_interval_are_rejected() {
    let mut net = PredictorNet::init(2, 1, 0).unwrap();
    let data = vec![AccuracySample {
        x: vec![0.0; 3],
        accuracy: 1.5,
    }];
    assert!(finetune_accuracy(&mut net, &data, None, &FinetuneConfig::default(), 0).is_err());
    assert!(finetune_accuracy(&mut net, &[], None, &FinetuneConfig::default(), 0).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    let mut net = PredictorNet::init(7, 3, 4).unwrap();
    net.layout_fingerprint = Some("abc".into());
    net.normalization = Some(CostNormalization::fit(&[(1, 2), (10, 40)]));
    net.save(&path).unwrap();
    let back = PredictorNet::load(&path, Some("abc")).unwrap();
    assert_eq!(back, net);
    let x = random_input(10, 0);
    assert_eq!(
        back.forward_accuracy(&x).unwrap(),
        net.forward_accuracy(&x).unwrap()
    );
    assert!(matches!(
        PredictorNet::load(&path, Some("xyz")),
        Err(Error::LayoutMismatch { .. })
    ));
    assert!(PredictorNet::load(&path, None).is_ok());

    let text = std::fs::read_to_string(&path)
        .unwrap()
        .replace("\"version\": 1", "\"version\": 9");
    std::fs::write(&path, text).unwrap();
    assert!(PredictorNet::load(&path, None).is_err());
}

#[test]
fn cost_normalization() {
    let n = CostNormalization::fit(&[(100, 10), (300, 10)]);
    assert_eq!(n.normalize(200, 10), (0.5, 0.0));
    assert_eq!(n.normalize(100, 99), (0.0, 0.0));
}
