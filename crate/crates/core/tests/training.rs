use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stgcsn::complementary::Variant;
use stgcsn::data::{synth_generate, Preprocess, SynthKind, SynthSpec};
use stgcsn::graph::Graph;
use stgcsn::signal::Signal;
use stgcsn::training::{
    backward, build_network, cross_entropy, evaluate, init_model, mlp_forward, tiny_gradcheck,
    tiny_network_and_model, train, Network, OptimizerKind, Samples, TrainConfig,
};

fn path_graph(n: usize) -> Graph {
    let edges: Vec<(usize, usize)> = (1..n).map(|v| (v - 1, v)).collect();
    Graph::from_edges(n, &edges).unwrap()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        epochs: 10,
        batch_size: 8,
        hidden: 16,
        spatial_scales: 2,
        temporal_scales: 2,
        tau: 0.0,
        ..TrainConfig::default()
    }
}

fn small_samples(seed: u64) -> (Graph, Samples) {
    let skeleton = path_graph(6);
    let mut spec = SynthSpec::new(SynthKind::DisjointJoints, 3, 8);
    spec.skeleton = skeleton.clone();
    let data = synth_generate(&spec, 4, seed).unwrap();
    let prep = Preprocess {
        clip_len: 8,
        sample_len: 8,
        wrist_center: false,
    };
    (skeleton, Samples::from_dataset(&data, &prep).unwrap())
}

fn setup(variant: Variant, layers: usize) -> (Network, Samples, TrainConfig) {
    let (skeleton, samples) = small_samples(1);
    let config = TrainConfig {
        variant,
        layers,
        ..small_config()
    };
    let net = build_network(&skeleton, &samples, &config).unwrap();
    (net, samples, config)
}

#[test]
fn tiny_gradcheck_passes() {
    for layers in [1, 2] {
        let report = tiny_gradcheck(layers, 3).unwrap();
        assert!(report.checked > 0);
        assert!(report.passes(1e-4), "L={layers}: {}", report.worst);
    }
}

#[test]
fn backward_loss_matches_forward_composition() {
    let (net, model, x, label) = tiny_network_and_model(2, 9).unwrap();
    let (loss, _) = backward(&x, label, &net, &model).unwrap();
    let raw = net.features(&x, &model.params.agents).unwrap();
    let logits = mlp_forward(model.norm.apply(&raw).as_slice().unwrap(), &model.params.head).unwrap();
    let forward = cross_entropy(&logits, label).unwrap();
    assert!((loss - forward).abs() <= 1e-12 * forward.abs().max(1.0), "{loss} vs {forward}");
}

#[test]
fn fixed_only_has_zero_agent_gradients() {
    let (net, samples, config) = setup(Variant::FixedOnly, 2);
    let model = init_model(&net, &samples, &config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let (_, grads) = backward(&samples.signals[0], samples.labels[0], &net, &model).unwrap();
    for t in grads.tensors() {
        if t.name.starts_with("agent") {
            assert!(t.data.iter().all(|&g| g == 0.0), "{}", t.name);
        }
    }
    assert!(grads.tensors().iter().any(|t| t.name == "mlp/w1" && t.data.iter().any(|&g| g != 0.0)));
}

#[test]
fn full_batch_sgd_reduces_loss() {
    let (net, samples, mut config) = setup(Variant::Full, 2);
    config.optimizer = OptimizerKind::Sgd;
    config.learning_rate = 0.05;
    config.batch_size = samples.len();
    let out = train(&net, &samples, None, &config).unwrap();
    let first = out.log.first().unwrap().loss;
    let last = out.log.last().unwrap().loss;
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let (net, samples, mut config) = setup(Variant::Full, 1);
    config.learning_rate = 0.0;
    config.epochs = 2;
    let out = train(&net, &samples, None, &config).unwrap();
    let init = init_model(&net, &samples, &config, &mut ChaCha8Rng::seed_from_u64(config.seed)).unwrap();
    assert_eq!(out.model, init);
}

#[test]
fn same_seed_same_run() {
    let (net, samples, mut config) = setup(Variant::Full, 2);
    config.epochs = 3;
    let a = train(&net, &samples, Some(&samples), &config).unwrap();
    let b = train(&net, &samples, Some(&samples), &config).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.model, b.model);
    config.seed = 1;
    let c = train(&net, &samples, Some(&samples), &config).unwrap();
    assert_ne!(a.log, c.log);
}

#[test]
fn keep_best_returns_a_logged_epoch() {
    let (net, samples, mut config) = setup(Variant::Full, 1);
    config.epochs = 4;
    config.keep_best = true;
    let out = train(&net, &samples, Some(&samples), &config).unwrap();
    let best = out.log.iter().map(|r| r.val_acc.unwrap()).fold(f64::MIN, f64::max);
    assert_eq!(out.log[out.chosen_epoch - 1].val_acc, Some(best));
    let eval = evaluate(&net, &out.model, &samples).unwrap();
    assert_eq!(eval.accuracy, best);
}

#[test]
fn evaluation_counts() {
    let (net, samples, config) = setup(Variant::NoComplement, 1);
    let mut model = init_model(&net, &samples, &config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    // A constant predictor: only the class-2 output bias is non-zero.
    model.params.head.w1.fill(0.0);
    model.params.head.w2.fill(0.0);
    model.params.head.b2.fill(0.0);
    model.params.head.b2[2] = 1.0;
    let eval = evaluate(&net, &model, &samples).unwrap();
    assert!(eval.predictions.iter().all(|&p| p == 2));
    let expected = samples.labels.iter().filter(|&&y| y == 2).count() as f64 / samples.len() as f64;
    assert_eq!(eval.accuracy, expected);
    let total: usize = eval.confusion.iter().flatten().sum();
    assert_eq!(total, samples.len());
    for (y, row) in eval.confusion.iter().enumerate() {
        assert_eq!(row[2], samples.labels.iter().filter(|&&l| l == y).count());
    }
}

#[test]
fn trainable_only_keeps_the_root_and_drops_fixed_children() {
    let (net, _, _) = setup(Variant::TrainableOnly, 2);
    let layout = net.layout();
    let fixed: Vec<_> = layout.entries.iter().filter(|(k, _)| *k == stgcsn::scattering::NodeKind::Fixed).collect();
    assert_eq!(fixed.len(), 1);
    assert!(fixed[0].1.is_root());
}

#[test]
fn mismatches_are_rejected() {
    let (net, samples, config) = setup(Variant::Full, 1);
    let wrong = TrainConfig {
        variant: Variant::FixedOnly,
        ..config.clone()
    };
    assert!(train(&net, &samples, None, &wrong).is_err());

    let model = init_model(&net, &samples, &config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let (net2, _, _) = setup(Variant::Full, 2);
    assert!(evaluate(&net2, &model, &samples).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let odd = Signal::new(Array3::from_shape_fn((3, 5, 8), |_| rng.random_range(-1.0..1.0))).unwrap();
    assert!(backward(&odd, 0, &net, &model).is_err());
    assert!(Samples::new(vec![samples.signals[0].clone(), odd], vec![0, 0], 3).is_err());
    assert!(Samples::new(vec![samples.signals[0].clone()], vec![3], 3).is_err());
}
