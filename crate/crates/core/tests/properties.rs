use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Array3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stgcsn::complementary::{gcsn_forward, init_agent_from_markov, row_softmax, AgentParams, Variant};
use stgcsn::data::{
    clip_pad, format_sequence, parse_sequence, uniform_sample, uniform_sample_indices, Preprocess,
    SkeletonSequence,
};
use stgcsn::filterbank::{apply_st_filter, FilterBanks};
use stgcsn::graph::{lazy_random_walk, random_connected_graph, Graph};
use stgcsn::io::{decode_tensors, encode_checkpoint, model_from_tensors};
use stgcsn::scattering::{compute_prune_mask, forward_pruned, NodeKind, PruneMask};
use stgcsn::signal::Signal;
use stgcsn::training::{cross_entropy, softmax, MlpHead, Model, ParamSet, Standardizer};

fn graph_strategy(max_n: usize) -> impl Strategy<Value = Graph> {
    (2..=max_n, any::<u64>(), 0.0..0.8f64)
        .prop_map(|(n, seed, p)| random_connected_graph(n, p, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap())
}

fn signal_strategy(c: usize, n: usize, t: usize) -> impl Strategy<Value = Signal> {
    proptest::collection::vec(-10.0..10.0f64, c * n * t)
        .prop_map(move |v| Signal::new(Array3::from_shape_vec((c, n, t), v).unwrap()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lazy_walk_is_stochastic_with_degree_stationary_law(g in graph_strategy(10)) {
        let p = lazy_random_walk(&g).p().clone();
        let d = Array1::from(g.degrees());
        let pi = &d / d.sum();
        for r in p.rows() {
            prop_assert!((r.sum() - 1.0).abs() < 1e-12);
            prop_assert!(r.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        let moved = pi.dot(&p);
        prop_assert!((&moved - &pi).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn lazy_walk_spectrum_lies_in_unit_interval(g in graph_strategy(9)) {
        let p = lazy_random_walk(&g).p().clone();
        let d = g.degrees();
        let n = p.nrows();
        let m = DMatrix::from_fn(n, n, |i, j| d[i].sqrt() * p[[i, j]] / d[j].sqrt());
        let sym = (&m + m.transpose()) * 0.5;
        for ev in sym.symmetric_eigenvalues().iter() {
            prop_assert!(*ev >= -1e-10 && *ev <= 1.0 + 1e-10, "eigenvalue {ev}");
        }
    }

    #[test]
    fn wavelets_kill_constants_and_telescope(g in graph_strategy(9), j in 1usize..6) {
        let banks = FilterBanks::for_skeleton(&g, 3, j, 1).unwrap();
        let n = g.n_vertices();
        let mut sum = Array2::zeros((n, n));
        for s in 1..=j {
            let h = banks.spatial.filter(s);
            prop_assert!(h.dot(&Array1::ones(n)).iter().all(|v| v.abs() < 1e-12));
            sum += h;
        }
        let expected = banks.spatial_shift.p() - banks.spatial_shift.power(j).unwrap();
        prop_assert!((&sum - &expected).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn separable_filter_is_linear(
        g in graph_strategy(5),
        a in -3.0..3.0f64,
        b in -3.0..3.0f64,
        seed in any::<u64>(),
    ) {
        let n = g.n_vertices();
        let banks = FilterBanks::for_skeleton(&g, 4, 2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || Signal::new(Array3::from_shape_fn((2, n, 4), |_| rand::Rng::random_range(&mut rng, -1.0..1.0))).unwrap();
        let (x, y) = (draw(), draw());
        let combo = Signal::new(x.as_array() * a + y.as_array() * b).unwrap();
        let (h, gt) = (banks.spatial.filter(1), banks.temporal.filter(2));
        let lhs = apply_st_filter(h, gt, &combo).unwrap();
        let rhs = apply_st_filter(h, gt, &x).unwrap().as_array() * a + apply_st_filter(h, gt, &y).unwrap().as_array() * b;
        prop_assert!((lhs.as_array() - &rhs).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn softmax_inverts_the_agent_initialization(g in graph_strategy(12)) {
        let p = lazy_random_walk(&g).p().clone();
        let back = row_softmax(&init_agent_from_markov(&p, 1e-12));
        prop_assert!((&back - &p).iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn pruning_is_monotone_and_closed(
        g in graph_strategy(5),
        seed in any::<u64>(),
        taus in proptest::collection::vec(0.0..0.3f64, 2..5),
    ) {
        let n = g.n_vertices();
        let banks = FilterBanks::for_skeleton(&g, 5, 2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let signals: Vec<Signal> = (0..3)
            .map(|_| Signal::new(Array3::from_shape_fn((2, n, 5), |_| rand::Rng::random_range(&mut rng, -1.0..1.0))).unwrap())
            .collect();
        let mut taus = taus;
        taus.sort_by(f64::total_cmp);
        let masks: Vec<PruneMask> = taus.iter().map(|&t| compute_prune_mask(&signals, &banks, 2, t).unwrap()).collect();
        for w in masks.windows(2) {
            prop_assert!(w[1].paths().all(|p| w[0].contains(p)), "larger tau kept a node the smaller one dropped");
        }
        for m in &masks {
            prop_assert!(m.is_parent_closed());
        }
        let zero = compute_prune_mask(&signals, &banks, 2, 0.0).unwrap();
        prop_assert_eq!(zero.len(), 1 + 4 + 16);
    }

    #[test]
    fn initial_no_complement_nodes_match_the_fixed_tree(g in graph_strategy(5), x in signal_strategy(2, 5, 4)) {
        // Graphs may have fewer than five vertices; trim the signal to fit.
        let n = g.n_vertices();
        let x = Signal::new(x.as_array().slice(ndarray::s![.., ..n, ..]).to_owned()).unwrap();
        let banks = FilterBanks::for_skeleton(&g, 4, 2, 2).unwrap();
        let mask = PruneMask::full(&banks, 2);
        let agents = AgentParams::init(&mask, &banks, 1e-12);
        let out = gcsn_forward(&x, &mask, &banks, &agents, Variant::NoComplement).unwrap();
        let fixed = forward_pruned(&x, &mask, &banks).unwrap();
        for (path, node) in &out.trainable {
            let reference = &fixed.nodes()[path];
            let scale = 1.0 + reference.norm();
            prop_assert!((node.as_array() - reference.as_array()).iter().all(|v| v.abs() < 1e-9 * scale));
        }
    }

    #[test]
    fn zero_signal_gives_zero_features(g in graph_strategy(6)) {
        let n = g.n_vertices();
        let banks = FilterBanks::for_skeleton(&g, 4, 2, 2).unwrap();
        let mask = PruneMask::full(&banks, 2);
        let agents = AgentParams::init(&mask, &banks, 1e-12);
        let out = gcsn_forward(&Signal::zeros(3, n, 4), &mask, &banks, &agents, Variant::Full).unwrap();
        let (features, layout) = out.features().unwrap();
        prop_assert!(features.iter().all(|&v| v == 0.0));
        prop_assert_eq!(features.len(), layout.entries.len() * 3 * n);
        prop_assert_eq!(layout.entries.iter().filter(|e| e.0 == NodeKind::Trainable).count(), mask.len() - 1);
    }

    #[test]
    fn uniform_sample_indices_increase_within_bounds((len, count) in (1usize..500).prop_flat_map(|l| (Just(l), 1..=l))) {
        let idx = uniform_sample_indices(len, count).unwrap();
        prop_assert_eq!(idx.len(), count);
        prop_assert_eq!(idx[0], 0);
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(*idx.last().unwrap() < len);
        if count == len {
            prop_assert!(idx.iter().enumerate().all(|(i, &v)| i == v));
        }
    }

    #[test]
    fn uniform_sample_rejects_oversampling(len in 1usize..50, extra in 1usize..10) {
        prop_assert!(uniform_sample_indices(len, len + extra).is_err());
    }

    #[test]
    fn clip_pad_has_exact_length_and_keeps_the_prefix(t_raw in 1usize..40, target in 1usize..40, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = Array3::from_shape_fn((t_raw, 2, 3), |_| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let seq = SkeletonSequence { frames: frames.clone(), label: 0, id: "s".into() };
        let out = clip_pad(&seq, target);
        prop_assert_eq!(out.len(), target);
        for t in 0..target {
            let src = t.min(t_raw - 1);
            prop_assert_eq!(out.frames.index_axis(ndarray::Axis(0), t), frames.index_axis(ndarray::Axis(0), src));
        }
    }

    #[test]
    fn preprocessing_is_idempotent_on_preprocessed_input(seed in any::<u64>(), t_raw in 1usize..120) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = Array3::from_shape_fn((t_raw, 21, 3), |_| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let seq = SkeletonSequence { frames, label: 0, id: "s".into() };
        let once = Preprocess::default().apply(&seq).unwrap();
        let again = Preprocess { clip_len: 67, sample_len: 67, wrist_center: false }.apply(&once).unwrap();
        prop_assert_eq!(&once.frames, &again.frames);
        let resampled = uniform_sample(&clip_pad(&once, 67), 67).unwrap();
        prop_assert_eq!(&once.frames, &resampled.frames);
    }

    #[test]
    fn sequence_text_roundtrips_bitwise(values in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 63 * 3)) {
        let frames = Array3::from_shape_vec((3, 21, 3), values).unwrap();
        let back = parse_sequence(&format_sequence(&frames), 21, "mem").unwrap();
        prop_assert!(frames.iter().zip(back.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn checkpoint_roundtrips_bitwise(seed in any::<u64>(), hidden in 1usize..6, classes in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_connected_graph(3, 0.5, &mut rng).unwrap();
        let banks = FilterBanks::for_skeleton(&g, 4, 2, 1).unwrap();
        let mask = PruneMask::full(&banks, 2);
        let mut agents = AgentParams::init(&mask, &banks, 1e-12);
        for pair in agents.entries_mut().values_mut() {
            pair.spatial.mapv_inplace(|v| v + rand::Rng::random_range(&mut rng, -1.0..1.0));
        }
        let features = (2 * mask.len() - 1) * 2 * 3;
        let head = MlpHead::init(features, hidden, classes, &mut rng);
        let norm = Standardizer {
            mean: (0..features).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect(),
            scale: (0..features).map(|_| rand::Rng::random_range(&mut rng, 0.5..2.0)).collect(),
        };
        let model = Model { params: ParamSet { agents, head }, norm };
        let bytes = encode_checkpoint(&model).unwrap();
        let path = std::path::Path::new("mem");
        let back = model_from_tensors(decode_tensors(&bytes, path).unwrap(), path).unwrap();
        prop_assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
        prop_assert_eq!(back, model);
    }

    #[test]
    fn cross_entropy_is_shifted_log_sum_exp(logits in proptest::collection::vec(-50.0..50.0f64, 1..10), shift in -100.0..100.0f64) {
        let z = Array1::from(logits.clone());
        let label = logits.len() / 2;
        let loss = cross_entropy(&z, label).unwrap();
        prop_assert!(loss >= 0.0);
        prop_assert!((loss + softmax(&z)[label].ln()).abs() < 1e-9 * (1.0 + loss));
        let shifted = cross_entropy(&z.mapv(|v| v + shift), label).unwrap();
        prop_assert!((loss - shifted).abs() < 1e-10 * (1.0 + loss.abs()));
    }
}
