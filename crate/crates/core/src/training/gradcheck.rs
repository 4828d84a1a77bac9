//! Central finite-difference check of the analytic gradients.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::complementary::Variant;
use crate::error::Result;
use crate::filterbank::FilterBanks;
use crate::graph::random_connected_graph;
use crate::scattering::PruneMask;
use crate::signal::Signal;
use crate::training::backward::{backward, TrainableTrace};
use crate::training::loss::cross_entropy;
use crate::training::mlp::{mlp_forward, mlp_forward_trace, MlpHead};
use crate::training::model::{Model, Network, ParamSet, Standardizer};
use crate::complementary::AgentParams;

/// Gradients below this magnitude are compared absolutely against it.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub checked: usize,
    /// Coordinates where a `+-h` step moves some `abs` or ReLU input across
    /// zero, so the loss is not differentiable along that step.
    pub excluded: usize,
    pub max_rel_error: f64,
    pub worst: String,
    /// Largest relative error per tensor.
    pub per_tensor: Vec<(String, f64)>,
}

impl GradcheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Loss through the public forward path (tree, complementary nodes, pooling,
/// standardization, classifier, cross-entropy).
fn forward_loss(net: &Network, model: &Model, x: &Signal, label: usize) -> Result<f64> {
    let raw = net.features(x, &model.params.agents)?;
    let logits = mlp_forward(model.norm.apply(&raw).as_slice().expect("contiguous"), &model.params.head)?;
    cross_entropy(&logits, label)
}

/// Signs of every `abs` input and ReLU pre-activation.
fn kink_signature(net: &Network, model: &Model, x: &Signal) -> Result<Vec<i8>> {
    let fixed = net.fixed_features(x)?;
    let trace = TrainableTrace::new(x, net, &model.params.agents)?;
    let mut sig = trace.output_signs();
    let mut raw = fixed;
    raw.extend_from_slice(&trace.pooled);
    let mlp = mlp_forward_trace(&model.norm.apply(&raw), &model.params.head)?;
    sig.extend(mlp.pre.iter().map(|&v| (v > 0.0) as i8 - (v < 0.0) as i8));
    Ok(sig)
}

/// Compares every coordinate of every trainable tensor against
/// `(L(p + h) - L(p - h)) / 2h`. The relative error is
/// `|a - n| / max(|a|, |n|, GRADCHECK_FLOOR)`.
pub fn gradcheck(net: &Network, model: &Model, x: &Signal, label: usize, step: f64) -> Result<GradcheckReport> {
    let (_, analytic) = backward(x, label, net, model)?;
    let base_signature = kink_signature(net, model, x)?;
    let names: Vec<String> = analytic.tensors().into_iter().map(|t| t.name).collect();
    let grads: Vec<Vec<f64>> = analytic.tensors().into_iter().map(|t| t.data.to_vec()).collect();
    let mut report = GradcheckReport {
        checked: 0,
        excluded: 0,
        max_rel_error: 0.0,
        worst: String::new(),
        per_tensor: Vec::new(),
    };
    let mut probe = model.clone();
    for (t, name) in names.iter().enumerate() {
        let mut tensor_max: f64 = 0.0;
        for i in 0..grads[t].len() {
            let original = probe.params.tensors_mut()[t][i];
            probe.params.tensors_mut()[t][i] = original + step;
            let plus = forward_loss(net, &probe, x, label)?;
            let plus_sig = kink_signature(net, &probe, x)?;
            probe.params.tensors_mut()[t][i] = original - step;
            let minus = forward_loss(net, &probe, x, label)?;
            let minus_sig = kink_signature(net, &probe, x)?;
            probe.params.tensors_mut()[t][i] = original;
            if plus_sig != base_signature || minus_sig != base_signature {
                report.excluded += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * step);
            let a = grads[t][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
            report.checked += 1;
            tensor_max = tensor_max.max(rel);
            if rel > report.max_rel_error || report.worst.is_empty() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = format!("{name}[{i}]: analytic {a:e}, numeric {numeric:e}");
            }
        }
        report.per_tensor.push((name.clone(), tensor_max));
    }
    Ok(report)
}

/// The small fully-unpruned configuration used as a standing check:
/// 4 vertices, 5 frames, 3 channels, two scales in space and time, hidden
/// width 8, 3 classes. Agents are perturbed away from their initialization so
/// every agent coordinate carries a non-trivial gradient.
pub fn tiny_network_and_model(layers: usize, seed: u64) -> Result<(Network, Model, Signal, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graph = random_connected_graph(4, 0.3, &mut rng)?;
    let banks = FilterBanks::for_skeleton(&graph, 5, 2, 2)?;
    let mask = PruneMask::full(&banks, layers);
    let net = Network::new(banks, mask, Variant::Full, 3)?;
    let random_signal = |rng: &mut ChaCha8Rng| {
        Signal::new(Array3::from_shape_fn((3, 4, 5), |_| rng.random_range(-1.0..1.0)))
    };
    let mut agents = AgentParams::init(&net.mask, &net.banks, 1e-12);
    let jitter = Normal::new(0.0, 0.5).expect("valid normal");
    for pair in agents.entries_mut().values_mut() {
        pair.spatial = net.banks.spatial_shift.p().mapv(|p| (p + 0.1).ln() + jitter.sample(&mut rng));
        pair.temporal = net.banks.temporal_shift.p().mapv(|p| (p + 0.1).ln() + jitter.sample(&mut rng));
    }
    let mut head = MlpHead::init(net.feature_len(), 8, 3, &mut rng);
    head.b1.mapv_inplace(|_| rng.random_range(-0.1..0.1));
    head.b2.mapv_inplace(|_| rng.random_range(-0.1..0.1));
    let pool: Vec<Vec<f64>> = (0..6)
        .map(|_| net.features(&random_signal(&mut rng)?, &agents))
        .collect::<Result<_>>()?;
    let model = Model {
        params: ParamSet { agents, head },
        norm: Standardizer::fit(&pool)?,
    };
    let x = random_signal(&mut rng)?;
    let label = rng.random_range(0..3);
    Ok((net, model, x, label))
}

/// [`gradcheck`] on [`tiny_network_and_model`] with step `1e-5`.
pub fn tiny_gradcheck(layers: usize, seed: u64) -> Result<GradcheckReport> {
    let (net, model, x, label) = tiny_network_and_model(layers, seed)?;
    gradcheck(&net, &model, &x, label, 1e-5)
}
