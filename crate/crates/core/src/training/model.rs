use ndarray::Array1;

use crate::complementary::{gcsn_forward, AgentParams, Variant};
use crate::error::{Error, Result};
use crate::filterbank::FilterBanks;
use crate::scattering::{forward_to_depth, FeatureLayout, NodeKind, PruneMask, TreePath};
use crate::signal::Signal;
use crate::training::mlp::MlpHead;

/// Every trainable tensor: agent matrices and the classifier head.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub agents: AgentParams,
    pub head: MlpHead,
}

/// Gradients share the parameter layout.
pub type GradientSet = ParamSet;

/// Borrowed named tensor.
#[derive(Debug, Clone)]
pub struct TensorView<'a> {
    pub name: String,
    pub shape: &'a [usize],
    pub data: &'a [f64],
}

impl ParamSet {
    pub fn zeros_like(&self) -> Self {
        ParamSet {
            agents: self.agents.zeros_like(),
            head: MlpHead::zeros(self.head.feature_len(), self.head.hidden(), self.head.classes()),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.agents.parameter_count() + self.head.parameter_count()
    }

    /// Named tensors in a fixed order: agents by parent path (spatial, then
    /// temporal), then `mlp/w1`, `mlp/b1`, `mlp/w2`, `mlp/b2`.
    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = Vec::new();
        for (path, pair) in self.agents.entries() {
            out.push(TensorView {
                name: format!("agent_s/{path}"),
                shape: pair.spatial.shape(),
                data: pair.spatial.as_slice().expect("standard layout"),
            });
            out.push(TensorView {
                name: format!("agent_t/{path}"),
                shape: pair.temporal.shape(),
                data: pair.temporal.as_slice().expect("standard layout"),
            });
        }
        let h = &self.head;
        out.push(TensorView { name: "mlp/w1".into(), shape: h.w1.shape(), data: h.w1.as_slice().expect("standard layout") });
        out.push(TensorView { name: "mlp/b1".into(), shape: h.b1.shape(), data: h.b1.as_slice().expect("standard layout") });
        out.push(TensorView { name: "mlp/w2".into(), shape: h.w2.shape(), data: h.w2.as_slice().expect("standard layout") });
        out.push(TensorView { name: "mlp/b2".into(), shape: h.b2.shape(), data: h.b2.as_slice().expect("standard layout") });
        out
    }

    /// Mutable slices in the order of [`ParamSet::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for pair in self.agents.entries_mut().values_mut() {
            out.push(pair.spatial.as_slice_mut().expect("standard layout"));
            out.push(pair.temporal.as_slice_mut().expect("standard layout"));
        }
        let h = &mut self.head;
        out.push(h.w1.as_slice_mut().expect("standard layout"));
        out.push(h.b1.as_slice_mut().expect("standard layout"));
        out.push(h.w2.as_slice_mut().expect("standard layout"));
        out.push(h.b2.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn add_assign(&mut self, other: &ParamSet) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b.data) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            for x in t {
                *x *= factor;
            }
        }
    }

    /// Name of the first tensor holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|t| t.data.iter().any(|v| !v.is_finite()))
            .map(|t| t.name)
    }
}

/// Per-dimension affine standardization `(x - mean) / scale`, fitted once on
/// the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(len: usize) -> Self {
        Standardizer {
            mean: vec![0.0; len],
            scale: vec![1.0; len],
        }
    }

    /// Mean and population standard deviation per dimension; dimensions with
    /// (numerically) zero spread get scale 1.
    pub fn fit(features: &[Vec<f64>]) -> Result<Self> {
        let first = features
            .first()
            .ok_or_else(|| Error::Precondition("cannot fit a standardizer to no samples".into()))?;
        let len = first.len();
        let count = features.len() as f64;
        let mut mean = vec![0.0; len];
        for f in features {
            for (m, v) in mean.iter_mut().zip(f) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; len];
        for f in features {
            for ((s, v), m) in var.iter_mut().zip(f).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .zip(&mean)
            .map(|(s, m)| {
                let sd = (s / count).sqrt();
                if sd > 1e-12 * m.abs().max(1.0) {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, scale })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn apply(&self, features: &[f64]) -> Array1<f64> {
        features
            .iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }
}

/// Trainable parameters together with the frozen feature standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: ParamSet,
    pub norm: Standardizer,
}

impl Model {
    pub fn check(&self, net: &Network) -> Result<()> {
        let expected = net.feature_len();
        if self.params.head.feature_len() != expected || self.norm.len() != expected {
            return Err(Error::Shape(format!(
                "model expects {} features (standardizer {}), network produces {expected}",
                self.params.head.feature_len(),
                self.norm.len()
            )));
        }
        self.params.head.check()
    }
}

/// The non-trainable part of the pipeline: wavelet banks, the pruned tree
/// topology and which node families feed the classifier.
#[derive(Debug, Clone)]
pub struct Network {
    pub banks: FilterBanks,
    pub mask: PruneMask,
    pub variant: Variant,
    pub channels: usize,
}

impl Network {
    pub fn new(banks: FilterBanks, mask: PruneMask, variant: Variant, channels: usize) -> Result<Self> {
        mask.check_banks(&banks)?;
        Ok(Network {
            banks,
            mask,
            variant,
            channels,
        })
    }

    pub fn vertices(&self) -> usize {
        self.banks.spatial.dim()
    }

    pub fn steps(&self) -> usize {
        self.banks.temporal.dim()
    }

    pub fn block_len(&self) -> usize {
        self.channels * self.vertices()
    }

    /// Feature layout for this variant: fixed nodes (or just the root for
    /// `trainable_only`) followed by trainable nodes, each sorted by path.
    pub fn layout(&self) -> FeatureLayout {
        let mut entries = Vec::new();
        if self.variant.emits_fixed_children() {
            entries.extend(self.mask.paths().map(|p| (NodeKind::Fixed, p.clone())));
        } else {
            entries.push((NodeKind::Fixed, TreePath::root()));
        }
        if self.variant.has_trainable_nodes() {
            entries.extend(
                self.mask
                    .paths()
                    .filter(|p| !p.is_root())
                    .map(|p| (NodeKind::Trainable, p.clone())),
            );
        }
        FeatureLayout {
            entries,
            channels: self.channels,
            vertices: self.vertices(),
        }
    }

    pub fn feature_len(&self) -> usize {
        self.layout().feature_len()
    }

    pub(crate) fn check_signal(&self, x: &Signal) -> Result<()> {
        self.banks.check_signal(x)?;
        if x.channels() != self.channels {
            return Err(Error::Shape(format!(
                "signal has {} channels, network expects {}",
                x.channels(),
                self.channels
            )));
        }
        Ok(())
    }

    /// Pooled fixed-node features, which do not depend on any parameter.
    pub fn fixed_features(&self, x: &Signal) -> Result<Vec<f64>> {
        self.check_signal(x)?;
        if !self.variant.emits_fixed_children() {
            return Ok(x.temporal_mean());
        }
        let nodes = forward_to_depth(x, &self.mask, &self.banks, self.mask.max_depth());
        Ok(nodes.values().flat_map(Signal::temporal_mean).collect())
    }

    /// Raw (unstandardized) feature vector of one signal.
    pub fn features(&self, x: &Signal, agents: &AgentParams) -> Result<Vec<f64>> {
        self.check_signal(x)?;
        let out = gcsn_forward(x, &self.mask, &self.banks, agents, self.variant)?;
        Ok(out.features()?.0)
    }
}
