//! Exact reverse-mode gradients of the classification loss.
//!
//! The only trainable path through the scattering part is
//! `M -> softmax -> P' -> squaring chain -> (I - H_j) -> filter -> abs ->
//! temporal mean`. Fixed nodes carry no parameters, so their pooled features
//! enter as constants.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};

use crate::complementary::{check_agent, parent_signals, AgentParams, SiblingFilters, Variant};
use crate::error::{Error, Result};
use crate::scattering::TreePath;
use crate::signal::Signal;
use crate::training::loss::{cross_entropy, softmax};
use crate::training::mlp::mlp_forward_trace;
use crate::training::model::{GradientSet, Model, Network};

/// `sign` with `sign(0) = 0`.
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

struct ParentTrace {
    z: Signal,
    filters: SiblingFilters,
    children: Vec<(usize, usize)>,
    /// `A_s z_c` per spatial scale, per channel.
    left: BTreeMap<usize, Vec<Array2<f64>>>,
    /// Pre-abs child outputs per child, per channel.
    outputs: Vec<Vec<Array2<f64>>>,
}

/// Forward state of the trainable nodes of one signal.
pub(crate) struct TrainableTrace {
    parents: BTreeMap<TreePath, ParentTrace>,
    /// Trainable node paths in feature order.
    order: Vec<TreePath>,
    pub pooled: Vec<f64>,
    steps: usize,
    vertices: usize,
    variant: Variant,
}

impl TrainableTrace {
    pub fn new(x: &Signal, net: &Network, agents: &AgentParams) -> Result<Self> {
        let (channels, vertices, steps) = x.dim();
        let mut parents = BTreeMap::new();
        let mut order = Vec::new();
        if net.variant.has_trainable_nodes() {
            for (path, z) in parent_signals(x, &net.mask, &net.banks) {
                let agent = agents.get(&path)?;
                check_agent(agent, x)?;
                let children = net.mask.children_of(&path);
                let filters = SiblingFilters::new(agent, &children, net.variant);
                let mut left = BTreeMap::new();
                for &(js, _) in &children {
                    left.entry(js).or_insert_with(|| {
                        (0..channels)
                            .map(|c| filters.spatial[&js].dot(&z.channel(c)))
                            .collect::<Vec<_>>()
                    });
                }
                let outputs = children
                    .iter()
                    .map(|&(js, jt)| {
                        let a_t = &filters.temporal[&jt];
                        left[&js].iter().map(|v| v.dot(&a_t.t())).collect()
                    })
                    .collect();
                order.extend(children.iter().map(|&(js, jt)| path.child(js, jt)));
                parents.insert(
                    path,
                    ParentTrace {
                        z,
                        filters,
                        children,
                        left,
                        outputs,
                    },
                );
            }
        }
        order.sort();
        let mut pooled = Vec::with_capacity(order.len() * channels * vertices);
        for path in &order {
            let (parent, child) = locate(&parents, path);
            let y = &parent.outputs[child];
            let mut node = Signal::zeros(channels, vertices, steps);
            for (c, yc) in y.iter().enumerate() {
                node.channel_mut(c).zip_mut_with(yc, |o, &v| *o = v.abs());
            }
            pooled.extend(node.temporal_mean());
        }
        Ok(TrainableTrace {
            parents,
            order,
            pooled,
            steps,
            vertices,
            variant: net.variant,
        })
    }

    /// Sign pattern of every pre-abs output, in node order.
    pub fn output_signs(&self) -> Vec<i8> {
        let mut out = Vec::new();
        for path in &self.order {
            let (parent, child) = locate(&self.parents, path);
            for y in &parent.outputs[child] {
                out.extend(y.iter().map(|&v| sign(v) as i8));
            }
        }
        out
    }

    /// Agent gradients for an upstream gradient on the pooled trainable
    /// features. With `only` set, just that node's contribution.
    pub fn vjp(&self, d_pooled: &[f64], agents: &AgentParams, only: Option<&TreePath>) -> AgentParams {
        let mut grads = agents.zeros_like();
        let block = d_pooled.len() / self.order.len().max(1);
        let mut d_spatial: BTreeMap<TreePath, BTreeMap<usize, Array2<f64>>> = BTreeMap::new();
        let mut d_temporal: BTreeMap<TreePath, BTreeMap<usize, Array2<f64>>> = BTreeMap::new();
        let inv_t = 1.0 / self.steps as f64;
        for (k, path) in self.order.iter().enumerate() {
            if only.is_some_and(|o| o != path) {
                continue;
            }
            let g = &d_pooled[k * block..(k + 1) * block];
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            let parent_path = path.parent().expect("trainable nodes are not the root");
            let (parent, child) = locate(&self.parents, path);
            let (js, jt) = parent.children[child];
            let a_t = &parent.filters.temporal[&jt];
            let ds = d_spatial
                .entry(parent_path.clone())
                .or_default()
                .entry(js)
                .or_insert_with(|| Array2::zeros((self.vertices, self.vertices)));
            for (c, y) in parent.outputs[child].iter().enumerate() {
                let mut dy = y.mapv(sign);
                for (n, mut row) in dy.axis_iter_mut(Axis(0)).enumerate() {
                    let scale = g[c * self.vertices + n] * inv_t;
                    row.mapv_inplace(|s| s * scale);
                }
                // Y = A_s z A_t^T
                let right = a_t.dot(&parent.z.channel(c).t());
                *ds += &dy.dot(&right);
                let dt = d_temporal
                    .entry(parent_path.clone())
                    .or_default()
                    .entry(jt)
                    .or_insert_with(|| Array2::zeros((self.steps, self.steps)));
                *dt += &dy.t().dot(&parent.left[&js][c]);
            }
        }
        // dA -> dH: A = I - H for the complementary filters, A = H otherwise.
        let h_sign = if self.variant == Variant::NoComplement { 1.0 } else { -1.0 };
        for (path, parent) in &self.parents {
            let entry = grads.entries_mut().get_mut(path).expect("agent exists for parent");
            if let Some(ds) = d_spatial.get(path) {
                entry.spatial = chain_to_agent(parent.filters.shift_s.powers(), ds, h_sign);
            }
            if let Some(dt) = d_temporal.get(path) {
                entry.temporal = chain_to_agent(parent.filters.shift_t.powers(), dt, h_sign);
            }
        }
        grads
    }
}

fn locate<'a>(parents: &'a BTreeMap<TreePath, ParentTrace>, path: &TreePath) -> (&'a ParentTrace, usize) {
    let parent = &parents[&path.parent().expect("trainable nodes are not the root")];
    let last = path.last().expect("non-root");
    let child = parent.children.iter().position(|&c| c == last).expect("child of parent");
    (parent, child)
}

/// Pulls filter-matrix gradients back to the agent matrix.
fn chain_to_agent(powers: &[Array2<f64>], d_filters: &BTreeMap<usize, Array2<f64>>, h_sign: f64) -> Array2<f64> {
    let n = powers[0].nrows();
    let mut dq: Vec<Array2<f64>> = vec![Array2::zeros((n, n)); powers.len()];
    // H_j = Q_{j-1} - Q_j
    for (&j, da) in d_filters {
        dq[j - 1].scaled_add(h_sign, da);
        dq[j].scaled_add(-h_sign, da);
    }
    // Q_{k+1} = Q_k Q_k
    for k in (0..powers.len() - 1).rev() {
        let upstream = std::mem::replace(&mut dq[k + 1], Array2::zeros((0, 0)));
        let q = &powers[k];
        dq[k] += &upstream.dot(&q.t());
        dq[k] += &q.t().dot(&upstream);
    }
    softmax_rows_vjp(&powers[0], &dq[0])
}

/// `dM[i] = (dP[i] - <dP[i], P[i]>) * P[i]` for `P = row_softmax(M)`.
pub(crate) fn softmax_rows_vjp(p: &Array2<f64>, dp: &Array2<f64>) -> Array2<f64> {
    let mut dm = Array2::zeros(p.dim());
    for ((mut out, pr), dr) in dm.axis_iter_mut(Axis(0)).zip(p.rows()).zip(dp.rows()) {
        let inner = pr.dot(&dr);
        for ((o, &pv), &dv) in out.iter_mut().zip(pr).zip(dr) {
            *o = (dv - inner) * pv;
        }
    }
    dm
}

/// Everything the batch reduction needs from one sample.
pub(crate) struct SampleGrad {
    pub loss: f64,
    pub logits: Array1<f64>,
    pub features: Array1<f64>,
    pub hidden: Array1<f64>,
    pub d_logits: Array1<f64>,
    pub d_pre: Array1<f64>,
    pub agents: AgentParams,
}

/// Loss and per-sample gradient pieces. `fixed` are the pooled fixed-node
/// features of `x`, see [`Network::fixed_features`].
pub(crate) fn sample_grad(
    net: &Network,
    model: &Model,
    x: &Signal,
    fixed: &[f64],
    label: usize,
) -> Result<SampleGrad> {
    let trace = TrainableTrace::new(x, net, &model.params.agents)?;
    let mut raw = fixed.to_vec();
    raw.extend_from_slice(&trace.pooled);
    let features = model.norm.apply(&raw);
    let mlp = mlp_forward_trace(&features, &model.params.head)?;
    let loss = cross_entropy(&mlp.logits, label)?;

    let mut d_logits = softmax(&mlp.logits);
    d_logits[label] -= 1.0;
    let head = &model.params.head;
    let d_hidden = head.w2.t().dot(&d_logits);
    let d_pre = &d_hidden * &mlp.pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });

    let agents = if trace.pooled.is_empty() {
        model.params.agents.zeros_like()
    } else {
        let offset = fixed.len();
        let w1_trainable = head.w1.slice(ndarray::s![.., offset..]);
        let d_std = w1_trainable.t().dot(&d_pre);
        let d_pooled: Vec<f64> = d_std
            .iter()
            .zip(&model.norm.scale[offset..])
            .map(|(d, s)| d / s)
            .collect();
        trace.vjp(&d_pooled, &model.params.agents, None)
    };
    Ok(SampleGrad {
        loss,
        logits: mlp.logits,
        features,
        hidden: mlp.hidden,
        d_logits,
        d_pre,
        agents,
    })
}

/// Summed loss and gradients of a batch, plus per-sample predictions.
pub struct BatchGradient {
    pub loss_sum: f64,
    pub grads: GradientSet,
    pub predictions: Vec<usize>,
}

pub(crate) fn argmax(v: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Reduces per-sample pieces into summed gradients, in sample order.
pub(crate) fn reduce(model: &Model, samples: &[SampleGrad]) -> BatchGradient {
    let head = &model.params.head;
    let b = samples.len();
    let mut grads = model.params.zeros_like();
    let stack = |rows: &mut dyn Iterator<Item = &Array1<f64>>, width: usize| {
        let mut m = Array2::zeros((b, width));
        for (mut r, v) in m.axis_iter_mut(Axis(0)).zip(rows) {
            r.assign(v);
        }
        m
    };
    let d_logits = stack(&mut samples.iter().map(|s| &s.d_logits), head.classes());
    let hidden = stack(&mut samples.iter().map(|s| &s.hidden), head.hidden());
    let d_pre = stack(&mut samples.iter().map(|s| &s.d_pre), head.hidden());
    let features = stack(&mut samples.iter().map(|s| &s.features), head.feature_len());
    grads.head.w2 = d_logits.t().dot(&hidden);
    grads.head.b2 = d_logits.sum_axis(Axis(0));
    grads.head.w1 = d_pre.t().dot(&features);
    grads.head.b1 = d_pre.sum_axis(Axis(0));
    let mut loss_sum = 0.0;
    for s in samples {
        loss_sum += s.loss;
        for ((_, g), (_, a)) in grads.agents.entries_mut().iter_mut().zip(s.agents.entries()) {
            g.spatial += &a.spatial;
            g.temporal += &a.temporal;
        }
    }
    BatchGradient {
        loss_sum,
        grads,
        predictions: samples.iter().map(|s| argmax(&s.logits)).collect(),
    }
}

/// Loss and exact gradients of one labelled signal.
pub fn backward(x: &Signal, label: usize, net: &Network, model: &Model) -> Result<(f64, GradientSet)> {
    model.check(net)?;
    let fixed = net.fixed_features(x)?;
    let sample = sample_grad(net, model, x, &fixed, label)?;
    let batch = reduce(model, std::slice::from_ref(&sample));
    if let Some(name) = batch.grads.first_non_finite() {
        return Err(Error::NonFinite(name));
    }
    Ok((batch.loss_sum, batch.grads))
}
