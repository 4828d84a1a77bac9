//! Trainable complementary tree nodes.
//!
//! Every preserved non-root node `|H_js(P_s) Z G_jt(P_t)^T|` gets a sibling
//! `|(I - H_js(P'_s)) Z (I - G_jt(P'_t))^T|` computed from the same parent
//! signal `Z`. The shifts `P' = softmax_rows(M)` are shared by all siblings of
//! one parent, and `M` is what the optimizer updates, so `P'` stays
//! row-stochastic under any update.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::filterbank::{apply_st_filter, dyadic_wavelet, FilterBanks};
use crate::graph::dyadic_chain;
use crate::scattering::{assemble_features, forward_to_depth, FeatureLayout, NodeKind, PruneMask, TreePath};
use crate::signal::Signal;

/// Default floor added before the logarithm in [`init_agent_from_markov`].
pub const DEFAULT_AGENT_FLOOR: f64 = 1e-12;

/// Row-wise softmax with per-row max subtraction.
pub fn row_softmax(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    out
}

/// `M = ln(P + floor)`, so that `row_softmax(M)` reproduces `P` up to the floor.
pub fn init_agent_from_markov(p: &Array2<f64>, floor: f64) -> Array2<f64> {
    p.mapv(|v| (v + floor).ln())
}

/// `P' = row_softmax(M)` with its dyadic powers.
#[derive(Debug, Clone)]
pub struct TrainableShift {
    powers: Vec<Array2<f64>>,
}

impl TrainableShift {
    pub fn from_agent(m: &Array2<f64>, j_max: usize) -> Self {
        TrainableShift {
            powers: dyadic_chain(row_softmax(m), j_max),
        }
    }

    pub fn p_prime(&self) -> &Array2<f64> {
        &self.powers[0]
    }

    pub fn powers(&self) -> &[Array2<f64>] {
        &self.powers
    }

    pub fn max_scale(&self) -> usize {
        self.powers.len() - 1
    }

    /// `H_j(P')`.
    pub fn wavelet(&self, j: usize) -> Array2<f64> {
        dyadic_wavelet(&self.powers, j)
    }

    /// `I - H_j(P')`.
    pub fn complement(&self, j: usize) -> Array2<f64> {
        let mut a = self.wavelet(j);
        a.mapv_inplace(|v| -v);
        for i in 0..a.nrows() {
            a[[i, i]] += 1.0;
        }
        a
    }
}

/// Agent matrices of one parent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentPair {
    pub spatial: Array2<f64>,
    pub temporal: Array2<f64>,
}

/// One [`AgentPair`] per preserved parent that has preserved children.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AgentParams {
    entries: BTreeMap<TreePath, AgentPair>,
}

impl AgentParams {
    /// Agents whose softmax reproduces the fixed shifts of `banks`.
    pub fn init(mask: &PruneMask, banks: &FilterBanks, floor: f64) -> Self {
        let spatial = init_agent_from_markov(banks.spatial_shift.p(), floor);
        let temporal = init_agent_from_markov(banks.temporal_shift.p(), floor);
        let entries = mask
            .parents_with_children()
            .into_iter()
            .map(|p| {
                (
                    p,
                    AgentPair {
                        spatial: spatial.clone(),
                        temporal: temporal.clone(),
                    },
                )
            })
            .collect();
        AgentParams { entries }
    }

    pub fn from_entries(entries: BTreeMap<TreePath, AgentPair>) -> Self {
        AgentParams { entries }
    }

    pub fn get(&self, parent: &TreePath) -> Result<&AgentPair> {
        self.entries
            .get(parent)
            .ok_or_else(|| Error::MissingAgent(parent.to_string()))
    }

    pub fn entries(&self) -> &BTreeMap<TreePath, AgentPair> {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut BTreeMap<TreePath, AgentPair> {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn parameter_count(&self) -> usize {
        self.entries
            .values()
            .map(|a| a.spatial.len() + a.temporal.len())
            .sum()
    }

    /// Same keys and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        AgentParams {
            entries: self
                .entries
                .iter()
                .map(|(k, a)| {
                    (
                        k.clone(),
                        AgentPair {
                            spatial: Array2::zeros(a.spatial.dim()),
                            temporal: Array2::zeros(a.temporal.dim()),
                        },
                    )
                })
                .collect(),
        }
    }
}

/// Which node families feed the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Fixed nodes plus complementary `(I - H)` siblings.
    Full,
    /// The pruned scattering tree alone.
    FixedOnly,
    /// Root plus complementary siblings.
    TrainableOnly,
    /// Fixed nodes plus siblings built from `H(P')` instead of `I - H(P')`.
    NoComplement,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::FixedOnly,
        Variant::TrainableOnly,
        Variant::NoComplement,
        Variant::Full,
    ];

    pub fn has_trainable_nodes(self) -> bool {
        self != Variant::FixedOnly
    }

    pub fn emits_fixed_children(self) -> bool {
        self != Variant::TrainableOnly
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Full => "full",
            Variant::FixedOnly => "fixed_only",
            Variant::TrainableOnly => "trainable_only",
            Variant::NoComplement => "no_complement",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "fixed_only" => Ok(Variant::FixedOnly),
            "trainable_only" => Ok(Variant::TrainableOnly),
            "no_complement" => Ok(Variant::NoComplement),
            other => Err(Error::config(
                "variant",
                format!("unknown variant `{other}` (full, fixed_only, trainable_only, no_complement)"),
            )),
        }
    }
}

/// `|(I - H_js(P'_s)) z (I - G_jt(P'_t))^T|`.
pub fn complementary_node(
    z_parent: &Signal,
    js: usize,
    jt: usize,
    shift_s: &TrainableShift,
    shift_t: &TrainableShift,
) -> Result<Signal> {
    if js == 0 || jt == 0 || js > shift_s.max_scale() || jt > shift_t.max_scale() {
        return Err(Error::Precondition(format!(
            "scales ({js},{jt}) need powers the shifts do not have"
        )));
    }
    Ok(apply_st_filter(&shift_s.complement(js), &shift_t.complement(jt), z_parent)?.abs())
}

/// Spatial and temporal filter matrices of one parent's trainable children,
/// keyed by scale.
pub(crate) struct SiblingFilters {
    pub shift_s: TrainableShift,
    pub shift_t: TrainableShift,
    pub spatial: BTreeMap<usize, Array2<f64>>,
    pub temporal: BTreeMap<usize, Array2<f64>>,
}

impl SiblingFilters {
    pub fn new(agent: &AgentPair, children: &[(usize, usize)], variant: Variant) -> Self {
        let max_s = children.iter().map(|c| c.0).max().unwrap_or(1);
        let max_t = children.iter().map(|c| c.1).max().unwrap_or(1);
        let shift_s = TrainableShift::from_agent(&agent.spatial, max_s);
        let shift_t = TrainableShift::from_agent(&agent.temporal, max_t);
        let pick = |shift: &TrainableShift, j: usize| match variant {
            Variant::NoComplement => shift.wavelet(j),
            _ => shift.complement(j),
        };
        let spatial = children.iter().map(|c| (c.0, pick(&shift_s, c.0))).collect();
        let temporal = children.iter().map(|c| (c.1, pick(&shift_t, c.1))).collect();
        SiblingFilters {
            shift_s,
            shift_t,
            spatial,
            temporal,
        }
    }
}

/// Fixed and trainable nodes of one forward pass.
#[derive(Debug, Clone)]
pub struct GcsnOutput {
    pub fixed: Vec<(TreePath, Signal)>,
    pub trainable: Vec<(TreePath, Signal)>,
}

impl GcsnOutput {
    pub fn node_count(&self) -> usize {
        self.fixed.len() + self.trainable.len()
    }

    pub fn features(&self) -> Result<(Vec<f64>, FeatureLayout)> {
        let nodes: Vec<_> = self
            .fixed
            .iter()
            .map(|(p, s)| (NodeKind::Fixed, p.clone(), s))
            .chain(self.trainable.iter().map(|(p, s)| (NodeKind::Trainable, p.clone(), s)))
            .collect();
        assemble_features(&nodes)
    }
}

/// Fixed signals of every preserved path that has preserved children.
pub(crate) fn parent_signals(
    x: &Signal,
    mask: &PruneMask,
    banks: &FilterBanks,
) -> BTreeMap<TreePath, Signal> {
    let parents = mask.parents_with_children();
    let depth = parents.iter().map(TreePath::depth).max().unwrap_or(0);
    let mut nodes = forward_to_depth(x, mask, banks, depth);
    nodes.retain(|p, _| parents.binary_search(p).is_ok());
    nodes
}

/// The full forward pass for one signal.
pub fn gcsn_forward(
    x: &Signal,
    mask: &PruneMask,
    banks: &FilterBanks,
    agents: &AgentParams,
    variant: Variant,
) -> Result<GcsnOutput> {
    banks.check_signal(x)?;
    mask.check_banks(banks)?;
    let fixed_tree = forward_to_depth(x, mask, banks, mask.max_depth());
    let fixed: Vec<(TreePath, Signal)> = if variant.emits_fixed_children() {
        fixed_tree.into_iter().collect()
    } else {
        vec![(TreePath::root(), x.clone())]
    };
    let mut trainable = Vec::new();
    if variant.has_trainable_nodes() {
        for (parent, z) in parent_signals(x, mask, banks) {
            let agent = agents.get(&parent)?;
            check_agent(agent, x)?;
            let children = mask.children_of(&parent);
            let filters = SiblingFilters::new(agent, &children, variant);
            for (js, jt) in children {
                let y = apply_st_filter(&filters.spatial[&js], &filters.temporal[&jt], &z)?;
                trainable.push((parent.child(js, jt), y.abs()));
            }
        }
    }
    Ok(GcsnOutput { fixed, trainable })
}

pub(crate) fn check_agent(agent: &AgentPair, x: &Signal) -> Result<()> {
    let (_, n, t) = x.dim();
    if agent.spatial.dim() != (n, n) || agent.temporal.dim() != (t, t) {
        return Err(Error::Shape(format!(
            "agent matrices are {:?} and {:?}, signal is {n}x{t}",
            agent.spatial.dim(),
            agent.temporal.dim()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{lazy_random_walk, line_graph, Graph};
    use crate::scattering::{compute_prune_mask, forward_pruned};
    use ndarray::{array, Array3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Array2<f64> {
        Array2::from_shape_fn((n, n), |_| rng.random_range(-scale..scale))
    }

    fn small_banks() -> FilterBanks {
        let g = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        FilterBanks::for_skeleton(&g, 5, 2, 2).unwrap()
    }

    #[test]
    fn softmax_uniform_and_shift_invariant() {
        let s = row_softmax(&Array2::zeros((3, 3)));
        assert!(s.iter().all(|&v| v == 1.0 / 3.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_matrix(&mut rng, 4, 3.0);
        let mut shifted = m.clone();
        shifted.row_mut(2).mapv_inplace(|v| v + 123.0);
        let (a, b) = (row_softmax(&m), row_softmax(&shifted));
        for (x, y) in a.row(2).iter().zip(b.row(2)) {
            assert!((x - y).abs() < 1e-13);
        }
        assert_eq!(a.row(0), b.row(0));
    }

    #[test]
    fn softmax_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_matrix(&mut rng, 4, 2.0);
        let s = row_softmax(&m);
        for i in 0..4 {
            let total: f64 = (0..4).map(|k| m[[i, k]].exp()).sum();
            for j in 0..4 {
                assert!((s[[i, j]] - m[[i, j]].exp() / total).abs() < 1e-15);
            }
            assert!((s.row(i).sum() - 1.0).abs() < 1e-12);
        }
        let big = array![[1000.0, 999.0], [-1000.0, -1001.0]];
        let s = row_softmax(&big);
        assert!(s.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn init_round_trips() {
        let p = array![[0.5, 0.5], [0.5, 0.5]];
        let m = init_agent_from_markov(&p, 1e-12);
        assert!(m.row(0).iter().all(|&v| v == m[[0, 0]]));
        let back = row_softmax(&m);
        assert!(back.iter().zip(&p).all(|(a, b)| (a - b).abs() < 2e-12));
        assert_eq!(back, p);

        let id = Array2::<f64>::eye(3);
        let back = row_softmax(&init_agent_from_markov(&id, 1e-12));
        for i in 0..3 {
            // exact value is (1 + f) / (1 + 3f) = 1 - 2f + O(f^2); allow rounding
            assert!(back[[i, i]] >= 1.0 - 2e-12 - 1e-15, "{}", back[[i, i]]);
        }
    }

    #[test]
    fn complement_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shift = TrainableShift::from_agent(&random_matrix(&mut rng, 5, 1.0), 4);
        for j in 1..=4 {
            let sum = shift.complement(j) + shift.wavelet(j);
            let diff = (&sum - &Array2::<f64>::eye(5)).mapv(f64::abs);
            assert!(diff.iter().all(|&d| d < 1e-15));
            for r in shift.complement(j).rows() {
                assert!((r.sum() - 1.0).abs() < 1e-12);
            }
        }
        for r in shift.p_prime().rows() {
            assert!((r.sum() - 1.0).abs() < 1e-12);
            assert!(r.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn complementary_node_on_idempotent_shifts_is_abs() {
        let half = array![[0.5, 0.5], [0.5, 0.5]];
        let m = init_agent_from_markov(&half, 0.0);
        let shift = TrainableShift::from_agent(&m, 3);
        let z = Signal::new(Array3::from_shape_fn((2, 2, 2), |(c, n, t)| {
            c as f64 - 1.5 * n as f64 + t as f64 - 0.25
        }))
        .unwrap();
        let out = complementary_node(&z, 2, 3, &shift, &shift).unwrap();
        assert_eq!(out, z.abs());
        assert_eq!(
            complementary_node(&Signal::zeros(1, 2, 2), 1, 1, &shift, &shift).unwrap(),
            Signal::zeros(1, 2, 2)
        );
        assert!(complementary_node(&z, 4, 1, &shift, &shift).is_err());
    }

    #[test]
    fn complementary_node_preserves_constants() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = TrainableShift::from_agent(&random_matrix(&mut rng, 4, 1.0), 3);
        let t = TrainableShift::from_agent(&random_matrix(&mut rng, 6, 1.0), 3);
        let mut a = Array3::zeros((2, 4, 6));
        a.fill(0.7);
        let z = Signal::new(a).unwrap();
        let out = complementary_node(&z, 2, 3, &s, &t).unwrap();
        assert!(out.as_array().iter().all(|v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn fixed_only_matches_pruned_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let banks = small_banks();
        let x = Signal::new(Array3::from_shape_fn((2, 4, 5), |_| rng.random_range(-1.0..1.0))).unwrap();
        let mask = compute_prune_mask(std::slice::from_ref(&x), &banks, 2, 0.1).unwrap();
        let out = gcsn_forward(&x, &mask, &banks, &AgentParams::default(), Variant::FixedOnly).unwrap();
        assert!(out.trainable.is_empty());
        let tree = forward_pruned(&x, &mask, &banks).unwrap();
        assert_eq!(out.fixed.len(), tree.len());
        for (p, s) in &out.fixed {
            assert_eq!(tree.get(p), Some(s));
        }
    }

    #[test]
    fn full_variant_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let banks = small_banks();
        let x = Signal::new(Array3::from_shape_fn((2, 4, 5), |_| rng.random_range(-1.0..1.0))).unwrap();
        let mask = compute_prune_mask(std::slice::from_ref(&x), &banks, 2, 0.1).unwrap();
        let agents = AgentParams::init(&mask, &banks, DEFAULT_AGENT_FLOOR);
        let out = gcsn_forward(&x, &mask, &banks, &agents, Variant::Full).unwrap();
        assert_eq!(out.trainable.len(), mask.len() - 1);
        assert_eq!(out.node_count(), 2 * mask.len() - 1);
        let only = gcsn_forward(&x, &mask, &banks, &agents, Variant::TrainableOnly).unwrap();
        assert_eq!(only.fixed.len(), 1);
        assert_eq!(only.trainable.len(), mask.len() - 1);
        assert_eq!(
            agents.parameter_count(),
            mask.parents_with_children().len() * (16 + 25)
        );
    }

    #[test]
    fn missing_agent_is_a_configuration_error() {
        let banks = small_banks();
        let mask = PruneMask::full(&banks, 1);
        let err = gcsn_forward(&Signal::zeros(1, 4, 5), &mask, &banks, &AgentParams::default(), Variant::Full)
            .unwrap_err();
        assert!(matches!(err, Error::MissingAgent(_)));
    }

    #[test]
    fn paper_agent_count_per_parent() {
        let banks = FilterBanks::new(
            lazy_random_walk(&Graph::hand_skeleton()),
            lazy_random_walk(&line_graph(67).unwrap()),
            1,
            1,
        )
        .unwrap();
        let agents = AgentParams::init(&PruneMask::full(&banks, 1), &banks, DEFAULT_AGENT_FLOOR);
        assert_eq!(agents.parameter_count(), 4930);
    }

    #[test]
    fn variant_names() {
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert!("both".parse::<Variant>().is_err());
    }
}
