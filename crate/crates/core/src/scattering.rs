//! Scattering tree, energy-ratio pruning and pooled features.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::filterbank::FilterBanks;
use crate::par;
use crate::signal::Signal;

/// Default refusal threshold for [`build_full_tree`].
pub const DEFAULT_NODE_CAP: usize = 20_000;

/// Scale pairs `(j_s, j_t)` from the root to a node; empty for the root.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct TreePath(Vec<(usize, usize)>);

impl TreePath {
    pub fn root() -> Self {
        TreePath(Vec::new())
    }

    pub fn new(pairs: Vec<(usize, usize)>) -> Self {
        TreePath(pairs)
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.0
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    pub fn parent(&self) -> Option<TreePath> {
        if self.is_root() {
            None
        } else {
            Some(TreePath(self.0[..self.0.len() - 1].to_vec()))
        }
    }

    /// Scale pair of the last step, `None` for the root.
    pub fn last(&self) -> Option<(usize, usize)> {
        self.0.last().copied()
    }

    pub fn child(&self, js: usize, jt: usize) -> TreePath {
        let mut pairs = self.0.clone();
        pairs.push((js, jt));
        TreePath(pairs)
    }
}

impl fmt::Display for TreePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("()");
        }
        for (k, (js, jt)) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str("/")?;
            }
            write!(f, "({js},{jt})")?;
        }
        Ok(())
    }
}

impl FromStr for TreePath {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        if s == "()" {
            return Ok(TreePath::root());
        }
        let mut pairs = Vec::new();
        for step in s.split('/') {
            let inner = step
                .strip_prefix('(')
                .and_then(|x| x.strip_suffix(')'))
                .ok_or_else(|| format!("malformed path step `{step}`"))?;
            let (a, b) = inner
                .split_once(',')
                .ok_or_else(|| format!("malformed path step `{step}`"))?;
            let js = a.trim().parse::<usize>().map_err(|e| e.to_string())?;
            let jt = b.trim().parse::<usize>().map_err(|e| e.to_string())?;
            if js == 0 || jt == 0 {
                return Err(format!("scales are 1-based in `{step}`"));
            }
            pairs.push((js, jt));
        }
        Ok(TreePath(pairs))
    }
}

/// Node signals addressed by path.
#[derive(Debug, Clone)]
pub struct ScatteringTree {
    nodes: BTreeMap<TreePath, Signal>,
    layers: usize,
}

impl ScatteringTree {
    pub fn nodes(&self) -> &BTreeMap<TreePath, Signal> {
        &self.nodes
    }

    pub fn into_nodes(self) -> BTreeMap<TreePath, Signal> {
        self.nodes
    }

    pub fn get(&self, path: &TreePath) -> Option<&Signal> {
        self.nodes.get(path)
    }

    pub fn root(&self) -> &Signal {
        &self.nodes[&TreePath::root()]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn layers(&self) -> usize {
        self.layers
    }
}

/// `sum_{l=0..layers} children^l`, or `None` on overflow.
pub fn full_tree_size(children: usize, layers: usize) -> Option<usize> {
    let mut total: usize = 0;
    let mut level: usize = 1;
    for l in 0..=layers {
        total = total.checked_add(level)?;
        if l < layers {
            level = level.checked_mul(children)?;
        }
    }
    Some(total)
}

/// `|H_js z G_jt^T|` for the requested scale pairs. `H_js z` is shared
/// between pairs with the same spatial scale.
pub(crate) fn scatter_selected(
    z: &Signal,
    banks: &FilterBanks,
    wanted: &[(usize, usize)],
) -> Vec<((usize, usize), Signal)> {
    let (c, n, t) = z.dim();
    let mut by_spatial: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(js, jt) in wanted {
        by_spatial.entry(js).or_default().push(jt);
    }
    let mut out = Vec::with_capacity(wanted.len());
    for (js, jts) in by_spatial {
        let h = banks.spatial.filter(js);
        let left: Vec<Array2<f64>> = (0..c).map(|ch| h.dot(&z.channel(ch))).collect();
        for jt in jts {
            let g = banks.temporal.filter(jt);
            let mut child = Signal::zeros(c, n, t);
            for (ch, hz) in left.iter().enumerate() {
                let y = hz.dot(&g.t());
                child.channel_mut(ch).zip_mut_with(&y, |o, &v| *o = v.abs());
            }
            out.push(((js, jt), child));
        }
    }
    out
}

/// All `J_s * J_t` children of `z`, ordered by `(j_s, j_t)`.
pub fn scatter_children(z: &Signal, banks: &FilterBanks) -> Result<Vec<((usize, usize), Signal)>> {
    banks.check_signal(z)?;
    let wanted: Vec<_> = all_pairs(banks).collect();
    Ok(scatter_selected(z, banks, &wanted))
}

fn all_pairs(banks: &FilterBanks) -> impl Iterator<Item = (usize, usize)> {
    let (js, jt) = (banks.spatial_scales(), banks.temporal_scales());
    (1..=js).flat_map(move |a| (1..=jt).map(move |b| (a, b)))
}

pub fn build_full_tree(
    x: &Signal,
    banks: &FilterBanks,
    layers: usize,
    node_cap: usize,
) -> Result<ScatteringTree> {
    if layers == 0 {
        return Err(Error::Precondition("a scattering tree needs at least one layer".into()));
    }
    let nodes = full_tree_size(banks.children_per_node(), layers).unwrap_or(usize::MAX);
    if nodes > node_cap {
        return Err(Error::TreeTooLarge { nodes, cap: node_cap });
    }
    let mask = PruneMask::full(banks, layers);
    forward_pruned(x, &mask, banks)
}

/// Set of preserved tree paths; always contains the root and is closed under
/// taking parents.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneMask {
    preserved: BTreeSet<TreePath>,
    threshold: f64,
}

impl PruneMask {
    pub fn root_only() -> Self {
        PruneMask {
            preserved: BTreeSet::from([TreePath::root()]),
            threshold: f64::INFINITY,
        }
    }

    /// Every path of the unpruned tree.
    pub fn full(banks: &FilterBanks, layers: usize) -> Self {
        let mut preserved = BTreeSet::from([TreePath::root()]);
        let mut frontier = vec![TreePath::root()];
        for _ in 0..layers {
            let mut next = Vec::new();
            for p in &frontier {
                for (js, jt) in all_pairs(banks) {
                    next.push(p.child(js, jt));
                }
            }
            preserved.extend(next.iter().cloned());
            frontier = next;
        }
        PruneMask {
            preserved,
            threshold: 0.0,
        }
    }

    /// Builds a mask from explicit paths; fails unless the set contains the
    /// root and is parent-closed.
    pub fn from_paths(paths: impl IntoIterator<Item = TreePath>, threshold: f64) -> Result<Self> {
        let preserved: BTreeSet<TreePath> = paths.into_iter().collect();
        let mask = PruneMask {
            preserved,
            threshold,
        };
        if !mask.contains(&TreePath::root()) {
            return Err(Error::Precondition("mask must contain the root".into()));
        }
        if let Some(orphan) = mask.first_orphan() {
            return Err(Error::Precondition(format!(
                "mask is not parent-closed: {orphan} has no preserved parent"
            )));
        }
        Ok(mask)
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn contains(&self, path: &TreePath) -> bool {
        self.preserved.contains(path)
    }

    pub fn paths(&self) -> impl Iterator<Item = &TreePath> {
        self.preserved.iter()
    }

    pub fn len(&self) -> usize {
        self.preserved.len()
    }

    pub fn is_empty(&self) -> bool {
        self.preserved.is_empty()
    }

    pub fn max_depth(&self) -> usize {
        self.preserved.iter().map(TreePath::depth).max().unwrap_or(0)
    }

    /// Preserved paths per depth, index 0 being the root.
    pub fn count_by_depth(&self) -> Vec<usize> {
        let mut counts = vec![0; self.max_depth() + 1];
        for p in &self.preserved {
            counts[p.depth()] += 1;
        }
        counts
    }

    /// Preserved children of `path`, as scale pairs in path order.
    pub fn children_of(&self, path: &TreePath) -> Vec<(usize, usize)> {
        self.preserved
            .iter()
            .filter(|p| p.depth() == path.depth() + 1 && p.parent().as_ref() == Some(path))
            .filter_map(TreePath::last)
            .collect()
    }

    /// Preserved paths that have at least one preserved child.
    pub fn parents_with_children(&self) -> Vec<TreePath> {
        let parents: BTreeSet<TreePath> = self
            .preserved
            .iter()
            .filter_map(TreePath::parent)
            .collect();
        parents.into_iter().collect()
    }

    pub fn is_parent_closed(&self) -> bool {
        self.first_orphan().is_none()
    }

    fn first_orphan(&self) -> Option<&TreePath> {
        self.preserved
            .iter()
            .find(|p| p.parent().is_some_and(|q| !self.preserved.contains(&q)))
    }

    /// One path per line, preceded by a `# tau=...` comment.
    pub fn to_text(&self) -> String {
        let mut s = format!("# tau={}\n", self.threshold);
        for p in &self.preserved {
            s.push_str(&p.to_string());
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let mut threshold = f64::NAN;
        let mut paths = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(v) = comment.trim().strip_prefix("tau=") {
                    threshold = v.trim().parse().unwrap_or(f64::NAN);
                }
                continue;
            }
            let path = line.parse::<TreePath>().map_err(|reason| Error::Parse {
                path: origin.to_string(),
                line: lineno + 1,
                reason,
            })?;
            paths.push(path);
        }
        PruneMask::from_paths(paths, threshold)
    }

    /// Checks that every path fits the scale ranges of `banks`.
    pub fn check_banks(&self, banks: &FilterBanks) -> Result<()> {
        let (js, jt) = (banks.spatial_scales(), banks.temporal_scales());
        for p in &self.preserved {
            if p.pairs().iter().any(|&(a, b)| a > js || b > jt) {
                return Err(Error::Shape(format!(
                    "mask path {p} exceeds the bank scales ({js}, {jt})"
                )));
            }
        }
        Ok(())
    }
}

/// Evaluates the preserved nodes of the tree down to `max_depth`.
pub(crate) fn forward_to_depth(
    x: &Signal,
    mask: &PruneMask,
    banks: &FilterBanks,
    max_depth: usize,
) -> BTreeMap<TreePath, Signal> {
    let mut nodes = BTreeMap::new();
    let mut frontier = vec![(TreePath::root(), x.clone())];
    for _ in 0..max_depth {
        let mut next = Vec::new();
        for (path, z) in &frontier {
            let wanted = mask.children_of(path);
            if wanted.is_empty() {
                continue;
            }
            for ((js, jt), child) in scatter_selected(z, banks, &wanted) {
                next.push((path.child(js, jt), child));
            }
        }
        nodes.extend(frontier);
        frontier = next;
    }
    nodes.extend(frontier);
    nodes
}

/// The tree restricted to `mask`; children of pruned nodes are never computed.
pub fn forward_pruned(x: &Signal, mask: &PruneMask, banks: &FilterBanks) -> Result<ScatteringTree> {
    banks.check_signal(x)?;
    mask.check_banks(banks)?;
    let layers = mask.max_depth();
    Ok(ScatteringTree {
        nodes: forward_to_depth(x, mask, banks, layers),
        layers,
    })
}

/// Mean child-to-parent energy ratios of the candidate children of the
/// deepest preserved layer, one entry per candidate, summed over samples in
/// sample order.
fn layer_ratio_means(
    training: &[Signal],
    mask: &PruneMask,
    banks: &FilterBanks,
    depth: usize,
    candidates: &[(TreePath, Vec<(usize, usize)>)],
) -> Vec<f64> {
    let per_sample: Vec<Vec<f64>> = par::map(training, |x| {
        let nodes = forward_to_depth(x, mask, banks, depth);
        let mut ratios = Vec::new();
        for (parent, pairs) in candidates {
            let z = &nodes[parent];
            let parent_norm = z.norm();
            for (_, child) in scatter_selected(z, banks, pairs) {
                ratios.push(if parent_norm > 0.0 {
                    child.norm() / parent_norm
                } else {
                    0.0
                });
            }
        }
        ratios
    });
    let width = per_sample.first().map_or(0, Vec::len);
    let mut sums = vec![0.0; width];
    for ratios in &per_sample {
        for (s, r) in sums.iter_mut().zip(ratios) {
            *s += r;
        }
    }
    let count = training.len() as f64;
    sums.into_iter().map(|s| s / count).collect()
}

/// Keeps a child when its parent is kept and the training-set mean of
/// `||child|| / ||parent||` is at least `tau`. A sample whose parent has zero
/// energy contributes ratio 0.
pub fn compute_prune_mask(
    training: &[Signal],
    banks: &FilterBanks,
    layers: usize,
    tau: f64,
) -> Result<PruneMask> {
    if training.is_empty() {
        return Err(Error::Precondition("pruning needs at least one training signal".into()));
    }
    if !(tau >= 0.0) {
        return Err(Error::config("tau", format!("must be non-negative, got {tau}")));
    }
    if layers == 0 {
        return Err(Error::Precondition("a scattering tree needs at least one layer".into()));
    }
    for x in training {
        banks.check_signal(x)?;
    }
    let pairs: Vec<_> = all_pairs(banks).collect();
    let mut mask = PruneMask {
        preserved: BTreeSet::from([TreePath::root()]),
        threshold: tau,
    };
    for depth in 0..layers {
        let candidates: Vec<(TreePath, Vec<(usize, usize)>)> = mask
            .preserved
            .iter()
            .filter(|p| p.depth() == depth)
            .map(|p| (p.clone(), pairs.clone()))
            .collect();
        if candidates.is_empty() {
            break;
        }
        let means = layer_ratio_means(training, &mask, banks, depth, &candidates);
        let mut k = 0;
        for (parent, pairs) in &candidates {
            for &(js, jt) in pairs {
                if means[k] >= tau {
                    mask.preserved.insert(parent.child(js, jt));
                }
                k += 1;
            }
        }
    }
    Ok(mask)
}

/// Whether a feature node comes from the fixed wavelet tree or from a
/// trainable complementary filter. Fixed nodes sort first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeKind {
    Fixed,
    Trainable,
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeKind::Fixed => "fixed",
            NodeKind::Trainable => "trainable",
        })
    }
}

/// Canonical order of the pooled node blocks in a feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLayout {
    pub entries: Vec<(NodeKind, TreePath)>,
    pub channels: usize,
    pub vertices: usize,
}

impl FeatureLayout {
    pub fn block_len(&self) -> usize {
        self.channels * self.vertices
    }

    pub fn feature_len(&self) -> usize {
        self.entries.len() * self.block_len()
    }

    /// Sidecar text: one `kind<TAB>path` line per node block.
    pub fn to_manifest(&self) -> String {
        let mut s = format!(
            "# channels={} vertices={} block={}\n",
            self.channels,
            self.vertices,
            self.block_len()
        );
        for (kind, path) in &self.entries {
            s.push_str(&format!("{kind}\t{path}\n"));
        }
        s
    }
}

/// Temporal means of the nodes, concatenated fixed-first and by path.
/// Returns the feature vector and its layout.
pub fn assemble_features(nodes: &[(NodeKind, TreePath, &Signal)]) -> Result<(Vec<f64>, FeatureLayout)> {
    let first = nodes
        .first()
        .ok_or_else(|| Error::Precondition("no nodes to assemble".into()))?;
    let dim = first.2.dim();
    if let Some(bad) = nodes.iter().find(|n| n.2.dim() != dim) {
        return Err(Error::Shape(format!(
            "node {} has shape {:?}, expected {dim:?}",
            bad.1,
            bad.2.dim()
        )));
    }
    let mut order: Vec<usize> = (0..nodes.len()).collect();
    order.sort_by(|&a, &b| (nodes[a].0, &nodes[a].1).cmp(&(nodes[b].0, &nodes[b].1)));
    let mut features = Vec::with_capacity(nodes.len() * dim.0 * dim.1);
    let mut entries = Vec::with_capacity(nodes.len());
    for i in order {
        let (kind, path, signal) = &nodes[i];
        features.extend(signal.temporal_mean());
        entries.push((*kind, path.clone()));
    }
    Ok((
        features,
        FeatureLayout {
            entries,
            channels: dim.0,
            vertices: dim.1,
        },
    ))
}
