//! Browser bindings for three small views of the model on the 21-joint hand:
//! a wavelet and its complement applied to a joint signal, the spectral
//! response of the wavelet bank, and how many tree nodes survive pruning at
//! a given threshold.
//!
//! Inputs from the page are clamped into range rather than rejected, so every
//! call returns something drawable.

use ndarray::{Array1, Array2};
use stgcsn::data::{synth_generate, Preprocess, SynthKind, SynthSpec};
use stgcsn::filterbank::FilterBanks;
use stgcsn::graph::{lazy_random_walk, Graph};
use stgcsn::scattering::compute_prune_mask;
use stgcsn::training::Samples;
use wasm_bindgen::prelude::*;

pub const JOINTS: usize = 21;
pub const MAX_SCALE: usize = 8;
const PRUNE_FRAMES: usize = 16;

/// Edge endpoints of the hand skeleton, flattened `[a0, b0, a1, b1, ...]`.
#[wasm_bindgen]
pub fn hand_edges() -> Vec<u32> {
    let a = Graph::hand_skeleton().adjacency().clone();
    let mut out = Vec::new();
    for i in 0..JOINTS {
        for j in i + 1..JOINTS {
            if a[[i, j]] > 0.0 {
                out.extend([i as u32, j as u32]);
            }
        }
    }
    out
}

/// Input signals the page can pick from.
fn joint_signal(kind: &str, joint: usize) -> Array1<f64> {
    let graph = Graph::hand_skeleton();
    match kind {
        // One side of the skeleton's two-colouring: the pattern every
        // diffusion wavelet removes entirely.
        "side" => {
            let sides = graph.bipartition().expect("the hand is a tree");
            sides.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect()
        }
        // Distance from the wrist in bones: smooth along each finger.
        "ramp" => {
            let a = graph.adjacency();
            let mut depth = vec![f64::INFINITY; JOINTS];
            depth[0] = 0.0;
            let mut queue = std::collections::VecDeque::from([0]);
            while let Some(v) = queue.pop_front() {
                for u in 0..JOINTS {
                    if a[[v, u]] > 0.0 && depth[u].is_infinite() {
                        depth[u] = depth[v] + 1.0;
                        queue.push_back(u);
                    }
                }
            }
            Array1::from(depth)
        }
        _ => {
            let mut x = Array1::zeros(JOINTS);
            x[joint.min(JOINTS - 1)] = 1.0;
            x
        }
    }
}

/// `H_j x` followed by `(I - H_j) x` for the chosen signal (`impulse`,
/// `side` or `ramp`), then the input itself: `3 * 21` values.
#[wasm_bindgen]
pub fn wavelet_pair(kind: &str, joint: usize, scale: usize) -> Vec<f64> {
    let scale = scale.clamp(1, MAX_SCALE);
    let shift = lazy_random_walk(&Graph::hand_skeleton())
        .dyadic_powers(scale)
        .expect("scale is at least one");
    let p = shift.powers();
    let h: Array2<f64> = &p[scale - 1] - &p[scale];
    let x = joint_signal(kind, joint);
    let band = h.dot(&x);
    let rest = &x - &band;
    band.iter().chain(rest.iter()).chain(x.iter()).copied().collect()
}

/// Frequency response of scales `1..=scales` on `points` eigenvalues spread
/// over `[0, 1]`: `h_j(l) = l^(2^(j-1)) - l^(2^j)`, one row per scale,
/// followed by the same rows for `1 - h_j`.
#[wasm_bindgen]
pub fn spectral_response(scales: usize, points: usize) -> Vec<f64> {
    let scales = scales.clamp(1, MAX_SCALE);
    let points = points.clamp(2, 1024);
    let grid: Vec<f64> = (0..points).map(|i| i as f64 / (points - 1) as f64).collect();
    let mut out = Vec::with_capacity(2 * scales * points);
    for complement in [false, true] {
        for j in 1..=scales {
            for &l in &grid {
                let h = l.powi(1 << (j - 1)) - l.powi(1 << j);
                out.push(if complement { 1.0 - h } else { h });
            }
        }
    }
    out
}

/// Nodes kept per tree layer (root first) when a two-layer tree with `js`
/// spatial and `jt` temporal scales is pruned at `tau` on a small synthetic
/// training set drawn from `seed`.
#[wasm_bindgen]
pub fn prune_counts(tau: f64, js: usize, jt: usize, seed: u64) -> Vec<u32> {
    let tau = if tau.is_finite() { tau.max(0.0) } else { 0.0 };
    let js = js.clamp(1, 6);
    let jt = jt.clamp(1, 4);
    let spec = SynthSpec::new(SynthKind::DisjointJoints, 4, PRUNE_FRAMES);
    let prep = Preprocess {
        clip_len: PRUNE_FRAMES,
        sample_len: PRUNE_FRAMES,
        wrist_center: false,
    };
    let samples = synth_generate(&spec, 2, seed)
        .and_then(|d| Samples::from_dataset(&d, &prep))
        .expect("fixed synthetic spec is valid");
    let banks = FilterBanks::for_skeleton(&spec.skeleton, PRUNE_FRAMES, js, jt).expect("scales clamped");
    let mask = compute_prune_mask(&samples.signals, &banks, 2, tau).expect("inputs validated");
    let mut counts: Vec<u32> = mask.count_by_depth().into_iter().map(|c| c as u32).collect();
    counts.resize(3, 0);
    counts
}
