//! Skeleton sequences: text loader and writer, preprocessing, split
//! manifests and synthetic datasets.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{s, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::par;
use crate::signal::Signal;

pub const HAND_JOINTS: usize = 21;
pub const COORDS: usize = 3;
pub const DEFAULT_CLIP_LEN: usize = 200;
pub const DEFAULT_SAMPLE_LEN: usize = 67;

/// `frames x joints x 3` joint coordinates with a class label.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    pub frames: Array3<f64>,
    pub label: usize,
    pub id: String,
}

impl SkeletonSequence {
    pub fn len(&self) -> usize {
        self.frames.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn joints(&self) -> usize {
        self.frames.dim().1
    }
}

/// Parses one sequence. Each non-blank line is a frame: `joints * 3` reals in
/// joint-major order (`x0 y0 z0 x1 ...`), optionally preceded by an integer
/// frame index.
pub fn parse_sequence(text: &str, joints: usize, origin: &str) -> Result<Array3<f64>> {
    let width = joints * COORDS;
    let mut values = Vec::new();
    let mut frames = 0;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| Error::Parse {
            path: origin.to_string(),
            line: lineno + 1,
            reason,
        };
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let coords = if tokens.len() == width + 1 {
            tokens[0]
                .parse::<u64>()
                .map_err(|_| err(format!("expected an integer frame index, got `{}`", tokens[0])))?;
            &tokens[1..]
        } else if tokens.len() == width {
            &tokens[..]
        } else {
            return Err(err(format!(
                "expected {width} coordinates (optionally after a frame index), got {} fields",
                tokens.len()
            )));
        };
        for tok in coords {
            let v: f64 = tok.parse().map_err(|_| err(format!("`{tok}` is not a number")))?;
            if !v.is_finite() {
                return Err(err(format!("non-finite coordinate `{tok}`")));
            }
            values.push(v);
        }
        frames += 1;
    }
    if frames == 0 {
        return Err(Error::Parse {
            path: origin.to_string(),
            line: 0,
            reason: "no frames".into(),
        });
    }
    Ok(Array3::from_shape_vec((frames, joints, COORDS), values).expect("row count checked"))
}

pub fn load_sequence(path: &Path, joints: usize, label: usize) -> Result<SkeletonSequence> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let frames = parse_sequence(&text, joints, &path.display().to_string())?;
    Ok(SkeletonSequence {
        frames,
        label,
        id: path
            .file_stem()
            .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned()),
    })
}

/// Text form read back bit-exactly by [`parse_sequence`].
pub fn format_sequence(frames: &Array3<f64>) -> String {
    let mut out = String::new();
    for (t, frame) in frames.outer_iter().enumerate() {
        write!(out, "{t}").unwrap();
        for v in frame.iter() {
            write!(out, " {v:?}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_sequence(path: &Path, frames: &Array3<f64>) -> Result<()> {
    fs::write(path, format_sequence(frames)).map_err(|e| Error::io(path, e))
}

/// Keeps the first `target` frames, or repeats the last frame up to `target`.
pub fn clip_pad(seq: &SkeletonSequence, target: usize) -> SkeletonSequence {
    let len = seq.len();
    let frames = if len >= target {
        seq.frames.slice(s![..target, .., ..]).to_owned()
    } else {
        let mut out = Array3::zeros((target, seq.joints(), COORDS));
        out.slice_mut(s![..len, .., ..]).assign(&seq.frames);
        let last = seq.frames.index_axis(Axis(0), len - 1);
        for t in len..target {
            out.index_axis_mut(Axis(0), t).assign(&last);
        }
        out
    };
    SkeletonSequence {
        frames,
        label: seq.label,
        id: seq.id.clone(),
    }
}

/// `floor(k * len / count)` for `k = 0..count`.
pub fn uniform_sample_indices(len: usize, count: usize) -> Result<Vec<usize>> {
    if count == 0 || count > len {
        return Err(Error::InvalidSize(format!(
            "cannot sample {count} frames from {len}"
        )));
    }
    Ok((0..count).map(|k| k * len / count).collect())
}

pub fn uniform_sample(seq: &SkeletonSequence, count: usize) -> Result<SkeletonSequence> {
    let idx = uniform_sample_indices(seq.len(), count)?;
    Ok(SkeletonSequence {
        frames: seq.frames.select(Axis(0), &idx),
        label: seq.label,
        id: seq.id.clone(),
    })
}

/// Subtracts joint 0 from every joint, frame by frame.
pub fn wrist_center(seq: &SkeletonSequence) -> SkeletonSequence {
    let mut frames = seq.frames.clone();
    for mut frame in frames.outer_iter_mut() {
        let wrist = frame.row(0).to_owned();
        for mut joint in frame.rows_mut() {
            joint -= &wrist;
        }
    }
    SkeletonSequence {
        frames,
        label: seq.label,
        id: seq.id.clone(),
    }
}

/// Clip/pad, uniform sampling and optional wrist centering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preprocess {
    pub clip_len: usize,
    pub sample_len: usize,
    pub wrist_center: bool,
}

impl Default for Preprocess {
    fn default() -> Self {
        Preprocess {
            clip_len: DEFAULT_CLIP_LEN,
            sample_len: DEFAULT_SAMPLE_LEN,
            wrist_center: false,
        }
    }
}

impl Preprocess {
    pub fn apply(&self, seq: &SkeletonSequence) -> Result<SkeletonSequence> {
        let clipped = clip_pad(seq, self.clip_len);
        let sampled = uniform_sample(&clipped, self.sample_len)?;
        Ok(if self.wrist_center {
            wrist_center(&sampled)
        } else {
            sampled
        })
    }
}

/// Coordinate `c` of joint `n` at frame `t` goes to channel `c`, row `n`,
/// column `t`.
pub fn to_signal(seq: &SkeletonSequence, joints: usize, steps: usize) -> Result<Signal> {
    let (t, n, c) = seq.frames.dim();
    if n != joints || t != steps || c != COORDS {
        return Err(Error::Shape(format!(
            "sequence {} is {t} frames x {n} joints x {c}, expected {steps} x {joints} x {COORDS}",
            seq.id
        )));
    }
    Signal::new(seq.frames.view().permuted_axes([2, 1, 0]).to_owned())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sequences: Vec<SkeletonSequence>,
    pub class_count: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(sequences: Vec<SkeletonSequence>, class_count: usize, split: Split) -> Result<Self> {
        if sequences.is_empty() {
            return Err(Error::Precondition("dataset is empty".into()));
        }
        if let Some(bad) = sequences.iter().find(|s| s.label >= class_count) {
            return Err(Error::Label {
                label: bad.label,
                classes: class_count,
            });
        }
        Ok(Dataset {
            sequences,
            class_count,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.sequences.iter().map(|s| s.label).collect()
    }

    /// Preprocessed root signals, in dataset order.
    pub fn signals(&self, prep: &Preprocess, joints: usize) -> Result<Vec<Signal>> {
        par::map(&self.sequences, |s| to_signal(&prep.apply(s)?, joints, prep.sample_len))
            .into_iter()
            .collect()
    }
}

/// `relative/path<TAB>label` lines; blank lines and `#` comments ignored.
pub fn parse_manifest(text: &str, origin: &str) -> Result<Vec<(PathBuf, usize)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let err = |reason: String| Error::Parse {
            path: origin.to_string(),
            line: lineno + 1,
            reason,
        };
        let (path, label) = line
            .split_once('\t')
            .ok_or_else(|| err("expected `path<TAB>label`".into()))?;
        let label = label
            .trim()
            .parse::<usize>()
            .map_err(|_| err(format!("bad label `{label}`")))?;
        out.push((PathBuf::from(path), label));
    }
    Ok(out)
}

/// Loads every sequence listed in `manifest`, resolving paths against `root`.
/// With `class_count` unset it is one more than the largest label.
pub fn load_dataset(
    root: &Path,
    manifest: &Path,
    joints: usize,
    split: Split,
    class_count: Option<usize>,
) -> Result<Dataset> {
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let entries = parse_manifest(&text, &manifest.display().to_string())?;
    if entries.is_empty() {
        return Err(Error::Format {
            path: manifest.to_path_buf(),
            reason: "manifest lists no sequences".into(),
        });
    }
    let sequences: Vec<SkeletonSequence> =
        par::map(&entries, |(rel, label)| load_sequence(&root.join(rel), joints, *label))
            .into_iter()
            .collect::<Result<_>>()?;
    let classes = class_count.unwrap_or_else(|| entries.iter().map(|e| e.1).max().unwrap_or(0) + 1);
    Dataset::new(sequences, classes, split)
}

/// Writes each sequence to `dir/<subdir>/<id>.txt` and a manifest
/// `dir/<manifest_name>` with paths relative to `dir`.
pub fn write_dataset(dir: &Path, subdir: &str, manifest_name: &str, data: &Dataset) -> Result<PathBuf> {
    let seq_dir = dir.join(subdir);
    fs::create_dir_all(&seq_dir).map_err(|e| Error::io(&seq_dir, e))?;
    let mut manifest = String::new();
    for seq in &data.sequences {
        let rel = format!("{subdir}/{}.txt", seq.id);
        write_sequence(&dir.join(&rel), &seq.frames)?;
        writeln!(manifest, "{rel}\t{}", seq.label).unwrap();
    }
    let path = dir.join(manifest_name);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Synthetic dataset families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    /// Class `k` moves the joints `j` with `j % classes == k`.
    DisjointJoints,
    /// Classes differ only by a component that every fixed diffusion wavelet
    /// annihilates and that `I - H` passes unchanged.
    ComplementBand,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "disjoint" | "disjoint_joints" => Ok(SynthKind::DisjointJoints),
            "complement" | "complement_band" => Ok(SynthKind::ComplementBand),
            other => Err(Error::config(
                "synth_kind",
                format!("unknown synthetic family `{other}` (disjoint_joints, complement_band)"),
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub classes: usize,
    pub frames: usize,
    /// Standard deviation of the class-independent Gaussian background.
    pub noise: f64,
    /// Amplitude of the class-specific component.
    pub amplitude: f64,
    pub skeleton: Graph,
}

impl SynthSpec {
    pub fn new(kind: SynthKind, classes: usize, frames: usize) -> Self {
        SynthSpec {
            kind,
            classes,
            frames,
            noise: 1.0,
            amplitude: 1.0,
            skeleton: Graph::hand_skeleton(),
        }
    }
}

/// Generates `n_per_class` sequences per class, interleaved by class.
///
/// For [`SynthKind::ComplementBand`] the skeleton must be bipartite. The
/// class component is `a_k * u * w^T` on every channel, where `u` is the
/// indicator of one side of the bipartition and `w` is the zero-mean
/// alternating sequence over frames. Both lie in the span of the
/// eigenvectors of the lazy walk with eigenvalues 1 and 0, on which every
/// diffusion wavelet vanishes, and `w` has zero temporal mean. Sample `i` of
/// every class shares one background draw, so fixed-tree features do not
/// depend on the class at all.
pub fn synth_generate(spec: &SynthSpec, n_per_class: usize, seed: u64) -> Result<Dataset> {
    if spec.classes == 0 || n_per_class == 0 {
        return Err(Error::config("synth_classes", "classes and samples per class must be positive"));
    }
    if spec.frames < 2 {
        return Err(Error::config("synth_frames", "need at least two frames"));
    }
    let joints = spec.skeleton.n_vertices();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise)
        .map_err(|e| Error::config("synth_noise", e.to_string()))?;
    let mut sequences = Vec::with_capacity(spec.classes * n_per_class);
    match spec.kind {
        SynthKind::DisjointJoints => {
            if spec.classes > joints {
                return Err(Error::config("synth_classes", "more classes than joints"));
            }
            for i in 0..n_per_class {
                for k in 0..spec.classes {
                    let mut frames = Array3::zeros((spec.frames, joints, COORDS));
                    frames.mapv_inplace(|_: f64| noise.sample(&mut rng));
                    for j in (k..joints).step_by(spec.classes) {
                        for c in 0..COORDS {
                            let freq = rng.random_range(1.0..3.0);
                            let phase = rng.random_range(0.0..std::f64::consts::TAU);
                            for t in 0..spec.frames {
                                let angle = std::f64::consts::TAU * freq * t as f64 / spec.frames as f64;
                                frames[[t, j, c]] += spec.amplitude * (angle + phase).sin();
                            }
                        }
                    }
                    sequences.push(SkeletonSequence {
                        frames,
                        label: k,
                        id: format!("c{k:02}_s{i:04}"),
                    });
                }
            }
        }
        SynthKind::ComplementBand => {
            let sides = spec.skeleton.bipartition().ok_or_else(|| {
                Error::config("skeleton", "complement-band data needs a bipartite skeleton")
            })?;
            let alternating: Vec<f64> = (0..spec.frames)
                .map(|t| if t % 2 == 0 { 1.0 } else { -1.0 })
                .collect();
            let mean = alternating.iter().sum::<f64>() / spec.frames as f64;
            let w: Vec<f64> = alternating.iter().map(|a| a - mean).collect();
            for i in 0..n_per_class {
                let mut base = Array3::zeros((spec.frames, joints, COORDS));
                base.mapv_inplace(|_: f64| noise.sample(&mut rng));
                for k in 0..spec.classes {
                    let side = k % 2 == 0;
                    let level = spec.amplitude * (1 + k / 2) as f64;
                    let mut frames = base.clone();
                    for (j, _) in sides.iter().enumerate().filter(|(_, &s)| s == side) {
                        for (t, wt) in w.iter().enumerate() {
                            for c in 0..COORDS {
                                frames[[t, j, c]] += level * wt;
                            }
                        }
                    }
                    sequences.push(SkeletonSequence {
                        frames,
                        label: k,
                        id: format!("c{k:02}_s{i:04}"),
                    });
                }
            }
        }
    }
    Dataset::new(sequences, spec.classes, Split::Train)
}
