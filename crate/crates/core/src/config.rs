//! Run configuration: plain `key = value` lines, later overridden by
//! command-line flags.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::complementary::Variant;
use crate::data::{Preprocess, SynthKind, DEFAULT_CLIP_LEN, DEFAULT_SAMPLE_LEN};
use crate::error::{Error, Result};
use crate::scattering::DEFAULT_NODE_CAP;
use crate::training::{OptimizerKind, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data_root: Option<PathBuf>,
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    /// Edge-list file; the packaged hand skeleton when unset.
    pub skeleton: Option<PathBuf>,
    pub out: PathBuf,
    /// Existing mask to use instead of pruning on the training split.
    pub mask: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Inferred from the largest training label when unset.
    pub classes: Option<usize>,
    pub clip_len: usize,
    pub sample_len: usize,
    pub wrist_center: bool,
    /// Refuse trees with more potential nodes than this.
    pub node_cap: usize,
    pub deterministic: bool,
    pub synth_kind: SynthKind,
    pub synth_classes: usize,
    pub synth_train_per_class: usize,
    pub synth_test_per_class: usize,
    pub synth_frames: usize,
    pub synth_noise: f64,
    pub synth_amplitude: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            data_root: None,
            train_manifest: None,
            test_manifest: None,
            skeleton: None,
            out: PathBuf::from("out"),
            mask: None,
            checkpoint: None,
            classes: None,
            clip_len: DEFAULT_CLIP_LEN,
            sample_len: DEFAULT_SAMPLE_LEN,
            wrist_center: false,
            node_cap: DEFAULT_NODE_CAP,
            deterministic: false,
            synth_kind: SynthKind::ComplementBand,
            synth_classes: 4,
            synth_train_per_class: 10,
            synth_test_per_class: 10,
            synth_frames: DEFAULT_SAMPLE_LEN,
            synth_noise: 1.0,
            synth_amplitude: 1.0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::config(key, format!("expected true or false, got `{value}`"))),
    }
}

impl RunConfig {
    /// Sets one field by its config-file key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let path = || Some(PathBuf::from(value));
        match key {
            "lr" | "learning_rate" => t.learning_rate = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "optimizer" => t.optimizer = value.parse::<OptimizerKind>()?,
            "hidden" => t.hidden = parse(key, value)?,
            "variant" => t.variant = value.parse::<Variant>()?,
            "tau" => t.tau = parse(key, value)?,
            "js" => t.spatial_scales = parse(key, value)?,
            "jt" => t.temporal_scales = parse(key, value)?,
            "layers" => t.layers = parse(key, value)?,
            "agent_floor" => t.agent_floor = parse(key, value)?,
            "keep_best" => t.keep_best = parse_bool(key, value)?,
            "standardize" => t.standardize = parse_bool(key, value)?,
            "data_root" => self.data_root = path(),
            "train_manifest" => self.train_manifest = path(),
            "test_manifest" => self.test_manifest = path(),
            "skeleton" => self.skeleton = path(),
            "out" => self.out = PathBuf::from(value),
            "mask" => self.mask = path(),
            "checkpoint" => self.checkpoint = path(),
            "classes" => self.classes = Some(parse(key, value)?),
            "clip_len" => self.clip_len = parse(key, value)?,
            "sample_len" => self.sample_len = parse(key, value)?,
            "wrist_center" => self.wrist_center = parse_bool(key, value)?,
            "node_cap" => self.node_cap = parse(key, value)?,
            "deterministic" => self.deterministic = parse_bool(key, value)?,
            "synth_kind" => self.synth_kind = value.parse()?,
            "synth_classes" => self.synth_classes = parse(key, value)?,
            "synth_train_per_class" => self.synth_train_per_class = parse(key, value)?,
            "synth_test_per_class" => self.synth_test_per_class = parse(key, value)?,
            "synth_frames" => self.synth_frames = parse(key, value)?,
            "synth_noise" => self.synth_noise = parse(key, value)?,
            "synth_amplitude" => self.synth_amplitude = parse(key, value)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.into(),
                line: i + 1,
                reason: format!("expected `key = value`, got `{line}`"),
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply_text(text, origin)?;
        Ok(c)
    }

    /// Every field, in a form [`RunConfig::from_text`] reads back.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut s = String::new();
        let mut put = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        put("lr", format!("{:?}", t.learning_rate));
        put("epochs", t.epochs.to_string());
        put("batch_size", t.batch_size.to_string());
        put("seed", t.seed.to_string());
        put("optimizer", t.optimizer.to_string());
        put("hidden", t.hidden.to_string());
        put("variant", t.variant.to_string());
        put("tau", format!("{:?}", t.tau));
        put("js", t.spatial_scales.to_string());
        put("jt", t.temporal_scales.to_string());
        put("layers", t.layers.to_string());
        put("agent_floor", format!("{:?}", t.agent_floor));
        put("keep_best", t.keep_best.to_string());
        put("standardize", t.standardize.to_string());
        for (k, v) in [
            ("data_root", &self.data_root),
            ("train_manifest", &self.train_manifest),
            ("test_manifest", &self.test_manifest),
            ("skeleton", &self.skeleton),
            ("mask", &self.mask),
            ("checkpoint", &self.checkpoint),
        ] {
            if let Some(p) = v {
                put(k, p.display().to_string());
            }
        }
        put("out", self.out.display().to_string());
        if let Some(c) = self.classes {
            put("classes", c.to_string());
        }
        put("clip_len", self.clip_len.to_string());
        put("sample_len", self.sample_len.to_string());
        put("wrist_center", self.wrist_center.to_string());
        put("node_cap", self.node_cap.to_string());
        put("deterministic", self.deterministic.to_string());
        put(
            "synth_kind",
            match self.synth_kind {
                SynthKind::DisjointJoints => "disjoint_joints",
                SynthKind::ComplementBand => "complement_band",
            }
            .into(),
        );
        put("synth_classes", self.synth_classes.to_string());
        put("synth_train_per_class", self.synth_train_per_class.to_string());
        put("synth_test_per_class", self.synth_test_per_class.to_string());
        put("synth_frames", self.synth_frames.to_string());
        put("synth_noise", format!("{:?}", self.synth_noise));
        put("synth_amplitude", format!("{:?}", self.synth_amplitude));
        s
    }

    pub fn preprocess(&self) -> Preprocess {
        Preprocess {
            clip_len: self.clip_len,
            sample_len: self.sample_len,
            wrist_center: self.wrist_center,
        }
    }

    /// Numeric checks only; file existence is checked by the commands that
    /// read the files.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let positive = |field: &str, v: usize| {
            if v == 0 {
                Err(Error::config(field, "must be positive"))
            } else {
                Ok(())
            }
        };
        positive("clip_len", self.clip_len)?;
        positive("sample_len", self.sample_len)?;
        positive("node_cap", self.node_cap)?;
        positive("synth_classes", self.synth_classes)?;
        positive("synth_train_per_class", self.synth_train_per_class)?;
        positive("synth_test_per_class", self.synth_test_per_class)?;
        if self.sample_len < 2 {
            return Err(Error::config("sample_len", "the temporal graph needs at least two frames"));
        }
        if self.sample_len > self.clip_len {
            return Err(Error::config(
                "sample_len",
                format!("cannot sample {} frames from clips of {}", self.sample_len, self.clip_len),
            ));
        }
        if self.synth_frames < 2 {
            return Err(Error::config("synth_frames", "need at least two frames"));
        }
        if !(self.synth_noise >= 0.0 && self.synth_noise.is_finite()) {
            return Err(Error::config("synth_noise", "must be finite and non-negative"));
        }
        if !self.synth_amplitude.is_finite() {
            return Err(Error::config("synth_amplitude", "must be finite"));
        }
        if self.classes == Some(0) {
            return Err(Error::config("classes", "must be positive"));
        }
        Ok(())
    }
}
