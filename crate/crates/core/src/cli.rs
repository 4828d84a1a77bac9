//! The `stgcsn` command-line tool.
//!
//! Settings come from built-in defaults, then `--config FILE`, then each
//! `--set key=value`, then the dedicated flags. Every command resolves and
//! validates its configuration and reads all of its inputs before writing
//! anything.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::complementary::{AgentParams, Variant};
use crate::config::RunConfig;
use crate::data::{load_dataset, synth_generate, write_dataset, Split, SynthSpec};
use crate::error::{Error, Result};
use crate::filterbank::FilterBanks;
use crate::graph::Graph;
use crate::io;
use crate::scattering::{compute_prune_mask, full_tree_size, PruneMask};
use crate::training::{
    evaluate, tiny_gradcheck, train, Network, OptimizerKind, Samples, GRADCHECK_FLOOR,
};

/// Relative gradient error at or above which `gradcheck` fails.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "stgcsn", version, about = "Spatio-temporal graph scattering with trainable complementary filters")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute the pruned tree on the training split and report node counts.
    Prune(Common),
    /// Train a model; writes checkpoint.bin, train.log, mask.txt, config.txt.
    Train(Common),
    /// Evaluate a checkpoint on the test split.
    Eval(Common),
    /// Write pooled features of the train (and test) split.
    Extract(Common),
    /// Finite-difference check of the gradients on a tiny random problem.
    Gradcheck(Common),
    /// Train and evaluate all four variants with identical settings.
    Ablate(Common),
    /// Generate a synthetic train/test dataset.
    Synth(Common),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// key = value configuration file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override any configuration key, e.g. `--set epochs=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long, value_name = "DIR")]
    pub data_root: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub train_manifest: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub test_manifest: Option<PathBuf>,
    /// Skeleton edge list; defaults to the packaged 21-joint hand.
    #[arg(long, value_name = "PATH")]
    pub skeleton: Option<PathBuf>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub js: Option<usize>,
    #[arg(long)]
    pub jt: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    /// full, fixed_only, trainable_only or no_complement.
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// sgd or adam.
    #[arg(long)]
    pub optimizer: Option<OptimizerKind>,
    /// Use an existing mask instead of pruning.
    #[arg(long, value_name = "PATH")]
    pub mask: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Single-threaded, byte-reproducible run.
    #[arg(long)]
    pub deterministic: bool,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

impl Common {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        if let Some(path) = &self.config {
            c.apply_text(&io::read_text(path)?, &path.display().to_string())?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::config(kv.as_str(), "expected --set key=value"))?;
            c.set(k.trim(), v.trim())?;
        }
        let t = &mut c.train;
        macro_rules! flag {
            ($src:ident => $dst:expr) => {
                if let Some(v) = self.$src.clone() {
                    $dst = v;
                }
            };
        }
        flag!(tau => t.tau);
        flag!(js => t.spatial_scales);
        flag!(jt => t.temporal_scales);
        flag!(layers => t.layers);
        flag!(variant => t.variant);
        flag!(seed => t.seed);
        flag!(epochs => t.epochs);
        flag!(lr => t.learning_rate);
        flag!(optimizer => t.optimizer);
        flag!(out => c.out);
        for (src, dst) in [
            (&self.data_root, &mut c.data_root),
            (&self.train_manifest, &mut c.train_manifest),
            (&self.test_manifest, &mut c.test_manifest),
            (&self.skeleton, &mut c.skeleton),
            (&self.mask, &mut c.mask),
            (&self.checkpoint, &mut c.checkpoint),
        ] {
            if src.is_some() {
                dst.clone_from(src);
            }
        }
        c.deterministic |= self.deterministic;
        c.validate()?;
        Ok(c)
    }
}

/// What a command reports on success.
#[derive(Debug, Default)]
pub struct Outcome {
    pub stdout: String,
    /// Non-zero when the command ran but its check failed.
    pub exit_code: u8,
}

fn skeleton(c: &RunConfig) -> Result<Graph> {
    match &c.skeleton {
        Some(p) => Graph::parse_edge_list(&io::read_text(p)?, &p.display().to_string()),
        None => Ok(Graph::hand_skeleton()),
    }
}

fn data_root(c: &RunConfig, manifest: &Path) -> PathBuf {
    c.data_root
        .clone()
        .unwrap_or_else(|| manifest.parent().map(Path::to_path_buf).unwrap_or_default())
}

fn load_split(c: &RunConfig, graph: &Graph, split: Split, classes: Option<usize>) -> Result<Option<Samples>> {
    let manifest = match split {
        Split::Train => &c.train_manifest,
        Split::Test => &c.test_manifest,
    };
    let Some(manifest) = manifest else {
        return Ok(None);
    };
    let data = load_dataset(&data_root(c, manifest), manifest, graph.n_vertices(), split, classes)?;
    Samples::from_dataset(&data, &c.preprocess()).map(Some)
}

fn require_train(c: &RunConfig, graph: &Graph) -> Result<Samples> {
    load_split(c, graph, Split::Train, c.classes)?
        .ok_or_else(|| Error::config("train_manifest", "this command needs a training manifest"))
}

fn banks(c: &RunConfig, graph: &Graph) -> Result<FilterBanks> {
    let children = c.train.spatial_scales * c.train.temporal_scales;
    match full_tree_size(children, c.train.layers) {
        Some(n) if n <= c.node_cap => {}
        other => {
            return Err(Error::TreeTooLarge {
                nodes: other.unwrap_or(usize::MAX),
                cap: c.node_cap,
            })
        }
    }
    FilterBanks::for_skeleton(graph, c.sample_len, c.train.spatial_scales, c.train.temporal_scales)
}

fn mask(c: &RunConfig, banks: &FilterBanks, train: Option<&Samples>) -> Result<PruneMask> {
    let mask = match (&c.mask, train) {
        (Some(p), _) => io::read_mask(p)?,
        (None, Some(t)) => compute_prune_mask(&t.signals, banks, c.train.layers, c.train.tau)?,
        (None, None) => return Err(Error::config("mask", "no mask file and no training manifest to prune on")),
    };
    mask.check_banks(banks)?;
    if mask.max_depth() > c.train.layers {
        return Err(Error::config(
            "layers",
            format!("mask reaches depth {} but layers = {}", mask.max_depth(), c.train.layers),
        ));
    }
    Ok(mask)
}

fn channels(samples: &Samples) -> usize {
    samples.signals[0].channels()
}

fn checkpoint_path(c: &RunConfig) -> PathBuf {
    c.checkpoint.clone().unwrap_or_else(|| c.out.join("checkpoint.bin"))
}

pub fn cmd_prune(c: &RunConfig) -> Result<Outcome> {
    let graph = skeleton(c)?;
    let banks = banks(c, &graph)?;
    let train = require_train(c, &graph)?;
    let mask = compute_prune_mask(&train.signals, &banks, c.train.layers, c.train.tau)?;
    let before = full_tree_size(banks.children_per_node(), c.train.layers).expect("checked against the cap");
    let mut report = String::new();
    writeln!(report, "tau\t{}", c.train.tau).unwrap();
    writeln!(report, "nodes_before\t{before}").unwrap();
    writeln!(report, "nodes_after\t{}", mask.len()).unwrap();
    for (depth, n) in mask.count_by_depth().iter().enumerate() {
        writeln!(report, "layer_{depth}\t{n}").unwrap();
    }
    io::write_mask(&c.out.join("mask.txt"), &mask)?;
    io::write_text(&c.out.join("prune_report.txt"), &report)?;
    Ok(Outcome {
        stdout: report,
        exit_code: 0,
    })
}

pub fn cmd_train(c: &RunConfig) -> Result<Outcome> {
    let graph = skeleton(c)?;
    let banks = banks(c, &graph)?;
    let train_set = require_train(c, &graph)?;
    let val = load_split(c, &graph, Split::Test, Some(train_set.classes))?;
    let mask = mask(c, &banks, Some(&train_set))?;
    let net = Network::new(banks, mask, c.train.variant, channels(&train_set))?;
    let out = train(&net, &train_set, val.as_ref(), &c.train)?;
    io::write_checkpoint(&c.out.join("checkpoint.bin"), &out.model)?;
    io::write_text(&c.out.join("train.log"), &io::format_log(&out.log))?;
    io::write_mask(&c.out.join("mask.txt"), &net.mask)?;
    io::write_text(&c.out.join("config.txt"), &c.to_text())?;
    let last = out.log.last().expect("at least one epoch");
    let mut s = format!(
        "variant {}\nnodes {}\nparameters {}\nfinal_loss {:.6}\ntrain_accuracy {:.4}\n",
        c.train.variant,
        net.layout().entries.len(),
        out.model.params.parameter_count(),
        last.loss,
        last.train_acc
    );
    if let Some(acc) = out.log[out.chosen_epoch - 1].val_acc {
        writeln!(s, "val_accuracy {acc:.4} (epoch {})", out.chosen_epoch).unwrap();
    }
    Ok(Outcome {
        stdout: s,
        exit_code: 0,
    })
}

pub fn cmd_eval(c: &RunConfig) -> Result<Outcome> {
    let graph = skeleton(c)?;
    let banks = banks(c, &graph)?;
    let mask_path = c.mask.clone().unwrap_or_else(|| c.out.join("mask.txt"));
    let mask = io::read_mask(&mask_path)?;
    mask.check_banks(&banks)?;
    let model = io::read_checkpoint(&checkpoint_path(c))?;
    let classes = c.classes.unwrap_or(model.params.head.classes());
    let test = load_split(c, &graph, Split::Test, Some(classes))?
        .ok_or_else(|| Error::config("test_manifest", "eval needs a test manifest"))?;
    let net = Network::new(banks, mask, c.train.variant, channels(&test))?;
    let eval = evaluate(&net, &model, &test)?;
    io::write_text(&c.out.join("confusion.txt"), &io::format_confusion(&eval.confusion))?;
    Ok(Outcome {
        stdout: format!("accuracy {:.4}\n", eval.accuracy),
        exit_code: 0,
    })
}

pub fn cmd_extract(c: &RunConfig) -> Result<Outcome> {
    let graph = skeleton(c)?;
    let banks = banks(c, &graph)?;
    let train_set = require_train(c, &graph)?;
    let test = load_split(c, &graph, Split::Test, Some(train_set.classes))?;
    let mask = mask(c, &banks, Some(&train_set))?;
    let net = Network::new(banks, mask, c.train.variant, channels(&train_set))?;
    // Trainable nodes use the checkpoint's agents when one is available and
    // the initial (fixed-shift) agents otherwise.
    let agents = if net.variant.has_trainable_nodes() && checkpoint_path(c).exists() {
        let model = io::read_checkpoint(&checkpoint_path(c))?;
        model.check(&net)?;
        model.params.agents
    } else {
        AgentParams::init(&net.mask, &net.banks, c.train.agent_floor)
    };
    let layout = net.layout();
    let mut splits = vec![("train", train_set)];
    splits.extend(test.map(|t| ("test", t)));
    let mut files = Vec::new();
    for (name, samples) in &splits {
        let records = samples
            .signals
            .iter()
            .enumerate()
            .map(|(i, x)| net.features(x, &agents).map(|f| (i, f)))
            .collect::<Result<Vec<_>>>()?;
        files.push((c.out.join(format!("features_{name}.bin")), records));
    }
    let mut s = String::new();
    for (path, records) in &files {
        io::write_feature_cache(path, records, &layout)?;
        writeln!(s, "{}\t{} samples x {} features", path.display(), records.len(), layout.feature_len()).unwrap();
    }
    Ok(Outcome {
        stdout: s,
        exit_code: 0,
    })
}

pub fn cmd_gradcheck(c: &RunConfig, layers: Option<usize>) -> Result<Outcome> {
    let layer_list = layers.map_or(vec![1, 2], |l| vec![l]);
    let mut s = String::new();
    let mut failed = false;
    for l in layer_list {
        let r = tiny_gradcheck(l, c.train.seed)?;
        let ok = r.passes(GRADCHECK_TOLERANCE);
        failed |= !ok;
        writeln!(
            s,
            "layers {l}: checked {} excluded {} max_rel_error {:.3e} (floor {GRADCHECK_FLOOR:e}) {}",
            r.checked,
            r.excluded,
            r.max_rel_error,
            if ok { "ok" } else { "FAIL" }
        )
        .unwrap();
        if !ok {
            writeln!(s, "  worst {}", r.worst).unwrap();
        }
    }
    Ok(Outcome {
        stdout: s,
        exit_code: if failed { 3 } else { 0 },
    })
}

pub fn cmd_ablate(c: &RunConfig) -> Result<Outcome> {
    let graph = skeleton(c)?;
    let banks = banks(c, &graph)?;
    let train_set = require_train(c, &graph)?;
    let test = load_split(c, &graph, Split::Test, Some(train_set.classes))?;
    let mask = mask(c, &banks, Some(&train_set))?;
    let eval_set = test.as_ref().unwrap_or(&train_set);
    let mut rows = Vec::new();
    for variant in Variant::ALL {
        let net = Network::new(banks.clone(), mask.clone(), variant, channels(&train_set))?;
        let config = crate::training::TrainConfig {
            variant,
            ..c.train.clone()
        };
        let out = train(&net, &train_set, None, &config)?;
        let acc = evaluate(&net, &out.model, eval_set)?.accuracy;
        rows.push((variant, net.layout().entries.len(), acc));
    }
    let split = if test.is_some() { "test" } else { "train" };
    let mut s = format!("{:<16}{:>8}{:>12}\n", "variant", "nodes", format!("{split}_acc"));
    for (v, nodes, acc) in &rows {
        writeln!(s, "{:<16}{:>8}{:>12.4}", v.to_string(), nodes, acc).unwrap();
    }
    io::write_text(&c.out.join("ablation.txt"), &s)?;
    Ok(Outcome {
        stdout: s,
        exit_code: 0,
    })
}

pub fn cmd_synth(c: &RunConfig) -> Result<Outcome> {
    let mut spec = SynthSpec::new(c.synth_kind, c.synth_classes, c.synth_frames);
    spec.noise = c.synth_noise;
    spec.amplitude = c.synth_amplitude;
    spec.skeleton = skeleton(c)?;
    let train_set = synth_generate(&spec, c.synth_train_per_class, c.train.seed)?;
    let mut test = synth_generate(&spec, c.synth_test_per_class, c.train.seed.wrapping_add(1))?;
    test.split = Split::Test;
    let a = write_dataset(&c.out, "train", "train.tsv", &train_set)?;
    let b = write_dataset(&c.out, "test", "test.tsv", &test)?;
    Ok(Outcome {
        stdout: format!("{}\t{} sequences\n{}\t{} sequences\n", a.display(), train_set.len(), b.display(), test.len()),
        exit_code: 0,
    })
}

fn dispatch(command: &Command) -> Result<Outcome> {
    let common = match command {
        Command::Prune(x)
        | Command::Train(x)
        | Command::Eval(x)
        | Command::Extract(x)
        | Command::Gradcheck(x)
        | Command::Ablate(x)
        | Command::Synth(x) => x,
    };
    let c = common.resolve()?;
    let run = || match command {
        Command::Prune(_) => cmd_prune(&c),
        Command::Train(_) => cmd_train(&c),
        Command::Eval(_) => cmd_eval(&c),
        Command::Extract(_) => cmd_extract(&c),
        Command::Gradcheck(_) => cmd_gradcheck(&c, common.layers),
        Command::Ablate(_) => cmd_ablate(&c),
        Command::Synth(_) => cmd_synth(&c),
    };
    #[cfg(feature = "parallel")]
    if c.deterministic {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::Precondition(format!("thread pool: {e}")))?;
        return pool.install(run);
    }
    run()
}

/// Parses `args` (including the program name), runs the command, prints its
/// report or error, and returns the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli.command) {
        Ok(outcome) => {
            print!("{}", outcome.stdout);
            outcome.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
