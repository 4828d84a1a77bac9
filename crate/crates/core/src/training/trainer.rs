use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::complementary::{AgentParams, Variant, DEFAULT_AGENT_FLOOR};
use crate::data::{Dataset, Preprocess};
use crate::error::{Error, Result};
use crate::filterbank::FilterBanks;
use crate::graph::Graph;
use crate::par;
use crate::scattering::compute_prune_mask;
use crate::signal::Signal;
use crate::training::backward::{argmax, reduce, sample_grad, TrainableTrace};
use crate::training::mlp::{mlp_forward_trace, MlpHead};
use crate::training::model::{Model, Network, ParamSet, Standardizer};
use crate::training::optim::{Optimizer, OptimizerKind};

/// Labelled root signals.
#[derive(Debug, Clone)]
pub struct Samples {
    pub signals: Vec<Signal>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Samples {
    pub fn new(signals: Vec<Signal>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if signals.is_empty() {
            return Err(Error::Precondition("no samples".into()));
        }
        if signals.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} signals but {} labels",
                signals.len(),
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Label { label, classes });
        }
        let dim = signals[0].dim();
        if let Some(bad) = signals.iter().position(|x| x.dim() != dim) {
            return Err(Error::Shape(format!(
                "signal {bad} is {:?}, signal 0 is {dim:?}",
                signals[bad].dim()
            )));
        }
        Ok(Samples {
            signals,
            labels,
            classes,
        })
    }

    /// Preprocessed signals and labels of `data`.
    pub fn from_dataset(data: &Dataset, prep: &Preprocess) -> Result<Self> {
        let joints = data.sequences.first().map_or(0, |s| s.joints());
        Samples::new(data.signals(prep, joints)?, data.labels(), data.class_count)
    }

    pub fn len(&self) -> usize {
        self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub hidden: usize,
    pub variant: Variant,
    pub tau: f64,
    pub spatial_scales: usize,
    pub temporal_scales: usize,
    pub layers: usize,
    pub agent_floor: f64,
    /// Return the parameters of the epoch with the best validation accuracy
    /// instead of the last epoch.
    pub keep_best: bool,
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 32,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            hidden: 512,
            variant: Variant::Full,
            tau: 0.002,
            spatial_scales: 20,
            temporal_scales: 5,
            layers: 2,
            agent_floor: DEFAULT_AGENT_FLOOR,
            keep_best: false,
            standardize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(field, "must be positive"))
            }
        };
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("lr", "must be finite and non-negative"));
        }
        positive("batch_size", self.batch_size > 0)?;
        positive("hidden", self.hidden > 0)?;
        positive("js", self.spatial_scales > 0)?;
        positive("jt", self.temporal_scales > 0)?;
        positive("layers", self.layers > 0)?;
        positive("agent_floor", self.agent_floor > 0.0)?;
        if !(self.tau >= 0.0) {
            return Err(Error::config("tau", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

impl fmt::Display for EpochRecord {
    /// `epoch<TAB>loss<TAB>train_acc<TAB>val_acc`, `nan` without validation.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{:.6}\t{:.4}\t{}",
            self.epoch,
            self.loss,
            self.train_acc,
            self.val_acc.map_or("nan".to_string(), |v| format!("{v:.4}"))
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub chosen_epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub predictions: Vec<usize>,
}

/// Filter banks for `skeleton` and the sample length of `data`, and a mask
/// pruned on `data` at `config.tau`.
pub fn build_network(skeleton: &Graph, data: &Samples, config: &TrainConfig) -> Result<Network> {
    config.validate()?;
    let (channels, _, steps) = data.signals[0].dim();
    let banks = FilterBanks::for_skeleton(skeleton, steps, config.spatial_scales, config.temporal_scales)?;
    let mask = compute_prune_mask(&data.signals, &banks, config.layers, config.tau)?;
    Network::new(banks, mask, config.variant, channels)
}

fn fixed_cache(net: &Network, data: &Samples) -> Result<Vec<Vec<f64>>> {
    par::map(&data.signals, |x| net.fixed_features(x)).into_iter().collect()
}

fn raw_features(net: &Network, agents: &AgentParams, x: &Signal, fixed: &[f64]) -> Result<Vec<f64>> {
    let trace = TrainableTrace::new(x, net, agents)?;
    let mut raw = fixed.to_vec();
    raw.extend_from_slice(&trace.pooled);
    Ok(raw)
}

/// Fresh parameters: classifier from `rng`, agents reproducing the fixed
/// shifts, and a standardizer fitted on the initial training features.
pub fn init_model<R: Rng>(
    net: &Network,
    data: &Samples,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<Model> {
    let fixed = fixed_cache(net, data)?;
    init_model_cached(net, data, &fixed, config, rng)
}

fn init_model_cached<R: Rng>(
    net: &Network,
    data: &Samples,
    fixed: &[Vec<f64>],
    config: &TrainConfig,
    rng: &mut R,
) -> Result<Model> {
    let agents = AgentParams::init(&net.mask, &net.banks, config.agent_floor);
    let features = net.feature_len();
    let head = MlpHead::init(features, config.hidden, data.classes, rng);
    let norm = if config.standardize {
        let idx: Vec<usize> = (0..data.len()).collect();
        let raw: Vec<Vec<f64>> = par::map(&idx, |&i| raw_features(net, &agents, &data.signals[i], &fixed[i]))
            .into_iter()
            .collect::<Result<_>>()?;
        Standardizer::fit(&raw)?
    } else {
        Standardizer::identity(features)
    };
    Ok(Model {
        params: ParamSet { agents, head },
        norm,
    })
}

fn evaluate_cached(net: &Network, model: &Model, data: &Samples, fixed: &[Vec<f64>]) -> Result<Evaluation> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let predictions: Vec<usize> = par::map(&idx, |&i| {
        let raw = raw_features(net, &model.params.agents, &data.signals[i], &fixed[i])?;
        let trace = mlp_forward_trace(&model.norm.apply(&raw), &model.params.head)?;
        Ok(argmax(&trace.logits))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let mut confusion = vec![vec![0; data.classes]; data.classes];
    let mut correct = 0;
    for (&p, &y) in predictions.iter().zip(&data.labels) {
        if p < data.classes {
            confusion[y][p] += 1;
        }
        correct += usize::from(p == y);
    }
    Ok(Evaluation {
        accuracy: correct as f64 / data.len() as f64,
        confusion,
        predictions,
    })
}

/// Argmax classification accuracy and confusion counts.
pub fn evaluate(net: &Network, model: &Model, data: &Samples) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Precondition("cannot evaluate an empty dataset".into()));
    }
    model.check(net)?;
    if model.params.head.classes() != data.classes {
        return Err(Error::Shape(format!(
            "classifier has {} classes, dataset has {}",
            model.params.head.classes(),
            data.classes
        )));
    }
    let fixed = fixed_cache(net, data)?;
    evaluate_cached(net, model, data, &fixed)
}

/// Minibatch training. Shuffling, initialization and the batch reduction
/// order depend only on `config.seed`, so runs are reproducible bit for bit.
pub fn train(net: &Network, data: &Samples, val: Option<&Samples>, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if net.variant != config.variant {
        return Err(Error::config(
            "variant",
            format!("network is built for {} but the config asks for {}", net.variant, config.variant),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let fixed = fixed_cache(net, data)?;
    let val_fixed = val.map(|v| fixed_cache(net, v)).transpose()?;
    let mut model = init_model_cached(net, data, &fixed, config, &mut rng)?;
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Model)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for batch in order.chunks(config.batch_size) {
            let samples = par::map(batch, |&i| {
                sample_grad(net, &model, &data.signals[i], &fixed[i], data.labels[i])
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            let mut reduced = reduce(&model, &samples);
            if !reduced.loss_sum.is_finite() {
                return Err(Error::NonFinite(format!("loss at epoch {epoch}")));
            }
            if let Some(name) = reduced.grads.first_non_finite() {
                return Err(Error::NonFinite(name));
            }
            loss_sum += reduced.loss_sum;
            correct += batch
                .iter()
                .zip(&reduced.predictions)
                .filter(|(&i, &p)| data.labels[i] == p)
                .count();
            reduced.grads.scale(1.0 / batch.len() as f64);
            optimizer.step(&mut model.params, &reduced.grads);
        }
        if let Some(name) = model.params.first_non_finite() {
            return Err(Error::NonFinite(name));
        }
        let val_acc = match (val, &val_fixed) {
            (Some(v), Some(vf)) => Some(evaluate_cached(net, &model, v, vf)?.accuracy),
            _ => None,
        };
        log.push(EpochRecord {
            epoch,
            loss: loss_sum / data.len() as f64,
            train_acc: correct as f64 / data.len() as f64,
            val_acc,
        });
        if config.keep_best {
            if let Some(acc) = val_acc {
                if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                    best = Some((acc, epoch, model.clone()));
                }
            }
        }
    }
    let (model, chosen_epoch) = match best {
        Some((_, epoch, m)) => (m, epoch),
        None => (model, config.epochs),
    };
    Ok(TrainOutcome {
        model,
        log,
        chosen_epoch,
    })
}
