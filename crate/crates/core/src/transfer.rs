//! Layer-wise adaptation of a trained network to a new domain: reset some
//! layers, give every layer its own learning rate, fine-tune.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{DatasetManifest, ImageSet, Split};
use crate::network::{backprop, build_network, init_layer, Network, NetworkError, Pass, ScaleConfig};
use crate::rng::{self, tag};
use crate::tensor::{sgd_step, GradientSet, LrMap, Mode, TensorError, TrainConfig};

#[derive(Debug, Error)]
pub enum TransferError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("policy: {0}")]
    Policy(String),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("class {0:?} is not one of the network's classes")]
    UnknownClass(String),
    #[error("non-finite training loss at epoch {epoch}, batch {batch}")]
    Numeric { epoch: usize, batch: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, TransferError>;

pub const DEFAULT_RESET_LR: f32 = 1e-2;
pub const DEFAULT_KEEP_LR: f32 = 1e-4;

/// Which layers to reinitialize, and the learning rate of every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptivePolicy {
    pub reset_layers: BTreeSet<usize>,
    pub lr_map: LrMap,
}

impl Default for AdaptivePolicy {
    /// Reset layers 1-10 and 17-19 at 1e-2; keep 11-16 at 1e-4.
    fn default() -> Self {
        let reset: BTreeSet<usize> = (1..=10).chain(17..=19).collect();
        Self::split_rates(reset, 19, DEFAULT_RESET_LR, DEFAULT_KEEP_LR)
    }
}

impl AdaptivePolicy {
    /// Reset layers get `reset_lr`, the others `keep_lr`.
    pub fn split_rates(reset_layers: BTreeSet<usize>, layers: usize, reset_lr: f32, keep_lr: f32) -> Self {
        let lr_map = (1..=layers)
            .map(|l| (l, if reset_layers.contains(&l) { reset_lr } else { keep_lr }))
            .collect();
        Self { reset_layers, lr_map }
    }

    /// No resets, one learning rate everywhere.
    pub fn uniform(layers: usize, lr: f32) -> Self {
        Self::split_rates(BTreeSet::new(), layers, lr, lr)
    }

    pub fn validate(&self, layers: usize) -> Result<()> {
        if let Some(&l) = self.reset_layers.iter().find(|&&l| l == 0 || l > layers) {
            return Err(TransferError::Policy(format!("reset layer {l} outside 1..={layers}")));
        }
        for l in 1..=layers {
            match self.lr_map.get(&l) {
                None => return Err(TensorError::MissingLearningRate(l).into()),
                Some(lr) if !(lr.is_finite() && *lr >= 0.0) => {
                    return Err(TransferError::Policy(format!("layer {l}: learning rate {lr} is not a finite non-negative number")))
                }
                _ => {}
            }
        }
        if let Some(&l) = self.lr_map.keys().find(|&&l| l == 0 || l > layers) {
            return Err(TransferError::Policy(format!("learning rate given for layer {l}, network has {layers}")));
        }
        Ok(())
    }

    /// Parses `reset=1-10,17-19; lr.reset=1e-2; lr.keep=1e-4`, optionally
    /// followed by per-layer overrides such as `lr.12=0`. Missing rates
    /// default to 1e-2 (reset) and 1e-4 (keep).
    pub fn parse(text: &str, layers: usize) -> Result<Self> {
        let bad = |m: String| TransferError::Policy(m);
        let mut reset = BTreeSet::new();
        let (mut reset_lr, mut keep_lr) = (DEFAULT_RESET_LR, DEFAULT_KEEP_LR);
        let mut overrides = Vec::new();
        for item in text.split(';').map(str::trim).filter(|s| !s.is_empty()) {
            let (key, value) = item
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| bad(format!("expected key=value, got {item:?}")))?;
            let rate = || value.parse::<f32>().map_err(|_| bad(format!("{key}: bad learning rate {value:?}")));
            match key {
                "reset" => reset = parse_ranges(value).map_err(bad)?,
                "lr.reset" => reset_lr = rate()?,
                "lr.keep" => keep_lr = rate()?,
                _ => {
                    let layer = key
                        .strip_prefix("lr.")
                        .and_then(|n| n.parse::<usize>().ok())
                        .ok_or_else(|| bad(format!("unknown key {key:?}")))?;
                    overrides.push((layer, rate()?));
                }
            }
        }
        let mut policy = Self::split_rates(reset, layers, reset_lr, keep_lr);
        policy.lr_map.extend(overrides);
        policy.validate(layers)?;
        Ok(policy)
    }
}

/// `1-10,17-19` or an empty string.
fn parse_ranges(text: &str) -> std::result::Result<BTreeSet<usize>, String> {
    let mut out = BTreeSet::new();
    for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let num = |s: &str| s.trim().parse::<usize>().map_err(|_| format!("bad layer {s:?}"));
        let (lo, hi) = match part.split_once('-') {
            Some((a, b)) => (num(a)?, num(b)?),
            None => (num(part)?, num(part)?),
        };
        if lo > hi {
            return Err(format!("empty range {part:?}"));
        }
        out.extend(lo..=hi);
    }
    Ok(out)
}

fn format_ranges(set: &BTreeSet<usize>) -> String {
    let mut parts = Vec::new();
    let mut iter = set.iter().copied().peekable();
    while let Some(lo) = iter.next() {
        let mut hi = lo;
        while iter.peek() == Some(&(hi + 1)) {
            hi = iter.next().unwrap_or(hi);
        }
        parts.push(if lo == hi { lo.to_string() } else { format!("{lo}-{hi}") });
    }
    parts.join(",")
}

impl fmt::Display for AdaptivePolicy {
    /// Always spells out every layer's rate, so parsing it back with the
    /// same layer count gives the same policy.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "reset={}", format_ranges(&self.reset_layers))?;
        for (layer, lr) in &self.lr_map {
            write!(f, "; lr.{layer}={lr:e}")?;
        }
        Ok(())
    }
}

/// A network ready for fine-tuning and the rates to tune it with.
#[derive(Debug, Clone, PartialEq)]
pub struct Adapted {
    pub net: Network,
    pub lr_map: LrMap,
}

/// Reinitializes the policy's reset layers (same law as a fresh build,
/// streams keyed by `seed` and layer). With `target_classes`, the last
/// layer is rebuilt for that class list; this requires it to be reset.
pub fn apply_policy(
    net: &Network,
    policy: &AdaptivePolicy,
    seed: u64,
    target_classes: Option<&[String]>,
) -> Result<Adapted> {
    let layers = net.weighted_layers();
    policy.validate(layers)?;
    let mut out = net.clone();
    if let Some(classes) = target_classes.filter(|c| *c != net.class_names.as_slice()) {
        if !policy.reset_layers.contains(&layers) {
            return Err(TransferError::Policy(format!(
                "target classes differ from the network's, so layer {layers} must be reset"
            )));
        }
        if classes.len() < 2 {
            return Err(TransferError::Policy("need at least 2 target classes".into()));
        }
        out.kinds = net.scale.layout(classes.len());
        out.class_names = classes.to_vec();
    }
    for &layer in &policy.reset_layers {
        out.params[layer - 1] = init_layer(&out.kinds[layer - 1], layer != layers, seed, &[tag::RESET, layer as u64]);
    }
    Ok(Adapted {
        net: out,
        lr_map: policy.lr_map.clone(),
    })
}

/// Loads a manifest split with labels indexed by the network's classes.
pub fn load_split(net: &Network, manifest: &DatasetManifest, split: Split) -> Result<ImageSet> {
    let mut set = manifest.load(Some(split), &net.mean_rgb).map_err(NetworkError::from)?;
    for label in &mut set.labels {
        let name = &manifest.class_names[*label];
        *label = net
            .class_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| TransferError::UnknownClass(name.clone()))?;
    }
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    MaxEpochs,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Converged => "converged",
            StopReason::MaxEpochs => "max_epochs",
        })
    }
}

/// One row per epoch. Row 0 describes the starting network, with its
/// training loss measured without dropout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_top1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneReport {
    pub rows: Vec<EpochRow>,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
}

impl FinetuneReport {
    pub fn best_val_top1(&self) -> f64 {
        self.rows[self.best_epoch].val_top1
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!(
            "# stop_reason={} epochs_run={} best_epoch={}\nepoch\ttrain_loss\tval_top1\n",
            self.stop_reason, self.epochs_run, self.best_epoch
        );
        for r in &self.rows {
            let _ = writeln!(out, "{}\t{:.6}\t{:.2}", r.epoch, r.train_loss, r.val_top1);
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|source| TransferError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

impl FromStr for StopReason {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "converged" => Ok(StopReason::Converged),
            "max_epochs" => Ok(StopReason::MaxEpochs),
            _ => Err(format!("unknown stop reason {s:?}")),
        }
    }
}

/// Top-1 accuracy in percent, eval mode.
pub fn top1_percent(net: &Network, set: &ImageSet) -> Result<f64> {
    let hits = set
        .images
        .par_iter()
        .zip(set.labels.par_iter())
        .map(|(x, &y)| Ok(usize::from(net.forward(x, Pass::eval())?.0.argmax() == y)))
        .collect::<std::result::Result<Vec<usize>, NetworkError>>()?;
    Ok(100.0 * hits.iter().sum::<usize>() as f64 / set.len() as f64)
}

/// Mean cross-entropy without dropout.
fn eval_loss(net: &Network, set: &ImageSet, batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    for (chunk, labels) in set.images.chunks(batch_size).zip(set.labels.chunks(batch_size)) {
        let refs: Vec<_> = chunk.iter().collect();
        let (loss, _) = backprop(net, &refs, labels, Mode::Eval, 0.0, 0)?;
        total += loss * chunk.len() as f64;
    }
    Ok(total / set.len() as f64)
}

fn check_sets(net: &Network, train: &ImageSet, val: &ImageSet) -> Result<()> {
    if train.is_empty() {
        return Err(TransferError::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(TransferError::EmptySplit("val"));
    }
    let classes = net.num_classes();
    if let Some(&bad) = train.labels.iter().chain(&val.labels).find(|&&l| l >= classes) {
        return Err(TransferError::UnknownClass(format!("label index {bad}")));
    }
    Ok(())
}

/// Mini-batch SGD with per-layer rates. Stops after `cfg.patience` epochs
/// without a strictly better validation top-1, or at `cfg.max_epochs`, and
/// returns the parameters of the best epoch (epoch 0 included).
pub fn finetune(
    net: &Network,
    lr_map: &LrMap,
    train: &ImageSet,
    val: &ImageSet,
    cfg: &TrainConfig,
) -> Result<(Network, FinetuneReport)> {
    cfg.validate()?;
    AdaptivePolicy {
        reset_layers: BTreeSet::new(),
        lr_map: lr_map.clone(),
    }
    .validate(net.weighted_layers())?;
    check_sets(net, train, val)?;

    let mut current = net.clone();
    let mut best = net.clone();
    let mut rows = vec![EpochRow {
        epoch: 0,
        train_loss: eval_loss(net, train, cfg.batch_size)?,
        val_top1: top1_percent(net, val)?,
    }];
    let mut best_epoch = 0;
    let mut velocity = GradientSet::zeros_like(&current.params);
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng::stream(cfg.seed, &[tag::SHUFFLE, epoch as u64]));
        let mut total = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let inputs: Vec<_> = idx.iter().map(|&i| &train.images[i]).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            let dropout_seed = rng::derive_seed(cfg.seed, &[tag::DROPOUT, epoch as u64, b as u64]);
            let (loss, grads) = backprop(&current, &inputs, &labels, Mode::Train, cfg.dropout_p, dropout_seed)?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(TransferError::Numeric { epoch, batch: b });
            }
            sgd_step(&mut current.params, &grads, lr_map, cfg, &mut velocity)?;
            total += loss * idx.len() as f64;
        }
        let row = EpochRow {
            epoch,
            train_loss: total / train.len() as f64,
            val_top1: top1_percent(&current, val)?,
        };
        rows.push(row);
        if row.val_top1 > rows[best_epoch].val_top1 {
            best_epoch = epoch;
            best = current.clone();
        } else if epoch - best_epoch >= cfg.patience {
            stop_reason = StopReason::Converged;
            break;
        }
    }
    let report = FinetuneReport {
        epochs_run: rows.len() - 1,
        rows,
        best_epoch,
        stop_reason,
    };
    Ok((best, report))
}

/// Fresh network trained with one learning rate everywhere.
pub fn train_from_scratch(
    scale: &ScaleConfig,
    class_names: &[String],
    mean_rgb: &[f32],
    train: &ImageSet,
    val: &ImageSet,
    cfg: &TrainConfig,
) -> Result<(Network, FinetuneReport)> {
    let mut net = build_network(scale, class_names, cfg.seed)?;
    net.mean_rgb = mean_rgb.to_vec();
    let policy = AdaptivePolicy::uniform(net.weighted_layers(), cfg.base_lr);
    finetune(&net, &policy.lr_map, train, val, cfg)
}
