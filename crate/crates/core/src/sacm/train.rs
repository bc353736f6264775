//! Mini-batch Adam loops with early stopping for the contrastive encoder and
//! the EEGNet detector.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sacm_autodiff::{Adam, AdamConfig, Graph, Mode, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use super::loss::{
    cosine_matrix, diagonal_topk, infonce_symmetric, infonce_symmetric_graph, rank_candidates,
};
use crate::datamodel::{write_jsonl, ChannelMatrix};
use crate::error::{Error, Result};
use crate::models::{EegNet, EegNetConfig, SeegEncoder, SeegEncoderConfig};
use crate::util::derive_seed;

const S_INIT: u64 = 1;
const S_SHUFFLE: u64 = 2;
const S_DROPOUT: u64 = 3;
const EVAL_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_top1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_top5: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_acc: Option<f64>,
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    write_jsonl(path, history)
}

/// Stack equally shaped windows into an `(N, C, T)` tensor.
pub fn stack_windows(xs: &[&ChannelMatrix]) -> Result<Tensor<f32>> {
    let Some(first) = xs.first() else {
        return Err(Error::InvalidArgument("cannot stack an empty batch".into()));
    };
    let (c, t) = (first.n_channels(), first.n_samples());
    let mut data = Vec::with_capacity(xs.len() * c * t);
    for x in xs {
        if (x.n_channels(), x.n_samples()) != (c, t) {
            return Err(Error::InvalidArgument(format!(
                "window {}×{} does not match {c}×{t}",
                x.n_channels(),
                x.n_samples()
            )));
        }
        data.extend_from_slice(x.data());
    }
    Ok(Tensor::new(vec![xs.len(), c, t], data)?)
}

/// Tracks the best validation loss and the parameters that produced it.
struct EarlyStop {
    patience: usize,
    best: f64,
    best_epoch: usize,
    best_params: Vec<f32>,
    since: usize,
}

impl EarlyStop {
    fn new(patience: usize, params: Vec<f32>) -> Self {
        EarlyStop {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            best_params: params,
            since: 0,
        }
    }

    /// Returns true when training should stop.
    fn observe(&mut self, epoch: usize, loss: f64, store: &ParamStore<f32>) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.best_params = store.to_flat();
            self.since = 0;
        } else {
            self.since += 1;
        }
        self.since >= self.patience
    }
}

fn shuffled(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        seed,
        &[S_SHUFFLE, epoch as u64],
    )));
    idx
}

fn check_common(lr: f64, batch: usize, max_epochs: usize, patience: usize) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) || batch == 0 || max_epochs == 0 || patience == 0 {
        return Err(Error::Config(format!(
            "invalid training settings: lr {lr}, batch {batch}, max_epochs {max_epochs}, patience {patience}"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------- contrastive

/// SEEG windows paired index-wise with frozen audio embeddings. `groups` fixes
/// evaluation batches (one session block each); when empty, consecutive
/// chunks of the training batch size are used.
#[derive(Clone, Debug, Default)]
pub struct PairSet {
    pub seeg: Vec<ChannelMatrix>,
    pub audio: Vec<Vec<f32>>,
    pub words: Vec<u32>,
    pub groups: Vec<Vec<usize>>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.seeg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeg.is_empty()
    }

    fn validate(&self, name: &str, d: usize) -> Result<()> {
        if self.is_empty() {
            return Err(Error::InvalidArgument(format!("{name} split is empty")));
        }
        if self.audio.len() != self.len() || self.words.len() != self.len() {
            return Err(Error::InvalidArgument(format!(
                "{name} split has mismatched seeg/audio/word counts"
            )));
        }
        if let Some(a) = self.audio.iter().find(|a| a.len() != d) {
            return Err(Error::InvalidArgument(format!(
                "{name} audio embedding has dim {}, encoder emits {d}",
                a.len()
            )));
        }
        if self.groups.iter().flatten().any(|&i| i >= self.len()) {
            return Err(Error::InvalidArgument(format!(
                "{name} evaluation group index out of range"
            )));
        }
        Ok(())
    }

    fn eval_groups(&self, batch: usize) -> Vec<Vec<usize>> {
        if self.groups.is_empty() {
            (0..self.len())
                .collect::<Vec<_>>()
                .chunks(batch)
                .map(|c| c.to_vec())
                .collect()
        } else {
            self.groups.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveHp {
    pub lr: f64,
    pub batch: usize,
    pub tau: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for ContrastiveHp {
    fn default() -> Self {
        ContrastiveHp {
            lr: 3e-4,
            batch: 48,
            tau: 0.05,
            max_epochs: 200,
            patience: 20,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedEncoder {
    pub model: SeegEncoder<f32>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Names of every parameter that received an optimizer update.
    pub updated: BTreeSet<String>,
}

/// Eval-mode embeddings, row-major `n × d`.
pub fn encode_seeg(model: &SeegEncoder<f32>, xs: &[&ChannelMatrix]) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(xs.len() * model.cfg.d);
    for chunk in xs.chunks(EVAL_CHUNK) {
        let mut g = Graph::new(Mode::Eval);
        let x = g.constant(stack_windows(chunk)?);
        let (b, _) = model.forward(&mut g, x)?;
        out.extend_from_slice(g.value(b).data());
    }
    Ok(out)
}

/// Retrieval result of one evaluation group.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupEval {
    pub indices: Vec<usize>,
    pub loss: f64,
    /// `rankings[i]` orders the group's audio candidates for its `i`-th SEEG trial.
    pub rankings: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairEval {
    pub loss: f64,
    pub top1: f64,
    pub top5: f64,
    pub groups: Vec<GroupEval>,
}

pub fn evaluate_pairs(
    model: &SeegEncoder<f32>,
    set: &PairSet,
    tau: f64,
    batch: usize,
) -> Result<PairEval> {
    set.validate("evaluation", model.cfg.d)?;
    let d = model.cfg.d;
    let all: Vec<&ChannelMatrix> = set.seeg.iter().collect();
    let emb = encode_seeg(model, &all)?;
    let mut groups = Vec::new();
    let (mut loss, mut h1, mut h5, mut n) = (0.0, 0.0, 0.0, 0usize);
    for idx in set.eval_groups(batch) {
        let b: Vec<f32> = idx
            .iter()
            .flat_map(|&i| emb[i * d..(i + 1) * d].iter().copied())
            .collect();
        let a: Vec<f32> = idx
            .iter()
            .flat_map(|&i| set.audio[i].iter().copied())
            .collect();
        let l = infonce_symmetric(&b, &a, d, tau)?;
        let rankings = rank_candidates(&cosine_matrix(&b, &a, d)?, tau)?;
        let m = idx.len();
        loss += l * m as f64;
        h1 += diagonal_topk(&rankings, 1) * m as f64;
        h5 += diagonal_topk(&rankings, 5) * m as f64;
        n += m;
        groups.push(GroupEval {
            indices: idx,
            loss: l,
            rankings,
        });
    }
    let n = n as f64;
    Ok(PairEval {
        loss: loss / n,
        top1: h1 / n,
        top5: h5 / n,
        groups,
    })
}

pub fn train_contrastive(
    train: &PairSet,
    val: &PairSet,
    cfg: SeegEncoderConfig,
    hp: &ContrastiveHp,
) -> Result<TrainedEncoder> {
    check_common(hp.lr, hp.batch, hp.max_epochs, hp.patience)?;
    if !(hp.tau > 0.0 && hp.tau.is_finite()) {
        return Err(Error::Config(format!(
            "temperature must be positive, got {}",
            hp.tau
        )));
    }
    train.validate("train", cfg.d)?;
    val.validate("validation", cfg.d)?;
    let seen: BTreeSet<u32> = train.words.iter().copied().collect();
    if let Some(w) = val.words.iter().find(|w| !seen.contains(w)) {
        return Err(Error::InvalidArgument(format!(
            "word {w} appears in validation but never in training"
        )));
    }

    let d = cfg.d;
    let mut model = SeegEncoder::<f32>::new(cfg, derive_seed(hp.seed, &[S_INIT]))?;
    let mut opt = Adam::new(AdamConfig {
        lr: hp.lr,
        weight_decay: hp.weight_decay,
        ..AdamConfig::default()
    });
    let mut stop = EarlyStop::new(hp.patience, model.store.to_flat());
    let mut history = Vec::new();
    let mut updated = BTreeSet::new();
    let dropout_seed = derive_seed(hp.seed, &[S_DROPOUT]);
    let mut step = 0u64;

    for epoch in 1..=hp.max_epochs {
        let order = shuffled(train.len(), hp.seed, epoch);
        let mut total = 0.0;
        for batch in order.chunks(hp.batch) {
            let xs: Vec<&ChannelMatrix> = batch.iter().map(|&i| &train.seeg[i]).collect();
            let a: Vec<f32> = batch
                .iter()
                .flat_map(|&i| train.audio[i].iter().copied())
                .collect();
            let mut g = Graph::new(Mode::Train {
                seed: dropout_seed,
                step,
            });
            let x = g.constant(stack_windows(&xs)?);
            let av = g.constant(Tensor::new(vec![batch.len(), d], a)?);
            let (b, bn) = model.forward(&mut g, x)?;
            let loss = infonce_symmetric_graph(&mut g, b, av, hp.tau)?;
            total += g.value(loss).data()[0] as f64 * batch.len() as f64;
            g.backward(loss)?;
            model.store.zero_grad();
            g.accumulate_param_grads(&mut model.store);
            for id in opt.step(&mut model.store) {
                if !updated.contains(&model.store.entry(id).name) {
                    updated.insert(model.store.entry(id).name.clone());
                }
            }
            model.update_running_stats(&bn);
            step += 1;
        }
        let ev = evaluate_pairs(&model, val, hp.tau, hp.batch)?;
        history.push(EpochRecord {
            epoch,
            train_loss: total / train.len() as f64,
            val_loss: ev.loss,
            val_top1: Some(ev.top1),
            val_top5: Some(ev.top5),
            val_acc: None,
        });
        log::debug!(
            "contrastive epoch {epoch}: train {:.4} val {:.4} top5 {:.1}",
            total / train.len() as f64,
            ev.loss,
            ev.top5
        );
        if stop.observe(epoch, ev.loss, &model.store) {
            break;
        }
    }
    model.store.load_flat(&stop.best_params)?;
    Ok(TrainedEncoder {
        model,
        history,
        best_epoch: stop.best_epoch,
        best_val_loss: stop.best,
        updated,
    })
}

// ------------------------------------------------------------------ detection

#[derive(Clone, Debug, Default)]
pub struct LabeledSet {
    pub x: Vec<ChannelMatrix>,
    pub y: Vec<usize>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledSet {
        LabeledSet {
            x: idx.iter().map(|&i| self.x[i].clone()).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }

    fn validate(&self, name: &str, n_classes: usize) -> Result<()> {
        if self.is_empty() {
            return Err(Error::InvalidArgument(format!("{name} split is empty")));
        }
        if self.y.len() != self.x.len() {
            return Err(Error::InvalidArgument(format!(
                "{name} split has {} labels for {} windows",
                self.y.len(),
                self.x.len()
            )));
        }
        if let Some(&c) = self.y.iter().find(|&&c| c >= n_classes) {
            return Err(Error::InvalidArgument(format!(
                "{name} label {c} outside 0..{n_classes}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorHp {
    pub lr: f64,
    pub batch: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for DetectorHp {
    fn default() -> Self {
        DetectorHp {
            lr: 1e-3,
            batch: 32,
            max_epochs: 300,
            patience: 30,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedDetector {
    pub model: EegNet<f32>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Eval-mode `(mean cross-entropy, accuracy %, argmax predictions)`.
pub fn evaluate_detector(model: &EegNet<f32>, set: &LabeledSet) -> Result<(f64, f64, Vec<usize>)> {
    set.validate("evaluation", model.cfg.n_classes)?;
    let (mut loss, mut preds) = (0.0, Vec::with_capacity(set.len()));
    let k = model.cfg.n_classes;
    for (xs, ys) in set.x.chunks(EVAL_CHUNK).zip(set.y.chunks(EVAL_CHUNK)) {
        let refs: Vec<&ChannelMatrix> = xs.iter().collect();
        let mut g = Graph::new(Mode::Eval);
        let x = g.constant(stack_windows(&refs)?);
        let (logits, _) = model.forward(&mut g, x)?;
        let l = g.cross_entropy(logits, ys)?;
        loss += g.value(l).data()[0] as f64 * ys.len() as f64;
        for row in g.value(logits).data().chunks(k) {
            let best = (0..k).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            preds.push(best);
        }
    }
    let correct = preds.iter().zip(&set.y).filter(|(p, y)| p == y).count();
    Ok((
        loss / set.len() as f64,
        100.0 * correct as f64 / set.len() as f64,
        preds,
    ))
}

pub fn train_detector(
    train: &LabeledSet,
    val: &LabeledSet,
    cfg: EegNetConfig,
    hp: &DetectorHp,
) -> Result<TrainedDetector> {
    check_common(hp.lr, hp.batch, hp.max_epochs, hp.patience)?;
    train.validate("train", cfg.n_classes)?;
    val.validate("validation", cfg.n_classes)?;
    let classes: BTreeSet<usize> = train.y.iter().copied().collect();
    if classes.len() < 2 {
        return Err(Error::InvalidArgument(
            "detector training data contains a single class".into(),
        ));
    }

    let mut model = EegNet::<f32>::new(cfg, derive_seed(hp.seed, &[S_INIT]))?;
    let mut opt = Adam::new(AdamConfig {
        lr: hp.lr,
        weight_decay: hp.weight_decay,
        ..AdamConfig::default()
    });
    let mut stop = EarlyStop::new(hp.patience, model.store.to_flat());
    let mut history = Vec::new();
    let dropout_seed = derive_seed(hp.seed, &[S_DROPOUT]);
    let mut step = 0u64;

    for epoch in 1..=hp.max_epochs {
        let order = shuffled(train.len(), hp.seed, epoch);
        let mut total = 0.0;
        for batch in order.chunks(hp.batch) {
            let xs: Vec<&ChannelMatrix> = batch.iter().map(|&i| &train.x[i]).collect();
            let ys: Vec<usize> = batch.iter().map(|&i| train.y[i]).collect();
            let mut g = Graph::new(Mode::Train {
                seed: dropout_seed,
                step,
            });
            let x = g.constant(stack_windows(&xs)?);
            let (logits, bn) = model.forward(&mut g, x)?;
            let loss = g.cross_entropy(logits, &ys)?;
            total += g.value(loss).data()[0] as f64 * ys.len() as f64;
            g.backward(loss)?;
            model.store.zero_grad();
            g.accumulate_param_grads(&mut model.store);
            opt.step(&mut model.store);
            model.update_running_stats(&bn);
            step += 1;
        }
        let (val_loss, val_acc, _) = evaluate_detector(&model, val)?;
        history.push(EpochRecord {
            epoch,
            train_loss: total / train.len() as f64,
            val_loss,
            val_top1: None,
            val_top5: None,
            val_acc: Some(val_acc),
        });
        log::debug!(
            "detector epoch {epoch}: train {:.4} val {val_loss:.4} acc {val_acc:.1}",
            total / train.len() as f64
        );
        if stop.observe(epoch, val_loss, &model.store) {
            break;
        }
    }
    model.store.load_flat(&stop.best_params)?;
    Ok(TrainedDetector {
        model,
        history,
        best_epoch: stop.best_epoch,
        best_val_loss: stop.best,
    })
}
