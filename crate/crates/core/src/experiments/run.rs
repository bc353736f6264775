//! Task runners: detection cross-validation and block-split word decoding.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{confusion, topk_accuracy};
use super::split::{
    decoding_split, stratified_folds, stratified_holdout, BlockAssignment, DecodingSplit,
};
use crate::audiofeat::{detect_speech_center, extract_sp_ns, SkippedTrial};
use crate::datamodel::{segment_trials, ChannelMatrix, Recording, N_WORDS};
use crate::error::{Error, Result};
use crate::models::{Activation, AudioEncoder, EegNetConfig, SeegEncoderConfig};
use crate::sacm::{
    evaluate_detector, evaluate_pairs, train_contrastive, train_detector, ContrastiveHp,
    DetectorHp, LabeledSet, PairSet,
};
use crate::util::derive_seed;

const S_FOLDS: u64 = 11;
const S_HOLDOUT: u64 = 12;
const S_SHUFFLE: u64 = 13;
const S_TRAIN: u64 = 14;

pub const SPEECH: usize = 1;
pub const NON_SPEECH: usize = 0;

/// Speech and non-speech SEEG windows over all channels of a processed recording.
#[derive(Clone, Debug)]
pub struct DetectionData {
    pub set: LabeledSet,
    pub trial_ids: Vec<u32>,
    pub rate: f64,
    pub skipped: Vec<SkippedTrial>,
}

pub fn detection_data(rec: &Recording, window_s: f64, seg_s: f64) -> Result<DetectionData> {
    let trials = segment_trials(rec, window_s, rec.seeg_rate)?;
    let (mut sp, mut ns, mut ids, mut skipped) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for t in &trials {
        let act = detect_speech_center(&t.audio_window, rec.audio_rate);
        match extract_sp_ns(t, &act, seg_s, rec.seeg_rate, rec.audio_rate) {
            Ok(s) => {
                sp.push(s.x_sp);
                ns.push(s.x_ns);
                ids.push(s.trial_id);
            }
            Err(skip) => {
                log::info!("trial {} skipped: {}", skip.trial_id, skip.reason);
                skipped.push(skip);
            }
        }
    }
    let n = sp.len();
    let mut x = sp;
    x.extend(ns);
    let y = (0..2 * n)
        .map(|i| if i < n { SPEECH } else { NON_SPEECH })
        .collect();
    let mut trial_ids = ids.clone();
    trial_ids.extend(ids);
    Ok(DetectionData {
        set: LabeledSet { x, y },
        trial_ids,
        rate: rec.seeg_rate,
        skipped,
    })
}

fn select(xs: &[ChannelMatrix], channels: &[usize]) -> Result<Vec<ChannelMatrix>> {
    if channels.is_empty() {
        return Err(Error::Config("empty channel set".into()));
    }
    xs.iter().map(|x| x.select_channels(channels)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionCv {
    pub n_folds: usize,
    pub val_frac: f64,
    pub hp: DetectorHp,
}

impl Default for DetectionCv {
    fn default() -> Self {
        DetectionCv {
            n_folds: 5,
            val_frac: 0.2,
            hp: DetectorHp::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    /// Mean test accuracy (%) over folds.
    pub accuracy: f64,
    pub fold_accuracy: Vec<f64>,
    pub best_epochs: Vec<usize>,
}

/// One seed of stratified `n_folds` cross-validation; the training portion of
/// each fold is split again into train/validation for early stopping. With
/// `shuffle_labels`, labels are permuted over the whole set first.
pub fn detection_cv(
    data: &DetectionData,
    channels: &[usize],
    cv: &DetectionCv,
    seed: u64,
    shuffle_labels: bool,
) -> Result<DetectionOutcome> {
    let x = select(&data.set.x, channels)?;
    let mut y = data.set.y.clone();
    if shuffle_labels {
        y.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            seed,
            &[S_SHUFFLE],
        )));
    }
    let set = LabeledSet { x, y };
    let folds = stratified_folds(&set.y, cv.n_folds, derive_seed(seed, &[S_FOLDS]))?;
    let (c, t) = (set.x[0].n_channels(), set.x[0].n_samples());
    let mut out = DetectionOutcome {
        accuracy: 0.0,
        fold_accuracy: Vec::new(),
        best_epochs: Vec::new(),
    };
    for (f, test) in folds.iter().enumerate() {
        let rest: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        let (train, val) = stratified_holdout(
            &rest,
            &set.y,
            cv.val_frac,
            derive_seed(seed, &[S_HOLDOUT, f as u64]),
        );
        let hp = DetectorHp {
            seed: derive_seed(seed, &[S_TRAIN, f as u64]),
            ..cv.hp.clone()
        };
        let trained = train_detector(
            &set.subset(&train),
            &set.subset(&val),
            EegNetConfig::new(c, t, data.rate),
            &hp,
        )?;
        let (_, acc, _) = evaluate_detector(&trained.model, &set.subset(test))?;
        log::info!(
            "detection seed {seed} fold {f}: {acc:.1}% (best epoch {})",
            trained.best_epoch
        );
        out.fold_accuracy.push(acc);
        out.best_epochs.push(trained.best_epoch);
    }
    out.accuracy = out.fold_accuracy.iter().sum::<f64>() / out.fold_accuracy.len() as f64;
    Ok(out)
}

/// Whole-trial SEEG windows paired with frozen audio embeddings.
#[derive(Clone, Debug)]
pub struct DecodingData {
    pub seeg: Vec<ChannelMatrix>,
    pub audio: Vec<Vec<f32>>,
    pub words: Vec<u32>,
    pub split: DecodingSplit,
    pub initial_map: Vec<u32>,
    pub final_map: Vec<u32>,
    pub tone_map: Vec<u32>,
}

pub fn decoding_data(
    rec: &Recording,
    audio: &AudioEncoder,
    window_s: f64,
    blocks: BlockAssignment,
) -> Result<DecodingData> {
    let trials = segment_trials(rec, window_s, rec.seeg_rate)?;
    let split = decoding_split(&rec.events, blocks)?;
    let refs: Vec<_> = trials.iter().collect();
    let d = audio.dim();
    let flat = audio.encode_trials(&refs)?;
    let mut rows: Vec<Vec<f32>> = flat.chunks(d).map(<[f32]>::to_vec).collect();
    standardize(&mut rows, &split.train);
    Ok(DecodingData {
        audio: rows,
        words: trials.iter().map(|t| t.event.word_label).collect(),
        seeg: trials.into_iter().map(|t| t.seeg_window).collect(),
        split,
        initial_map: rec.corpus.initial_map(),
        final_map: rec.corpus.final_map(),
        tone_map: rec.corpus.tone_map(),
    })
}

/// Per-dimension z-scoring of audio targets with statistics of the `fit` rows.
/// Raw embeddings share a large common component (cosines near 0.9 across
/// words), which leaves almost no angular margin at small temperatures.
pub fn standardize(rows: &mut [Vec<f32>], fit: &[usize]) {
    let Some(d) = rows.first().map(Vec::len) else {
        return;
    };
    if fit.is_empty() {
        return;
    }
    for j in 0..d {
        let mu = fit.iter().map(|&i| rows[i][j] as f64).sum::<f64>() / fit.len() as f64;
        let var = fit
            .iter()
            .map(|&i| (rows[i][j] as f64 - mu).powi(2))
            .sum::<f64>()
            / fit.len() as f64;
        let sd = if var > 1e-20 { var.sqrt() } else { 1.0 };
        for r in rows.iter_mut() {
            r[j] = ((r[j] as f64 - mu) / sd) as f32;
        }
    }
}

/// Encoder shape apart from the input and output widths, which follow the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderArch {
    pub hidden: usize,
    pub n_blocks: usize,
    pub kernel: usize,
    pub activation: Activation,
}

impl Default for EncoderArch {
    fn default() -> Self {
        let c = SeegEncoderConfig::new(1, 1);
        EncoderArch {
            hidden: c.hidden,
            n_blocks: c.n_blocks,
            kernel: c.kernel,
            activation: c.activation,
        }
    }
}

impl EncoderArch {
    pub fn config(&self, n_channels: usize, d: usize) -> SeegEncoderConfig {
        SeegEncoderConfig {
            n_channels,
            hidden: self.hidden,
            n_blocks: self.n_blocks,
            kernel: self.kernel,
            d,
            activation: self.activation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeOutcome {
    pub word_top1: f64,
    pub word_top5: f64,
    pub initial_top5: f64,
    pub final_top5: f64,
    pub tone_top5: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub confusion: Vec<Vec<u32>>,
}

/// Positions `idx` paired with a permutation of themselves.
fn permuted(idx: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut p = idx.to_vec();
    p.shuffle(rng);
    p
}

fn pair_set(
    data: &DecodingData,
    x: &[ChannelMatrix],
    groups: &[Vec<usize>],
    partner: &dyn Fn(usize) -> usize,
) -> PairSet {
    let flat: Vec<usize> = groups.iter().flatten().copied().collect();
    let mut pos = 0;
    let local: Vec<Vec<usize>> = groups
        .iter()
        .map(|g| {
            let v = (pos..pos + g.len()).collect();
            pos += g.len();
            v
        })
        .collect();
    PairSet {
        seeg: flat.iter().map(|&i| x[i].clone()).collect(),
        audio: flat
            .iter()
            .map(|&i| data.audio[partner(i)].clone())
            .collect(),
        words: flat.iter().map(|&i| data.words[partner(i)]).collect(),
        groups: local,
    }
}

/// Train on the training blocks, early-stop on the validation blocks and score
/// retrieval within each test block. With `shuffle_labels`, every SEEG trial is
/// paired with the audio target of another trial from the same split (and the
/// same block for validation and test), leaving the pipeline otherwise intact.
pub fn decode_run(
    data: &DecodingData,
    channels: &[usize],
    arch: &EncoderArch,
    hp: &ContrastiveHp,
    seed: u64,
    shuffle_labels: bool,
) -> Result<DecodeOutcome> {
    let x = select(&data.seeg, channels)?;
    let n = data.words.len();
    let mut partner: Vec<usize> = (0..n).collect();
    if shuffle_labels {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[S_SHUFFLE]));
        let groups = std::iter::once(data.split.train.clone())
            .chain(data.split.val_groups.iter().cloned())
            .chain(data.split.test_groups.iter().cloned());
        for g in groups {
            for (&i, j) in g.iter().zip(permuted(&g, &mut rng)) {
                partner[i] = j;
            }
        }
    }
    let p = |i: usize| partner[i];
    let train = pair_set(data, &x, std::slice::from_ref(&data.split.train), &p);
    let train = PairSet {
        groups: Vec::new(),
        ..train
    };
    let val = pair_set(data, &x, &data.split.val_groups, &p);
    let test = pair_set(data, &x, &data.split.test_groups, &p);

    let d = data.audio[0].len();
    let hp = ContrastiveHp {
        seed: derive_seed(seed, &[S_TRAIN]),
        ..hp.clone()
    };
    let trained = train_contrastive(&train, &val, arch.config(channels.len(), d), &hp)?;
    let ev = evaluate_pairs(&trained.model, &test, hp.tau, hp.batch)?;

    let mut ranked_words = Vec::new();
    let mut truth = Vec::new();
    for g in &ev.groups {
        for (i, r) in g.rankings.iter().enumerate() {
            truth.push(test.words[g.indices[i]]);
            ranked_words.push(
                r.iter()
                    .map(|&j| test.words[g.indices[j]])
                    .collect::<Vec<u32>>(),
            );
        }
    }
    let top1: Vec<u32> = ranked_words.iter().map(|r| r[0]).collect();
    let k = 5.min(ranked_words[0].len());
    Ok(DecodeOutcome {
        word_top1: topk_accuracy(&ranked_words, &truth, 1, None)?,
        word_top5: topk_accuracy(&ranked_words, &truth, k, None)?,
        initial_top5: topk_accuracy(&ranked_words, &truth, k, Some(&data.initial_map))?,
        final_top5: topk_accuracy(&ranked_words, &truth, k, Some(&data.final_map))?,
        tone_top5: topk_accuracy(&ranked_words, &truth, k, Some(&data.tone_map))?,
        best_epoch: trained.best_epoch,
        epochs_run: trained.history.len(),
        confusion: confusion(&top1, &truth, N_WORDS)?,
    })
}
