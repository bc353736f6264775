//! Small end-to-end training runs on desk-scale synthetic subjects.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sacm::datamodel::{ChannelMatrix, Recording};
use sacm::dsp::{preprocess, PreprocessConfig};
use sacm::experiments::{
    decoding_data, detection_data, stratified_holdout, BlockAssignment, DecodingData, EncoderArch,
};
use sacm::models::{AudioEncoder, EegNetConfig};
use sacm::sacm::{
    evaluate_detector, train_contrastive, train_detector, ContrastiveHp, DetectorHp, LabeledSet,
    PairSet,
};
use sacm::synthgen::{gen_recording, SynthConfig};

fn subject(seed: u64, snr_db: Option<f64>, sessions: u32, rate: f64) -> Recording {
    let cfg = SynthConfig {
        seeg_rate: 1000.0,
        audio_rate: 16000.0,
        snr_db,
        n_sessions: sessions,
        ..SynthConfig::new(seed)
    };
    let raw = gen_recording(&cfg).unwrap();
    preprocess(
        &raw,
        &PreprocessConfig {
            target_rate: rate,
            ..PreprocessConfig::default()
        },
    )
    .unwrap()
}

fn pairs(data: &DecodingData, idx_groups: &[Vec<usize>], channels: &[usize]) -> PairSet {
    let flat: Vec<usize> = idx_groups.iter().flatten().copied().collect();
    let mut pos = 0;
    let groups = idx_groups
        .iter()
        .map(|g| {
            let v: Vec<usize> = (pos..pos + g.len()).collect();
            pos += g.len();
            v
        })
        .collect();
    PairSet {
        seeg: flat
            .iter()
            .map(|&i| data.seeg[i].select_channels(channels).unwrap())
            .collect(),
        audio: flat.iter().map(|&i| data.audio[i].clone()).collect(),
        words: flat.iter().map(|&i| data.words[i]).collect(),
        groups,
    }
}

fn desk_hp(max_epochs: usize) -> ContrastiveHp {
    ContrastiveHp {
        lr: 1e-3,
        weight_decay: 1e-1,
        max_epochs,
        patience: 20,
        seed: 3,
        ..ContrastiveHp::default()
    }
}

#[test]
fn high_snr_smc_subject_is_retrievable_and_audio_stays_frozen() {
    let rec = subject(31, Some(10.0), 4, 50.0);
    let audio = AudioEncoder::builtin(16000.0, 80, 0);
    let data = decoding_data(&rec, &audio, 1.6, BlockAssignment::default()).unwrap();
    let smc = rec.electrode_groups["SMC"].clone();
    let train = PairSet {
        groups: Vec::new(),
        ..pairs(&data, std::slice::from_ref(&data.split.train), &smc)
    };
    let val = pairs(&data, &data.split.val_groups, &smc);
    let val_audio = val.audio.clone();
    let arch = EncoderArch {
        hidden: 16,
        ..EncoderArch::default()
    };
    let out = train_contrastive(&train, &val, arch.config(smc.len(), 80), &desk_hp(200)).unwrap();

    let best = &out.history[out.best_epoch - 1];
    let (top1, top5) = (best.val_top1.unwrap(), best.val_top5.unwrap());
    // Desk scale reaches about 40% top-1 (chance 2.1%); see the decisions ledger.
    assert!(
        top1 >= 35.0 && top5 >= 80.0,
        "best epoch {}: val top-1 {top1:.1}%, top-5 {top5:.1}%",
        out.best_epoch
    );

    // Only encoder parameters move; the audio targets are data.
    let names: BTreeSet<String> = out
        .model
        .store
        .entries()
        .iter()
        .filter(|e| e.trainable)
        .map(|e| e.name.clone())
        .collect();
    assert!(!out.updated.is_empty() && out.updated.is_subset(&names));
    assert_eq!(val.audio, val_audio);
}

#[test]
fn pure_noise_subject_does_not_fit() {
    let rec = subject(32, None, 1, 50.0);
    let audio = AudioEncoder::builtin(16000.0, 80, 0);
    let data = decoding_data(&rec, &audio, 1.6, BlockAssignment::default()).unwrap();
    let all: Vec<usize> = (0..rec.seeg.n_channels()).collect();
    let train = PairSet {
        groups: Vec::new(),
        ..pairs(&data, std::slice::from_ref(&data.split.train), &all)
    };
    let val = pairs(&data, &data.split.val_groups, &all);
    let arch = EncoderArch {
        hidden: 16,
        ..EncoderArch::default()
    };
    let hp = ContrastiveHp {
        patience: 5,
        ..desk_hp(60)
    };
    let out = train_contrastive(&train, &val, arch.config(all.len(), 80), &hp).unwrap();
    let floor = 0.95 * 2.0 * 48f64.ln();
    assert!(
        out.best_val_loss >= floor,
        "best val loss {} < {floor}",
        out.best_val_loss
    );
}

/// Train/val/test windows (64/16/20) on `channels`, labels optionally shuffled.
fn detector_sets(rec: &Recording, channels: &[usize], shuffle: bool) -> [LabeledSet; 3] {
    let data = detection_data(rec, 1.6, 0.5).unwrap();
    let mut y = data.set.y.clone();
    if shuffle {
        y.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
    }
    let idx: Vec<usize> = (0..y.len()).collect();
    let (rest, test) = stratified_holdout(&idx, &y, 0.2, 4);
    let (train, val) = stratified_holdout(&rest, &y, 0.2, 5);
    let pick = |ii: &[usize]| LabeledSet {
        x: ii
            .iter()
            .map(|&i| data.set.x[i].select_channels(channels).unwrap())
            .collect::<Vec<ChannelMatrix>>(),
        y: ii.iter().map(|&i| y[i]).collect(),
    };
    [pick(&train), pick(&val), pick(&test)]
}

/// Mean held-out accuracy over three detector seeds.
fn test_accuracy(rec: &Recording, channels: &[usize], shuffle: bool) -> f64 {
    let [train, val, test] = detector_sets(rec, channels, shuffle);
    let cfg = EegNetConfig::new(channels.len(), train.x[0].n_samples(), rec.seeg_rate);
    let accs: Vec<f64> = (0..3)
        .map(|seed| {
            let hp = DetectorHp {
                max_epochs: 8,
                patience: 3,
                seed,
                ..DetectorHp::default()
            };
            let out = train_detector(&train, &val, cfg.clone(), &hp).unwrap();
            evaluate_detector(&out.model, &test).unwrap().1
        })
        .collect();
    accs.iter().sum::<f64>() / 3.0
}

#[test]
fn detector_separates_speech_and_sits_at_chance_when_shuffled() {
    let rec = subject(33, Some(10.0), 2, 100.0);
    let smc = rec.electrode_groups["SMC"].clone();
    let acc = test_accuracy(&rec, &smc, false);
    assert!(acc >= 90.0, "SMC accuracy {acc}");
    let chance = test_accuracy(&rec, &smc, true);
    assert!((chance - 50.0).abs() <= 5.0, "shuffled accuracy {chance}");
}
