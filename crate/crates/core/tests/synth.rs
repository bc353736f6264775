//! Whole-subject properties of the synthetic generator.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use sacm::datamodel::{Recording, N_WORDS};
use sacm::dsp::{contamination_check, envelope_channel, ContaminationConfig, PreprocessConfig};
use sacm::synthgen::{gen_recording, SynthConfig};
use sacm::util::pearson;

fn subject() -> &'static Recording {
    static REC: OnceLock<Recording> = OnceLock::new();
    REC.get_or_init(|| {
        let cfg = SynthConfig {
            seeg_rate: 1000.0,
            audio_rate: 16000.0,
            ..SynthConfig::new(21)
        };
        gen_recording(&cfg).unwrap()
    })
}

#[test]
fn default_subject_has_1920_block_balanced_events() {
    let rec = subject();
    assert_eq!(rec.events.len(), 1920);
    let mut per_word = [0; N_WORDS];
    let mut per_block: BTreeMap<(u32, u32), Vec<u32>> = BTreeMap::new();
    for e in &rec.events {
        per_word[e.word_label as usize] += 1;
        per_block
            .entry((e.session, e.block))
            .or_default()
            .push(e.word_label);
    }
    assert!(per_word.iter().all(|&n| n == 40));
    assert_eq!(per_block.len(), 40);
    for words in per_block.values() {
        let mut w = words.clone();
        w.sort_unstable();
        assert_eq!(w, (0..N_WORDS as u32).collect::<Vec<_>>());
    }
    // Orders differ between blocks.
    let orders: std::collections::BTreeSet<&Vec<u32>> = per_block.values().collect();
    assert!(orders.len() > 30);
    assert!(rec
        .events
        .windows(2)
        .all(|w| w[0].t_end <= w[1].t_start + 1e-9));
}

/// RMS of non-overlapping frames, one per envelope sample.
fn frame_rms(x: &[f32], frame: usize) -> Vec<f64> {
    x.chunks_exact(frame)
        .map(|c| (c.iter().map(|&v| v as f64 * v as f64).sum::<f64>() / frame as f64).sqrt())
        .collect()
}

/// Centred moving average over `w` samples.
fn smooth(x: &[f64], w: usize) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let (a, b) = (i.saturating_sub(w / 2), (i + w / 2 + 1).min(x.len()));
            x[a..b].iter().sum::<f64>() / (b - a) as f64
        })
        .collect()
}

#[test]
fn smc_high_gamma_tracks_the_audio_envelope() {
    let rec = subject();
    let cfg = PreprocessConfig {
        target_rate: 100.0,
        ..PreprocessConfig::default()
    };
    // Amplitude envelopes at 100 Hz smoothed over 0.25 s; SEEG leads the voice by 150 ms.
    let audio = smooth(
        &frame_rms(&rec.audio, (rec.audio_rate / 100.0) as usize),
        25,
    );
    let lag = 15;
    let smc = &rec.electrode_groups["SMC"];
    for c in 0..rec.seeg.n_channels() {
        let x: Vec<f64> = rec.seeg.channel(c).iter().map(|&v| v as f64).collect();
        let env = smooth(&envelope_channel(&x, rec.seeg_rate, &cfg).unwrap(), 25);
        let n = env.len().min(audio.len());
        let r = pearson(&env[..n - lag], &audio[lag..n]);
        if smc.contains(&c) {
            assert!(r > 0.3, "SMC channel {c}: r = {r}");
        } else {
            assert!(r.abs() < 0.1, "channel {c}: r = {r}");
        }
    }
}

#[test]
fn leak_free_subject_is_not_contaminated() {
    let rec = subject();
    let res = contamination_check(
        &rec.seeg,
        rec.seeg_rate,
        &rec.audio,
        rec.audio_rate,
        &ContaminationConfig::default(),
    )
    .unwrap();
    let flagged: Vec<usize> = res
        .iter()
        .filter(|r| r.flagged)
        .map(|r| r.channel)
        .collect();
    // 24 tests at alpha 0.01: at most one chance flag.
    assert!(flagged.len() <= 1, "{flagged:?}");
}
