//! Synthetic subjects: paired SEEG + audio recordings following the
//! cue/read-aloud block protocol, with a controllable high-gamma signal on
//! the sensorimotor electrode and optional acoustic leakage.
//!
//! Every random draw comes from a ChaCha stream keyed by `(seed, purpose,
//! index...)`, so trials and channels can be generated in any order.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    ChannelMatrix, Corpus, CorpusWord, Recording, Referencing, TrialEvent, N_WORDS,
};
use crate::dsp::resample_f32;
use crate::error::{Error, Result};
use crate::util::{derive_seed, par_map};

const S_CORPUS: u64 = 1;
const S_ORDER: u64 = 2;
const S_TRIAL: u64 = 3;
const S_AUDIO_NOISE: u64 = 4;
const S_PINK: u64 = 5;
const S_CARRIER: u64 = 6;
const S_PATTERN: u64 = 7;

/// First-formant frequencies, indexed by `word % 6`.
pub const F1_SET: [f64; 6] = [300.0, 430.0, 560.0, 690.0, 820.0, 950.0];
/// Second-formant frequencies, indexed by `word / 6`.
pub const F2_SET: [f64; 8] = [
    1100.0, 1400.0, 1700.0, 2000.0, 2300.0, 2600.0, 2900.0, 3200.0,
];
pub const HIGH_GAMMA: (f64, f64) = (70.0, 170.0);
const FORMANT_AMP: f64 = 0.4;
const PITCH_AMP: f64 = 0.25;
const NOISE_FLOOR: f64 = 0.003;
const BURST_S: f64 = 0.5;
const PATTERN_S: f64 = 0.4;

fn rng_for(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, keys))
}

/// 48 words; initials, finals and tones assigned by independent permutations
/// so that every initial has 2 words, every final 3 and every tone 12.
pub fn gen_corpus(seed: u64) -> Corpus {
    let mut rng = rng_for(seed, &[S_CORPUS]);
    let mut perm = || {
        let mut p: Vec<u32> = (0..N_WORDS as u32).collect();
        p.shuffle(&mut rng);
        p
    };
    let (pi, pf, pt) = (perm(), perm(), perm());
    let words = (0..N_WORDS)
        .map(|w| CorpusWord {
            word_label: w as u32,
            initial_label: pi[w] / 2,
            final_label: pf[w] / 3,
            tone_label: pt[w] / 12,
        })
        .collect();
    Corpus { words }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeSpec {
    pub name: String,
    pub n_contacts: usize,
}

impl ElectrodeSpec {
    pub fn new(name: &str, n_contacts: usize) -> Self {
        ElectrodeSpec {
            name: name.to_string(),
            n_contacts,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub subject_id: String,
    pub n_sessions: u32,
    pub n_blocks: u32,
    pub corpus: Corpus,
    pub seeg_rate: f64,
    pub audio_rate: f64,
    /// Shafts in channel order; channel indices run through them consecutively.
    pub electrodes: Vec<ElectrodeSpec>,
    pub smc_channels: Vec<usize>,
    /// High-gamma carrier SNR against the in-band background; `None` = no signal.
    pub snr_db: Option<f64>,
    pub leak_channels: Vec<usize>,
    pub leak_gain: f64,
    /// SEEG activity leads the acoustic burst by this much.
    pub latency_s: f64,
    pub lead_s: f64,
    pub trial_s: f64,
}

impl SynthConfig {
    /// Three 8-contact shafts (`SMC`, `A`, `B`), signal on `SMC`.
    pub fn new(seed: u64) -> Self {
        SynthConfig {
            seed,
            subject_id: format!("synth-{seed}"),
            n_sessions: 4,
            n_blocks: 10,
            corpus: gen_corpus(seed),
            seeg_rate: 2000.0,
            audio_rate: 48000.0,
            electrodes: vec![
                ElectrodeSpec::new("SMC", 8),
                ElectrodeSpec::new("A", 8),
                ElectrodeSpec::new("B", 8),
            ],
            smc_channels: (0..8).collect(),
            snr_db: Some(10.0),
            leak_channels: Vec::new(),
            leak_gain: 0.1,
            latency_s: 0.15,
            lead_s: 1.0,
            trial_s: 1.6,
        }
    }

    pub fn n_channels(&self) -> usize {
        self.electrodes.iter().map(|e| e.n_contacts).sum()
    }

    pub fn n_trials(&self) -> usize {
        (self.n_sessions * self.n_blocks) as usize * N_WORDS
    }

    /// Whole seconds covering lead, all trials and one second of tail.
    pub fn duration_s(&self) -> f64 {
        (self.lead_s + self.n_trials() as f64 * self.trial_s + 1.0).ceil()
    }

    pub fn channel_names(&self) -> Vec<String> {
        self.electrodes
            .iter()
            .flat_map(|e| (1..=e.n_contacts).map(move |k| format!("{}{k}", e.name)))
            .collect()
    }

    pub fn electrode_groups(&self) -> BTreeMap<String, Vec<usize>> {
        let mut start = 0;
        let mut g = BTreeMap::new();
        for e in &self.electrodes {
            g.insert(e.name.clone(), (start..start + e.n_contacts).collect());
            start += e.n_contacts;
        }
        g
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let n = self.n_channels();
        if let Some(&c) = self
            .smc_channels
            .iter()
            .chain(&self.leak_channels)
            .find(|&&c| c >= n)
        {
            return bad(format!("channel {c} out of range for {n} channels"));
        }
        if let Some(s) = self.snr_db {
            if !s.is_finite() {
                return bad(format!(
                    "snr_db must be finite, got {s} (use no signal instead)"
                ));
            }
        }
        if self.seeg_rate <= 2.0 * HIGH_GAMMA.1 {
            return bad(format!(
                "SEEG rate {} Hz cannot carry the {:?} Hz band",
                self.seeg_rate, HIGH_GAMMA
            ));
        }
        if self.audio_rate <= 2.0 * F2_SET[7] {
            return bad(format!(
                "audio rate {} Hz is below twice the top formant",
                self.audio_rate
            ));
        }
        if self.n_sessions == 0 || self.n_blocks == 0 {
            return bad("need at least one session and one block".into());
        }
        if let Some(e) = self.electrodes.iter().find(|e| e.n_contacts < 2) {
            return bad(format!(
                "electrode {} has {} contacts",
                e.name, e.n_contacts
            ));
        }
        if self.trial_s < 1.0 + BURST_S / 2.0 {
            return bad(format!(
                "trial of {} s cannot hold a burst centred up to 1.0 s",
                self.trial_s
            ));
        }
        self.corpus.validate()
    }
}

/// Per-trial randomness: burst placement, formant jitter and gain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialDraw {
    pub center_s: f64,
    pub f1: f64,
    pub f2: f64,
    pub gain: f64,
    pub pattern_gain: f64,
}

pub fn trial_draw(cfg: &SynthConfig, trial_id: u32, word_label: u32) -> TrialDraw {
    let mut rng = rng_for(cfg.seed, &[S_TRIAL, trial_id as u64]);
    let w = word_label as usize;
    TrialDraw {
        center_s: rng.random_range(0.5..=1.0),
        f1: F1_SET[w % 6] * (1.0 + rng.random_range(-0.01..0.01)),
        f2: F2_SET[w / 6] * (1.0 + rng.random_range(-0.01..0.01)),
        gain: rng.random_range(0.9..1.1),
        pattern_gain: rng.random_range(0.9..1.1),
    }
}

fn hann_at(tau: f64) -> f64 {
    if (0.0..=1.0).contains(&tau) {
        0.5 - 0.5 * (2.0 * std::f64::consts::PI * tau).cos()
    } else {
        0.0
    }
}

/// Fundamental frequency over the burst, `tau ∈ [0, 1]`. Kept at or above
/// 220 Hz so the voice never shares the high-gamma band with the neural signal.
pub fn pitch_contour(tone: u32, tau: f64) -> f64 {
    match tone {
        0 => 250.0,
        1 => 220.0 + 100.0 * tau,
        2 => 260.0 - 160.0 * tau * (1.0 - tau),
        _ => 320.0 - 100.0 * tau,
    }
}

/// Voiced burst only (no background), `trial_s` long.
fn trial_burst(cfg: &SynthConfig, draw: &TrialDraw, tone_label: u32) -> Vec<f64> {
    use std::f64::consts::PI;
    let n = (cfg.trial_s * cfg.audio_rate).round() as usize;
    let start = draw.center_s - BURST_S / 2.0;
    let dt = 1.0 / cfg.audio_rate;
    let mut phase = 0.0;
    (0..n)
        .map(|i| {
            let t = i as f64 * dt;
            let tau = (t - start) / BURST_S;
            let env = hann_at(tau);
            if env == 0.0 {
                return 0.0;
            }
            phase += 2.0 * PI * pitch_contour(tone_label, tau) * dt;
            let v = FORMANT_AMP * ((2.0 * PI * draw.f1 * t).sin() + (2.0 * PI * draw.f2 * t).sin())
                + PITCH_AMP * phase.sin();
            draw.gain * env * v
        })
        .collect()
}

/// One 1.6 s (by default) clip: a Hann-tapered voiced burst plus a low white
/// noise floor. Deterministic in `(cfg.seed, trial_id)`.
pub fn gen_trial_audio(
    word_label: u32,
    tone_label: u32,
    cfg: &SynthConfig,
    trial_id: u32,
) -> Vec<f32> {
    let draw = trial_draw(cfg, trial_id, word_label);
    let mut rng = rng_for(cfg.seed, &[S_AUDIO_NOISE, trial_id as u64]);
    trial_burst(cfg, &draw, tone_label)
        .into_iter()
        .map(|v| {
            let g: f64 = StandardNormal.sample(&mut rng);
            (v + NOISE_FLOOR * g) as f32
        })
        .collect()
}

/// Block-randomized event list.
pub fn gen_events(cfg: &SynthConfig) -> Vec<TrialEvent> {
    let mut events = Vec::with_capacity(cfg.n_trials());
    for session in 1..=cfg.n_sessions {
        for block in 1..=cfg.n_blocks {
            let mut order: Vec<u32> = (0..N_WORDS as u32).collect();
            order.shuffle(&mut rng_for(
                cfg.seed,
                &[S_ORDER, session as u64, block as u64],
            ));
            for w in order {
                let k = events.len();
                let cw = cfg.corpus.word(w).expect("validated corpus");
                let t_start = cfg.lead_s + k as f64 * cfg.trial_s;
                events.push(TrialEvent {
                    trial_id: k as u32,
                    session,
                    block,
                    word_label: w,
                    initial_label: cw.initial_label,
                    final_label: cw.final_label,
                    tone_label: cw.tone_label,
                    t_start,
                    t_end: t_start + cfg.trial_s,
                });
            }
        }
    }
    events
}

/// Real noise with power spectrum ∝ `weight(f)²`, scaled to unit variance.
fn shaped_noise(n: usize, rate: f64, seed: u64, weight: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf: Vec<Complex64> = (0..n)
        .map(|_| {
            let g: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(g, 0.0)
        })
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let kk = k.min(n - k);
        *v *= weight(kk as f64 * rate / n as f64);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let x: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let m = x.iter().sum::<f64>() / n as f64;
    let sd = (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64).sqrt();
    x.iter().map(|v| (v - m) / sd).collect()
}

fn pink_weight(f: f64) -> f64 {
    if f > 0.0 {
        f.sqrt().recip()
    } else {
        0.0
    }
}

fn band_weight(f: f64) -> f64 {
    if (HIGH_GAMMA.0..=HIGH_GAMMA.1).contains(&f) {
        1.0
    } else {
        0.0
    }
}

/// Expected RMS of unit-variance pink noise inside the high-gamma band.
pub fn pink_band_rms(n: usize, rate: f64) -> f64 {
    let (mut band, mut total) = (0.0, 0.0);
    for k in 1..n {
        let f = k.min(n - k) as f64 * rate / n as f64;
        let p = pink_weight(f).powi(2);
        total += p;
        if band_weight(f) > 0.0 {
            band += p;
        }
    }
    (band / total).sqrt()
}

/// Word- and channel-specific articulatory modulation, ≤ 1, over `tau ∈ [0,1]`
/// of the pattern window.
#[derive(Clone, Copy, Debug)]
struct Pattern {
    amp: f64,
    mu: [f64; 2],
    h: [f64; 2],
}

impl Pattern {
    fn draw(seed: u64, word: u32, smc_index: usize) -> Self {
        let mut rng = rng_for(seed, &[S_PATTERN, word as u64, smc_index as u64]);
        Pattern {
            amp: rng.random_range(0.25..=1.0),
            mu: [rng.random_range(0.15..0.85), rng.random_range(0.15..0.85)],
            h: [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)],
        }
    }

    fn at(&self, tau: f64) -> f64 {
        let bump = |mu: f64| (-(tau - mu).powi(2) / (2.0 * 0.125f64.powi(2))).exp();
        let shape = (self.h[0] * bump(self.mu[0]) + self.h[1] * bump(self.mu[1]))
            / (self.h[0] + self.h[1] + 1e-12);
        self.amp * hann_at(tau) * (0.5 + 0.5 * shape)
    }
}

pub fn gen_recording(cfg: &SynthConfig) -> Result<Recording> {
    gen_recording_with_jobs(cfg, 1)
}

/// As [`gen_recording`]; `jobs` only changes wall time, never the output.
pub fn gen_recording_with_jobs(cfg: &SynthConfig, jobs: usize) -> Result<Recording> {
    cfg.validate()?;
    let events = gen_events(cfg);
    let dur = cfg.duration_s();
    let n_seeg = (dur * cfg.seeg_rate).round() as usize;
    let n_audio = (dur * cfg.audio_rate).round() as usize;
    let draws: Vec<TrialDraw> = events
        .iter()
        .map(|e| trial_draw(cfg, e.trial_id, e.word_label))
        .collect();

    let mut noise_rng = rng_for(cfg.seed, &[S_AUDIO_NOISE, u64::MAX]);
    let mut audio: Vec<f32> = (0..n_audio)
        .map(|_| {
            let g: f64 = StandardNormal.sample(&mut noise_rng);
            (NOISE_FLOOR * g) as f32
        })
        .collect();
    for e in &events {
        let clip = gen_trial_audio(e.word_label, e.tone_label, cfg, e.trial_id);
        let s0 = (e.t_start * cfg.audio_rate).round() as usize;
        let end = (s0 + clip.len()).min(n_audio);
        audio[s0..end].copy_from_slice(&clip[..end - s0]);
    }

    let leak = if cfg.leak_channels.is_empty() {
        Vec::new()
    } else {
        let mut l = resample_f32(&audio, cfg.audio_rate, cfg.seeg_rate)?;
        l.resize(n_seeg, 0.0);
        l
    };
    let amp = cfg
        .snr_db
        .map(|db| pink_band_rms(n_seeg, cfg.seeg_rate) * 10f64.powf(db / 20.0));
    let patterns: Vec<Vec<Pattern>> = (0..cfg.smc_channels.len())
        .map(|j| {
            (0..N_WORDS as u32)
                .map(|w| Pattern::draw(cfg.seed, w, j))
                .collect()
        })
        .collect();

    let rows = par_map(cfg.n_channels(), jobs, |c| {
        let mut x = shaped_noise(
            n_seeg,
            cfg.seeg_rate,
            derive_seed(cfg.seed, &[S_PINK, c as u64]),
            pink_weight,
        );
        if let (Some(a), Some(j)) = (amp, cfg.smc_channels.iter().position(|&s| s == c)) {
            let carrier = shaped_noise(
                n_seeg,
                cfg.seeg_rate,
                derive_seed(cfg.seed, &[S_CARRIER, c as u64]),
                band_weight,
            );
            let half = (PATTERN_S * cfg.seeg_rate / 2.0).ceil() as i64;
            for (e, d) in events.iter().zip(&draws) {
                let p = &patterns[j][e.word_label as usize];
                let center = e.t_start + d.center_s - cfg.latency_s;
                let ic = (center * cfg.seeg_rate).round() as i64;
                for i in (ic - half).max(0)..(ic + half + 1).min(n_seeg as i64) {
                    let tau = (i as f64 / cfg.seeg_rate - center) / PATTERN_S + 0.5;
                    let m = p.at(tau);
                    if m > 0.0 {
                        x[i as usize] += a * d.pattern_gain * m * carrier[i as usize];
                    }
                }
            }
        }
        if cfg.leak_channels.contains(&c) {
            for (v, l) in x.iter_mut().zip(&leak) {
                *v += cfg.leak_gain * *l as f64;
            }
        }
        x.into_iter().map(|v| v as f32).collect::<Vec<f32>>()
    });

    let rec = Recording {
        subject_id: cfg.subject_id.clone(),
        seeg_rate: cfg.seeg_rate,
        audio_rate: cfg.audio_rate,
        channel_names: cfg.channel_names(),
        electrode_groups: cfg.electrode_groups(),
        seeg: ChannelMatrix::from_rows(&rows)?,
        audio,
        events,
        corpus: cfg.corpus.clone(),
        referencing: Referencing::Raw,
    };
    rec.validate()?;
    Ok(rec)
}
