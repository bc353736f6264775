//! Audio-side features: mono mixdown, speech-center detection, speech /
//! non-speech window extraction, log-mel spectra and amplitude statistics.

use serde::{Deserialize, Serialize};

use crate::datamodel::{ChannelMatrix, TrialSegment};
use crate::dsp::spectral::stft_frames;
use crate::error::{Error, Result};

pub fn to_mono(channels: &[Vec<f32>]) -> Result<Vec<f32>> {
    let Some(first) = channels.first() else {
        return Err(Error::InvalidArgument("no audio channels".into()));
    };
    if channels.iter().any(|c| c.len() != first.len()) {
        return Err(Error::InvalidArgument(
            "audio channels differ in length".into(),
        ));
    }
    let k = channels.len() as f64;
    Ok((0..first.len())
        .map(|i| (channels.iter().map(|c| c[i] as f64).sum::<f64>() / k) as f32)
        .collect())
}

pub fn mean_squared_amplitude(clip: &[f32]) -> f64 {
    clip.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / clip.len().max(1) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeechDetectConfig {
    pub win_s: f64,
    pub hop_s: f64,
    pub smooth_frames: usize,
    pub threshold: f64,
}

impl Default for SpeechDetectConfig {
    fn default() -> Self {
        SpeechDetectConfig {
            win_s: 0.025,
            hop_s: 0.010,
            smooth_frames: 5,
            threshold: 0.4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeechActivity {
    pub center_s: f64,
    pub active_frames: Vec<bool>,
    pub frame_hop_s: f64,
}

/// Smoothed short-time energy (mean square per frame) and frame centers.
fn smoothed_energy(clip: &[f32], rate: f64, cfg: &SpeechDetectConfig) -> (Vec<f64>, Vec<f64>) {
    let win = ((cfg.win_s * rate).round() as usize).max(1);
    let hop = ((cfg.hop_s * rate).round() as usize).max(1);
    let n = if clip.len() >= win {
        1 + (clip.len() - win) / hop
    } else {
        0
    };
    let energy: Vec<f64> = (0..n)
        .map(|t| mean_squared_amplitude(&clip[t * hop..t * hop + win]))
        .collect();
    let half = cfg.smooth_frames / 2;
    let smooth = (0..n)
        .map(|t| {
            let (lo, hi) = (t.saturating_sub(half), (t + half + 1).min(n));
            energy[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    let times = (0..n)
        .map(|t| (t * hop) as f64 / rate + win as f64 / (2.0 * rate))
        .collect();
    (smooth, times)
}

/// Energy-weighted centroid of frames above `threshold · max`; falls back to
/// the centroid of all frames, then to the clip midpoint.
pub fn detect_speech_center_with(
    clip: &[f32],
    rate: f64,
    cfg: &SpeechDetectConfig,
) -> SpeechActivity {
    let (e, times) = smoothed_energy(clip, rate, cfg);
    let max = e.iter().cloned().fold(0.0, f64::max);
    let active: Vec<bool> = e
        .iter()
        .map(|&v| max > 0.0 && v > cfg.threshold * max)
        .collect();
    let centroid = |use_frame: &dyn Fn(usize) -> bool| {
        let (mut w, mut wt) = (0.0, 0.0);
        for (i, (&v, &t)) in e.iter().zip(&times).enumerate() {
            if use_frame(i) {
                w += v;
                wt += v * t;
            }
        }
        (w > 0.0).then(|| wt / w)
    };
    let duration = clip.len() as f64 / rate;
    let center = centroid(&|i| active[i])
        .or_else(|| centroid(&|_| true))
        .unwrap_or(duration / 2.0);
    SpeechActivity {
        center_s: center.clamp(0.0, duration),
        active_frames: active,
        frame_hop_s: cfg.hop_s,
    }
}

pub fn detect_speech_center(clip: &[f32], rate: f64) -> SpeechActivity {
    detect_speech_center_with(clip, rate, &SpeechDetectConfig::default())
}

/// Paired speech / non-speech windows from one trial.
#[derive(Clone, Debug, PartialEq)]
pub struct SpNs {
    pub trial_id: u32,
    pub sp_start_s: f64,
    pub ns_start_s: f64,
    pub y_sp: Vec<f32>,
    pub y_ns: Vec<f32>,
    pub x_sp: ChannelMatrix,
    pub x_ns: ChannelMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedTrial {
    pub trial_id: u32,
    pub reason: String,
}

/// Window placement inside a trial of `duration` seconds: the speech window
/// centred on `center` (clamped inside), and the non-overlapping extreme
/// window farthest from the center (ties go to the earlier one).
pub fn sp_ns_starts(
    duration: f64,
    center: f64,
    seg_s: f64,
) -> std::result::Result<(f64, f64), String> {
    if seg_s > duration {
        return Err(format!(
            "trial of {duration} s is shorter than the {seg_s} s segment"
        ));
    }
    let sp = (center - seg_s / 2.0).clamp(0.0, duration - seg_s);
    let overlaps = |s: f64| s < sp + seg_s - 1e-9 && sp < s + seg_s - 1e-9;
    let mut best: Option<(f64, f64)> = None;
    for cand in [0.0, duration - seg_s] {
        if overlaps(cand) {
            continue;
        }
        let dist = (cand + seg_s / 2.0 - center).abs();
        if best.is_none_or(|(_, d)| dist > d + 1e-9) {
            best = Some((cand, dist));
        }
    }
    best.map(|(ns, _)| (sp, ns)).ok_or_else(|| {
        format!(
            "no {seg_s} s window clear of the speech segment at {sp:.3} s in a {duration} s trial"
        )
    })
}

fn slice_at(x: &[f32], start_s: f64, len: usize, rate: f64) -> Vec<f32> {
    let s0 = ((start_s * rate).round() as usize).min(x.len().saturating_sub(len));
    x[s0..s0 + len].to_vec()
}

fn columns_at(m: &ChannelMatrix, start_s: f64, len: usize, rate: f64) -> ChannelMatrix {
    let s0 = ((start_s * rate).round() as usize).min(m.n_samples().saturating_sub(len));
    m.columns(s0, s0 + len)
}

pub fn extract_sp_ns(
    trial: &TrialSegment,
    act: &SpeechActivity,
    seg_s: f64,
    seeg_rate: f64,
    audio_rate: f64,
) -> std::result::Result<SpNs, SkippedTrial> {
    let skip = |reason: String| SkippedTrial {
        trial_id: trial.trial_id(),
        reason,
    };
    let duration = trial.audio_window.len() as f64 / audio_rate;
    let (sp, ns) = sp_ns_starts(duration, act.center_s, seg_s).map_err(skip)?;
    let (na, nx) = (
        (seg_s * audio_rate).round() as usize,
        (seg_s * seeg_rate).round() as usize,
    );
    if nx > trial.seeg_window.n_samples() || na > trial.audio_window.len() {
        return Err(skip("trial windows shorter than the segment".into()));
    }
    Ok(SpNs {
        trial_id: trial.trial_id(),
        sp_start_s: sp,
        ns_start_s: ns,
        y_sp: slice_at(&trial.audio_window, sp, na, audio_rate),
        y_ns: slice_at(&trial.audio_window, ns, na, audio_rate),
        x_sp: columns_at(&trial.seeg_window, sp, nx, seeg_rate),
        x_ns: columns_at(&trial.seeg_window, ns, nx, seeg_rate),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogMelConfig {
    pub n_mels: usize,
    pub win_s: f64,
    pub hop_s: f64,
}

impl Default for LogMelConfig {
    fn default() -> Self {
        LogMelConfig {
            n_mels: 40,
            win_s: 0.025,
            hop_s: 0.010,
        }
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters on the mel scale spanning 0..rate/2 (`n_mels × n_bins`)
/// and the filter center frequencies.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, rate: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let top = hz_to_mel(rate / 2.0);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let n_bins = n_fft / 2 + 1;
    let bank = (0..n_mels)
        .map(|m| {
            let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * rate / n_fft as f64;
                    ((f - lo) / (c - lo)).min((hi - f) / (hi - c)).max(0.0)
                })
                .collect()
        })
        .collect();
    (bank, edges[1..=n_mels].to_vec())
}

/// `log(mel power + 1e-10)`, `n_mels × frames`.
pub fn logmel(clip: &[f32], rate: f64, cfg: &LogMelConfig) -> Result<Vec<Vec<f64>>> {
    if rate < 8000.0 {
        return Err(Error::InvalidArgument(format!(
            "log-mel needs >= 8 kHz audio, got {rate} Hz"
        )));
    }
    let win = (cfg.win_s * rate).round() as usize;
    let hop = ((cfg.hop_s * rate).round() as usize).max(1);
    if clip.len() < win {
        return Err(Error::InvalidArgument(format!(
            "clip of {} samples is shorter than one frame",
            clip.len()
        )));
    }
    let x: Vec<f64> = clip.iter().map(|&v| v as f64).collect();
    let frames = stft_frames(&x, win, hop, win / 2 + 1);
    let (bank, _) = mel_filterbank(cfg.n_mels, win, rate);
    Ok(bank
        .iter()
        .map(|filt| {
            frames
                .iter()
                .map(|p| (filt.iter().zip(p).map(|(w, v)| w * v).sum::<f64>() + 1e-10).ln())
                .collect()
        })
        .collect())
}

/// Temporal mean ⊕ temporal (population) std of the log-mel spectrum.
pub fn logmel_stats(clip: &[f32], rate: f64, cfg: &LogMelConfig) -> Result<Vec<f32>> {
    let lm = logmel(clip, rate, cfg)?;
    let mut mean = Vec::with_capacity(lm.len());
    let mut sd = Vec::with_capacity(lm.len());
    for band in &lm {
        let m = band.iter().sum::<f64>() / band.len() as f64;
        let v = band.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / band.len() as f64;
        mean.push(m as f32);
        sd.push(v.sqrt() as f32);
    }
    mean.extend(sd);
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::TrialEvent;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(n: usize, scale: f64, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let g: f64 = StandardNormal.sample(&mut rng);
                (scale * g) as f32
            })
            .collect()
    }

    fn burst_clip(rate: f64, spans: &[(f64, f64)], seed: u64) -> Vec<f32> {
        let n = (1.6 * rate) as usize;
        let bg = noise(n, 1e-3, seed);
        let fg = noise(n, 1.0, seed + 100);
        (0..n)
            .map(|i| {
                let t = i as f64 / rate;
                if spans.iter().any(|&(a, b)| t >= a && t < b) {
                    fg[i]
                } else {
                    bg[i]
                }
            })
            .collect()
    }

    #[test]
    fn mono_examples() {
        assert_eq!(
            to_mono(&[vec![1.0, 1.0], vec![3.0, 3.0]]).unwrap(),
            vec![2.0, 2.0]
        );
        assert_eq!(to_mono(&[vec![0.5, -2.0]]).unwrap(), vec![0.5, -2.0]);
        assert!(to_mono(&[vec![1.0, -1.0], vec![-1.0, 1.0]])
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn single_burst_center() {
        let act = detect_speech_center(&burst_clip(16000.0, &[(0.6, 1.1)], 1), 16000.0);
        assert!((act.center_s - 0.85).abs() <= 0.03, "{}", act.center_s);
        assert!((act.frame_hop_s - 0.01).abs() < 1e-12);
    }

    #[test]
    fn double_burst_and_silence_centers() {
        let clip = burst_clip(16000.0, &[(0.3, 0.5), (1.1, 1.3)], 2);
        assert!((detect_speech_center(&clip, 16000.0).center_s - 0.8).abs() <= 0.05);
        let quiet = noise(25600, 1e-4, 3);
        assert!((detect_speech_center(&quiet, 16000.0).center_s - 0.8).abs() <= 0.08);
        assert!((detect_speech_center(&vec![0.0; 25600], 16000.0).center_s - 0.8).abs() < 1e-9);
    }

    #[test]
    fn speech_center_is_shift_equivariant() {
        let a = detect_speech_center(&burst_clip(16000.0, &[(0.4, 0.9)], 4), 16000.0).center_s;
        let b = detect_speech_center(&burst_clip(16000.0, &[(0.6, 1.1)], 4), 16000.0).center_s;
        assert!((b - a - 0.2).abs() <= 0.01 + 1e-9, "{a} {b}");
    }

    #[test]
    fn window_placement_examples() {
        let (sp, ns) = sp_ns_starts(1.6, 0.8, 0.5).unwrap();
        assert!((sp - 0.55).abs() < 1e-12);
        assert_eq!(ns, 0.0);
        let (sp, ns) = sp_ns_starts(1.6, 0.2, 0.5).unwrap();
        assert_eq!(sp, 0.0);
        assert!((ns - 1.1).abs() < 1e-12);
        let (_, ns) = sp_ns_starts(1.6, 0.95, 0.5).unwrap();
        assert_eq!(ns, 0.0);
        assert!(sp_ns_starts(0.9, 0.45, 0.5).is_err());
    }

    #[test]
    fn extraction_shapes() {
        let ev = TrialEvent {
            trial_id: 3,
            session: 1,
            block: 1,
            word_label: 0,
            initial_label: 0,
            final_label: 0,
            tone_label: 0,
            t_start: 0.0,
            t_end: 1.6,
        };
        let seg = TrialSegment {
            event: ev,
            seeg_window: ChannelMatrix::zeros(5, 320),
            audio_window: vec![0.0; 25600],
        };
        let act = SpeechActivity {
            center_s: 0.8,
            active_frames: vec![],
            frame_hop_s: 0.01,
        };
        let s = extract_sp_ns(&seg, &act, 0.5, 200.0, 16000.0).unwrap();
        assert_eq!((s.x_sp.n_channels(), s.x_sp.n_samples()), (5, 100));
        assert_eq!(s.y_sp.len(), 8000);
        assert_eq!(s.y_ns.len(), 8000);
    }

    #[test]
    fn logmel_frames_and_filters() {
        let clip = noise(16000, 0.1, 5);
        let lm = logmel(&clip, 16000.0, &LogMelConfig::default()).unwrap();
        assert_eq!(lm.len(), 40);
        assert_eq!(lm[0].len(), 1 + (16000 - 400) / 160);
        let (bank, centers) = mel_filterbank(40, 400, 16000.0);
        for (f, c) in bank.iter().zip(&centers) {
            assert!(f.iter().sum::<f64>() > 0.0);
            let peak = (0..f.len()).max_by(|&a, &b| f[a].total_cmp(&f[b])).unwrap();
            assert!(
                (peak as f64 * 40.0 - c).abs() <= 40.0,
                "peak bin {peak} vs center {c}"
            );
        }
    }

    #[test]
    fn tone_lands_in_its_mel_band() {
        let rate = 16000.0;
        let clip: Vec<f32> = (0..16000)
            .map(|i| (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / rate).sin() as f32)
            .collect();
        let lm = logmel(&clip, rate, &LogMelConfig::default()).unwrap();
        let mean: Vec<f64> = lm.iter().map(|b| b.iter().sum::<f64>()).collect();
        let best = (0..40)
            .max_by(|&a, &b| mean[a].total_cmp(&mean[b]))
            .unwrap();
        // Oracle: the band whose center is nearest 1 kHz on the mel axis.
        let step = hz_to_mel(8000.0) / 41.0;
        let expect = ((hz_to_mel(1000.0) / step).round() as usize) - 1;
        assert_eq!(best, expect);
    }

    #[test]
    fn logmel_scaling_and_stats() {
        let clip = noise(8000, 0.1, 6);
        let louder: Vec<f32> = clip.iter().map(|v| v * 2.0).collect();
        let cfg = LogMelConfig::default();
        let (a, b) = (
            logmel(&clip, 16000.0, &cfg).unwrap(),
            logmel(&louder, 16000.0, &cfg).unwrap(),
        );
        for (ra, rb) in a.iter().zip(&b) {
            for (x, y) in ra.iter().zip(rb) {
                assert!(y > x);
            }
        }
        let flipped: Vec<f32> = clip.iter().map(|v| -v).collect();
        assert_eq!(logmel(&flipped, 16000.0, &cfg).unwrap(), a);
        assert_eq!(logmel_stats(&clip, 16000.0, &cfg).unwrap().len(), 80);
    }

    #[test]
    fn mean_square_examples() {
        let s: Vec<f32> = (0..48000)
            .map(|i| (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 48000.0).sin() as f32)
            .collect();
        assert!((mean_squared_amplitude(&s) - 0.5).abs() < 1e-3);
        assert_eq!(mean_squared_amplitude(&[0.0; 10]), 0.0);
    }
}
