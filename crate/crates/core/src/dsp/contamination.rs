//! Acoustic contamination check: correlation between SEEG and audio spectrograms
//! on a shared time-frequency grid, tested against circular-shift surrogates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::spectral::{n_frames, stft_frames};
use crate::datamodel::ChannelMatrix;
use crate::error::{Error, Result};
use crate::util::par_map;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContaminationConfig {
    pub win_s: f64,
    pub hop_s: f64,
    pub n_shifts: usize,
    pub alpha: f64,
    pub seed: u64,
    pub jobs: usize,
}

impl Default for ContaminationConfig {
    fn default() -> Self {
        ContaminationConfig {
            win_s: 0.2,
            hop_s: 0.1,
            n_shifts: 200,
            alpha: 0.01,
            seed: 0,
            jobs: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelContamination {
    pub channel: usize,
    pub max_corr: f64,
    pub peak_freq: f64,
    pub p_value: f64,
    pub flagged: bool,
}

/// Per-bin z-scores across frames (`bins × frames`); constant bins become `None`.
fn zscore_bins(frames: &[Vec<f64>], n_frames: usize, n_bins: usize) -> Vec<Option<Vec<f64>>> {
    (0..n_bins)
        .map(|b| {
            let col: Vec<f64> = frames[..n_frames].iter().map(|f| f[b]).collect();
            let m = col.iter().sum::<f64>() / n_frames as f64;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n_frames as f64;
            if var <= f64::MIN_POSITIVE || !var.is_finite() {
                return None;
            }
            let sd = var.sqrt();
            Some(col.iter().map(|v| (v - m) / sd).collect())
        })
        .collect()
}

fn fft_of(planner: &mut FftPlanner<f64>, z: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = z.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(z.len()).process(&mut buf);
    buf
}

/// Check every SEEG channel against the audio track.
pub fn contamination_check(
    seeg: &ChannelMatrix,
    seeg_rate: f64,
    audio: &[f32],
    audio_rate: f64,
    cfg: &ContaminationConfig,
) -> Result<Vec<ChannelContamination>> {
    let span_s = seeg.n_samples() as f64 / seeg_rate;
    let span_a = audio.len() as f64 / audio_rate;
    if (span_s - span_a).abs() > 1.0 / seeg_rate + 1.0 / audio_rate {
        return Err(Error::InvalidArgument(format!(
            "SEEG spans {span_s} s, audio spans {span_a} s"
        )));
    }
    let grid = |rate: f64| {
        (
            (cfg.win_s * rate).round() as usize,
            (cfg.hop_s * rate).round() as usize,
        )
    };
    let (win_x, hop_x) = grid(seeg_rate);
    let (win_a, hop_a) = grid(audio_rate);
    let same =
        |n_x: usize, n_a: usize| (n_x as f64 / seeg_rate - n_a as f64 / audio_rate).abs() < 1e-9;
    if win_x < 2 || hop_x < 1 || !same(win_x, win_a) || !same(hop_x, hop_a) {
        return Err(Error::InvalidArgument(format!(
            "window {} s / hop {} s do not give a common frame grid at {seeg_rate} and {audio_rate} Hz",
            cfg.win_s, cfg.hop_s
        )));
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must be in (0,1), got {}",
            cfg.alpha
        )));
    }
    let frames = n_frames(seeg.n_samples(), win_x, hop_x).min(n_frames(audio.len(), win_a, hop_a));
    if frames < 3 {
        return Err(Error::InvalidArgument(format!(
            "only {frames} frames on the common grid"
        )));
    }
    // Bin k sits at k / win_s Hz on both grids; keep 1..Nyquist of the slower stream.
    let n_bins = win_x.min(win_a) / 2 + 1;
    let bin_freq = |b: usize| b as f64 * seeg_rate / win_x as f64;

    let audio_d: Vec<f64> = audio.iter().map(|&v| v as f64).collect();
    let za = zscore_bins(&stft_frames(&audio_d, win_a, hop_a, n_bins), frames, n_bins);
    let mut planner = FftPlanner::new();
    let fa: Vec<Option<Vec<Complex64>>> = za
        .iter()
        .map(|z| z.as_ref().map(|z| fft_of(&mut planner, z)))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let shifts: Vec<usize> = (0..cfg.n_shifts)
        .map(|_| rng.random_range(1..frames))
        .collect();

    let reports = par_map(seeg.n_channels(), cfg.jobs, |c| {
        let x: Vec<f64> = seeg.channel(c).iter().map(|&v| v as f64).collect();
        let zx = zscore_bins(&stft_frames(&x, win_x, hop_x, n_bins), frames, n_bins);
        let mut planner = FftPlanner::new();
        let inv = planner.plan_fft_inverse(frames);
        let mut obs = 0.0f64;
        let mut peak_freq = 0.0;
        let mut null = vec![0.0f64; shifts.len()];
        for b in 1..n_bins {
            let (Some(a), Some(zb)) = (&fa[b], &zx[b]) else {
                continue;
            };
            let mut prod: Vec<Complex64> = fft_of(&mut planner, zb)
                .iter()
                .zip(a)
                .map(|(x, a)| a * x.conj())
                .collect();
            inv.process(&mut prod);
            let scale = 1.0 / (frames as f64 * frames as f64);
            let r0 = prod[0].re * scale;
            if r0 > obs {
                obs = r0;
                peak_freq = bin_freq(b);
            }
            for (nv, &s) in null.iter_mut().zip(&shifts) {
                *nv = nv.max(prod[s].re * scale);
            }
        }
        let exceed = null.iter().filter(|&&v| v >= obs).count();
        let p_value = if obs > 0.0 {
            (1 + exceed) as f64 / (shifts.len() + 1) as f64
        } else {
            1.0
        };
        ChannelContamination {
            channel: c,
            max_corr: obs,
            peak_freq,
            p_value,
            flagged: obs > 0.0 && p_value < cfg.alpha,
        }
    });
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn bursts(rate: f64, secs: f64, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = (rate * secs) as usize;
        (0..n)
            .map(|i| {
                let t = i as f64 / rate;
                let on = (t % 1.6) > 0.5 && (t % 1.6) < 1.0;
                let g: f64 = StandardNormal.sample(&mut rng);
                let v = if on {
                    (2.0 * std::f64::consts::PI * 300.0 * t).sin() * 0.5
                } else {
                    0.0
                };
                (v + 0.003 * g) as f32
            })
            .collect()
    }

    #[test]
    fn leaked_audio_is_flagged_and_noise_is_not() {
        let (ra, rs) = (4000.0, 1000.0);
        let audio = bursts(ra, 40.0, 1);
        let leak = crate::dsp::resample::resample_f32(&audio, ra, rs).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let noise: Vec<f32> = (0..leak.len())
            .map(|_| {
                let g: f64 = StandardNormal.sample(&mut rng);
                g as f32
            })
            .collect();
        let leaky: Vec<f32> = leak
            .iter()
            .zip(&noise)
            .map(|(a, n)| 0.1 * a + 0.01 * n)
            .collect();
        let m = ChannelMatrix::from_rows(&[leaky, noise, vec![0.0; leak.len()]]).unwrap();
        let r = contamination_check(&m, rs, &audio, ra, &ContaminationConfig::default()).unwrap();
        assert!(r[0].flagged, "{:?}", r[0]);
        assert!((r[0].peak_freq - 300.0).abs() <= 5.0);
        assert!(!r[1].flagged, "{:?}", r[1]);
        assert_eq!((r[2].max_corr, r[2].flagged), (0.0, false));
    }

    #[test]
    fn fft_correlation_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f64> = (0..37).map(|_| rng.random::<f64>()).collect();
        let x: Vec<f64> = (0..37).map(|_| rng.random::<f64>()).collect();
        let mut planner = FftPlanner::new();
        let (fa, fx) = (fft_of(&mut planner, &a), fft_of(&mut planner, &x));
        let mut prod: Vec<Complex64> = fa.iter().zip(&fx).map(|(a, x)| a * x.conj()).collect();
        planner.plan_fft_inverse(37).process(&mut prod);
        for s in [0, 1, 5, 36] {
            let direct: f64 = (0..37).map(|t| a[(t + s) % 37] * x[t]).sum();
            assert!((prod[s].re / 37.0 - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn mismatched_spans_are_rejected() {
        let m = ChannelMatrix::zeros(1, 1000);
        assert!(contamination_check(
            &m,
            1000.0,
            &vec![0.0; 3000],
            4000.0,
            &ContaminationConfig::default()
        )
        .is_err());
    }
}
