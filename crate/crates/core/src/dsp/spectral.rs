//! Analytic-signal envelope, Morlet wavelet power and short-time spectra.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Magnitude of the FFT-based analytic signal.
pub fn hilbert_envelope(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let half = n / 2;
    for (k, v) in buf.iter_mut().enumerate() {
        let h = if k == 0 || (n.is_multiple_of(2) && k == half) {
            1.0
        } else if k <= (n - 1) / 2 {
            2.0
        } else {
            0.0
        };
        *v *= h / n as f64;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.norm()).collect()
}

/// Complex Morlet wavelet at `freq`: Gaussian envelope with σ = n_cycles/(2πf),
/// normalized to unit sum, truncated at ±4σ.
pub fn morlet_wavelet(freq: f64, rate: f64, n_cycles: f64) -> Vec<Complex64> {
    let sigma = n_cycles / (2.0 * std::f64::consts::PI * freq);
    let half = (4.0 * sigma * rate).ceil() as i64;
    let env: Vec<f64> = (-half..=half)
        .map(|i| {
            let t = i as f64 / rate;
            (-t * t / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = env.iter().sum();
    (-half..=half)
        .zip(env)
        .map(|(i, g)| {
            Complex64::from_polar(g / s, 2.0 * std::f64::consts::PI * freq * i as f64 / rate)
        })
        .collect()
}

/// `|x ⋆ ψ_f|²` per frequency (F × len), centered ("same") convolution via FFT.
pub fn morlet_power(x: &[f64], rate: f64, freqs: &[f64], n_cycles: f64) -> Result<Vec<Vec<f64>>> {
    if let Some(&f) = freqs.iter().find(|&&f| !(f > 0.0 && f < rate / 2.0)) {
        return Err(Error::InvalidArgument(format!(
            "Morlet frequency {f} Hz outside (0, {})",
            rate / 2.0
        )));
    }
    let n = x.len();
    let mut planner = FftPlanner::new();
    let mut out = Vec::with_capacity(freqs.len());
    for &f in freqs {
        let w = morlet_wavelet(f, rate, n_cycles);
        let half = w.len() / 2;
        let m = (n + w.len() - 1).next_power_of_two();
        let fwd = planner.plan_fft_forward(m);
        let mut a: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        a.resize(m, Complex64::default());
        let mut b = w;
        b.resize(m, Complex64::default());
        fwd.process(&mut a);
        fwd.process(&mut b);
        for (p, q) in a.iter_mut().zip(&b) {
            *p *= q / m as f64;
        }
        planner.plan_fft_inverse(m).process(&mut a);
        out.push(a[half..half + n].iter().map(|c| c.norm_sqr()).collect());
    }
    Ok(out)
}

/// Mean over the frequency axis of a Morlet power matrix.
pub fn band_average(power: &[Vec<f64>]) -> Vec<f64> {
    let n = power.first().map_or(0, Vec::len);
    let mut avg = vec![0.0; n];
    for row in power {
        for (a, v) in avg.iter_mut().zip(row) {
            *a += v;
        }
    }
    for a in &mut avg {
        *a /= power.len() as f64;
    }
    avg
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrogram {
    pub freqs: Vec<f64>,
    pub times: Vec<f64>,
    /// `power[f][frame]`.
    pub power: Vec<Vec<f64>>,
}

pub fn n_frames(n: usize, win: usize, hop: usize) -> usize {
    if win > n {
        0
    } else {
        1 + (n - win) / hop
    }
}

pub fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Hann-windowed power for bins `0..n_bins`, stored frame-major
/// (`frames × n_bins`).
pub(crate) fn stft_frames(x: &[f64], win: usize, hop: usize, n_bins: usize) -> Vec<Vec<f64>> {
    let frames = n_frames(x.len(), win, hop);
    let w = hann(win);
    let fft = FftPlanner::new().plan_fft_forward(win);
    let mut buf = vec![Complex64::default(); win];
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    (0..frames)
        .map(|t| {
            let seg = &x[t * hop..t * hop + win];
            for ((b, &v), &wv) in buf.iter_mut().zip(seg).zip(&w) {
                *b = Complex64::new(v * wv, 0.0);
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            buf[..n_bins].iter().map(|c| c.norm_sqr()).collect()
        })
        .collect()
}

pub fn stft_power(x: &[f64], rate: f64, win_s: f64, hop_s: f64) -> Result<Spectrogram> {
    let win = (win_s * rate).round() as usize;
    let hop = ((hop_s * rate).round() as usize).max(1);
    if win < 2 {
        return Err(Error::InvalidArgument(format!(
            "STFT window of {win} samples, need >= 2"
        )));
    }
    if win > x.len() {
        return Err(Error::InvalidArgument(format!(
            "STFT window {win} longer than signal {}",
            x.len()
        )));
    }
    let n_bins = win / 2 + 1;
    let frames = stft_frames(x, win, hop, n_bins);
    let mut power = vec![Vec::with_capacity(frames.len()); n_bins];
    for fr in &frames {
        for (row, &p) in power.iter_mut().zip(fr) {
            row.push(p);
        }
    }
    Ok(Spectrogram {
        freqs: (0..n_bins).map(|k| k as f64 * rate / win as f64).collect(),
        times: (0..frames.len())
            .map(|t| (t * hop) as f64 / rate + win as f64 / (2.0 * rate))
            .collect(),
        power,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone(f: f64, rate: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * PI * f * i as f64 / rate).sin())
            .collect()
    }

    #[test]
    fn envelope_of_a_tone_is_flat() {
        let x: Vec<f64> = tone(100.0, 2000.0, 2000).iter().map(|v| 2.0 * v).collect();
        let e = hilbert_envelope(&x);
        assert!(e[20..1980].iter().all(|v| (v - 2.0).abs() < 0.02));
        assert!(hilbert_envelope(&[0.0; 64]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn envelope_recovers_am_modulator() {
        let rate = 2000.0;
        let x: Vec<f64> = (0..2000)
            .map(|i| {
                let t = i as f64 / rate;
                (1.0 + 0.5 * (2.0 * PI * 5.0 * t).cos()) * (2.0 * PI * 100.0 * t).sin()
            })
            .collect();
        let e = hilbert_envelope(&x);
        for i in 100..1900 {
            let m = 1.0 + 0.5 * (2.0 * PI * 5.0 * i as f64 / rate).cos();
            assert!(((e[i] - m) / m).abs() <= 0.02, "{i}: {} vs {m}", e[i]);
        }
    }

    #[test]
    fn odd_length_envelope() {
        let x = tone(50.0, 1000.0, 999);
        let e = hilbert_envelope(&x);
        assert!(e[50..950].iter().all(|v| (v - 1.0).abs() < 0.02));
    }

    #[test]
    fn morlet_peaks_at_the_tone_and_scales_quadratically() {
        let rate = 2000.0;
        let x = tone(100.0, rate, 2000);
        let freqs: Vec<f64> = (0..=10).map(|k| 70.0 + 10.0 * k as f64).collect();
        let p = morlet_power(&x, rate, &freqs, 7.0).unwrap();
        let mean: Vec<f64> = p.iter().map(|r| r[500..1500].iter().sum::<f64>()).collect();
        let best = (0..freqs.len())
            .max_by(|&a, &b| mean[a].total_cmp(&mean[b]))
            .unwrap();
        assert_eq!(freqs[best], 100.0);

        let x3: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
        let p3 = morlet_power(&x3, rate, &freqs, 7.0).unwrap();
        for (r, r3) in p.iter().zip(&p3) {
            for (a, b) in r.iter().zip(r3) {
                assert!((b - 9.0 * a).abs() <= 1e-6 * b.abs().max(1e-12));
            }
        }
        assert!(morlet_power(&[0.0; 100], rate, &freqs, 7.0)
            .unwrap()
            .iter()
            .flatten()
            .all(|&v| v == 0.0));
        assert!(morlet_power(&x, rate, &[1000.0], 7.0).is_err());
    }

    #[test]
    fn stft_frame_count_and_peak() {
        let x = tone(100.0, 1000.0, 400);
        let s = stft_power(&x, 1000.0, 0.1, 0.05).unwrap();
        assert_eq!(s.times.len(), 7);
        assert_eq!(s.power.len(), 51);
        for t in 0..7 {
            let best = (0..51)
                .max_by(|&a, &b| s.power[a][t].total_cmp(&s.power[b][t]))
                .unwrap();
            assert_eq!(s.freqs[best], 100.0);
        }
        assert!(stft_power(&[0.0; 400], 1000.0, 0.1, 0.05)
            .unwrap()
            .power
            .iter()
            .flatten()
            .all(|&v| v == 0.0));
        assert!(stft_power(&x, 1000.0, 1.0, 0.05).is_err());
    }
}
