//! IIR design (Butterworth bandpass, second-order notch) and zero-phase application.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FilterSpec {
    Bandpass {
        lo: f64,
        hi: f64,
        order: usize,
        zero_phase: bool,
    },
    Notch {
        center: f64,
        q: f64,
        zero_phase: bool,
    },
}

impl FilterSpec {
    pub fn bandpass(lo: f64, hi: f64) -> Self {
        FilterSpec::Bandpass {
            lo,
            hi,
            order: 4,
            zero_phase: true,
        }
    }

    pub fn notch(center: f64) -> Self {
        FilterSpec::Notch {
            center,
            q: 35.0,
            zero_phase: true,
        }
    }

    pub fn validate(&self, rate: f64) -> Result<()> {
        let nyq = rate / 2.0;
        match *self {
            FilterSpec::Bandpass { lo, hi, order, .. } => {
                if !(0.0 < lo && lo < hi && hi < nyq) {
                    return Err(Error::InvalidArgument(format!(
                        "band {lo}-{hi} Hz must satisfy 0 < lo < hi < {nyq}"
                    )));
                }
                if order == 0 {
                    return Err(Error::InvalidArgument(
                        "filter order must be positive".into(),
                    ));
                }
            }
            FilterSpec::Notch { center, q, .. } => {
                if !(0.0 < center && center < nyq) {
                    return Err(Error::InvalidArgument(format!(
                        "notch at {center} Hz outside (0, {nyq})"
                    )));
                }
                if q <= 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "notch q must be positive, got {q}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn zero_phase(&self) -> bool {
        match *self {
            FilterSpec::Bandpass { zero_phase, .. } | FilterSpec::Notch { zero_phase, .. } => {
                zero_phase
            }
        }
    }

    pub fn design(&self, rate: f64) -> Result<Vec<Biquad>> {
        self.validate(rate)?;
        Ok(match *self {
            FilterSpec::Bandpass { lo, hi, order, .. } => butter_bandpass(order, lo, hi, rate),
            FilterSpec::Notch { center, q, .. } => vec![iir_notch(center, q, rate)],
        })
    }
}

/// `H(z) = (b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    pub fn response(&self, w: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        (self.b[0] + z1 * self.b[1] + z2 * self.b[2]) / (1.0 + z1 * self.a[0] + z2 * self.a[1])
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Transposed direct form II state after a unit step has settled.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let z2 = self.b[2] - self.a[1] * g;
        [self.b[1] - self.a[0] * g + z2, z2]
    }

    fn run(&self, x: &mut [f64], mut z: [f64; 2]) {
        let Biquad { b, a } = *self;
        for v in x.iter_mut() {
            let y = b[0] * *v + z[0];
            z[0] = b[1] * *v - a[0] * y + z[1];
            z[1] = b[2] * *v - a[1] * y;
            *v = y;
        }
    }
}

/// Magnitude response of a cascade at `f` Hz.
pub fn cascade_gain(sections: &[Biquad], f: f64, rate: f64) -> f64 {
    let w = 2.0 * std::f64::consts::PI * f / rate;
    sections.iter().map(|s| s.response(w).norm()).product()
}

/// Order-`n` analog prototype, lowpass→bandpass, bilinear with prewarping.
/// Returns `n` sections; every section has zeros at z = ±1.
pub fn butter_bandpass(n: usize, lo: f64, hi: f64, rate: f64) -> Vec<Biquad> {
    use std::f64::consts::PI;
    let fs2 = 2.0 * rate;
    let w1 = fs2 * (PI * lo / rate).tan();
    let w2 = fs2 * (PI * hi / rate).tan();
    let w0sq = w1 * w2;
    let bw = w2 - w1;

    let mut poles = Vec::with_capacity(n);
    for k in 0..n {
        let p = Complex64::from_polar(1.0, PI * (2 * k + n + 1) as f64 / (2 * n) as f64);
        let disc = (p * p * bw * bw - 4.0 * w0sq).sqrt();
        for s in [(p * bw + disc) / 2.0, (p * bw - disc) / 2.0] {
            if s.im > 0.0 {
                poles.push((1.0 + s / fs2) / (1.0 - s / fs2));
            }
        }
    }
    debug_assert_eq!(poles.len(), n);

    let mut sections: Vec<Biquad> = poles
        .iter()
        .map(|z| Biquad {
            b: [1.0, 0.0, -1.0],
            a: [-2.0 * z.re, z.norm_sqr()],
        })
        .collect();
    let w_center = 2.0 * (w0sq.sqrt() / fs2).atan();
    let total: f64 = sections
        .iter()
        .map(|s| s.response(w_center).norm())
        .product();
    let g = total.powf(-1.0 / n as f64);
    for s in &mut sections {
        for b in &mut s.b {
            *b *= g;
        }
    }
    sections
}

pub fn iir_notch(center: f64, q: f64, rate: f64) -> Biquad {
    let w0 = 2.0 * std::f64::consts::PI * center / rate;
    let beta = (w0 / q / 2.0).tan();
    let gain = 1.0 / (1.0 + beta);
    let c = w0.cos();
    Biquad {
        b: [gain, -2.0 * gain * c, gain],
        a: [-2.0 * gain * c, 2.0 * gain - 1.0],
    }
}

/// Causal cascade from rest.
pub fn sosfilt(sections: &[Biquad], x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    for s in sections {
        s.run(&mut y, [0.0; 2]);
    }
    y
}

fn run_with_steady_state(sections: &[Biquad], y: &mut [f64]) {
    let mut scale = y.first().copied().unwrap_or(0.0);
    for s in sections {
        let zi = s.step_state();
        s.run(y, [zi[0] * scale, zi[1] * scale]);
        scale *= s.dc_gain();
    }
}

/// Forward-backward filtering with odd-extension padding and steady-state
/// initial conditions.
pub fn sosfiltfilt(sections: &[Biquad], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n < 2 {
        return x.to_vec();
    }
    let pad = (3 * (2 * sections.len() + 1)).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    run_with_steady_state(sections, &mut ext);
    ext.reverse();
    run_with_steady_state(sections, &mut ext);
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

pub fn apply_filter(x: &[f64], spec: &FilterSpec, rate: f64) -> Result<Vec<f64>> {
    let sections = spec.design(rate)?;
    Ok(if spec.zero_phase() {
        sosfiltfilt(&sections, x)
    } else {
        sosfilt(&sections, x)
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
    fn butterworth_matches_the_prewarped_analog_magnitude() {
        // |H| = 1/sqrt(1 + Ω^2N) with Ω = (w² − w0²)/(w·bw) on the warped axis.
        let (rate, lo, hi, n) = (2000.0, 70.0, 170.0, 4);
        let s = butter_bandpass(n, lo, hi, rate);
        assert_eq!(s.len(), n);
        let warp = |f: f64| 2.0 * rate * (PI * f / rate).tan();
        let (w1, w2) = (warp(lo), warp(hi));
        for f in [10.0, 50.0, 70.0, 100.0, 120.0, 170.0, 300.0, 600.0, 900.0] {
            let w = warp(f);
            let om = (w * w - w1 * w2) / (w * (w2 - w1));
            let expect = 1.0 / (1.0 + om.powi(2 * n as i32)).sqrt();
            let g = cascade_gain(&s, f, rate);
            assert!(
                (g - expect).abs() < 1e-9 * expect.max(1e-3),
                "{f} Hz: {g} vs {expect}"
            );
        }
        assert!((cascade_gain(&s, 70.0, rate) - 0.5f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn poles_are_inside_the_unit_circle() {
        for rate in [500.0, 1000.0, 2000.0, 48000.0] {
            for s in butter_bandpass(6, 70.0, 170.0, rate) {
                assert!(s.a[1] < 1.0 && s.a[1] > 0.0, "{rate}: {s:?}");
            }
        }
    }

    #[test]
    fn notch_matches_the_closed_form() {
        let s = iir_notch(50.0, 35.0, 2000.0);
        assert!(s.response(2.0 * PI * 50.0 / 2000.0).norm() < 1e-12);
        assert!((s.response(0.0).norm() - 1.0).abs() < 1e-12);
        let beta = (2.0 * PI * 50.0 / 2000.0 / 70.0).tan();
        assert!((s.b[0] - 1.0 / (1.0 + beta)).abs() < 1e-15);
    }

    #[test]
    fn zero_phase_output_has_no_lag() {
        let rate = 2000.0;
        let x = tone(120.0, rate, 4000);
        let y = apply_filter(&x, &FilterSpec::bandpass(70.0, 170.0), rate).unwrap();
        let xc = |lag: i64| -> f64 {
            (500..3500)
                .map(|i| x[i] * y[(i as i64 + lag) as usize])
                .sum()
        };
        let best = (-8..=8).max_by(|&a, &b| xc(a).total_cmp(&xc(b))).unwrap();
        assert_eq!(best, 0);
    }

    #[test]
    fn rejects_bands_beyond_nyquist() {
        assert!(apply_filter(&[0.0; 16], &FilterSpec::bandpass(70.0, 170.0), 300.0).is_err());
        assert!(apply_filter(&[0.0; 16], &FilterSpec::bandpass(170.0, 70.0), 2000.0).is_err());
        assert!(apply_filter(&[0.0; 16], &FilterSpec::notch(600.0), 1000.0).is_err());
    }

    #[test]
    fn steady_state_start_has_no_transient_on_constants() {
        let s = [iir_notch(50.0, 35.0, 1000.0)];
        let y = sosfiltfilt(&s, &[3.0; 200]);
        assert!(y.iter().all(|v| (v - 3.0).abs() < 1e-9));
    }
}
