//! Rational polyphase resampling with a Kaiser-windowed sinc lowpass.

use crate::error::{Error, Result};

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Reduced `(up, down)` with `up/down = to/from`; rates are resolved to 1 mHz.
pub fn rational_ratio(from: f64, to: f64) -> Result<(usize, usize)> {
    if !(from > 0.0 && to > 0.0 && from.is_finite() && to.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "resample rates must be positive ({from} -> {to})"
        )));
    }
    let (f, t) = ((from * 1000.0).round() as u64, (to * 1000.0).round() as u64);
    let g = gcd(f, t);
    Ok(((t / g) as usize, (f / g) as usize))
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Linear-phase lowpass, cutoff `cutoff` as a fraction of Nyquist, unit DC gain.
pub fn kaiser_lowpass(n_taps: usize, cutoff: f64, beta: f64) -> Vec<f64> {
    let m = (n_taps - 1) as f64 / 2.0;
    let denom = bessel_i0(beta);
    let mut h: Vec<f64> = (0..n_taps)
        .map(|i| {
            let t = i as f64 - m;
            let sinc = if t == 0.0 {
                1.0
            } else {
                (std::f64::consts::PI * cutoff * t).sin() / (std::f64::consts::PI * cutoff * t)
            };
            let r = if m > 0.0 { t / m } else { 0.0 };
            cutoff * sinc * bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / denom
        })
        .collect();
    let s: f64 = h.iter().sum();
    for v in &mut h {
        *v /= s;
    }
    h
}

/// Resample `x` from `from` Hz to `to` Hz; output length `round(len·to/from)`.
pub fn resample(x: &[f64], from: f64, to: f64) -> Result<Vec<f64>> {
    let (up, down) = rational_ratio(from, to)?;
    let n_out = (x.len() as f64 * to / from).round() as usize;
    if up == down {
        let mut y = x.to_vec();
        y.resize(n_out, 0.0);
        return Ok(y);
    }
    let max_rate = up.max(down);
    let half = 10 * max_rate;
    let mut h = kaiser_lowpass(2 * half + 1, 1.0 / max_rate as f64, 5.0);
    for v in &mut h {
        *v *= up as f64;
    }
    // y[m] = Σ_i x[i]·h[m·down + half − i·up] over valid filter indices.
    let n = x.len() as i64;
    let (up_i, half_i, len_h) = (up as i64, half as i64, h.len() as i64);
    let mut y = vec![0.0; n_out];
    for (m, out) in y.iter_mut().enumerate() {
        let c = m as i64 * down as i64 + half_i;
        let i_lo = ((c - (len_h - 1)) + up_i - 1).div_euclid(up_i).max(0);
        let i_hi = c.div_euclid(up_i).min(n - 1);
        let mut acc = 0.0;
        let mut i = i_lo;
        while i <= i_hi {
            acc += x[i as usize] * h[(c - i * up_i) as usize];
            i += 1;
        }
        *out = acc;
    }
    Ok(y)
}

pub fn resample_f32(x: &[f32], from: f64, to: f64) -> Result<Vec<f32>> {
    let xd: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    Ok(resample(&xd, from, to)?
        .into_iter()
        .map(|v| v as f32)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn ratios_reduce() {
        assert_eq!(rational_ratio(2000.0, 200.0).unwrap(), (1, 10));
        assert_eq!(rational_ratio(48000.0, 16000.0).unwrap(), (1, 3));
        assert_eq!(rational_ratio(1000.0, 2500.0).unwrap(), (5, 2));
        assert!(rational_ratio(0.0, 10.0).is_err());
    }

    #[test]
    fn output_lengths() {
        assert_eq!(
            resample(&vec![0.0; 2000], 2000.0, 200.0).unwrap().len(),
            200
        );
        assert_eq!(
            resample(&vec![0.0; 48000], 48000.0, 16000.0).unwrap().len(),
            16000
        );
        assert_eq!(
            resample(&vec![0.0; 1001], 1000.0, 200.0).unwrap().len(),
            200
        );
    }

    #[test]
    fn kaiser_taps_are_symmetric_with_unit_dc() {
        let h = kaiser_lowpass(41, 0.25, 5.0);
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..20 {
            assert!((h[i] - h[40 - i]).abs() < 1e-15);
        }
    }

    #[test]
    fn bessel_matches_tabulated_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-13);
        assert!((bessel_i0(5.0) - 27.239_871_823_604_45).abs() < 1e-10);
    }

    #[test]
    fn upsampling_preserves_a_tone() {
        let x: Vec<f64> = (0..1000)
            .map(|i| (2.0 * PI * 30.0 * i as f64 / 1000.0).sin())
            .collect();
        let y = resample(&x, 1000.0, 3000.0).unwrap();
        let rms = (y[600..2400].iter().map(|v| v * v).sum::<f64>() / 1800.0).sqrt();
        assert!((rms * 2f64.sqrt() - 1.0).abs() < 0.01, "{rms}");
        for (j, v) in y.iter().enumerate().skip(600).take(1800) {
            let expect = (2.0 * PI * 30.0 * j as f64 / 3000.0).sin();
            assert!((v - expect).abs() < 0.01);
        }
    }
}
