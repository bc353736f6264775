//! Detrending, re-referencing and robust scaling.

use std::collections::BTreeMap;

use crate::datamodel::ChannelMatrix;
use crate::error::{Error, Result};

/// Remove the least-squares line.
pub fn detrend(x: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "detrend needs >= 2 samples, got {n}"
        )));
    }
    let tm = (n - 1) as f64 / 2.0;
    let xm = x.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &v) in x.iter().enumerate() {
        let t = i as f64 - tm;
        sxy += t * (v - xm);
        sxx += t * t;
    }
    let slope = sxy / sxx;
    Ok(x.iter()
        .enumerate()
        .map(|(i, &v)| v - xm - slope * (i as f64 - tm))
        .collect())
}

/// Subtract the across-channel mean at every sample.
pub fn reref_car(seeg: &ChannelMatrix) -> ChannelMatrix {
    let (c, n) = (seeg.n_channels(), seeg.n_samples());
    let mut mean = vec![0.0f64; n];
    for row in seeg.rows() {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    for m in &mut mean {
        *m /= c as f64;
    }
    let mut out = seeg.clone();
    for ch in 0..c {
        for (v, m) in out.channel_mut(ch).iter_mut().zip(&mean) {
            *v = (*v as f64 - m) as f32;
        }
    }
    out
}

/// Adjacent-contact differences within each electrode. Output groups keep the
/// electrode letters; names read `A1-A2`.
pub fn reref_bipolar(
    seeg: &ChannelMatrix,
    names: &[String],
    groups: &BTreeMap<String, Vec<usize>>,
) -> Result<(ChannelMatrix, Vec<String>, BTreeMap<String, Vec<usize>>)> {
    let mut rows = Vec::new();
    let mut out_names = Vec::new();
    let mut out_groups = BTreeMap::new();
    for (g, idx) in groups {
        if idx.len() < 2 {
            return Err(Error::Config(format!(
                "bipolar referencing needs >= 2 contacts, electrode {g} has {}",
                idx.len()
            )));
        }
        let mut members = Vec::with_capacity(idx.len() - 1);
        for w in idx.windows(2) {
            let (a, b) = (seeg.channel(w[0]), seeg.channel(w[1]));
            members.push(rows.len());
            rows.push(
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (*x as f64 - *y as f64) as f32)
                    .collect::<Vec<f32>>(),
            );
            out_names.push(format!("{}-{}", names[w[0]], names[w[1]]));
        }
        out_groups.insert(g.clone(), members);
    }
    Ok((ChannelMatrix::from_rows(&rows)?, out_names, out_groups))
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `clamp((x − median) / IQR, ±clip)`; a zero IQR yields zeros.
pub fn robust_scale_clip(x: &[f64], clip: f64) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let mut s = x.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    let med = quantile_sorted(&s, 0.5);
    let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
    if iqr <= 0.0 {
        return vec![0.0; x.len()];
    }
    x.iter()
        .map(|v| ((v - med) / iqr).clamp(-clip, clip))
        .collect()
}
