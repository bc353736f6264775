//! The full SEEG chain: detrend → re-reference → bandpass → notch →
//! robust scale/clip → Hilbert envelope → resample, plus audio resampling.

use serde::{Deserialize, Serialize};

use super::basic::{detrend, reref_bipolar, reref_car, robust_scale_clip};
use super::filter::{apply_filter, FilterSpec};
use super::resample::{resample, resample_f32};
use super::spectral::hilbert_envelope;
use crate::datamodel::{ChannelMatrix, Recording, Referencing};
use crate::error::{Error, Result};
use crate::util::par_map;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub reref: Referencing,
    pub band: (f64, f64),
    pub order: usize,
    pub notch: Option<f64>,
    pub notch_q: f64,
    pub clip: f64,
    pub target_rate: f64,
    pub audio_rate: f64,
    pub jobs: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            reref: Referencing::Car,
            band: (70.0, 170.0),
            order: 4,
            notch: Some(50.0),
            notch_q: 35.0,
            clip: 5.0,
            target_rate: 200.0,
            audio_rate: 16000.0,
            jobs: 1,
        }
    }
}

impl PreprocessConfig {
    fn filters(&self) -> Vec<FilterSpec> {
        let mut f = vec![FilterSpec::Bandpass {
            lo: self.band.0,
            hi: self.band.1,
            order: self.order,
            zero_phase: true,
        }];
        if let Some(center) = self.notch {
            f.push(FilterSpec::Notch {
                center,
                q: self.notch_q,
                zero_phase: true,
            });
        }
        f
    }

    pub fn validate(&self, seeg_rate: f64) -> Result<()> {
        for f in self.filters() {
            f.validate(seeg_rate)?;
        }
        if !(self.clip > 0.0) {
            return Err(Error::Config(format!(
                "clip must be positive, got {}",
                self.clip
            )));
        }
        if !(self.target_rate > 0.0 && self.target_rate <= seeg_rate) {
            return Err(Error::Config(format!(
                "target rate {} Hz must be in (0, {seeg_rate}]",
                self.target_rate
            )));
        }
        if !(self.audio_rate > 0.0) {
            return Err(Error::Config(format!(
                "audio rate must be positive, got {}",
                self.audio_rate
            )));
        }
        Ok(())
    }
}

/// Filter → scale → envelope → resample for one re-referenced channel.
pub fn envelope_channel(x: &[f64], rate: f64, cfg: &PreprocessConfig) -> Result<Vec<f64>> {
    let mut y = x.to_vec();
    for f in cfg.filters() {
        y = apply_filter(&y, &f, rate)?;
    }
    let y = robust_scale_clip(&y, cfg.clip);
    resample(&hilbert_envelope(&y), rate, cfg.target_rate)
}

fn to_f64(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}

pub fn preprocess(rec: &Recording, cfg: &PreprocessConfig) -> Result<Recording> {
    cfg.validate(rec.seeg_rate)?;
    if rec.referencing != Referencing::Raw {
        return Err(Error::Config(format!(
            "recording is already {:?}-referenced",
            rec.referencing
        )));
    }
    let n = rec.seeg.n_samples();
    let detrended = par_map(rec.n_channels(), cfg.jobs, |c| -> Result<Vec<f32>> {
        Ok(detrend(&to_f64(rec.seeg.channel(c)))?
            .into_iter()
            .map(|v| v as f32)
            .collect())
    });
    let mut data = Vec::with_capacity(rec.n_channels() * n);
    for row in detrended {
        data.extend(row?);
    }
    let detrended = ChannelMatrix::new(rec.n_channels(), n, data)?;

    let (reref, names, groups) = match cfg.reref {
        Referencing::Raw => (
            detrended,
            rec.channel_names.clone(),
            rec.electrode_groups.clone(),
        ),
        Referencing::Car => (
            reref_car(&detrended),
            rec.channel_names.clone(),
            rec.electrode_groups.clone(),
        ),
        Referencing::Bipolar => {
            reref_bipolar(&detrended, &rec.channel_names, &rec.electrode_groups)?
        }
    };

    let rows = par_map(reref.n_channels(), cfg.jobs, |c| {
        envelope_channel(&to_f64(reref.channel(c)), rec.seeg_rate, cfg)
    });
    let rows: Vec<Vec<f32>> = rows
        .into_iter()
        .map(|r| r.map(|v| v.into_iter().map(|x| x as f32).collect()))
        .collect::<Result<_>>()?;
    let seeg = ChannelMatrix::from_rows(&rows)?;

    let mut audio = resample_f32(&rec.audio, rec.audio_rate, cfg.audio_rate)?;
    let n_audio = (seeg.n_samples() as f64 / cfg.target_rate * cfg.audio_rate).round() as usize;
    audio.resize(n_audio, 0.0);

    let out = Recording {
        subject_id: rec.subject_id.clone(),
        seeg_rate: cfg.target_rate,
        audio_rate: cfg.audio_rate,
        channel_names: names,
        electrode_groups: groups,
        seeg,
        audio,
        events: rec.events.clone(),
        corpus: rec.corpus.clone(),
        referencing: cfg.reref,
    };
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_chain_downsamples_and_stays_finite() {
        let rate = 1000.0;
        let x: Vec<f64> = (0..4000)
            .map(|i| ((i * 7919) % 113) as f64 - 56.0 + ((i as f64) * 0.6).sin() * 30.0)
            .collect();
        let y = envelope_channel(&x, rate, &PreprocessConfig::default()).unwrap();
        assert_eq!(y.len(), 800);
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn config_rejects_notch_and_band_beyond_nyquist() {
        let cfg = PreprocessConfig::default();
        assert!(cfg.validate(300.0).is_err());
        assert!(cfg.validate(1000.0).is_ok());
        let bad = PreprocessConfig {
            target_rate: 0.0,
            ..PreprocessConfig::default()
        };
        assert!(bad.validate(1000.0).is_err());
    }
}
