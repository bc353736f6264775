//! Signal processing: filters, re-referencing, envelopes, resampling,
//! time-frequency power and the contamination check.

pub mod basic;
pub mod contamination;
pub mod filter;
pub mod pipeline;
pub mod resample;
pub mod spectral;

pub use basic::{detrend, quantile_sorted, reref_bipolar, reref_car, robust_scale_clip};
pub use contamination::{contamination_check, ChannelContamination, ContaminationConfig};
pub use filter::{
    apply_filter, butter_bandpass, cascade_gain, iir_notch, sosfilt, sosfiltfilt, Biquad,
    FilterSpec,
};
pub use pipeline::{envelope_channel, preprocess, PreprocessConfig};
pub use resample::{rational_ratio, resample, resample_f32};
pub use spectral::{
    band_average, hann, hilbert_envelope, morlet_power, morlet_wavelet, stft_power, Spectrogram,
};
