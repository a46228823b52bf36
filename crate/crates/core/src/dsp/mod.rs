//! Signal-processing front-end: anti-alias filtering, decimation, cubic
//! spline upsampling and the non-overlapping STFT used by LSD.

mod filter;
mod spline;
mod stft;

pub use filter::{design_lowpass, lowpass_fir, FIR_TAPS};
pub use spline::spline_upsample;
pub use stft::{stft_mag_sq, Spectrogram, STFT_BINS, STFT_WINDOW};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("cutoff {0} must lie strictly between 0 and 1 (fraction of Nyquist)")]
    Cutoff(f64),
    #[error("ratio {0} must be at least 2")]
    Ratio(usize),
    #[error("signal of {len} samples is shorter than the required {min}")]
    TooShort { len: usize, min: usize },
    #[error("sample rate must be positive, got {0}")]
    SampleRate(f64),
}

/// Mono waveform with its sample rate in Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self, DspError> {
        if !(sample_rate > 0.0) {
            return Err(DspError::SampleRate(sample_rate));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }
}

/// Keeps every `ratio`-th sample starting at index 0.
///
/// No filtering happens here; callers lowpass first.
pub fn decimate(x: &Waveform, ratio: usize) -> Result<Waveform, DspError> {
    if ratio < 2 {
        return Err(DspError::Ratio(ratio));
    }
    Ok(Waveform {
        samples: x.samples.iter().step_by(ratio).copied().collect(),
        sample_rate: x.sample_rate / ratio as f64,
    })
}
