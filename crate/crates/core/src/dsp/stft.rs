use rustfft::{num_complex::Complex, FftPlanner};

use super::{DspError, Waveform};

/// STFT window length (rectangular, no overlap).
pub const STFT_WINDOW: usize = 2048;
/// One-sided bin count, `STFT_WINDOW / 2 + 1`.
pub const STFT_BINS: usize = STFT_WINDOW / 2 + 1;

/// Squared STFT magnitudes, `windows × STFT_BINS`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub mag_sq: Vec<f64>,
    pub windows: usize,
}

impl Spectrogram {
    pub fn bins(&self) -> usize {
        STFT_BINS
    }

    pub fn window(&self, w: usize) -> &[f64] {
        &self.mag_sq[w * STFT_BINS..(w + 1) * STFT_BINS]
    }

    pub fn at(&self, w: usize, k: usize) -> f64 {
        self.mag_sq[w * STFT_BINS + k]
    }
}

/// `|X(w, k)|²` over non-overlapping rectangular windows of 2048 samples;
/// a trailing partial window is dropped.
pub fn stft_mag_sq(x: &Waveform) -> Result<Spectrogram, DspError> {
    let windows = x.samples.len() / STFT_WINDOW;
    if windows == 0 {
        return Err(DspError::TooShort {
            len: x.samples.len(),
            min: STFT_WINDOW,
        });
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(STFT_WINDOW);
    let mut buf = vec![Complex::new(0.0, 0.0); STFT_WINDOW];
    let mut mag_sq = Vec::with_capacity(windows * STFT_BINS);
    for frame in x.samples.chunks_exact(STFT_WINDOW) {
        for (b, &s) in buf.iter_mut().zip(frame) {
            *b = Complex::new(s, 0.0);
        }
        fft.process(&mut buf);
        mag_sq.extend(buf[..STFT_BINS].iter().map(|c| c.norm_sqr()));
    }
    Ok(Spectrogram { mag_sq, windows })
}
