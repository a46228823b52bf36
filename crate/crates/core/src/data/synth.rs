//! Sums of random sinusoids with an optional Gaussian noise floor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::DataError;
use crate::dsp::Waveform;

/// Recipe for a synthetic clip collection. Frequencies are fractions of the
/// clip's Nyquist frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthRecipe {
    pub clips: usize,
    pub clip_len: usize,
    pub sample_rate: f64,
    pub tones: usize,
    pub min_freq: f64,
    pub max_freq: f64,
    pub min_amp: f64,
    pub max_amp: f64,
    /// Standard deviation of additive white noise; 0 disables it.
    pub noise: f64,
}

impl Default for SynthRecipe {
    fn default() -> Self {
        SynthRecipe {
            clips: 32,
            clip_len: 16384,
            sample_rate: 16000.0,
            tones: 4,
            min_freq: 0.02,
            max_freq: 0.95,
            min_amp: 0.05,
            max_amp: 0.25,
            noise: 0.0,
        }
    }
}

impl SynthRecipe {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::Invalid(format!("synthetic recipe: {m}")));
        if self.clips == 0 || self.clip_len == 0 || self.tones == 0 {
            return bad("clips, clip_len and tones must be positive");
        }
        if !(self.sample_rate > 0.0) {
            return bad("sample_rate must be positive");
        }
        if !(0.0 <= self.min_freq && self.min_freq <= self.max_freq && self.max_freq < 1.0) {
            return bad("need 0 <= min_freq <= max_freq < 1");
        }
        if !(0.0 <= self.min_amp && self.min_amp <= self.max_amp && self.max_amp.is_finite()) {
            return bad("need 0 <= min_amp <= max_amp");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tone {
    pub freq_hz: f64,
    pub amp: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthClip {
    pub wave: Waveform,
    pub tones: Vec<Tone>,
}

pub fn render_tones(tones: &[Tone], len: usize, sample_rate: f64) -> Vec<f64> {
    (0..len)
        .map(|n| {
            let t = n as f64 / sample_rate;
            tones
                .iter()
                .map(|s| s.amp * (2.0 * std::f64::consts::PI * s.freq_hz * t + s.phase).sin())
                .sum()
        })
        .collect()
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

pub fn synth_dataset(recipe: &SynthRecipe, seed: u64) -> Result<Vec<SynthClip>, DataError> {
    recipe.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nyquist = recipe.sample_rate / 2.0;
    let noise = Normal::new(0.0, recipe.noise).map_err(|e| DataError::Invalid(e.to_string()))?;
    let mut out = Vec::with_capacity(recipe.clips);
    for _ in 0..recipe.clips {
        let tones: Vec<Tone> = (0..recipe.tones)
            .map(|_| Tone {
                freq_hz: uniform(&mut rng, recipe.min_freq, recipe.max_freq) * nyquist,
                amp: uniform(&mut rng, recipe.min_amp, recipe.max_amp),
                phase: uniform(&mut rng, 0.0, 2.0 * std::f64::consts::PI),
            })
            .collect();
        let mut samples = render_tones(&tones, recipe.clip_len, recipe.sample_rate);
        if recipe.noise > 0.0 {
            for s in &mut samples {
                *s += noise.sample(&mut rng);
            }
        }
        out.push(SynthClip {
            wave: Waveform::new(samples, recipe.sample_rate)?,
            tones,
        });
    }
    Ok(out)
}
