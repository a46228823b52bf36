//! Objective quality metrics (SNR, log-spectral distance) and reports.

use std::fmt::Write as _;

use thiserror::Error;

use crate::dsp::{stft_mag_sq, DspError, Waveform, STFT_BINS};

/// SNR reported for an exact match.
pub const SNR_CAP_DB: f64 = 100.0;
/// Floor on each `|X(w,k)|²` before taking the log ratio.
pub const SPECTRAL_FLOOR: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("signal lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("reference signal is all zeros")]
    ZeroReference,
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("malformed report line: {0}")]
    Parse(String),
}

/// `10·log10(‖x_ref‖² / ‖x − x_ref‖²)` in dB, capped at [`SNR_CAP_DB`].
pub fn snr(x: &Waveform, x_ref: &Waveform) -> Result<f64, MetricsError> {
    if x.len() != x_ref.len() {
        return Err(MetricsError::LengthMismatch(x.len(), x_ref.len()));
    }
    let signal = x_ref.energy();
    if signal == 0.0 {
        return Err(MetricsError::ZeroReference);
    }
    let noise: f64 = x
        .samples
        .iter()
        .zip(&x_ref.samples)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    if noise == 0.0 {
        return Ok(SNR_CAP_DB);
    }
    Ok((10.0 * (signal / noise).log10()).min(SNR_CAP_DB))
}

/// Log-spectral distance over non-overlapping 2048-sample windows:
/// mean over windows of `sqrt(mean_k (log10(P / P_ref))²)` with all 1025
/// one-sided bins.
pub fn lsd(x: &Waveform, x_ref: &Waveform) -> Result<f64, MetricsError> {
    if x.len() != x_ref.len() {
        return Err(MetricsError::LengthMismatch(x.len(), x_ref.len()));
    }
    let s = stft_mag_sq(x)?;
    let r = stft_mag_sq(x_ref)?;
    let mut total = 0.0;
    for w in 0..s.windows {
        let sum_sq: f64 = s
            .window(w)
            .iter()
            .zip(r.window(w))
            .map(|(&p, &q)| {
                let d = (p.max(SPECTRAL_FLOOR) / q.max(SPECTRAL_FLOOR)).log10();
                d * d
            })
            .sum();
        total += (sum_sq / STFT_BINS as f64).sqrt();
    }
    Ok(total / s.windows as f64)
}

/// Model and spline-baseline scores for one clip against its reference.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub clip_id: String,
    pub snr_db: f64,
    pub lsd: f64,
    pub baseline_snr_db: f64,
    pub baseline_lsd: f64,
}

pub fn evaluate_clip(
    clip_id: &str,
    sr: &Waveform,
    hr: &Waveform,
    baseline: &Waveform,
) -> Result<MetricsReport, MetricsError> {
    Ok(MetricsReport {
        clip_id: clip_id.to_string(),
        snr_db: snr(sr, hr)?,
        lsd: lsd(sr, hr)?,
        baseline_snr_db: snr(baseline, hr)?,
        baseline_lsd: lsd(baseline, hr)?,
    })
}

/// Per-clip reports plus their means.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvaluationSummary {
    pub clips: Vec<MetricsReport>,
}

impl EvaluationSummary {
    pub fn mean(&self) -> MetricsReport {
        let n = self.clips.len().max(1) as f64;
        let avg = |f: fn(&MetricsReport) -> f64| self.clips.iter().map(f).sum::<f64>() / n;
        MetricsReport {
            clip_id: "mean".into(),
            snr_db: avg(|r| r.snr_db),
            lsd: avg(|r| r.lsd),
            baseline_snr_db: avg(|r| r.baseline_snr_db),
            baseline_lsd: avg(|r| r.baseline_lsd),
        }
    }

    /// Human-readable table, one line per clip and a closing mean line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "{:<16} {:>10} {:>8} {:>14} {:>12}",
            "clip", "snr_db", "lsd", "spline_snr_db", "spline_lsd"
        )
        .unwrap();
        for r in self.clips.iter().chain(std::iter::once(&self.mean())) {
            writeln!(
                s,
                "{:<16} {:>10.4} {:>8.4} {:>14.4} {:>12.4}",
                r.clip_id, r.snr_db, r.lsd, r.baseline_snr_db, r.baseline_lsd
            )
            .unwrap();
        }
        s
    }

    /// One record per line:
    /// `clip_id=<id> snr_db=<f> lsd=<f> baseline_snr_db=<f> baseline_lsd=<f>`,
    /// ending with the `clip_id=mean` record.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for r in self.clips.iter().chain(std::iter::once(&self.mean())) {
            writeln!(
                s,
                "clip_id={} snr_db={} lsd={} baseline_snr_db={} baseline_lsd={}",
                r.clip_id, r.snr_db, r.lsd, r.baseline_snr_db, r.baseline_lsd
            )
            .unwrap();
        }
        s
    }
}

/// Parses one line written by [`EvaluationSummary::to_kv`].
pub fn parse_kv_line(line: &str) -> Result<MetricsReport, MetricsError> {
    let mut fields = std::collections::HashMap::new();
    for pair in line.split_whitespace() {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| MetricsError::Parse(line.to_string()))?;
        fields.insert(k, v);
    }
    let num = |k: &str| -> Result<f64, MetricsError> {
        fields
            .get(k)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| MetricsError::Parse(line.to_string()))
    };
    Ok(MetricsReport {
        clip_id: fields
            .get("clip_id")
            .ok_or_else(|| MetricsError::Parse(line.to_string()))?
            .to_string(),
        snr_db: num("snr_db")?,
        lsd: num("lsd")?,
        baseline_snr_db: num("baseline_snr_db")?,
        baseline_lsd: num("baseline_lsd")?,
    })
}
