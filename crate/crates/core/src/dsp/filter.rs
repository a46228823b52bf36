use std::f64::consts::PI;

use super::{DspError, Waveform};

/// Length of the anti-alias FIR.
pub const FIR_TAPS: usize = 65;

/// Hamming-windowed sinc lowpass with unity DC gain.
///
/// `cutoff` is a fraction of Nyquist, so `1 / R` is the anti-alias cutoff
/// for decimation by `R`.
pub fn design_lowpass(cutoff: f64) -> Result<[f64; FIR_TAPS], DspError> {
    if !(cutoff > 0.0 && cutoff < 1.0) {
        return Err(DspError::Cutoff(cutoff));
    }
    let mid = (FIR_TAPS / 2) as f64;
    let mut taps = [0.0; FIR_TAPS];
    for (n, tap) in taps.iter_mut().enumerate() {
        let x = n as f64 - mid;
        let sinc = if x == 0.0 {
            1.0
        } else {
            (PI * cutoff * x).sin() / (PI * cutoff * x)
        };
        let window = 0.54 - 0.46 * (2.0 * PI * n as f64 / (FIR_TAPS - 1) as f64).cos();
        *tap = cutoff * sinc * window;
    }
    let dc: f64 = taps.iter().sum();
    for tap in &mut taps {
        *tap /= dc;
    }
    Ok(taps)
}

/// Mirror an out-of-range index back into `0..len` without repeating the
/// edge sample.
fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m >= len as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Zero-phase lowpass: the symmetric FIR is applied centred on each sample,
/// with reflected boundaries. Output length equals input length.
pub fn lowpass_fir(x: &Waveform, cutoff: f64) -> Result<Waveform, DspError> {
    let taps = design_lowpass(cutoff)?;
    let n = x.samples.len();
    let half = (FIR_TAPS / 2) as isize;
    let mut out = Vec::with_capacity(n);
    for i in 0..n as isize {
        let mut acc = 0.0;
        for (k, &h) in taps.iter().enumerate() {
            let j = i + k as isize - half;
            let s = if j >= 0 && (j as usize) < n {
                x.samples[j as usize]
            } else {
                x.samples[reflect(j, n)]
            };
            acc += h * s;
        }
        out.push(acc);
    }
    Ok(Waveform {
        samples: out,
        sample_rate: x.sample_rate,
    })
}
