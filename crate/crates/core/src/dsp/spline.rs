use super::{DspError, Waveform};

/// Second derivatives of the natural cubic spline through `y` at unit knot
/// spacing (zero at both ends).
fn natural_second_derivatives(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    // Tridiagonal system M[i-1] + 4 M[i] + M[i+1] = 6 Δ²y[i], i = 1..n-2,
    // solved with the Thomas algorithm.
    let k = n - 2;
    let mut c_prime = vec![0.0; k];
    let mut d_prime = vec![0.0; k];
    for j in 0..k {
        let i = j + 1;
        let rhs = 6.0 * (y[i + 1] - 2.0 * y[i] + y[i - 1]);
        if j == 0 {
            c_prime[0] = 1.0 / 4.0;
            d_prime[0] = rhs / 4.0;
        } else {
            let denom = 4.0 - c_prime[j - 1];
            c_prime[j] = 1.0 / denom;
            d_prime[j] = (rhs - d_prime[j - 1]) / denom;
        }
    }
    m[k] = d_prime[k - 1];
    for j in (0..k - 1).rev() {
        m[j + 1] = d_prime[j] - c_prime[j] * m[j + 2];
    }
    m
}

/// Natural cubic spline through `(i·R, x_i)`, evaluated on the integer grid
/// `0..R·len`.
///
/// The last `R - 1` samples lie past the final knot and continue along the
/// spline's end slope, so the output is exactly `R·len` long and passes
/// through every input sample.
pub fn spline_upsample(x: &Waveform, ratio: usize) -> Result<Waveform, DspError> {
    if ratio < 2 {
        return Err(DspError::Ratio(ratio));
    }
    let y = &x.samples;
    let n = y.len();
    if n < 2 {
        return Err(DspError::TooShort { len: n, min: 2 });
    }
    let m = natural_second_derivatives(y);
    let r = ratio as f64;
    let mut out = Vec::with_capacity(n * ratio);
    for i in 0..n - 1 {
        for j in 0..ratio {
            let s = j as f64 / r;
            let u = 1.0 - s;
            let v = u * y[i]
                + s * y[i + 1]
                + (u * u * u - u) * m[i] / 6.0
                + (s * s * s - s) * m[i + 1] / 6.0;
            out.push(v);
        }
    }
    let end_slope = y[n - 1] - y[n - 2] + m[n - 2] / 6.0 + m[n - 1] / 3.0;
    for j in 0..ratio {
        out.push(y[n - 1] + end_slope * j as f64 / r);
    }
    Ok(Waveform {
        samples: out,
        sample_rate: x.sample_rate * r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::decimate;
    use std::f64::consts::PI;

    #[test]
    fn reproduces_affine_data() {
        let x = Waveform::new(vec![0.0, 1.0, 2.0, 3.0], 1.0).unwrap();
        let y = spline_upsample(&x, 2).unwrap();
        let want = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5];
        for (a, b) in y.samples.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(y.sample_rate, 2.0);
    }

    #[test]
    fn constant_stays_constant() {
        let x = Waveform::new(vec![5.0; 3], 1.0).unwrap();
        let y = spline_upsample(&x, 3).unwrap();
        assert_eq!(y.samples, vec![5.0; 9]);
    }

    #[test]
    fn low_frequency_sinusoid_is_accurate() {
        // Dense analytic reference at the upsampled rate.
        let period_hr = 64.0;
        let f = |t: f64| (2.0 * PI * t / period_hr + 0.3).sin();
        let lr: Vec<f64> = (0..128).map(|i| f(2.0 * i as f64)).collect();
        let up = spline_upsample(&Waveform::new(lr, 1.0).unwrap(), 2).unwrap();
        // Natural end conditions disturb the first and last few knots.
        let err = (16..240)
            .map(|t| (up.samples[t] - f(t as f64)).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "max error {err}");
    }

    #[test]
    fn knots_are_exact() {
        let x: Vec<f64> = (0..50)
            .map(|i| (i as f64 * 0.37).sin() + 0.1 * i as f64)
            .collect();
        let w = Waveform::new(x.clone(), 8000.0).unwrap();
        for r in [2, 4, 6] {
            let back = decimate(&spline_upsample(&w, r).unwrap(), r).unwrap();
            assert_eq!(back.samples, x);
        }
    }

    #[test]
    fn too_short() {
        let x = Waveform::new(vec![1.0], 1.0).unwrap();
        assert!(matches!(
            spline_upsample(&x, 2),
            Err(DspError::TooShort { .. })
        ));
    }
}
