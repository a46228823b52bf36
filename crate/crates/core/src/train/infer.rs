use super::TrainError;
use crate::data::{degrade, Clip};
use crate::dsp::{spline_upsample, Waveform};
use crate::metrics::{evaluate_clip, EvaluationSummary};
use crate::models::Generator;
use crate::tensor::{Shape, Tensor};

/// Windows passed through the generator per forward call.
const WINDOW_BATCH: usize = 8;

/// Window starts covering `n` samples with hop `patch / 2`; the last window
/// is pinned to the end.
fn window_starts(n: usize, patch: usize) -> Vec<usize> {
    let hop = (patch / 2).max(1);
    let mut starts: Vec<usize> = (0..)
        .map(|i| i * hop)
        .take_while(|&s| s + patch < n)
        .collect();
    starts.push(n - patch);
    starts.dedup();
    starts
}

/// Triangular cross-fade weight, positive everywhere in the window.
fn ramp(t: usize, patch: usize) -> f64 {
    (t + 1).min(patch - t) as f64
}

/// Spline-upsamples `lr` by `ratio`, runs the generator over 50%-overlapping
/// windows and cross-fades the residuals linearly. The output has
/// `ratio · lr.len()` samples.
pub fn infer(g: &Generator<f32>, lr: &Waveform, ratio: usize) -> Result<Waveform, TrainError> {
    let up = spline_upsample(lr, ratio).map_err(crate::data::DataError::from)?;
    let n = up.len();
    let patch = g.spec().patch_len;
    if n < patch {
        return Err(TrainError::Config(format!(
            "clip upsamples to {n} samples, shorter than one patch of {patch}"
        )));
    }
    let starts = window_starts(n, patch);
    let mut acc = vec![0.0f64; n];
    let mut norm = vec![0.0f64; n];
    for group in starts.chunks(WINDOW_BATCH) {
        let x = Tensor::from_fn(Shape::new(group.len(), 1, patch), |b, _, t| {
            up.samples[group[b] + t] as f32
        });
        let y = g.infer(&x)?;
        for (b, &s) in group.iter().enumerate() {
            for t in 0..patch {
                let w = ramp(t, patch);
                let residual = y.at(b, 0, t) as f64 - x.at(b, 0, t) as f64;
                acc[s + t] += w * residual;
                norm[s + t] += w;
            }
        }
    }
    let samples = up
        .samples
        .iter()
        .zip(acc.iter().zip(&norm))
        .map(|(u, (a, w))| u + a / w)
        .collect();
    Ok(Waveform {
        samples,
        sample_rate: up.sample_rate,
    })
}

/// Degrades each clip, super-resolves it and scores it against the
/// original alongside the spline baseline.
pub fn evaluate(
    g: &Generator<f32>,
    clips: &[Clip],
    ratio: usize,
) -> Result<EvaluationSummary, TrainError> {
    let mut reports = Vec::with_capacity(clips.len());
    for clip in clips {
        let (hr, lr) = degrade(&clip.wave, ratio)?;
        let baseline = spline_upsample(&lr, ratio).map_err(crate::data::DataError::from)?;
        let sr = infer(g, &lr, ratio)?;
        reports.push(evaluate_clip(&clip.id, &sr, &hr, &baseline)?);
    }
    Ok(EvaluationSummary { clips: reports })
}
