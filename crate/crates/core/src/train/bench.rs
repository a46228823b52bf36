use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::TrainError;
use crate::models::{Downsample, Generator, GeneratorSpec};
use crate::objectives::l2_loss;
use crate::tensor::{adam_step, AdamConfig, AdamState, Shape, Tape, Tensor};

/// Seconds per generator training step for each downsampling variant.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub superpixel: Vec<f64>,
    pub strided: Vec<f64>,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    if s.is_empty() {
        return f64::NAN;
    }
    let m = s.len() / 2;
    if s.len().is_multiple_of(2) {
        (s[m - 1] + s[m]) / 2.0
    } else {
        s[m]
    }
}

impl BenchReport {
    pub fn median_superpixel(&self) -> f64 {
        median(&self.superpixel)
    }

    pub fn median_strided(&self) -> f64 {
        median(&self.strided)
    }

    /// Per-step lines followed by a summary of medians.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, (a, b)) in self.superpixel.iter().zip(&self.strided).enumerate() {
            s += &format!(
                "step={i} superpixel_ms={:.3} strided_ms={:.3}\n",
                a * 1e3,
                b * 1e3
            );
        }
        let (a, b) = (self.median_superpixel(), self.median_strided());
        s += &format!(
            "median superpixel_ms={:.3} strided_ms={:.3} superpixel_saving_pct={:.1}\n",
            a * 1e3,
            b * 1e3,
            100.0 * (b - a) / b
        );
        s
    }
}

fn time_steps(
    spec: &GeneratorSpec,
    x_up: &Tensor<f32>,
    x_h: &Tensor<f32>,
    steps: usize,
    seed: u64,
) -> Result<Vec<f64>, TrainError> {
    let mut g = Generator::<f32>::new(spec.clone(), &mut ChaCha8Rng::seed_from_u64(seed))?;
    let mut opt = AdamState::new(AdamConfig::default(), g.params().tensors());
    let mut times = Vec::with_capacity(steps);
    // One untimed warm-up step.
    for i in 0..=steps {
        let start = Instant::now();
        let mut tape = Tape::new();
        let vars = g.params().bind(&mut tape, true);
        let x = tape.constant(x_up.clone());
        let y = g.forward(&mut tape, &vars, x)?;
        let target = tape.constant(x_h.clone());
        let loss = l2_loss(&mut tape, target, y)?;
        let grads = tape.backward(loss)?;
        let gs: Vec<_> = vars.iter().map(|&v| grads.get(v)).collect();
        adam_step(g.params_mut().tensors_mut(), &gs, &mut opt)?;
        if i > 0 {
            times.push(start.elapsed().as_secs_f64());
        }
    }
    Ok(times)
}

/// Times L2 training steps of the same generator built with superpixel and
/// with strided-convolution downsampling, on random data.
pub fn bench_superpixel(
    spec: &GeneratorSpec,
    batch: usize,
    steps: usize,
    seed: u64,
) -> Result<BenchReport, TrainError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = Shape::new(batch, 1, spec.patch_len);
    let x_h = Tensor::from_fn(shape, |_, _, _| {
        0.1 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng) as f32
    });
    let x_up = x_h.map(|v| 0.9 * v);
    let sp = GeneratorSpec {
        downsample: Downsample::Superpixel,
        ..spec.clone()
    };
    let st = GeneratorSpec {
        downsample: Downsample::StridedConv,
        ..spec.clone()
    };
    Ok(BenchReport {
        superpixel: time_steps(&sp, &x_up, &x_h, steps, seed)?,
        strided: time_steps(&st, &x_up, &x_h, steps, seed)?,
    })
}
