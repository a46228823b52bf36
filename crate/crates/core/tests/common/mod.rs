//! Shared oracles for the integration tests and the acceptance runner.

#![allow(dead_code)]

use mugan_core::config::Config;
use mugan_core::models::{
    Autoencoder, AutoencoderSpec, Discriminator, DiscriminatorSpec, Downsample, Generator,
    GeneratorSpec,
};
use mugan_core::nn::{self, Activation, BlockVars, Init, MultiscaleSlots};
use mugan_core::objectives::{discriminator_loss, generator_loss, l2_loss, LossWeights};
use mugan_core::params::ParamStore;
use mugan_core::tensor::{Result, Shape, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOL: f64 = 1e-4;
/// Leaves larger than this are checked on a seeded random subset of entries.
pub const FD_SAMPLES: usize = 48;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: Shape, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _| rng.random_range(-1.0..1.0))
}

/// `mean((y − target)²)` against a fixed random target, so every output
/// element carries a distinct gradient.
pub fn probe_loss(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(y)?.shape();
    let target = tape.constant(uniform(shape, &mut rng(seed)));
    let d = tape.sub(y, target)?;
    let sq = tape.square(d)?;
    tape.mean_all(sq)
}

/// Outcome of one finite-difference comparison.
#[derive(Debug, Clone, Default)]
pub struct GradCheck {
    /// Largest per-leaf `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.
    pub worst: f64,
    pub checked: usize,
    /// Entries where the loss has a kink within ±h (central differences at h
    /// and h/2 disagree), so neither says anything about the derivative.
    pub kinks: usize,
    pub per_leaf: Vec<f64>,
}

impl GradCheck {
    pub fn passes(&self) -> bool {
        self.worst < FD_TOL && self.kinks * 10 <= self.checked
    }
}

/// Central differences at h and h/2 further apart than this (relative) mark
/// a kink; on smooth stretches they differ by O(h²).
const KINK_REL: f64 = 1e-6;

/// Compares backward gradients against central differences, over all entries
/// of each leaf or over [`FD_SAMPLES`] random ones for big leaves.
pub fn grad_check<F>(leaves: &[Tensor<f64>], f: F) -> GradCheck
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = f(&mut tape, &vars).expect("forward");
        tape.value(loss).unwrap().data()[0]
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &vars).expect("forward");
    let grads = tape.backward(loss).expect("backward");

    let mut out = GradCheck::default();
    let mut work: Vec<Tensor<f64>> = leaves.to_vec();
    for (i, leaf) in leaves.iter().enumerate() {
        let full = grads
            .get(vars[i])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(leaf.shape()));
        let coords: Vec<usize> = if leaf.len() <= FD_SAMPLES {
            (0..leaf.len()).collect()
        } else {
            rand::seq::index::sample(&mut rng(i as u64), leaf.len(), FD_SAMPLES).into_vec()
        };
        let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
        for &j in &coords {
            let mut central = |h: f64| {
                let orig = leaf.data()[j];
                work[i].data_mut()[j] = orig + h;
                let up = eval(&work);
                work[i].data_mut()[j] = orig - h;
                let down = eval(&work);
                work[i].data_mut()[j] = orig;
                (up - down) / (2.0 * h)
            };
            let (wide, narrow) = (central(FD_STEP), central(FD_STEP / 2.0));
            out.checked += 1;
            if (wide - narrow).abs() > KINK_REL * (wide.abs() + narrow.abs()) + 1e-10 {
                out.kinks += 1;
                continue;
            }
            analytic.push(full.data()[j]);
            numeric.push(wide);
        }
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let na = analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = na.max(nn);
        let rel = if scale < 1e-12 { diff } else { diff / scale };
        out.worst = out.worst.max(rel);
        out.per_leaf.push(rel);
    }
    out
}

/// Every differentiable primitive, block and tiny network, with the worst
/// relative gradient error of each.
pub fn gradient_suite() -> Vec<(&'static str, GradCheck)> {
    let mut out = Vec::new();
    let mut r = rng(2024);
    let s = |b, c, t| Shape::new(b, c, t);

    let x = uniform(s(2, 3, 16), &mut r);
    let k = uniform(s(5, 3, 9), &mut r);
    let b = uniform(s(1, 5, 1), &mut r);
    out.push((
        "conv1d",
        grad_check(&[x.clone(), k.clone(), b.clone()], |t, v| {
            let y = t.conv1d(v[0], v[1], v[2])?;
            probe_loss(t, y, 1)
        }),
    ));
    out.push((
        "conv1d stride 2",
        grad_check(&[x.clone(), k, b], |t, v| {
            let y = t.conv1d_strided(v[0], v[1], v[2], 2)?;
            probe_loss(t, y, 2)
        }),
    ));
    let a = uniform(s(2, 3, 8), &mut r);
    out.push((
        "leaky_relu",
        grad_check(std::slice::from_ref(&a), |t, v| {
            let y = t.leaky_relu(v[0], 0.2)?;
            probe_loss(t, y, 3)
        }),
    ));
    out.push((
        "relu",
        grad_check(std::slice::from_ref(&a), |t, v| {
            let y = t.relu(v[0])?;
            probe_loss(t, y, 4)
        }),
    ));
    let c = uniform(s(2, 2, 8), &mut r);
    out.push((
        "concat_channels",
        grad_check(&[a.clone(), c], |t, v| {
            let y = t.concat_channels(v[0], v[1])?;
            probe_loss(t, y, 5)
        }),
    ));
    let a2 = uniform(s(2, 3, 8), &mut r);
    out.push((
        "add",
        grad_check(&[a.clone(), a2.clone()], |t, v| {
            let y = t.add(v[0], v[1])?;
            probe_loss(t, y, 6)
        }),
    ));
    out.push((
        "sub",
        grad_check(&[a.clone(), a2], |t, v| {
            let y = t.sub(v[0], v[1])?;
            probe_loss(t, y, 7)
        }),
    ));
    out.push((
        "mul_scalar",
        grad_check(std::slice::from_ref(&a), |t, v| {
            let y = t.mul_scalar(v[0], -1.7)?;
            probe_loss(t, y, 8)
        }),
    ));
    out.push((
        "add_scalar",
        grad_check(std::slice::from_ref(&a), |t, v| {
            let y = t.add_scalar(v[0], 0.4)?;
            probe_loss(t, y, 9)
        }),
    ));
    out.push((
        "square",
        grad_check(std::slice::from_ref(&a), |t, v| {
            let y = t.square(v[0])?;
            probe_loss(t, y, 10)
        }),
    ));
    let pos = a.map(|v| v.abs() + 0.5);
    out.push((
        "log",
        grad_check(&[pos], |t, v| {
            let y = t.log(v[0])?;
            probe_loss(t, y, 11)
        }),
    ));
    out.push((
        "sigmoid",
        grad_check(std::slice::from_ref(&a), |t, v| {
            let y = t.sigmoid(v[0])?;
            probe_loss(t, y, 12)
        }),
    ));
    out.push((
        "-log(sigmoid(z)) at 0.3",
        grad_check(&[Tensor::scalar(0.3)], |t, v| {
            let y = t.sigmoid(v[0])?;
            let y = t.log(y)?;
            let y = t.mul_scalar(y, -1.0)?;
            t.mean_all(y)
        }),
    ));
    let away = a.map(|v| if (v - 0.1).abs() < 0.05 { v + 0.2 } else { v });
    out.push((
        "clamp_min",
        grad_check(&[away], |t, v| {
            let y = t.clamp_min(v[0], 0.1)?;
            probe_loss(t, y, 13)
        }),
    ));
    out.push((
        "mean_all",
        grad_check(std::slice::from_ref(&a), |t, v| {
            let y = t.square(v[0])?;
            t.mean_all(y)
        }),
    ));
    let w = uniform(s(1, 4, 24), &mut r);
    let wb = uniform(s(1, 4, 1), &mut r);
    out.push((
        "dense",
        grad_check(&[a.clone(), w, wb], |t, v| {
            let y = t.dense(v[0], v[1], v[2])?;
            probe_loss(t, y, 14)
        }),
    ));
    out.push((
        "superpixel",
        grad_check(std::slice::from_ref(&a), |t, v| {
            let y = t.superpixel(v[0], 2)?;
            probe_loss(t, y, 15)
        }),
    ));
    let even = uniform(s(2, 4, 6), &mut r);
    out.push((
        "subpixel",
        grad_check(&[even], |t, v| {
            let y = t.subpixel(v[0], 2)?;
            probe_loss(t, y, 16)
        }),
    ));

    // Blocks built from registered multiscale parameters.
    let block = |in_ch: usize, out_ch: usize, seed: u64| -> (ParamStore<f64>, MultiscaleSlots) {
        let mut store = ParamStore::new();
        let slots =
            MultiscaleSlots::register(&mut store, "blk", in_ch, out_ch, Init::He, &mut rng(seed))
                .unwrap();
        (store, slots)
    };
    let (store, slots) = block(3, 8, 20);
    let mut leaves = store.tensors().to_vec();
    leaves.push(uniform(s(2, 3, 16), &mut r));
    out.push((
        "multiscale_conv",
        grad_check(&leaves, |t, v| {
            let p = slots.resolve(v);
            let y = nn::multiscale_conv(t, *v.last().unwrap(), &p)?;
            probe_loss(t, y, 21)
        }),
    ));
    out.push((
        "d_block",
        grad_check(&leaves, |t, v| {
            let p = BlockVars {
                conv: slots.resolve(v),
                activation: Activation::LeakyRelu(0.2),
            };
            let y = nn::d_block(t, *v.last().unwrap(), &p)?;
            probe_loss(t, y, 22)
        }),
    ));
    let (ustore, uslots) = block(8, 8, 23);
    let mut uleaves = ustore.tensors().to_vec();
    uleaves.push(uniform(s(2, 8, 8), &mut r));
    uleaves.push(uniform(s(2, 3, 16), &mut r));
    out.push((
        "u_block",
        grad_check(&uleaves, |t, v| {
            let n = v.len();
            let p = BlockVars {
                conv: uslots.resolve(v),
                activation: Activation::LeakyRelu(0.2),
            };
            let y = nn::u_block(t, v[n - 2], Some(v[n - 1]), &p)?;
            probe_loss(t, y, 24)
        }),
    ));

    // Tiny networks.
    let len = 32;
    let ae_spec = AutoencoderSpec {
        base_channels: 4,
        max_channels: 16,
    };
    let ae = Autoencoder::<f64>::new(ae_spec, &mut rng(30)).unwrap();
    let mut leaves = ae.params().tensors().to_vec();
    leaves.push(uniform(s(2, 1, len), &mut r).map(|v| 0.5 * v));
    out.push((
        "autoencoder reconstruction",
        grad_check(&leaves, |t, v| {
            let n = v.len();
            let (_, recon) = ae.forward(t, &v[..n - 1], v[n - 1])?;
            l2_loss(t, v[n - 1], recon)
        }),
    ));

    let d_spec = DiscriminatorSpec {
        depth: 2,
        base_channels: 4,
        max_channels: 16,
        head: 8,
        input_len: len,
    };
    let d = Discriminator::<f64>::new(d_spec, &mut rng(31)).unwrap();
    let mut leaves = d.params().tensors().to_vec();
    leaves.push(uniform(s(2, 1, len), &mut r));
    out.push((
        "discriminator",
        grad_check(&leaves, |t, v| {
            let n = v.len();
            let p = d.forward(t, &v[..n - 1], v[n - 1])?;
            let l = t.log(p)?;
            t.mean_all(l)
        }),
    ));

    for (name, depth, c0, ds) in [
        (
            "generator L=1 c0=8, composite loss",
            1usize,
            8usize,
            Downsample::Superpixel,
        ),
        (
            "generator L=2 c0=16, composite loss",
            2,
            16,
            Downsample::Superpixel,
        ),
        (
            "generator L=2 strided, composite loss",
            2,
            8,
            Downsample::StridedConv,
        ),
    ] {
        let spec = GeneratorSpec {
            depth,
            base_channels: c0,
            max_channels: 16,
            patch_len: len,
            downsample: ds,
        };
        let mut g = Generator::<f64>::new(spec, &mut rng(32)).unwrap();
        g.randomize_output(&mut rng(33));
        let n_g = g.params().len();
        let mut leaves = g.params().tensors().to_vec();
        let x_up = uniform(s(2, 1, len), &mut r).map(|v| 0.5 * v);
        let x_h = uniform(s(2, 1, len), &mut r).map(|v| 0.5 * v);
        leaves.push(x_up);
        let ae_params = ae.params().tensors().to_vec();
        let d_params = d.params().tensors().to_vec();
        let check = grad_check(&leaves, |t, v| {
            let gv = &v[..n_g];
            let out = g.forward(t, gv, v[n_g])?;
            let target = t.constant(x_h.clone());
            let av: Vec<Var> = ae_params.iter().map(|p| t.constant(p.clone())).collect();
            let dv: Vec<Var> = d_params.iter().map(|p| t.constant(p.clone())).collect();
            let phi_h = ae.encode(t, &av, target)?;
            let phi_g = ae.encode(t, &av, out)?;
            let d_of_g = d.forward(t, &dv, out)?;
            let w = LossWeights {
                lambda_f: 1.0,
                lambda_adv: 0.5,
            };
            Ok(generator_loss(t, target, out, Some((phi_h, phi_g)), Some(d_of_g), w)?.total)
        });
        out.push((name, check));
    }
    out
}

/// Scalar-loop SNR with the same cap and zero conventions as the library.
pub fn snr_reference(x: &[f64], r: &[f64]) -> f64 {
    let mut signal = 0.0;
    let mut noise = 0.0;
    for i in 0..r.len() {
        signal += r[i] * r[i];
        noise += (x[i] - r[i]) * (x[i] - r[i]);
    }
    if noise == 0.0 {
        return 100.0;
    }
    (10.0 * (signal / noise).log10()).min(100.0)
}

/// Log-spectral distance from a direct DFT over non-overlapping rectangular
/// windows of 2048 samples.
pub fn lsd_reference(x: &[f64], r: &[f64]) -> f64 {
    const N: usize = 2048;
    let table: Vec<(f64, f64)> = (0..N)
        .map(|m| (2.0 * std::f64::consts::PI * m as f64 / N as f64).sin_cos())
        .map(|(s, c)| (c, -s))
        .collect();
    let power = |frame: &[f64], k: usize| {
        let (mut re, mut im) = (0.0, 0.0);
        for (n, &v) in frame.iter().enumerate() {
            let (c, s) = table[(k * n) % N];
            re += v * c;
            im += v * s;
        }
        (re * re + im * im).max(1e-10)
    };
    let windows = r.len() / N;
    let mut total = 0.0;
    for w in 0..windows {
        let (fx, fr) = (&x[w * N..(w + 1) * N], &r[w * N..(w + 1) * N]);
        let mut acc = 0.0;
        for k in 0..=N / 2 {
            let d = (power(fx, k) / power(fr, k)).log10();
            acc += d * d;
        }
        total += (acc / (N / 2 + 1) as f64).sqrt();
    }
    total / windows as f64
}

/// A random pair of signals for the metric oracles: a reference and a
/// perturbed estimate of it.
pub fn metric_pair(seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let len = 2048 * r.random_range(1..=2) + r.random_range(0..300);
    let reference: Vec<f64> = (0..len).map(|_| r.random_range(-1.0..1.0)).collect();
    let scale = r.random_range(0.01..0.5);
    let estimate: Vec<f64> = reference
        .iter()
        .map(|v| v + scale * r.random_range(-1.0..1.0))
        .collect();
    (estimate, reference)
}

/// Small G, D and A over 32-sample patches, with a nonzero output layer.
pub struct TinyNets {
    pub g: Generator<f64>,
    pub d: Discriminator<f64>,
    pub a: Autoencoder<f64>,
    pub x_up: Tensor<f64>,
    pub x_h: Tensor<f64>,
}

pub fn tiny_nets(seed: u64) -> TinyNets {
    let len = 32;
    let g_spec = GeneratorSpec {
        depth: 2,
        base_channels: 8,
        max_channels: 16,
        patch_len: len,
        downsample: Downsample::Superpixel,
    };
    let mut g = Generator::new(g_spec, &mut rng(seed)).unwrap();
    g.randomize_output(&mut rng(seed + 1));
    let d_spec = DiscriminatorSpec {
        depth: 2,
        base_channels: 4,
        max_channels: 16,
        head: 8,
        input_len: len,
    };
    let d = Discriminator::new(d_spec, &mut rng(seed + 2)).unwrap();
    let a = Autoencoder::new(
        AutoencoderSpec {
            base_channels: 4,
            max_channels: 16,
        },
        &mut rng(seed + 3),
    )
    .unwrap();
    let mut r = rng(seed + 4);
    let x_up = uniform(Shape::new(3, 1, len), &mut r).map(|v| 0.5 * v);
    let x_h = uniform(Shape::new(3, 1, len), &mut r).map(|v| 0.5 * v);
    TinyNets { g, d, a, x_up, x_h }
}

fn mean_sq_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64
}

/// `|total − (L2 + λ_f·L_f + λ_adv·L_adv)|` with every term of the manual sum
/// computed by scalar loops over inference outputs.
pub fn loss_algebra_gap(seed: u64, w: LossWeights) -> f64 {
    let n = tiny_nets(seed);
    let mut tape = Tape::new();
    let gv = n.g.params().bind(&mut tape, true);
    let av = n.a.params().bind(&mut tape, false);
    let dv = n.d.params().bind(&mut tape, false);
    let x = tape.constant(n.x_up.clone());
    let target = tape.constant(n.x_h.clone());
    let out = n.g.forward(&mut tape, &gv, x).unwrap();
    let phi_h = n.a.encode(&mut tape, &av, target).unwrap();
    let phi_g = n.a.encode(&mut tape, &av, out).unwrap();
    let p = n.d.forward(&mut tape, &dv, out).unwrap();
    let total = generator_loss(&mut tape, target, out, Some((phi_h, phi_g)), Some(p), w)
        .unwrap()
        .total;
    let total = tape.value(total).unwrap().data()[0];

    let sr = n.g.infer(&n.x_up).unwrap();
    let l2 = mean_sq_diff(&sr, &n.x_h);
    let (fh, _) = n.a.infer(&n.x_h).unwrap();
    let (fg, _) = n.a.infer(&sr).unwrap();
    let feature = mean_sq_diff(&fh, &fg);
    let probs = n.d.infer(&sr).unwrap();
    let adv = -probs.data().iter().map(|q| q.max(1e-12).ln()).sum::<f64>() / probs.len() as f64;
    (total - (l2 + w.lambda_f * feature + w.lambda_adv * adv)).abs()
}

fn is_zero(g: Option<&Tensor<f64>>) -> bool {
    g.is_none_or(|t| t.data().iter().all(|&v| v == 0.0))
}

/// The generator objective must not reach A or D parameters, and the
/// discriminator objective must not reach G through a detached output.
pub fn gradient_isolation(seed: u64) -> std::result::Result<(), String> {
    let n = tiny_nets(seed);
    let w = LossWeights::default();

    let mut tape = Tape::new();
    let gv = n.g.params().bind(&mut tape, true);
    let av = n.a.params().bind(&mut tape, false);
    let dv = n.d.params().bind(&mut tape, false);
    let x = tape.constant(n.x_up.clone());
    let target = tape.constant(n.x_h.clone());
    let out = n.g.forward(&mut tape, &gv, x).unwrap();
    let phi_h = n.a.encode(&mut tape, &av, target).unwrap();
    let phi_g = n.a.encode(&mut tape, &av, out).unwrap();
    let p = n.d.forward(&mut tape, &dv, out).unwrap();
    let total = generator_loss(&mut tape, target, out, Some((phi_h, phi_g)), Some(p), w)
        .unwrap()
        .total;
    let grads = tape.backward(total).unwrap();
    if !av.iter().chain(&dv).all(|&v| is_zero(grads.get(v))) {
        return Err("generator loss produced gradients for frozen A or D parameters".into());
    }
    if gv.iter().all(|&v| is_zero(grads.get(v))) {
        return Err("generator loss produced no generator gradient".into());
    }

    let mut tape = Tape::new();
    let gv = n.g.params().bind(&mut tape, true);
    let dv = n.d.params().bind(&mut tape, true);
    let x = tape.constant(n.x_up.clone());
    let out = n.g.forward(&mut tape, &gv, x).unwrap();
    let fake = tape.detach(out).unwrap();
    let real = tape.constant(n.x_h.clone());
    let d_real = n.d.forward(&mut tape, &dv, real).unwrap();
    let d_fake = n.d.forward(&mut tape, &dv, fake).unwrap();
    let loss = discriminator_loss(&mut tape, d_real, d_fake).unwrap();
    let grads = tape.backward(loss).unwrap();
    if !gv.iter().all(|&v| is_zero(grads.get(v))) {
        return Err(
            "discriminator loss reached generator parameters through a detached output".into(),
        );
    }
    if dv.iter().all(|&v| is_zero(grads.get(v))) {
        return Err("discriminator loss produced no discriminator gradient".into());
    }
    Ok(())
}

/// Small synthetic setup that trains in well under a second per step.
pub fn tiny_config(extra: &str) -> Config {
    let base = "ratio=2\npatch_len=64\npatches_per_epoch=16\nsynth.clips=6\nsynth.clip_len=512\nsynth.tones=2\n\
                synth.noise=0.003\ng.depth=2\ng.base_channels=4\ng.max_channels=16\nd.depth=2\nd.base_channels=4\n\
                d.max_channels=16\nd.head=8\na.base_channels=4\na.max_channels=16\nbatch_size=4\nepochs=2\nae_epochs=2\n\
                split=0.5,0.17,0.33\n";
    Config::parse(&format!("{base}{}", extra.replace(';', "\n"))).unwrap()
}
