//! Network building blocks: multiscale convolution, the superpixel and
//! subpixel resolution shuffles, and the D-block / U-block compositions.

use rand::Rng;

use crate::params::{he_normal, ParamStore};
use crate::tensor::{Real, Result, Shape, Tape, Tensor, TensorError, Var};

/// Kernel widths of the four parallel branches, in concatenation order.
pub const MULTISCALE_WIDTHS: [usize; 4] = [3, 9, 27, 81];

/// Resolution change applied by every block.
pub const SHUFFLE_FACTOR: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Linear,
}

impl Activation {
    pub fn apply<T: Real>(self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::LeakyRelu(alpha) => tape.leaky_relu(x, alpha),
            Activation::Linear => Ok(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    He,
    Zero,
}

/// Where a multiscale layer's kernels and biases live in a [`ParamStore`].
///
/// Each branch maps `in_ch → out_ch / 4` channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiscaleSlots {
    pub in_ch: usize,
    pub out_ch: usize,
    kernels: [usize; 4],
    biases: [usize; 4],
}

/// A multiscale layer's parameters as recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct MultiscaleVars {
    pub kernels: [Var; 4],
    pub biases: [Var; 4],
}

impl MultiscaleSlots {
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        in_ch: usize,
        out_ch: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if out_ch == 0 || !out_ch.is_multiple_of(4) {
            return Err(TensorError::Invalid(format!(
                "multiscale out_ch {out_ch} must be a positive multiple of 4"
            )));
        }
        let branch = out_ch / 4;
        let mut kernels = [0; 4];
        let mut biases = [0; 4];
        for (i, &w) in MULTISCALE_WIDTHS.iter().enumerate() {
            let shape = Shape::new(branch, in_ch, w);
            let k = match init {
                Init::He => he_normal(shape, in_ch * w, rng),
                Init::Zero => Tensor::zeros(shape),
            };
            kernels[i] = store.push(format!("{prefix}.k{w}"), k);
            biases[i] = store.push(
                format!("{prefix}.b{w}"),
                Tensor::zeros(Shape::new(1, branch, 1)),
            );
        }
        Ok(MultiscaleSlots {
            in_ch,
            out_ch,
            kernels,
            biases,
        })
    }

    pub fn resolve(&self, vars: &[Var]) -> MultiscaleVars {
        MultiscaleVars {
            kernels: self.kernels.map(|i| vars[i]),
            biases: self.biases.map(|i| vars[i]),
        }
    }

    /// Σ over branches of `width·in_ch·out_ch/4 + out_ch/4`.
    pub fn param_count(in_ch: usize, out_ch: usize) -> usize {
        MULTISCALE_WIDTHS
            .iter()
            .map(|w| w * in_ch * out_ch / 4 + out_ch / 4)
            .sum()
    }
}

pub fn superpixel<T: Real>(tape: &mut Tape<T>, x: Var, r: usize) -> Result<Var> {
    tape.superpixel(x, r)
}

pub fn subpixel<T: Real>(tape: &mut Tape<T>, x: Var, r: usize) -> Result<Var> {
    tape.subpixel(x, r)
}

/// Four same-padded branches concatenated in width order 3, 9, 27, 81.
pub fn multiscale_conv<T: Real>(tape: &mut Tape<T>, x: Var, p: &MultiscaleVars) -> Result<Var> {
    multiscale_conv_strided(tape, x, p, 1)
}

pub fn multiscale_conv_strided<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    p: &MultiscaleVars,
    stride: usize,
) -> Result<Var> {
    let mut out = tape.conv1d_strided(x, p.kernels[0], p.biases[0], stride)?;
    for i in 1..4 {
        let branch = tape.conv1d_strided(x, p.kernels[i], p.biases[i], stride)?;
        out = tape.concat_channels(out, branch)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    pub conv: MultiscaleVars,
    pub activation: Activation,
}

/// multiscale conv → superpixel(2) → activation.
pub fn d_block<T: Real>(tape: &mut Tape<T>, x: Var, p: &BlockVars) -> Result<Var> {
    let h = multiscale_conv(tape, x, &p.conv)?;
    let h = tape.superpixel(h, SHUFFLE_FACTOR)?;
    p.activation.apply(tape, h)
}

/// Strided-convolution stand-in for [`d_block`]: the multiscale conv is
/// evaluated every second sample instead of being followed by a shuffle.
pub fn d_block_strided<T: Real>(tape: &mut Tape<T>, x: Var, p: &BlockVars) -> Result<Var> {
    let h = multiscale_conv_strided(tape, x, &p.conv, SHUFFLE_FACTOR)?;
    p.activation.apply(tape, h)
}

/// multiscale conv → activation → subpixel(2) → stack `skip` (if any)
/// after the upsampled channels.
pub fn u_block<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    skip: Option<Var>,
    p: &BlockVars,
) -> Result<Var> {
    let h = multiscale_conv(tape, x, &p.conv)?;
    let h = p.activation.apply(tape, h)?;
    let h = tape.subpixel(h, SHUFFLE_FACTOR)?;
    match skip {
        Some(s) => tape.concat_channels(h, s),
        None => Ok(h),
    }
}
