use rand::Rng;

use super::{adopt, check_len, check_schedule, schedule};
use crate::nn::{self, Activation, BlockVars, Init, MultiscaleSlots};
use crate::params::{he_normal, ParamStore};
use crate::tensor::{Real, Result, Shape, Tape, Tensor, TensorError, Var};

/// Width of the generator's output convolution.
const OUTPUT_WIDTH: usize = 9;

/// How D-blocks halve the time axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Downsample {
    Superpixel,
    /// Stride-2 multiscale convolution with twice the output channels, so
    /// block shapes match the superpixel variant.
    StridedConv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    /// Number of D-blocks (and of U-blocks).
    pub depth: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    pub patch_len: usize,
    pub downsample: Downsample,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            depth: 8,
            base_channels: 16,
            max_channels: 128,
            patch_len: 8192,
            downsample: Downsample::Superpixel,
        }
    }
}

impl GeneratorSpec {
    pub fn channels(&self, block: usize) -> usize {
        schedule(self.base_channels, self.max_channels, block)
    }

    /// Channels entering D-block `b`, which is also what U-block `depth-1-b`
    /// stacks onto its output.
    fn skip_channels(&self, b: usize) -> usize {
        if b == 0 {
            1
        } else {
            2 * self.channels(b - 1)
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_schedule(
            "generator",
            self.base_channels,
            self.max_channels,
            self.depth,
        )?;
        check_len("generator patch", self.patch_len, self.depth)
    }
}

/// Multiscale U-net. D-block `b` sees the input at `T / 2^b`; that input is
/// stacked onto the output of the U-block restoring the same resolution.
/// A width-9 convolution maps back to one channel and the spline-upsampled
/// input is added to the result.
#[derive(Debug, Clone)]
pub struct Generator<T> {
    spec: GeneratorSpec,
    store: ParamStore<T>,
    down: Vec<MultiscaleSlots>,
    up: Vec<MultiscaleSlots>,
    out_kernel: usize,
    out_bias: usize,
}

impl<T: Real> Generator<T> {
    pub fn new(spec: GeneratorSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let l = spec.depth;
        let mut store = ParamStore::new();
        let mut down = Vec::with_capacity(l);
        for b in 0..l {
            let out = match spec.downsample {
                Downsample::Superpixel => spec.channels(b),
                Downsample::StridedConv => 2 * spec.channels(b),
            };
            down.push(MultiscaleSlots::register(
                &mut store,
                &format!("g.down{b}"),
                spec.skip_channels(b),
                out,
                Init::He,
                rng,
            )?);
        }
        let mut up = Vec::with_capacity(l);
        let mut in_ch = 2 * spec.channels(l - 1);
        for k in 0..l {
            let b = l - 1 - k;
            let out = spec.channels(b);
            up.push(MultiscaleSlots::register(
                &mut store,
                &format!("g.up{k}"),
                in_ch,
                out,
                Init::He,
                rng,
            )?);
            in_ch = out / 2 + spec.skip_channels(b);
        }
        // Zero output layer: training starts from the spline baseline.
        let out_kernel = store.push("g.out.k", Tensor::zeros(Shape::new(1, in_ch, OUTPUT_WIDTH)));
        let out_bias = store.push("g.out.b", Tensor::zeros(Shape::new(1, 1, 1)));
        Ok(Generator {
            spec,
            store,
            down,
            up,
            out_kernel,
            out_bias,
        })
    }

    /// Rebuilds a generator around previously saved parameters.
    pub fn with_params(spec: GeneratorSpec, params: ParamStore<T>) -> Result<Self> {
        let mut g = Self::new(
            spec,
            &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0),
        )?;
        g.store = adopt(&g.store, params)?;
        Ok(g)
    }

    /// Re-draws the output layer (normally zero) from a He-scaled normal.
    pub fn randomize_output(&mut self, rng: &mut impl Rng) {
        let shape = self.store.tensors()[self.out_kernel].shape();
        self.store.tensors_mut()[self.out_kernel] =
            he_normal(shape, shape.channels * shape.time, rng);
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.store
    }

    pub fn cast<U: Real>(&self) -> Generator<U> {
        Generator {
            spec: self.spec.clone(),
            store: self.store.cast(),
            down: self.down.clone(),
            up: self.up.clone(),
            out_kernel: self.out_kernel,
            out_bias: self.out_bias,
        }
    }

    /// `x_up` is `(B, 1, T)` with `T` divisible by `2^depth`; `vars` come
    /// from binding [`Generator::params`] on the same tape.
    pub fn forward(&self, tape: &mut Tape<T>, vars: &[Var], x_up: Var) -> Result<Var> {
        let shape = tape.value(x_up)?.shape();
        if shape.channels != 1 {
            return Err(TensorError::Invalid(format!(
                "generator expects 1 input channel, got {}",
                shape.channels
            )));
        }
        check_len("generator input", shape.time, self.spec.depth)?;
        let mut skips = Vec::with_capacity(self.spec.depth);
        let mut h = x_up;
        for slots in &self.down {
            skips.push(h);
            let p = BlockVars {
                conv: slots.resolve(vars),
                activation: Activation::Relu,
            };
            h = match self.spec.downsample {
                Downsample::Superpixel => nn::d_block(tape, h, &p)?,
                Downsample::StridedConv => nn::d_block_strided(tape, h, &p)?,
            };
        }
        for slots in &self.up {
            let skip = skips.pop().expect("one skip per D-block");
            let p = BlockVars {
                conv: slots.resolve(vars),
                activation: Activation::Relu,
            };
            h = nn::u_block(tape, h, Some(skip), &p)?;
        }
        let residual = tape.conv1d(h, vars[self.out_kernel], vars[self.out_bias])?;
        tape.add(x_up, residual)
    }

    /// Forward pass without gradient recording.
    pub fn infer(&self, x_up: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::inference();
        let vars = self.store.bind(&mut tape, false);
        let x = tape.constant(x_up.clone());
        let y = self.forward(&mut tape, &vars, x)?;
        Ok(tape.value(y)?.clone())
    }
}
