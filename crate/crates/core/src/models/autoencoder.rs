use rand::Rng;

use super::{adopt, check_len, check_schedule, schedule};
use crate::nn::{self, Activation, BlockVars, Init, MultiscaleSlots};
use crate::params::{he_normal, ParamStore};
use crate::tensor::{Real, Result, Shape, Tape, Tensor, TensorError, Var};

/// The feature-loss autoencoder always has four D-blocks and four U-blocks.
pub const AUTOENCODER_DEPTH: usize = 4;

const OUTPUT_WIDTH: usize = 9;

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderSpec {
    pub base_channels: usize,
    pub max_channels: usize,
}

impl Default for AutoencoderSpec {
    fn default() -> Self {
        AutoencoderSpec {
            base_channels: 16,
            max_channels: 128,
        }
    }
}

impl AutoencoderSpec {
    pub fn channels(&self, block: usize) -> usize {
        schedule(self.base_channels, self.max_channels, block)
    }

    pub fn validate(&self) -> Result<()> {
        check_schedule(
            "autoencoder",
            self.base_channels,
            self.max_channels,
            AUTOENCODER_DEPTH,
        )
    }

    /// Bottleneck channel count `C_f`.
    pub fn feature_channels(&self) -> usize {
        2 * self.channels(AUTOENCODER_DEPTH - 1)
    }
}

/// Generator-shaped encoder/decoder with no additive or stacking skips.
#[derive(Debug, Clone)]
pub struct Autoencoder<T> {
    spec: AutoencoderSpec,
    store: ParamStore<T>,
    down: Vec<MultiscaleSlots>,
    up: Vec<MultiscaleSlots>,
    out_kernel: usize,
    out_bias: usize,
}

impl<T: Real> Autoencoder<T> {
    pub fn new(spec: AutoencoderSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let l = AUTOENCODER_DEPTH;
        let mut store = ParamStore::new();
        let mut down = Vec::with_capacity(l);
        let mut in_ch = 1;
        for b in 0..l {
            let out = spec.channels(b);
            down.push(MultiscaleSlots::register(
                &mut store,
                &format!("a.down{b}"),
                in_ch,
                out,
                Init::He,
                rng,
            )?);
            in_ch = 2 * out;
        }
        let mut up = Vec::with_capacity(l);
        for k in 0..l {
            let out = spec.channels(l - 1 - k);
            up.push(MultiscaleSlots::register(
                &mut store,
                &format!("a.up{k}"),
                in_ch,
                out,
                Init::He,
                rng,
            )?);
            in_ch = out / 2;
        }
        let out_kernel = store.push(
            "a.out.k",
            he_normal(
                Shape::new(1, in_ch, OUTPUT_WIDTH),
                in_ch * OUTPUT_WIDTH,
                rng,
            ),
        );
        let out_bias = store.push("a.out.b", Tensor::zeros(Shape::new(1, 1, 1)));
        Ok(Autoencoder {
            spec,
            store,
            down,
            up,
            out_kernel,
            out_bias,
        })
    }

    pub fn with_params(spec: AutoencoderSpec, params: ParamStore<T>) -> Result<Self> {
        let mut a = Self::new(
            spec,
            &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0),
        )?;
        a.store = adopt(&a.store, params)?;
        Ok(a)
    }

    pub fn spec(&self) -> &AutoencoderSpec {
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

    pub fn cast<U: Real>(&self) -> Autoencoder<U> {
        Autoencoder {
            spec: self.spec.clone(),
            store: self.store.cast(),
            down: self.down.clone(),
            up: self.up.clone(),
            out_kernel: self.out_kernel,
            out_bias: self.out_bias,
        }
    }

    /// Bottleneck features φ, `(B, C_f, T / 16)`.
    pub fn encode(&self, tape: &mut Tape<T>, vars: &[Var], x: Var) -> Result<Var> {
        let shape = tape.value(x)?.shape();
        if shape.channels != 1 {
            return Err(TensorError::Invalid(format!(
                "autoencoder expects 1 input channel, got {}",
                shape.channels
            )));
        }
        check_len("autoencoder input", shape.time, AUTOENCODER_DEPTH)?;
        let mut h = x;
        for slots in &self.down {
            let p = BlockVars {
                conv: slots.resolve(vars),
                activation: Activation::Relu,
            };
            h = nn::d_block(tape, h, &p)?;
        }
        Ok(h)
    }

    pub fn decode(&self, tape: &mut Tape<T>, vars: &[Var], phi: Var) -> Result<Var> {
        let mut h = phi;
        for slots in &self.up {
            let p = BlockVars {
                conv: slots.resolve(vars),
                activation: Activation::Relu,
            };
            h = nn::u_block(tape, h, None, &p)?;
        }
        tape.conv1d(h, vars[self.out_kernel], vars[self.out_bias])
    }

    /// Returns `(φ, reconstruction)`.
    pub fn forward(&self, tape: &mut Tape<T>, vars: &[Var], x: Var) -> Result<(Var, Var)> {
        let phi = self.encode(tape, vars, x)?;
        let recon = self.decode(tape, vars, phi)?;
        Ok((phi, recon))
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut tape = Tape::inference();
        let vars = self.store.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let (phi, recon) = self.forward(&mut tape, &vars, xv)?;
        Ok((tape.value(phi)?.clone(), tape.value(recon)?.clone()))
    }
}
