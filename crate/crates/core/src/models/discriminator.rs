use rand::Rng;

use super::{adopt, check_len, check_schedule, schedule};
use crate::nn::{self, Activation, BlockVars, Init, MultiscaleSlots};
use crate::params::{he_normal, ParamStore};
use crate::tensor::{Real, Result, Shape, Tape, Tensor, TensorError, Var};

const LEAK: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorSpec {
    pub depth: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    /// Width of the hidden dense layer before the probability output.
    pub head: usize,
    /// The single input length this discriminator accepts.
    pub input_len: usize,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        DiscriminatorSpec {
            depth: 4,
            base_channels: 16,
            max_channels: 128,
            head: 64,
            input_len: 8192,
        }
    }
}

impl DiscriminatorSpec {
    pub fn channels(&self, block: usize) -> usize {
        schedule(self.base_channels, self.max_channels, block)
    }

    pub fn validate(&self) -> Result<()> {
        check_schedule(
            "discriminator",
            self.base_channels,
            self.max_channels,
            self.depth,
        )?;
        check_len("discriminator input", self.input_len, self.depth)?;
        if self.head == 0 {
            return Err(TensorError::Invalid(
                "discriminator head must be non-empty".into(),
            ));
        }
        Ok(())
    }

    fn features(&self) -> usize {
        2 * self.channels(self.depth - 1) * (self.input_len >> self.depth)
    }
}

/// (multiscale conv → superpixel → LeakyReLU) blocks, then flatten → dense
/// → LeakyReLU → dense → sigmoid, one probability per batch item.
#[derive(Debug, Clone)]
pub struct Discriminator<T> {
    spec: DiscriminatorSpec,
    store: ParamStore<T>,
    blocks: Vec<MultiscaleSlots>,
    hidden: (usize, usize),
    output: (usize, usize),
}

impl<T: Real> Discriminator<T> {
    pub fn new(spec: DiscriminatorSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let mut store = ParamStore::new();
        let mut blocks = Vec::with_capacity(spec.depth);
        let mut in_ch = 1;
        for b in 0..spec.depth {
            let out = spec.channels(b);
            blocks.push(MultiscaleSlots::register(
                &mut store,
                &format!("d.block{b}"),
                in_ch,
                out,
                Init::He,
                rng,
            )?);
            in_ch = 2 * out;
        }
        let features = spec.features();
        let hidden = (
            store.push(
                "d.hidden.w",
                he_normal(Shape::new(1, spec.head, features), features, rng),
            ),
            store.push("d.hidden.b", Tensor::zeros(Shape::new(1, spec.head, 1))),
        );
        let output = (
            store.push(
                "d.out.w",
                he_normal(Shape::new(1, 1, spec.head), spec.head, rng),
            ),
            store.push("d.out.b", Tensor::zeros(Shape::new(1, 1, 1))),
        );
        Ok(Discriminator {
            spec,
            store,
            blocks,
            hidden,
            output,
        })
    }

    pub fn with_params(spec: DiscriminatorSpec, params: ParamStore<T>) -> Result<Self> {
        let mut d = Self::new(
            spec,
            &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0),
        )?;
        d.store = adopt(&d.store, params)?;
        Ok(d)
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
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

    pub fn cast<U: Real>(&self) -> Discriminator<U> {
        Discriminator {
            spec: self.spec.clone(),
            store: self.store.cast(),
            blocks: self.blocks.clone(),
            hidden: self.hidden,
            output: self.output,
        }
    }

    /// Returns `(B, 1, 1)` probabilities that each input is real audio.
    pub fn forward(&self, tape: &mut Tape<T>, vars: &[Var], x: Var) -> Result<Var> {
        let shape = tape.value(x)?.shape();
        if shape.channels != 1 || shape.time != self.spec.input_len {
            return Err(TensorError::ShapeMismatch {
                op: "discriminator input",
                expected: Shape::new(shape.batch, 1, self.spec.input_len),
                got: shape,
            });
        }
        let mut h = x;
        for slots in &self.blocks {
            let p = BlockVars {
                conv: slots.resolve(vars),
                activation: Activation::LeakyRelu(LEAK),
            };
            h = nn::d_block(tape, h, &p)?;
        }
        let h = tape.dense(h, vars[self.hidden.0], vars[self.hidden.1])?;
        let h = tape.leaky_relu(h, LEAK)?;
        let logit = tape.dense(h, vars[self.output.0], vars[self.output.1])?;
        tape.sigmoid(logit)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::inference();
        let vars = self.store.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let y = self.forward(&mut tape, &vars, xv)?;
        Ok(tape.value(y)?.clone())
    }
}
