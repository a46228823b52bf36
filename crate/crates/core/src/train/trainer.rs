use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{Checkpoint, OptimizerRecord, RngState};
use super::{Mode, TrainError};
use crate::config::Config;
use crate::data::Dataset;
use crate::models::{Autoencoder, Discriminator, Generator};
use crate::objectives::{discriminator_loss, generator_loss, l2_loss};
use crate::params::ParamStore;
use crate::tensor::{adam_step, AdamState, Tape, Tensor, TensorError, Var};

// ChaCha streams for parameter initialization; epoch `e` shuffles with
// stream `EPOCH_STREAM_BASE + e`.
const G_INIT_STREAM: u64 = 10;
const D_INIT_STREAM: u64 = 11;
const A_INIT_STREAM: u64 = 12;
const EPOCH_STREAM_BASE: u64 = 1000;

fn init_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Visiting order of `n` training pairs in `epoch`; a pure function of its
/// arguments.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut init_rng(seed, EPOCH_STREAM_BASE + epoch));
    order
}

pub type CheckpointHook<'a> = &'a mut dyn FnMut(&Checkpoint) -> Result<(), TrainError>;

/// Optional observers for a training run.
#[derive(Default)]
pub struct Hooks<'a> {
    /// Receives one line per step.
    pub log: Option<&'a mut dyn Write>,
    /// Called every `checkpoint_every` steps.
    pub on_checkpoint: Option<CheckpointHook<'a>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub total: f64,
    pub l2: f64,
    pub feature: Option<f64>,
    pub adversarial: Option<f64>,
    pub discriminator: Option<f64>,
}

impl StepLosses {
    fn log_line(&self, step: u64, wall: f64) -> String {
        let mut s = format!("step={step} loss_g={:.6e} l2={:.6e}", self.total, self.l2);
        if let Some(f) = self.feature {
            s += &format!(" feature={f:.6e}");
        }
        if let Some(a) = self.adversarial {
            s += &format!(" adv={a:.6e}");
        }
        if let Some(d) = self.discriminator {
            s += &format!(" loss_d={d:.6e}");
        }
        s + &format!(" wall={wall:.3}")
    }
}

fn diverged(step: u64, what: impl Into<String>) -> TrainError {
    TrainError::Diverged {
        step,
        what: what.into(),
    }
}

/// Maps non-finite forward values to a divergence diagnostic.
fn guard<T>(step: u64, r: Result<T, TensorError>) -> Result<T, TrainError> {
    r.map_err(|e| match e {
        TensorError::NonFinite(op) => diverged(step, format!("value in {op}")),
        other => TrainError::Tensor(other),
    })
}

fn scalar(tape: &Tape<f32>, v: Var) -> Result<f64, TrainError> {
    Ok(tape.value(v)?.data()[0] as f64)
}

fn finite(step: u64, what: &str, v: f64) -> Result<f64, TrainError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(diverged(step, what))
    }
}

/// Backpropagates `loss` and applies one ADAM step to `store`.
fn descend(
    tape: &Tape<f32>,
    loss: Var,
    vars: &[Var],
    store: &mut ParamStore<f32>,
    opt: &mut AdamState<f32>,
    step: u64,
) -> Result<(), TrainError> {
    let grads = tape.backward(loss)?;
    let g: Vec<Option<&Tensor<f32>>> = vars.iter().map(|&v| grads.get(v)).collect();
    if g.iter().flatten().any(|t| !t.is_finite()) {
        return Err(diverged(step, "gradient"));
    }
    adam_step(store.tensors_mut(), &g, opt)?;
    Ok(())
}

fn steps_per_epoch(dataset: &Dataset, batch: usize) -> Result<u64, TrainError> {
    let n = dataset.pairs.len() / batch;
    if n == 0 {
        return Err(TrainError::Config(format!(
            "{} training pairs cannot fill one batch of {batch}",
            dataset.pairs.len()
        )));
    }
    Ok(n as u64)
}

fn total_steps(epochs: u64, per_epoch: u64, cap: u64) -> u64 {
    let n = epochs * per_epoch;
    if cap > 0 {
        n.min(cap)
    } else {
        n
    }
}

fn batch_for_step(
    dataset: &Dataset,
    seed: u64,
    per_epoch: u64,
    batch: usize,
    step: u64,
    cache: &mut Option<(u64, Vec<usize>)>,
) -> (Tensor<f32>, Tensor<f32>) {
    let epoch = step / per_epoch;
    if cache.as_ref().is_none_or(|(e, _)| *e != epoch) {
        *cache = Some((epoch, epoch_order(dataset.pairs.len(), seed, epoch)));
    }
    let order = &cache.as_ref().unwrap().1;
    let pos = (step % per_epoch) as usize * batch;
    dataset.batch(&order[pos..pos + batch])
}

/// Rebuilds the configuration a checkpoint was written with.
pub fn checkpoint_config(c: &Checkpoint) -> Result<Config, TrainError> {
    let mut cfg = Config::default();
    for (k, v) in c.hyper.iter().filter(|(k, _)| k != "kind") {
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

fn check_identity(config: &Config, c: &Checkpoint, kind: &str) -> Result<(), TrainError> {
    if c.hyper("kind") != Some(kind) {
        return Err(TrainError::Checkpoint(format!(
            "expected a {kind} checkpoint, found {:?}",
            c.hyper("kind")
        )));
    }
    let mut want = config.identity();
    want.insert(0, ("kind".into(), kind.into()));
    if let Some((k, v)) = want.iter().find(|(k, v)| c.hyper(k) != Some(v.as_str())) {
        return Err(TrainError::Checkpoint(format!(
            "configuration differs from checkpoint at {k} (config {v}, checkpoint {:?})",
            c.hyper(k)
        )));
    }
    Ok(())
}

fn hyper(config: &Config, kind: &str) -> Vec<(String, String)> {
    let mut h = vec![("kind".to_string(), kind.to_string())];
    h.extend(config.identity());
    h
}

fn named(store: &ParamStore<f32>) -> impl Iterator<Item = (String, Tensor<f32>)> + '_ {
    store.iter().map(|(n, t)| (n.to_string(), t.clone()))
}

fn restore_optimizer(
    c: &Checkpoint,
    name: &str,
    store: &ParamStore<f32>,
) -> Result<AdamState<f32>, TrainError> {
    let st = c
        .optimizer(name)
        .ok_or_else(|| TrainError::Checkpoint(format!("missing optimizer {name:?}")))?;
    let ok = st.m.len() == store.len()
        && st.v.len() == store.len()
        && st
            .m
            .iter()
            .zip(store.tensors())
            .all(|(m, p)| m.shape() == p.shape());
    if !ok {
        return Err(TrainError::Checkpoint(format!(
            "optimizer {name:?} does not match its parameters"
        )));
    }
    Ok(st.clone())
}

/// Pretrains the autoencoder on reconstruction error.
pub struct AeTrainer {
    config: Config,
    pub model: Autoencoder<f32>,
    pub opt: AdamState<f32>,
    pub step: u64,
}

impl AeTrainer {
    pub fn new(config: &Config) -> Result<AeTrainer, TrainError> {
        config.validate()?;
        let model = Autoencoder::new(
            config.autoencoder.clone(),
            &mut init_rng(config.train.seed, A_INIT_STREAM),
        )?;
        let opt = AdamState::new(config.train.adam, model.params().tensors());
        Ok(AeTrainer {
            config: config.clone(),
            model,
            opt,
            step: 0,
        })
    }

    pub fn from_checkpoint(config: &Config, c: &Checkpoint) -> Result<AeTrainer, TrainError> {
        config.validate()?;
        check_identity(config, c, "autoencoder")?;
        let model = Autoencoder::with_params(config.autoencoder.clone(), c.param_store("a."))?;
        let opt = restore_optimizer(c, "a", model.params())?;
        Ok(AeTrainer {
            config: config.clone(),
            model,
            opt,
            step: c.step,
        })
    }

    pub fn train_step(&mut self, x_h: &Tensor<f32>) -> Result<f64, TrainError> {
        let step = self.step;
        let mut tape = Tape::new();
        let vars = self.model.params().bind(&mut tape, true);
        let x = tape.constant(x_h.clone());
        let (_, recon) = guard(step, self.model.forward(&mut tape, &vars, x))?;
        let loss = guard(step, l2_loss(&mut tape, x, recon))?;
        let value = finite(step, "autoencoder loss", scalar(&tape, loss)?)?;
        descend(
            &tape,
            loss,
            &vars,
            self.model.params_mut(),
            &mut self.opt,
            step,
        )?;
        self.step += 1;
        Ok(value)
    }

    pub fn checkpoint(&self, rng: RngState) -> Checkpoint {
        Checkpoint {
            hyper: hyper(&self.config, "autoencoder"),
            params: named(self.model.params()).collect(),
            optimizers: vec![OptimizerRecord {
                name: "a".into(),
                state: self.opt.clone(),
            }],
            rng,
            step: self.step,
        }
    }
}

/// Generator and discriminator with their optimizers.
pub struct GanTrainer {
    config: Config,
    pub g: Generator<f32>,
    pub d: Discriminator<f32>,
    pub g_opt: AdamState<f32>,
    pub d_opt: AdamState<f32>,
    pub step: u64,
}

impl GanTrainer {
    pub fn new(config: &Config) -> Result<GanTrainer, TrainError> {
        config.validate()?;
        let seed = config.train.seed;
        let g = Generator::new(config.generator.clone(), &mut init_rng(seed, G_INIT_STREAM))?;
        let d = Discriminator::new(
            config.discriminator.clone(),
            &mut init_rng(seed, D_INIT_STREAM),
        )?;
        let g_opt = AdamState::new(config.train.adam, g.params().tensors());
        let d_opt = AdamState::new(config.train.adam, d.params().tensors());
        Ok(GanTrainer {
            config: config.clone(),
            g,
            d,
            g_opt,
            d_opt,
            step: 0,
        })
    }

    pub fn from_checkpoint(config: &Config, c: &Checkpoint) -> Result<GanTrainer, TrainError> {
        config.validate()?;
        check_identity(config, c, "gan")?;
        let g = Generator::with_params(config.generator.clone(), c.param_store("g."))?;
        let d = Discriminator::with_params(config.discriminator.clone(), c.param_store("d."))?;
        let g_opt = restore_optimizer(c, "g", g.params())?;
        let d_opt = restore_optimizer(c, "d", d.params())?;
        Ok(GanTrainer {
            config: config.clone(),
            g,
            d,
            g_opt,
            d_opt,
            step: c.step,
        })
    }

    pub fn mode(&self) -> Mode {
        self.config.train.mode
    }

    /// One discriminator step on real `x_h` against fixed generator output
    /// `fake`. Generator parameters are not touched.
    pub fn discriminator_update(
        &mut self,
        x_h: &Tensor<f32>,
        fake: &Tensor<f32>,
    ) -> Result<f64, TrainError> {
        let step = self.step;
        let mut tape = Tape::new();
        let vars = self.d.params().bind(&mut tape, true);
        let real = tape.constant(x_h.clone());
        let fake = tape.constant(fake.clone());
        let d_real = guard(step, self.d.forward(&mut tape, &vars, real))?;
        let d_fake = guard(step, self.d.forward(&mut tape, &vars, fake))?;
        let loss = guard(step, discriminator_loss(&mut tape, d_real, d_fake))?;
        let value = finite(step, "discriminator loss", scalar(&tape, loss)?)?;
        descend(
            &tape,
            loss,
            &vars,
            self.d.params_mut(),
            &mut self.d_opt,
            step,
        )?;
        Ok(value)
    }

    /// One generator step. The discriminator and autoencoder enter the
    /// graph as constants, so only generator parameters move.
    pub fn generator_update(
        &mut self,
        x_up: &Tensor<f32>,
        x_h: &Tensor<f32>,
        ae: Option<&Autoencoder<f32>>,
    ) -> Result<StepLosses, TrainError> {
        let mut tape = Tape::new();
        let vars = self.g.params().bind(&mut tape, true);
        let x = tape.constant(x_up.clone());
        let g_out = guard(self.step, self.g.forward(&mut tape, &vars, x))?;
        self.finish_generator(tape, &vars, g_out, x_h, ae, None)
    }

    fn finish_generator(
        &mut self,
        mut tape: Tape<f32>,
        vars: &[Var],
        g_out: Var,
        x_h: &Tensor<f32>,
        ae: Option<&Autoencoder<f32>>,
        discriminator: Option<f64>,
    ) -> Result<StepLosses, TrainError> {
        let step = self.step;
        let mode = self.mode();
        let target = tape.constant(x_h.clone());
        let features = if mode.uses_feature() {
            let ae = ae.ok_or(TrainError::MissingAutoencoder)?;
            let av = ae.params().bind(&mut tape, false);
            let phi_h = guard(step, ae.encode(&mut tape, &av, target))?;
            let phi_g = guard(step, ae.encode(&mut tape, &av, g_out))?;
            Some((phi_h, phi_g))
        } else {
            None
        };
        let d_of_g = if mode.uses_adversary() {
            let dv = self.d.params().bind(&mut tape, false);
            Some(guard(step, self.d.forward(&mut tape, &dv, g_out))?)
        } else {
            None
        };
        let terms = guard(
            step,
            generator_loss(
                &mut tape,
                target,
                g_out,
                features,
                d_of_g,
                self.config.train.weights,
            ),
        )?;
        let losses = StepLosses {
            total: finite(step, "generator loss", scalar(&tape, terms.total)?)?,
            l2: scalar(&tape, terms.l2)?,
            feature: terms.feature.map(|v| scalar(&tape, v)).transpose()?,
            adversarial: terms.adversarial.map(|v| scalar(&tape, v)).transpose()?,
            discriminator,
        };
        descend(
            &tape,
            terms.total,
            vars,
            self.g.params_mut(),
            &mut self.g_opt,
            step,
        )?;
        self.step += 1;
        Ok(losses)
    }

    /// A discriminator step on the current generator output (adversarial
    /// mode only), then a generator step.
    pub fn train_step(
        &mut self,
        x_up: &Tensor<f32>,
        x_h: &Tensor<f32>,
        ae: Option<&Autoencoder<f32>>,
    ) -> Result<StepLosses, TrainError> {
        if self.mode().uses_feature() && ae.is_none() {
            return Err(TrainError::MissingAutoencoder);
        }
        let mut tape = Tape::new();
        let vars = self.g.params().bind(&mut tape, true);
        let x = tape.constant(x_up.clone());
        let g_out = guard(self.step, self.g.forward(&mut tape, &vars, x))?;
        let d_loss = if self.mode().uses_adversary() {
            let fake = tape.value(g_out)?.clone();
            Some(self.discriminator_update(x_h, &fake)?)
        } else {
            None
        };
        self.finish_generator(tape, &vars, g_out, x_h, ae, d_loss)
    }

    pub fn checkpoint(&self, rng: RngState) -> Checkpoint {
        Checkpoint {
            hyper: hyper(&self.config, "gan"),
            params: named(self.g.params())
                .chain(named(self.d.params()))
                .collect(),
            optimizers: vec![
                OptimizerRecord {
                    name: "g".into(),
                    state: self.g_opt.clone(),
                },
                OptimizerRecord {
                    name: "d".into(),
                    state: self.d_opt.clone(),
                },
            ],
            rng,
            step: self.step,
        }
    }
}

fn rng_state(seed: u64, step: u64, per_epoch: u64) -> RngState {
    RngState {
        seed,
        stream: EPOCH_STREAM_BASE + step / per_epoch,
    }
}

fn emit(hooks: &mut Hooks, line: &str) -> Result<(), TrainError> {
    if let Some(w) = hooks.log.as_mut() {
        writeln!(w, "{line}").map_err(|e| TrainError::Io("training log".into(), e))?;
    }
    Ok(())
}

fn maybe_checkpoint(
    hooks: &mut Hooks,
    every: u64,
    step: u64,
    make: impl FnOnce() -> Checkpoint,
) -> Result<(), TrainError> {
    if every > 0 && step.is_multiple_of(every) {
        if let Some(cb) = hooks.on_checkpoint.as_mut() {
            cb(&make())?;
        }
    }
    Ok(())
}

/// Trains the autoencoder for `ae_epochs` (capped by `ae_max_steps`),
/// optionally continuing from `resume`.
pub fn train_autoencoder(
    config: &Config,
    dataset: &Dataset,
    resume: Option<&Checkpoint>,
    mut hooks: Hooks,
) -> Result<Checkpoint, TrainError> {
    let mut t = match resume {
        Some(c) => AeTrainer::from_checkpoint(config, c)?,
        None => AeTrainer::new(config)?,
    };
    let tc = &config.train;
    let per_epoch = steps_per_epoch(dataset, tc.batch_size)?;
    let total = total_steps(tc.ae_epochs, per_epoch, tc.ae_max_steps);
    let start = Instant::now();
    let mut cache = None;
    while t.step < total {
        let (_, x_h) = batch_for_step(
            dataset,
            tc.seed,
            per_epoch,
            tc.batch_size,
            t.step,
            &mut cache,
        );
        let loss = t.train_step(&x_h)?;
        emit(
            &mut hooks,
            &format!(
                "step={} loss={loss:.6e} wall={:.3}",
                t.step,
                start.elapsed().as_secs_f64()
            ),
        )?;
        maybe_checkpoint(&mut hooks, tc.checkpoint_every, t.step, || {
            t.checkpoint(rng_state(tc.seed, t.step, per_epoch))
        })?;
    }
    Ok(t.checkpoint(rng_state(tc.seed, t.step, per_epoch)))
}

/// Alternating GAN training for `epochs` (capped by `max_steps`). The
/// autoencoder is required when the mode includes the feature loss and is
/// never modified.
pub fn train_gan(
    config: &Config,
    dataset: &Dataset,
    ae: Option<&Autoencoder<f32>>,
    resume: Option<&Checkpoint>,
    mut hooks: Hooks,
) -> Result<Checkpoint, TrainError> {
    let tc = &config.train;
    if tc.mode.uses_feature() && ae.is_none() {
        return Err(TrainError::MissingAutoencoder);
    }
    let mut t = match resume {
        Some(c) => GanTrainer::from_checkpoint(config, c)?,
        None => GanTrainer::new(config)?,
    };
    let per_epoch = steps_per_epoch(dataset, tc.batch_size)?;
    let total = total_steps(tc.epochs, per_epoch, tc.max_steps);
    let start = Instant::now();
    let mut cache = None;
    while t.step < total {
        let (x_up, x_h) = batch_for_step(
            dataset,
            tc.seed,
            per_epoch,
            tc.batch_size,
            t.step,
            &mut cache,
        );
        let losses = t.train_step(&x_up, &x_h, ae)?;
        emit(
            &mut hooks,
            &losses.log_line(t.step, start.elapsed().as_secs_f64()),
        )?;
        maybe_checkpoint(&mut hooks, tc.checkpoint_every, t.step, || {
            t.checkpoint(rng_state(tc.seed, t.step, per_epoch))
        })?;
    }
    Ok(t.checkpoint(rng_state(tc.seed, t.step, per_epoch)))
}

/// Loads the frozen autoencoder from its checkpoint.
pub fn autoencoder_from(c: &Checkpoint) -> Result<Autoencoder<f32>, TrainError> {
    if c.hyper("kind") != Some("autoencoder") {
        return Err(TrainError::Checkpoint(
            "expected an autoencoder checkpoint".into(),
        ));
    }
    let cfg = checkpoint_config(c)?;
    Ok(Autoencoder::with_params(
        cfg.autoencoder,
        c.param_store("a."),
    )?)
}

/// Loads the generator from a GAN checkpoint.
pub fn generator_from(c: &Checkpoint) -> Result<Generator<f32>, TrainError> {
    if c.hyper("kind") != Some("gan") {
        return Err(TrainError::Checkpoint("expected a gan checkpoint".into()));
    }
    let cfg = checkpoint_config(c)?;
    Ok(Generator::with_params(cfg.generator, c.param_store("g."))?)
}
