//! Plain-text `key = value` configuration covering the dataset, the three
//! networks and training. `#` starts a comment; unknown keys are errors.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{DatasetSpec, Source, Split, SynthRecipe};
use crate::models::{AutoencoderSpec, DiscriminatorSpec, Downsample, GeneratorSpec};
use crate::train::{TrainConfig, TrainError};

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub dataset: DatasetSpec,
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
    pub autoencoder: AutoencoderSpec,
    pub train: TrainConfig,
}

impl Default for Config {
    fn default() -> Self {
        let dataset = DatasetSpec::default();
        Config {
            generator: GeneratorSpec {
                patch_len: dataset.patch_len,
                ..GeneratorSpec::default()
            },
            discriminator: DiscriminatorSpec {
                input_len: dataset.patch_len,
                ..DiscriminatorSpec::default()
            },
            autoencoder: AutoencoderSpec::default(),
            train: TrainConfig::default(),
            dataset,
        }
    }
}

/// Keys that only control how long a run lasts or how often it reports.
/// They are left out of checkpoints so that a resumed run can extend them.
pub const RUN_LENGTH_KEYS: [&str; 5] = [
    "epochs",
    "ae_epochs",
    "max_steps",
    "ae_max_steps",
    "checkpoint_every",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, TrainError> {
    value
        .parse()
        .map_err(|_| TrainError::Config(format!("{key}: cannot parse {value:?}")))
}

impl Config {
    pub fn parse(text: &str) -> Result<Config, TrainError> {
        let mut cfg = Config::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                TrainError::Config(format!("line {}: expected key = value", n + 1))
            })?;
            cfg.set(k.trim(), v.trim()).map_err(|e| match e {
                TrainError::Config(m) => TrainError::Config(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Config, TrainError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| TrainError::Io(path.display().to_string(), e))?;
        Config::parse(&text)
    }

    fn recipe_mut(&mut self) -> &mut SynthRecipe {
        if !matches!(self.dataset.source, Source::Synthetic(_)) {
            self.dataset.source = Source::Synthetic(SynthRecipe::default());
        }
        match &mut self.dataset.source {
            Source::Synthetic(r) => r,
            Source::WavDir(_) => unreachable!(),
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        let v = value;
        match key {
            "source" => match v {
                "synthetic" => {
                    self.recipe_mut();
                }
                "wav" => {
                    if !matches!(self.dataset.source, Source::WavDir(_)) {
                        self.dataset.source = Source::WavDir(PathBuf::new());
                    }
                }
                _ => {
                    return Err(TrainError::Config(format!(
                        "source: expected synthetic or wav, got {v:?}"
                    )))
                }
            },
            "data_dir" => self.dataset.source = Source::WavDir(PathBuf::from(v)),
            "ratio" => self.dataset.ratio = parse(key, v)?,
            "patch_len" => {
                let p = parse(key, v)?;
                self.dataset.patch_len = p;
                self.generator.patch_len = p;
                self.discriminator.input_len = p;
            }
            "patches_per_epoch" => self.dataset.patches_per_epoch = parse(key, v)?,
            "seed" => {
                let s = parse(key, v)?;
                self.dataset.seed = s;
                self.train.seed = s;
            }
            "split" => {
                let parts: Vec<f64> = v
                    .split(',')
                    .map(|p| parse(key, p.trim()))
                    .collect::<Result<_, _>>()?;
                let [train, val, test] = parts[..] else {
                    return Err(TrainError::Config("split: expected train,val,test".into()));
                };
                self.dataset.split = Split { train, val, test };
            }
            "synth.clips" => self.recipe_mut().clips = parse(key, v)?,
            "synth.clip_len" => self.recipe_mut().clip_len = parse(key, v)?,
            "synth.sample_rate" => self.recipe_mut().sample_rate = parse(key, v)?,
            "synth.tones" => self.recipe_mut().tones = parse(key, v)?,
            "synth.min_freq" => self.recipe_mut().min_freq = parse(key, v)?,
            "synth.max_freq" => self.recipe_mut().max_freq = parse(key, v)?,
            "synth.min_amp" => self.recipe_mut().min_amp = parse(key, v)?,
            "synth.max_amp" => self.recipe_mut().max_amp = parse(key, v)?,
            "synth.noise" => self.recipe_mut().noise = parse(key, v)?,
            "g.depth" => self.generator.depth = parse(key, v)?,
            "g.base_channels" => self.generator.base_channels = parse(key, v)?,
            "g.max_channels" => self.generator.max_channels = parse(key, v)?,
            "g.downsample" => {
                self.generator.downsample = match v {
                    "superpixel" => Downsample::Superpixel,
                    "strided" => Downsample::StridedConv,
                    _ => {
                        return Err(TrainError::Config(format!(
                            "g.downsample: expected superpixel or strided, got {v:?}"
                        )))
                    }
                }
            }
            "d.depth" => self.discriminator.depth = parse(key, v)?,
            "d.base_channels" => self.discriminator.base_channels = parse(key, v)?,
            "d.max_channels" => self.discriminator.max_channels = parse(key, v)?,
            "d.head" => self.discriminator.head = parse(key, v)?,
            "a.base_channels" => self.autoencoder.base_channels = parse(key, v)?,
            "a.max_channels" => self.autoencoder.max_channels = parse(key, v)?,
            "mode" => self.train.mode = v.parse().map_err(TrainError::Config)?,
            "lambda_f" => self.train.weights.lambda_f = parse(key, v)?,
            "lambda_adv" => self.train.weights.lambda_adv = parse(key, v)?,
            "lr" => self.train.adam.lr = parse(key, v)?,
            "beta1" => self.train.adam.beta1 = parse(key, v)?,
            "beta2" => self.train.adam.beta2 = parse(key, v)?,
            "eps" => self.train.adam.eps = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "epochs" => self.train.epochs = parse(key, v)?,
            "ae_epochs" => self.train.ae_epochs = parse(key, v)?,
            "max_steps" => self.train.max_steps = parse(key, v)?,
            "ae_max_steps" => self.train.ae_max_steps = parse(key, v)?,
            "checkpoint_every" => self.train.checkpoint_every = parse(key, v)?,
            _ => return Err(TrainError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value; parsing the result gives back an
    /// equal configuration.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| out.push((k.to_string(), v));
        let d = &self.dataset;
        match &d.source {
            Source::Synthetic(r) => {
                put("source", "synthetic".into());
                put("synth.clips", r.clips.to_string());
                put("synth.clip_len", r.clip_len.to_string());
                put("synth.sample_rate", r.sample_rate.to_string());
                put("synth.tones", r.tones.to_string());
                put("synth.min_freq", r.min_freq.to_string());
                put("synth.max_freq", r.max_freq.to_string());
                put("synth.min_amp", r.min_amp.to_string());
                put("synth.max_amp", r.max_amp.to_string());
                put("synth.noise", r.noise.to_string());
            }
            Source::WavDir(p) => {
                put("source", "wav".into());
                put("data_dir", p.display().to_string());
            }
        }
        put("ratio", d.ratio.to_string());
        put("patch_len", d.patch_len.to_string());
        put("patches_per_epoch", d.patches_per_epoch.to_string());
        put(
            "split",
            format!("{},{},{}", d.split.train, d.split.val, d.split.test),
        );
        put("seed", d.seed.to_string());
        let g = &self.generator;
        put("g.depth", g.depth.to_string());
        put("g.base_channels", g.base_channels.to_string());
        put("g.max_channels", g.max_channels.to_string());
        let ds = match g.downsample {
            Downsample::Superpixel => "superpixel",
            Downsample::StridedConv => "strided",
        };
        put("g.downsample", ds.into());
        let dsc = &self.discriminator;
        put("d.depth", dsc.depth.to_string());
        put("d.base_channels", dsc.base_channels.to_string());
        put("d.max_channels", dsc.max_channels.to_string());
        put("d.head", dsc.head.to_string());
        put(
            "a.base_channels",
            self.autoencoder.base_channels.to_string(),
        );
        put("a.max_channels", self.autoencoder.max_channels.to_string());
        let t = &self.train;
        put("mode", t.mode.as_str().into());
        put("lambda_f", t.weights.lambda_f.to_string());
        put("lambda_adv", t.weights.lambda_adv.to_string());
        put("lr", t.adam.lr.to_string());
        put("beta1", t.adam.beta1.to_string());
        put("beta2", t.adam.beta2.to_string());
        put("eps", t.adam.eps.to_string());
        put("batch_size", t.batch_size.to_string());
        put("epochs", t.epochs.to_string());
        put("ae_epochs", t.ae_epochs.to_string());
        put("max_steps", t.max_steps.to_string());
        put("ae_max_steps", t.ae_max_steps.to_string());
        put("checkpoint_every", t.checkpoint_every.to_string());
        out
    }

    pub fn to_text(&self) -> String {
        self.to_pairs()
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Configuration entries that identify a training run.
    pub fn identity(&self) -> Vec<(String, String)> {
        self.to_pairs()
            .into_iter()
            .filter(|(k, _)| !RUN_LENGTH_KEYS.contains(&k.as_str()))
            .collect()
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.dataset.validate()?;
        if let Source::WavDir(p) = &self.dataset.source {
            if p.as_os_str().is_empty() {
                return Err(TrainError::Config("source = wav needs data_dir".into()));
            }
        }
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.autoencoder.validate()?;
        self.dataset.check_depth(
            self.generator
                .depth
                .max(self.discriminator.depth)
                .max(crate::models::AUTOENCODER_DEPTH),
        )?;
        self.train.validate()
    }
}
