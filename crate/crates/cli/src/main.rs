mod pgm;

use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use mugan_core::config::Config;
use mugan_core::data::{degrade, read_wav, write_wav, DataError, Dataset, Source};
use mugan_core::dsp::{spline_upsample, stft_mag_sq, Waveform};
use mugan_core::metrics::{evaluate_clip, EvaluationSummary};
use mugan_core::train::{
    autoencoder_from, bench_superpixel, checkpoint_config, evaluate, generator_from, infer,
    load_checkpoint, save_checkpoint, train_autoencoder, train_gan, Checkpoint, Hooks, TrainError,
};

#[derive(Parser)]
#[command(
    name = "mugan",
    version,
    about = "Audio super-resolution: data preparation, training, inference and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// key = value configuration file; flags below override it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, global = true, value_name = "R", value_parser = ["2", "4", "6"])]
    ratio: Option<String>,
    /// Generator depth L.
    #[arg(long, global = true, value_name = "L")]
    depth: Option<usize>,
    #[arg(long, global = true, value_parser = ["l2", "l2+f", "l2+f+adv"])]
    mode: Option<String>,
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Model checkpoint to read (generator for infer/eval, autoencoder for train-gan).
    #[arg(long, global = true, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the dataset and write a manifest (plus WAV copies of synthetic clips).
    Prepare,
    /// Pretrain the feature autoencoder.
    TrainAe {
        #[arg(long, value_name = "PATH")]
        resume: Option<PathBuf>,
        /// Append training log lines here instead of stdout.
        #[arg(long, value_name = "PATH")]
        log: Option<PathBuf>,
    },
    /// Train the generator (and discriminator in adversarial mode).
    TrainGan {
        #[arg(long, value_name = "PATH")]
        resume: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        log: Option<PathBuf>,
    },
    /// Super-resolve a low-rate WAV file.
    Infer {
        #[arg(long, value_name = "WAV")]
        input: PathBuf,
    },
    /// Score a WAV against a reference, or a checkpoint on the test split.
    Eval {
        #[arg(long, value_name = "WAV", requires = "reference")]
        input: Option<PathBuf>,
        #[arg(long, value_name = "WAV", requires = "input")]
        reference: Option<PathBuf>,
    },
    /// Render a log-power spectrogram as a PGM image.
    Spectrogram {
        #[arg(long, value_name = "WAV")]
        input: PathBuf,
    },
    /// Time generator training steps with superpixel vs strided downsampling.
    BenchSuperpixel {
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long)]
        batch: Option<usize>,
    },
}

/// Exit codes per failure class.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(t) = cause.downcast_ref::<TrainError>() {
            return match t {
                TrainError::Config(_) | TrainError::MissingAutoencoder => 3,
                TrainError::Io(..) => 4,
                TrainError::Diverged { .. } => 5,
                TrainError::Data(d) => data_code(d),
                _ => 1,
            };
        }
        if let Some(d) = cause.downcast_ref::<DataError>() {
            return data_code(d);
        }
        if cause.downcast_ref::<io::Error>().is_some() {
            return 4;
        }
    }
    1
}

fn data_code(d: &DataError) -> u8 {
    match d {
        DataError::Io(..) => 4,
        DataError::Invalid(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("error: {}", msg.join(": ").replace('\n', " "));
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(cli: &Cli, base: Option<Config>) -> Result<Config> {
    let mut cfg = match (&cli.config, base) {
        (Some(p), _) => Config::load(p)?,
        (None, Some(c)) => c,
        (None, None) => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.set("seed", &s.to_string())?;
    }
    if let Some(r) = &cli.ratio {
        cfg.set("ratio", r)?;
    }
    if let Some(d) = cli.depth {
        cfg.set("g.depth", &d.to_string())?;
    }
    if let Some(m) = &cli.mode {
        cfg.set("mode", m)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn need<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    match p {
        Some(p) => Ok(p),
        None => Err(TrainError::Config(format!("this command needs --{flag}")).into()),
    }
}

fn open_log(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .with_context(|| format!("opening log {}", p.display()))?,
        ),
        None => Box::new(io::stdout()),
    })
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Prepare => prepare(&cli),
        Command::TrainAe { resume, log } => {
            let cfg = load_config(&cli, None)?;
            let out = need(&cli.out, "out")?.to_path_buf();
            let resume = resume.as_ref().map(load_checkpoint).transpose()?;
            let dataset = Dataset::prepare(&cfg.dataset)?;
            let mut log = open_log(log)?;
            let mut save = |c: &Checkpoint| save_checkpoint(&out, c);
            let hooks = Hooks {
                log: Some(&mut *log),
                on_checkpoint: Some(&mut save),
            };
            let ckpt = train_autoencoder(&cfg, &dataset, resume.as_ref(), hooks)?;
            save_checkpoint(&out, &ckpt)?;
            println!("wrote {} after {} steps", out.display(), ckpt.step);
            Ok(())
        }
        Command::TrainGan { resume, log } => {
            let cfg = load_config(&cli, None)?;
            let out = need(&cli.out, "out")?.to_path_buf();
            let ae = match (&cli.checkpoint, cfg.train.mode.uses_feature()) {
                (Some(p), true) => Some(autoencoder_from(&load_checkpoint(p)?)?),
                (None, true) => return Err(TrainError::MissingAutoencoder.into()),
                (_, false) => None,
            };
            let resume = resume.as_ref().map(load_checkpoint).transpose()?;
            let dataset = Dataset::prepare(&cfg.dataset)?;
            let mut log = open_log(log)?;
            let mut save = |c: &Checkpoint| save_checkpoint(&out, c);
            let hooks = Hooks {
                log: Some(&mut *log),
                on_checkpoint: Some(&mut save),
            };
            let ckpt = train_gan(&cfg, &dataset, ae.as_ref(), resume.as_ref(), hooks)?;
            save_checkpoint(&out, &ckpt)?;
            println!("wrote {} after {} steps", out.display(), ckpt.step);
            Ok(())
        }
        Command::Infer { input } => {
            let ckpt = load_checkpoint(need(&cli.checkpoint, "checkpoint")?)?;
            let cfg = load_config(&cli, Some(checkpoint_config(&ckpt)?))?;
            let out = need(&cli.out, "out")?;
            let g = generator_from(&ckpt)?;
            let lr = read_wav(input)?;
            let sr = infer(&g, &lr, cfg.dataset.ratio)?;
            write_wav(out, &sr)?;
            println!(
                "wrote {} ({} samples at {} Hz)",
                out.display(),
                sr.len(),
                sr.sample_rate
            );
            Ok(())
        }
        Command::Eval { input, reference } => {
            let summary = match (input, reference) {
                (Some(input), Some(reference)) => {
                    let ratio: usize = cli.ratio.as_deref().unwrap_or("2").parse()?;
                    eval_files(input, reference, ratio)?
                }
                _ => {
                    let ckpt = load_checkpoint(need(&cli.checkpoint, "checkpoint")?)?;
                    let cfg = load_config(&cli, Some(checkpoint_config(&ckpt)?))?;
                    let dataset = Dataset::prepare(&cfg.dataset)?;
                    evaluate(&generator_from(&ckpt)?, &dataset.test, cfg.dataset.ratio)?
                }
            };
            print!("{}", summary.to_text());
            if let Some(out) = &cli.out {
                fs::write(out, summary.to_kv())
                    .with_context(|| format!("writing {}", out.display()))?;
            }
            Ok(())
        }
        Command::Spectrogram { input } => {
            let out = need(&cli.out, "out")?;
            let clip = read_wav(input)?;
            let spec = stft_mag_sq(&clip).map_err(DataError::from)?;
            fs::write(out, pgm::render(&spec))
                .with_context(|| format!("writing {}", out.display()))?;
            println!(
                "wrote {} ({} windows x {} bins)",
                out.display(),
                spec.windows,
                spec.bins()
            );
            Ok(())
        }
        Command::BenchSuperpixel { steps, batch } => {
            let cfg = load_config(&cli, None)?;
            let report = bench_superpixel(
                &cfg.generator,
                batch.unwrap_or(cfg.train.batch_size),
                *steps,
                cfg.train.seed,
            )?;
            print!("{}", report.to_text());
            Ok(())
        }
    }
}

/// Metrics of `input` against `reference`, with the spline baseline built
/// from the degraded reference.
fn eval_files(input: &Path, reference: &Path, ratio: usize) -> Result<EvaluationSummary> {
    let sr = read_wav(input)?;
    let hr_full = read_wav(reference)?;
    let (hr, lr) = degrade(&hr_full, ratio)?;
    let baseline = spline_upsample(&lr, ratio).map_err(DataError::from)?;
    if sr.len() < hr.len() {
        bail!(TrainError::Config(format!(
            "input has {} samples, reference needs {}",
            sr.len(),
            hr.len()
        )));
    }
    let sr = Waveform {
        samples: sr.samples[..hr.len()].to_vec(),
        sample_rate: sr.sample_rate,
    };
    let id = reference
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let report = evaluate_clip(&id, &sr, &hr, &baseline).map_err(TrainError::from)?;
    Ok(EvaluationSummary {
        clips: vec![report],
    })
}

fn prepare(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli, None)?;
    let out = need(&cli.out, "out")?;
    let dataset = Dataset::prepare(&cfg.dataset)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut manifest = String::new();
    manifest += &format!("pairs={}\n", dataset.pairs.len());
    manifest += &format!(
        "ratio={}\npatch_len={}\nseed={}\n",
        cfg.dataset.ratio, cfg.dataset.patch_len, cfg.dataset.seed
    );
    let synthetic = matches!(cfg.dataset.source, Source::Synthetic(_));
    for (split, clips) in [
        ("train", &dataset.train),
        ("val", &dataset.val),
        ("test", &dataset.test),
    ] {
        if synthetic {
            fs::create_dir_all(out.join(split))?;
        }
        for c in clips {
            manifest += &format!(
                "clip={} split={split} samples={} sample_rate={}\n",
                c.id,
                c.wave.len(),
                c.wave.sample_rate
            );
            if synthetic {
                write_wav(out.join(split).join(format!("{}.wav", c.id)), &c.wave)?;
            }
        }
    }
    fs::write(out.join("manifest.txt"), &manifest)?;
    fs::write(out.join("config.txt"), cfg.to_text())?;
    println!(
        "prepared {} pairs from {}/{}/{} train/val/test clips in {}",
        dataset.pairs.len(),
        dataset.train.len(),
        dataset.val.len(),
        dataset.test.len(),
        out.display()
    );
    Ok(())
}
