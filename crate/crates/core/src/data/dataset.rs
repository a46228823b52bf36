use std::fs;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::synth::{synth_dataset, SynthRecipe};
use super::{read_wav, DataError};
use crate::dsp::{decimate, lowpass_fir, spline_upsample, Waveform};
use crate::tensor::{Shape, Tensor};

pub const RATIOS: [usize; 3] = [2, 4, 6];

// ChaCha streams used by dataset preparation; synthesis uses stream 0.
const SPLIT_STREAM: u64 = 1;
const PATCH_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Synthetic(SynthRecipe),
    /// Every `*.wav` file directly inside the directory, in name order.
    WavDir(PathBuf),
}

/// Fractions of clips assigned to train / validation / test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for Split {
    fn default() -> Self {
        Split {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub source: Source,
    pub ratio: usize,
    pub patch_len: usize,
    pub patches_per_epoch: usize,
    pub seed: u64,
    pub split: Split,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            source: Source::Synthetic(SynthRecipe::default()),
            ratio: 2,
            patch_len: 8192,
            patches_per_epoch: 1024,
            seed: 0,
            split: Split::default(),
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Invalid(m));
        if !RATIOS.contains(&self.ratio) {
            return bad(format!("ratio {} must be one of 2, 4, 6", self.ratio));
        }
        if self.patch_len == 0 || !self.patch_len.is_multiple_of(self.ratio) {
            return bad(format!(
                "patch_len {} must be a positive multiple of the ratio {}",
                self.patch_len, self.ratio
            ));
        }
        if self.patch_len / self.ratio < 2 {
            return bad(format!(
                "patch_len {} leaves fewer than 2 low-rate samples",
                self.patch_len
            ));
        }
        if self.patches_per_epoch == 0 {
            return bad("patches_per_epoch must be positive".into());
        }
        let Split { train, val, test } = self.split;
        if [train, val, test].iter().any(|f| !(*f >= 0.0))
            || !(train > 0.0)
            || ((train + val + test) - 1.0).abs() > 1e-6
        {
            return bad(format!(
                "split {train},{val},{test} must be non-negative, sum to 1, with train > 0"
            ));
        }
        if let Source::Synthetic(r) = &self.source {
            r.validate()?;
        }
        Ok(())
    }

    /// Checks that patches fit a network with `depth` halvings.
    pub fn check_depth(&self, depth: usize) -> Result<(), DataError> {
        let unit = 1usize << depth;
        if !self.patch_len.is_multiple_of(unit) {
            return Err(DataError::Invalid(format!(
                "patch_len {} is not divisible by 2^{depth}",
                self.patch_len
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub id: String,
    pub wave: Waveform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub x_up: Waveform,
    pub x_h: Waveform,
}

/// Anti-alias lowpass at `1/ratio` of Nyquist, then keep every `ratio`-th
/// sample. The input is trimmed to a whole number of low-rate samples.
pub fn degrade(x_h: &Waveform, ratio: usize) -> Result<(Waveform, Waveform), DataError> {
    let keep = x_h.len() - x_h.len() % ratio.max(1);
    let hr = Waveform::new(x_h.samples[..keep].to_vec(), x_h.sample_rate)?;
    let filtered = lowpass_fir(&hr, 1.0 / ratio as f64)?;
    let lr = decimate(&filtered, ratio)?;
    Ok((hr, lr))
}

pub fn make_pair(x_h: &Waveform, ratio: usize) -> Result<TrainingPair, DataError> {
    if ratio == 0 || !x_h.len().is_multiple_of(ratio) {
        return Err(DataError::Invalid(format!(
            "patch length {} is not divisible by ratio {ratio}",
            x_h.len()
        )));
    }
    let (_, lr) = degrade(x_h, ratio)?;
    let x_up = spline_upsample(&lr, ratio)?;
    Ok(TrainingPair {
        x_up,
        x_h: x_h.clone(),
    })
}

/// Start offsets drawn uniformly from `0..=len - patch_len`.
pub fn patch_offsets(
    len: usize,
    patch_len: usize,
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<usize>, DataError> {
    if patch_len == 0 || len < patch_len {
        return Err(DataError::Invalid(format!(
            "clip of {len} samples is shorter than patch length {patch_len}"
        )));
    }
    Ok((0..n)
        .map(|_| rng.random_range(0..=len - patch_len))
        .collect())
}

pub fn sample_patches(
    clip: &Waveform,
    patch_len: usize,
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Waveform>, DataError> {
    patch_offsets(clip.len(), patch_len, n, rng)?
        .into_iter()
        .map(|o| {
            Ok(Waveform::new(
                clip.samples[o..o + patch_len].to_vec(),
                clip.sample_rate,
            )?)
        })
        .collect()
}

pub fn load_clips(source: &Source, seed: u64) -> Result<Vec<Clip>, DataError> {
    match source {
        Source::Synthetic(recipe) => Ok(synth_dataset(recipe, seed)?
            .into_iter()
            .enumerate()
            .map(|(i, c)| Clip {
                id: format!("synth-{i:04}"),
                wave: c.wave,
            })
            .collect()),
        Source::WavDir(dir) => {
            let entries =
                fs::read_dir(dir).map_err(|e| DataError::Io(dir.display().to_string(), e))?;
            let mut paths = Vec::new();
            for entry in entries {
                let path = entry
                    .map_err(|e| DataError::Io(dir.display().to_string(), e))?
                    .path();
                if path
                    .extension()
                    .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
                {
                    paths.push(path);
                }
            }
            paths.sort();
            if paths.is_empty() {
                return Err(DataError::Invalid(format!(
                    "no .wav files in {}",
                    dir.display()
                )));
            }
            paths
                .iter()
                .map(|p| {
                    let id = p
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_default();
                    Ok(Clip {
                        id,
                        wave: read_wav(p)?,
                    })
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub pairs: Vec<TrainingPair>,
    pub train: Vec<Clip>,
    pub val: Vec<Clip>,
    pub test: Vec<Clip>,
}

/// Train, val and test clips.
pub type SplitClips = (Vec<Clip>, Vec<Clip>, Vec<Clip>);

/// Shuffles clips and cuts them into disjoint train / val / test groups.
pub fn split_clips(mut clips: Vec<Clip>, split: Split, seed: u64) -> Result<SplitClips, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPLIT_STREAM);
    clips.shuffle(&mut rng);
    let n = clips.len();
    let n_test = ((split.test * n as f64).round() as usize).min(n);
    let n_val = ((split.val * n as f64).round() as usize).min(n - n_test);
    if n - n_test - n_val == 0 {
        return Err(DataError::Invalid(format!(
            "{n} clips leave none for training"
        )));
    }
    let test = clips.split_off(n - n_test);
    let val = clips.split_off(clips.len() - n_val);
    Ok((clips, val, test))
}

impl Dataset {
    /// Loads clips, splits them, and draws `patches_per_epoch` training pairs
    /// spread evenly over the training clips.
    pub fn prepare(spec: &DatasetSpec) -> Result<Dataset, DataError> {
        spec.validate()?;
        let clips = load_clips(&spec.source, spec.seed)?;
        let (train, val, test) = split_clips(clips, spec.split, spec.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(PATCH_STREAM);
        let n_train = train.len();
        let mut pairs = Vec::with_capacity(spec.patches_per_epoch);
        for (i, clip) in train.iter().enumerate() {
            let count = spec.patches_per_epoch / n_train
                + usize::from(i < spec.patches_per_epoch % n_train);
            for patch in sample_patches(&clip.wave, spec.patch_len, count, &mut rng)? {
                pairs.push(make_pair(&patch, spec.ratio)?);
            }
        }
        Ok(Dataset {
            spec: spec.clone(),
            pairs,
            train,
            val,
            test,
        })
    }

    /// Stacks the selected pairs into `(B, 1, patch_len)` tensors
    /// `(x_up, x_h)`.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<f32>, Tensor<f32>) {
        batch_pairs(&self.pairs, indices)
    }
}

pub fn batch_pairs(pairs: &[TrainingPair], indices: &[usize]) -> (Tensor<f32>, Tensor<f32>) {
    let len = indices.first().map_or(0, |&i| pairs[i].x_h.len());
    let shape = Shape::new(indices.len(), 1, len);
    let up = Tensor::from_fn(shape, |b, _, t| pairs[indices[b]].x_up.samples[t] as f32);
    let h = Tensor::from_fn(shape, |b, _, t| pairs[indices[b]].x_h.samples[t] as f32);
    (up, h)
}
