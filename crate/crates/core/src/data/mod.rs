//! Audio loading, synthetic clips and training-pair construction.

mod dataset;
mod synth;
mod wav;

pub use dataset::{
    batch_pairs, degrade, load_clips, make_pair, patch_offsets, sample_patches, split_clips, Clip,
    Dataset, DatasetSpec, Source, Split, SplitClips, TrainingPair, RATIOS,
};
pub use synth::{render_tones, synth_dataset, SynthClip, SynthRecipe, Tone};
pub use wav::{encode_wav, parse_wav, read_wav, write_wav};

use thiserror::Error;

use crate::dsp::DspError;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
    #[error("malformed wav: {0}")]
    Malformed(String),
    #[error("unsupported wav codec tag {0}")]
    UnsupportedCodec(u16),
    #[error("unsupported bit depth {0}, expected 16")]
    BitDepth(u16),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("invalid dataset: {0}")]
    Invalid(String),
}
