//! The three networks: U-net generator, discriminator and the skip-free
//! autoencoder whose bottleneck features drive the feature loss.

mod autoencoder;
mod discriminator;
mod generator;

pub use autoencoder::{Autoencoder, AutoencoderSpec, AUTOENCODER_DEPTH};
pub use discriminator::{Discriminator, DiscriminatorSpec};
pub use generator::{Downsample, Generator, GeneratorSpec};

use crate::params::ParamStore;
use crate::tensor::{Real, Result, TensorError};

/// `min(max_channels, base·2^b)` for block `b`.
pub(crate) fn schedule(base: usize, max: usize, b: usize) -> usize {
    base.checked_shl(b as u32).map_or(max, |c| c.min(max))
}

pub(crate) fn check_schedule(what: &str, base: usize, max: usize, depth: usize) -> Result<()> {
    if depth == 0 {
        return Err(TensorError::Invalid(format!(
            "{what}: depth must be at least 1"
        )));
    }
    for b in 0..depth {
        let c = schedule(base, max, b);
        if c == 0 || !c.is_multiple_of(4) {
            return Err(TensorError::Invalid(format!(
                "{what}: block {b} has {c} channels, not a positive multiple of 4"
            )));
        }
    }
    Ok(())
}

pub(crate) fn check_len(what: &str, len: usize, depth: usize) -> Result<()> {
    let unit = 1usize << depth;
    if len == 0 || !len.is_multiple_of(unit) {
        return Err(TensorError::Invalid(format!(
            "{what}: length {len} is not a positive multiple of 2^{depth} = {unit}"
        )));
    }
    Ok(())
}

/// Replaces `fresh`'s values with `loaded`, requiring identical names and shapes.
pub(crate) fn adopt<T: Real>(
    fresh: &ParamStore<T>,
    loaded: ParamStore<T>,
) -> Result<ParamStore<T>> {
    if fresh.len() != loaded.len() {
        return Err(TensorError::Invalid(format!(
            "expected {} parameter arrays, found {}",
            fresh.len(),
            loaded.len()
        )));
    }
    for ((n1, t1), (n2, t2)) in fresh.iter().zip(loaded.iter()) {
        if n1 != n2 || t1.shape() != t2.shape() {
            return Err(TensorError::Invalid(format!(
                "parameter mismatch: expected {n1} {}, found {n2} {}",
                t1.shape(),
                t2.shape()
            )));
        }
    }
    Ok(loaded)
}
