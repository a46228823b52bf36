//! Audio super-resolution with a multiscale U-Net generator, feature loss
//! from a pretrained autoencoder, and an adversarial discriminator.

// NaN must fail range checks, so negated comparisons are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod dsp;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod objectives;
pub mod params;
pub mod tensor;
pub mod train;
