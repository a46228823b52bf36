//! Generator and discriminator losses built from tape primitives.

use crate::tensor::{Real, Result, Tape, TensorError, Var};

/// Floor applied inside every log so saturated probabilities stay finite.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_f: f64,
    pub lambda_adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_f: 1.0,
            lambda_adv: 0.001,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_f >= 0.0 && self.lambda_adv >= 0.0) {
            return Err(TensorError::Invalid(format!(
                "loss weights must be nonnegative, got {self:?}"
            )));
        }
        Ok(())
    }
}

fn squared_error_mean<T: Real>(
    tape: &mut Tape<T>,
    op: &'static str,
    a: Var,
    b: Var,
) -> Result<Var> {
    let (sa, sb) = (tape.value(a)?.shape(), tape.value(b)?.shape());
    if sa != sb {
        return Err(TensorError::ShapeMismatch {
            op,
            expected: sa,
            got: sb,
        });
    }
    let d = tape.sub(a, b)?;
    let sq = tape.square(d)?;
    tape.mean_all(sq)
}

/// Sample-space loss `(1/W) Σ_i (x_h,i − g_i)²`, averaged over the batch.
pub fn l2_loss<T: Real>(tape: &mut Tape<T>, x_h: Var, g_out: Var) -> Result<Var> {
    squared_error_mean(tape, "l2_loss", x_h, g_out)
}

/// Feature loss `(1/(C_f W_f)) Σ_c Σ_i (φ_h − φ_g)²`, averaged over the batch.
pub fn feature_loss<T: Real>(tape: &mut Tape<T>, phi_h: Var, phi_g: Var) -> Result<Var> {
    squared_error_mean(tape, "feature_loss", phi_h, phi_g)
}

/// Non-saturating adversarial loss, batch mean of `−log D(G(x_l))`.
pub fn adversarial_loss_g<T: Real>(tape: &mut Tape<T>, d_of_g: Var) -> Result<Var> {
    let c = tape.clamp_min(d_of_g, LOG_FLOOR)?;
    let l = tape.log(c)?;
    let m = tape.mean_all(l)?;
    tape.mul_scalar(m, -1.0)
}

/// Batch mean of `−log D(x_h) − log(1 − D(G(x_l)))`.
///
/// `d_fake` must come from a detached generator output.
pub fn discriminator_loss<T: Real>(tape: &mut Tape<T>, d_real: Var, d_fake: Var) -> Result<Var> {
    let real = tape.clamp_min(d_real, LOG_FLOOR)?;
    let real = tape.log(real)?;
    let real = tape.mean_all(real)?;
    let fake = tape.mul_scalar(d_fake, -1.0)?;
    let fake = tape.add_scalar(fake, 1.0)?;
    let fake = tape.clamp_min(fake, LOG_FLOOR)?;
    let fake = tape.log(fake)?;
    let fake = tape.mean_all(fake)?;
    let sum = tape.add(real, fake)?;
    tape.mul_scalar(sum, -1.0)
}

/// The individual generator loss terms that were active, plus their total.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorLoss {
    pub total: Var,
    pub l2: Var,
    pub feature: Option<Var>,
    pub adversarial: Option<Var>,
}

/// `L_L2 + λ_f·L_f + λ_adv·L_adv`. Absent terms are skipped entirely.
///
/// `features` is `(φ(x_h), φ(G(x_l)))` from the frozen autoencoder.
pub fn generator_loss<T: Real>(
    tape: &mut Tape<T>,
    x_h: Var,
    g_out: Var,
    features: Option<(Var, Var)>,
    d_of_g: Option<Var>,
    w: LossWeights,
) -> Result<GeneratorLoss> {
    w.validate()?;
    let l2 = l2_loss(tape, x_h, g_out)?;
    let feature = features
        .map(|(h, g)| feature_loss(tape, h, g))
        .transpose()?;
    let adversarial = d_of_g.map(|d| adversarial_loss_g(tape, d)).transpose()?;
    let total = combine(tape, l2, feature, adversarial, w)?;
    Ok(GeneratorLoss {
        total,
        l2,
        feature,
        adversarial,
    })
}

/// Weighted sum of already computed generator terms.
pub fn combine<T: Real>(
    tape: &mut Tape<T>,
    l2: Var,
    feature: Option<Var>,
    adversarial: Option<Var>,
    w: LossWeights,
) -> Result<Var> {
    let mut total = l2;
    if let Some(f) = feature {
        let f = tape.mul_scalar(f, w.lambda_f)?;
        total = tape.add(total, f)?;
    }
    if let Some(a) = adversarial {
        let a = tape.mul_scalar(a, w.lambda_adv)?;
        total = tape.add(total, a)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, Tensor};

    fn scalar_of(tape: &Tape<f64>, v: Var) -> f64 {
        tape.value(v).unwrap().data()[0]
    }

    fn probs(tape: &mut Tape<f64>, v: &[f64]) -> Var {
        tape.constant(Tensor::new(Shape::new(v.len(), 1, 1), v.to_vec()).unwrap())
    }

    #[test]
    fn l2_closed_forms() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::new(Shape::new(1, 1, 4), vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = tape.constant(Tensor::new(Shape::new(1, 1, 4), vec![2.0, 3.0, 4.0, 5.0]).unwrap());
        let zero = l2_loss(&mut tape, a, a).unwrap();
        assert_eq!(scalar_of(&tape, zero), 0.0);
        let one = l2_loss(&mut tape, a, b).unwrap();
        assert_eq!(scalar_of(&tape, one), 1.0);
        let c = tape.constant(Tensor::zeros(Shape::new(1, 1, 3)));
        assert!(l2_loss(&mut tape, a, c).is_err());
    }

    #[test]
    fn feature_closed_form() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::full(Shape::new(1, 2, 2), 2.0));
        let b = tape.constant(Tensor::zeros(Shape::new(1, 2, 2)));
        let l = feature_loss(&mut tape, a, b).unwrap();
        assert_eq!(scalar_of(&tape, l), 4.0);
    }

    #[test]
    fn adversarial_closed_forms() {
        let mut tape = Tape::new();
        for (d, want) in [
            (1.0, 0.0),
            (0.5, std::f64::consts::LN_2),
            ((-1.0f64).exp(), 1.0),
        ] {
            let p = probs(&mut tape, &[d]);
            let l = adversarial_loss_g(&mut tape, p).unwrap();
            assert!((scalar_of(&tape, l) - want).abs() < 1e-12);
        }
        let p = probs(&mut tape, &[0.0]);
        let l = adversarial_loss_g(&mut tape, p).unwrap();
        assert!((scalar_of(&tape, l) + LOG_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn discriminator_closed_forms() {
        let mut tape = Tape::new();
        let (r, f) = (probs(&mut tape, &[1.0]), probs(&mut tape, &[0.0]));
        let l = discriminator_loss(&mut tape, r, f).unwrap();
        assert_eq!(scalar_of(&tape, l), 0.0);
        let (r, f) = (probs(&mut tape, &[0.5]), probs(&mut tape, &[0.5]));
        let l = discriminator_loss(&mut tape, r, f).unwrap();
        assert!((scalar_of(&tape, l) - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn weighted_sum() {
        let mut tape = Tape::new();
        let l2 = tape.constant(Tensor::scalar(1.0));
        let f = tape.constant(Tensor::scalar(2.0));
        let a = tape.constant(Tensor::scalar(0.693));
        let t = combine(&mut tape, l2, Some(f), Some(a), LossWeights::default()).unwrap();
        assert!((scalar_of(&tape, t) - 3.000693).abs() < 1e-12);
        let z = tape.constant(Tensor::scalar(0.0));
        let t = combine(&mut tape, z, Some(z), Some(z), LossWeights::default()).unwrap();
        assert_eq!(scalar_of(&tape, t), 0.0);
    }

    #[test]
    fn negative_weights_rejected() {
        assert!(LossWeights {
            lambda_f: -1.0,
            lambda_adv: 0.0
        }
        .validate()
        .is_err());
    }
}
