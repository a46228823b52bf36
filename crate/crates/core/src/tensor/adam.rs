use super::{Real, Result, Tensor, TensorError};

/// ADAM hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one parameter set, in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let m: Vec<Tensor<T>> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.shape()))
            .collect();
        let v = m.clone();
        AdamState { config, t: 0, m, v }
    }
}

/// One bias-corrected ADAM update. A missing gradient counts as zero.
pub fn adam_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Option<&Tensor<T>>],
    state: &mut AdamState<T>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TensorError::Invalid(format!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        if state.m[i].shape() != p.shape() || state.v[i].shape() != p.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "adam moments",
                expected: p.shape(),
                got: state.m[i].shape(),
            });
        }
        if let Some(g) = grads[i] {
            if g.shape() != p.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam gradient",
                    expected: p.shape(),
                    got: g.shape(),
                });
            }
        }
    }

    state.t += 1;
    let cfg = state.config;
    let b1 = T::from_f64_lossy(cfg.beta1);
    let b2 = T::from_f64_lossy(cfg.beta2);
    let one_b1 = T::from_f64_lossy(1.0 - cfg.beta1);
    let one_b2 = T::from_f64_lossy(1.0 - cfg.beta2);
    let bc1 = T::from_f64_lossy(1.0 - cfg.beta1.powf(state.t as f64));
    let bc2 = T::from_f64_lossy(1.0 - cfg.beta2.powf(state.t as f64));
    let lr = T::from_f64_lossy(cfg.lr);
    let eps = T::from_f64_lossy(cfg.eps);

    for (i, p) in params.iter_mut().enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let g = grads[i].map(|g| g.data());
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let gj = g.map_or(T::zero(), |g| g[j]);
            m[j] = b1 * m[j] + one_b1 * gj;
            v[j] = b2 * v[j] + one_b2 * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
