use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 coefficient added to the gradient (`g + λ·w`) before the moment updates.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

/// Adam moments for an ordered parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState<T: Scalar> {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

/// One bias-corrected Adam step. `params` and `grads` are matched by
/// position; the first call sizes the moments. A non-finite gradient aborts
/// the step before anything is modified.
pub fn adam_step<T: Scalar>(
    params: &mut [(String, &mut Tensor<T>)],
    grads: &[&[T]],
    state: &mut OptimState<T>,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape(format!("{} parameters but {} gradients", params.len(), grads.len())));
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|(_, p)| Tensor::zeros(p.shape().to_vec())).collect();
        state.v = state.m.clone();
    }
    if state.m.len() != params.len() {
        return Err(Error::shape(format!(
            "optimizer tracks {} parameters, got {}",
            state.m.len(),
            params.len()
        )));
    }
    for (((name, p), g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != m.shape() || g.len() != p.len() {
            return Err(Error::shape(format!(
                "`{name}`: parameter {:?}, moment {:?}, gradient of {}",
                p.shape(),
                m.shape(),
                g.len()
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
    }

    state.t += 1;
    let c = state.config;
    let t = state.t as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    for (((_, p), g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
        for i in 0..p.len() {
            let w = p[i].as_f64();
            let gi = g[i].as_f64() + c.weight_decay * w;
            let mi = c.beta1 * m[i].as_f64() + (1.0 - c.beta1) * gi;
            let vi = c.beta2 * v[i].as_f64() + (1.0 - c.beta2) * gi * gi;
            m[i] = T::from_f64(mi);
            v[i] = T::from_f64(vi);
            let step = c.lr * (mi / bc1) / ((vi / bc2).sqrt() + c.eps);
            p[i] = T::from_f64(w - step);
        }
    }
    Ok(())
}
