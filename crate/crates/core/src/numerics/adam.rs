use crate::error::{Error, Result};

use super::model::{Gradients, ModelParams};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: Gradients,
    pub second: Gradients,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Fresh state with the usual defaults (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
    pub fn new(p: &ModelParams, lr: f64) -> Self {
        Self {
            first: p.zeros_like(),
            second: p.zeros_like(),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(p: &mut ModelParams, grads: &Gradients, st: &mut AdamState) -> Result<()> {
    let sig = p.signature();
    if grads.signature() != sig || st.first.signature() != sig || st.second.signature() != sig {
        return Err(Error::shape("adam_step", format!("{sig:?}"), format!("{:?}", grads.signature())));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient passed to adam_step".into()));
    }
    st.step += 1;
    let t = st.step as i32;
    let c1 = 1.0 - st.beta1.powi(t);
    let c2 = 1.0 - st.beta2.powi(t);
    let (b1, b2, lr, eps) = (st.beta1, st.beta2, st.lr, st.eps);
    for (((w, g), m), v) in p
        .slices_mut()
        .into_iter()
        .zip(grads.slices())
        .zip(st.first.slices_mut())
        .zip(st.second.slices_mut())
    {
        for i in 0..w.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            w[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
