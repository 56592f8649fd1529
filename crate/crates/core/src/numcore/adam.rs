use super::{check_same_layout, ParamSet};
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments for one [`ParamSet`], slice for slice.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step_count: u64,
}

impl AdamState {
    pub fn new<P: ParamSet + ?Sized>(params: &P) -> Self {
        let zeros: Vec<Vec<f64>> = params.param_slices().iter().map(|s| vec![0.0; s.len()]).collect();
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.second_moment
    }
}

/// One bias-corrected Adam update. Rejects the whole step if any gradient
/// entry is non-finite, leaving parameters and moments untouched.
pub fn adam_step<P: ParamSet + ?Sized>(params: &mut P, grads: &P, state: &mut AdamState, lr: f64) -> Result<()> {
    check_same_layout("adam_step grads", &*params, grads)?;
    let layout: Vec<usize> = params.param_slices().iter().map(|s| s.len()).collect();
    let moments: Vec<usize> = state.first_moment.iter().map(Vec::len).collect();
    if layout != moments {
        return Err(Error::shape("adam_step state", format!("{layout:?}"), format!("{moments:?}")));
    }
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate must be finite and >= 0, got {lr}")));
    }
    for (i, g) in grads.param_slices().iter().enumerate() {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { layer: grads.group_of(i) });
        }
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    let slices = params.param_slices_mut();
    for (((p, g), m), v) in slices
        .into_iter()
        .zip(grads.param_slices())
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        for j in 0..p.len() {
            m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g[j];
            v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}
