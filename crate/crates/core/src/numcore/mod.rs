//! Dense-network numerics: forward/backward passes, Adam, soft target
//! updates, finite-difference gradient checking and the checkpoint format.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod matrix;
mod mlp;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use gradcheck::{grad_check, FD_STEP};
pub use matrix::Matrix;
pub use mlp::{mlp_backward, mlp_forward, ActivationTape, MlpParams};

use crate::error::{Error, Result};

/// A bundle of trainable parameters viewed as a list of flat slices.
///
/// Gradients of a parameter set are represented by a value of the same type.
pub trait ParamSet {
    fn param_slices(&self) -> Vec<&[f64]>;
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;

    /// Maps a slice index to the index reported in diagnostics (the layer for networks).
    fn group_of(&self, slice_index: usize) -> usize {
        slice_index
    }

    fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }
}

impl ParamSet for Vec<f64> {
    fn param_slices(&self) -> Vec<&[f64]> {
        vec![self.as_slice()]
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.as_mut_slice()]
    }
}

/// Two parameter sets optimized jointly, such as a critic pair.
impl<A: ParamSet, B: ParamSet> ParamSet for (A, B) {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = self.0.param_slices();
        v.extend(self.1.param_slices());
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.0.param_slices_mut();
        v.extend(self.1.param_slices_mut());
        v
    }
}

pub(crate) fn check_same_layout<P: ParamSet + ?Sized, Q: ParamSet + ?Sized>(
    context: &'static str,
    a: &P,
    b: &Q,
) -> Result<()> {
    let la: Vec<usize> = a.param_slices().iter().map(|s| s.len()).collect();
    let lb: Vec<usize> = b.param_slices().iter().map(|s| s.len()).collect();
    if la != lb {
        return Err(Error::shape(context, format!("{la:?}"), format!("{lb:?}")));
    }
    Ok(())
}

/// Polyak averaging: `target ← (1 − speed)·target + speed·online`.
pub fn soft_update<P: ParamSet + ?Sized>(target: &mut P, online: &P, speed: f64) -> Result<()> {
    if !(speed > 0.0 && speed <= 1.0) {
        return Err(Error::InvalidArgument(format!("soft update speed must be in (0, 1], got {speed}")));
    }
    check_same_layout("soft_update", target, online)?;
    for (t, o) in target.param_slices_mut().into_iter().zip(online.param_slices()) {
        if speed == 1.0 {
            t.copy_from_slice(o);
        } else {
            // t + s(o - t) leaves t untouched when o == t.
            for (tv, ov) in t.iter_mut().zip(o) {
                *tv += speed * (ov - *tv);
            }
        }
    }
    Ok(())
}
