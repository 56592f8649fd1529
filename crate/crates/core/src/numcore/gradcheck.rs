use super::ParamSet;

/// Central-difference step used by [`grad_check`].
pub const FD_STEP: f64 = 1e-5;

/// Gradients below this magnitude are compared in absolute terms.
const REL_FLOOR: f64 = 1e-6;

/// Worst relative error between analytic gradients and central finite
/// differences over every coordinate of `params`.
///
/// `loss_fn` returns the loss and its analytic gradient. Non-finite
/// comparisons count as infinite error.
pub fn grad_check<P, F>(loss_fn: F, params: &P) -> f64
where
    P: ParamSet + Clone,
    F: Fn(&P) -> (f64, P),
{
    let (_, analytic) = loss_fn(params);
    let analytic: Vec<f64> = analytic.param_slices().iter().flat_map(|s| s.iter().copied()).collect();
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    let mut flat = 0;
    let n_slices = params.param_slices().len();
    for s in 0..n_slices {
        let len = params.param_slices()[s].len();
        for j in 0..len {
            let orig = params.param_slices()[s][j];
            probe.param_slices_mut()[s][j] = orig + FD_STEP;
            let up = loss_fn(&probe).0;
            probe.param_slices_mut()[s][j] = orig - FD_STEP;
            let down = loss_fn(&probe).0;
            probe.param_slices_mut()[s][j] = orig;

            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic.get(flat).copied().unwrap_or(f64::NAN);
            flat += 1;
            let err = if numeric.is_finite() && a.is_finite() {
                (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR)
            } else {
                f64::INFINITY
            };
            worst = worst.max(err);
        }
    }
    worst
}
