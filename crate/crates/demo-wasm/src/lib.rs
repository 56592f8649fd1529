//! WebAssembly bindings for the static demo page in `www/`.
//!
//! The exported functions are thin wrappers over plain Rust functions so the
//! same code is tested natively.

use pex_core::distributions::softmax_temperature;
use pex_core::envs::{BehaviorGrade, Env};
use pex_core::iql::expectile_loss;
use pex_core::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

/// `n` evenly spaced residuals on `[lo, hi]` followed by their losses.
pub fn expectile_points(tau: f64, lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 || !(hi > lo) {
        return Err(pex_core::Error::InvalidArgument(format!("need n >= 2 and hi > lo, got n={n}, [{lo}, {hi}]")));
    }
    let xs: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let mut out = xs.clone();
    for u in xs {
        out.push(expectile_loss(u, tau)?);
    }
    Ok(out)
}

pub fn selection_probabilities(q0: f64, q1: f64, alpha: f64) -> Result<Vec<f64>> {
    Ok(softmax_temperature(&[q0, q1], alpha)?.probabilities)
}

/// Behavior-controller episode. Returns flattened `(x, y)` positions, start
/// included, and whether the goal was reached.
pub fn rollout_path(env_id: &str, grade: &str, seed: u64) -> Result<(Vec<f64>, bool)> {
    let grade: BehaviorGrade = grade.parse()?;
    let mut env = Env::from_id(env_id)?;
    if env.maze_layout().is_none() {
        return Err(pex_core::Error::InvalidArgument(format!("{env_id} is not a maze")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut obs = env.reset(&mut rng);
    let mut path = obs.clone();
    let max = env.spec().max_episode_steps as f64;
    loop {
        let progress = env.elapsed_steps() as f64 / max;
        let action = env.behavior_action(grade, &obs, progress, &mut rng);
        let t = env.step(&action)?;
        path.extend_from_slice(&t.next_obs);
        if t.done || t.truncated {
            return Ok((path, t.done));
        }
        obs = t.next_obs;
    }
}

pub fn layout_ascii(env_id: &str) -> Result<String> {
    let env = Env::from_id(env_id)?;
    env.maze_layout()
        .map(|l| l.to_ascii())
        .ok_or_else(|| pex_core::Error::InvalidArgument(format!("{env_id} is not a maze")))
}

fn js(e: pex_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Residuals then losses, `2n` values.
#[wasm_bindgen(js_name = expectileCurve)]
pub fn expectile_curve(tau: f64, lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, JsError> {
    expectile_points(tau, lo, hi, n).map_err(js)
}

#[wasm_bindgen(js_name = pexProbabilities)]
pub fn pex_probabilities(q0: f64, q1: f64, alpha: f64) -> Result<Vec<f64>, JsError> {
    selection_probabilities(q0, q1, alpha).map_err(js)
}

/// Flattened path with a trailing `1` if the goal was reached, else `0`.
#[wasm_bindgen(js_name = mazeRollout)]
pub fn maze_rollout(env_id: &str, grade: &str, seed: u64) -> Result<Vec<f64>, JsError> {
    let (mut path, reached) = rollout_path(env_id, grade, seed).map_err(js)?;
    path.push(if reached { 1.0 } else { 0.0 });
    Ok(path)
}

#[wasm_bindgen(js_name = mazeLayout)]
pub fn maze_layout(env_id: &str) -> Result<String, JsError> {
    layout_ascii(env_id).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expectile_curve_shape() {
        let v = expectile_points(0.9, -1.0, 1.0, 5).unwrap();
        assert_eq!(v.len(), 10);
        assert_eq!(&v[..5], &[-1.0, -0.5, 0.0, 0.5, 1.0]);
        // Residual u = target − prediction: positive side weighted by τ.
        assert!((v[9] - 0.9).abs() < 1e-12 && (v[5] - 0.1).abs() < 1e-12);
        assert!(expectile_points(0.9, 1.0, -1.0, 5).is_err());
        assert!(expectile_points(1.5, -1.0, 1.0, 5).is_err());
    }

    #[test]
    fn probabilities() {
        let p = selection_probabilities(1.0, 1.0, 0.5).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
        let p = selection_probabilities(0.0, 1.0, 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((p[1] - e / (1.0 + e)).abs() < 1e-12);
        assert!(selection_probabilities(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn rollouts() {
        let (path, reached) = rollout_path("pointmaze-umaze", "expert", 1).unwrap();
        assert!(reached);
        assert_eq!(path.len() % 2, 0);
        assert_eq!(rollout_path("pointmaze-umaze", "expert", 1).unwrap().0, path);
        assert!(rollout_path("linereach", "expert", 1).is_err());
        assert!(rollout_path("pointmaze-umaze", "great", 1).is_err());
        assert!(layout_ascii("pointmaze-umaze").unwrap().contains('G'));
    }
}
