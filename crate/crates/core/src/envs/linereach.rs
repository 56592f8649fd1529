//! Dense-reward 1-D reaching task: drive a damped point mass to position 3.

pub const TARGET: f64 = 3.0;
pub const TRACK_LIMIT: f64 = 5.0;
pub const FORCE_GAIN: f64 = 0.1;
pub const DRAG: f64 = 0.01;
pub const DT: f64 = 0.1;

#[derive(Debug, Clone, Default)]
pub struct LineReach {
    position: f64,
    velocity: f64,
}

impl LineReach {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) -> Vec<f64> {
        self.position = 0.0;
        self.velocity = 0.0;
        vec![0.0, 0.0]
    }

    pub fn state(&self) -> (f64, f64) {
        (self.position, self.velocity)
    }

    /// `v += 0.1·f − 0.01·v`, `x += 0.1·v`; hitting either end of the track stops the mass.
    pub fn step(&mut self, action: &[f64]) -> (Vec<f64>, f64) {
        let force = action[0].clamp(-1.0, 1.0);
        self.velocity += FORCE_GAIN * force - DRAG * self.velocity;
        self.position += DT * self.velocity;
        if self.position.abs() > TRACK_LIMIT {
            self.position = self.position.clamp(-TRACK_LIMIT, TRACK_LIMIT);
            self.velocity = 0.0;
        }
        let reward = -(self.position - TARGET).abs();
        (vec![self.position, self.velocity], reward)
    }

    /// Proportional-derivative controller `clip(1.5·(3 − x) − v, −1, 1)`.
    pub fn expert_action(obs: &[f64]) -> Vec<f64> {
        vec![(1.5 * (TARGET - obs[0]) - obs[1]).clamp(-1.0, 1.0)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_from_rest() {
        let mut env = LineReach::new();
        assert_eq!(env.reset(), vec![0.0, 0.0]);
        let (obs, r) = env.step(&[1.0]);
        assert!((obs[0] - 0.01).abs() < 1e-15);
        assert!((obs[1] - 0.1).abs() < 1e-15);
        assert!((r - (-2.99)).abs() < 1e-12);
    }

    #[test]
    fn track_ends_stop_the_mass() {
        let mut env = LineReach::new();
        env.reset();
        for _ in 0..2000 {
            let (obs, _) = env.step(&[-1.0]);
            assert!(obs[0] >= -TRACK_LIMIT);
        }
        assert_eq!(env.state().0, -TRACK_LIMIT);
    }

    #[test]
    fn expert_settles_near_target() {
        let mut env = LineReach::new();
        let mut obs = env.reset();
        for _ in 0..200 {
            obs = env.step(&LineReach::expert_action(&obs)).0;
        }
        assert!((obs[0] - TARGET).abs() < 0.05, "{obs:?}");
    }
}
