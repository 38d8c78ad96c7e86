//! A multi-step pursuit game on the unit square.
//!
//! Two agents move on `[-1, 1]^2` toward a fixed target point. Each step an
//! agent either moves by a bounded displacement `Move(dx, dy)` with
//! `dx, dy` in `[-0.25, 0.25]`, or plays the parameterless `Tag()`. The
//! shared reward is minus the mean distance to the target; when both agents
//! tag simultaneously while both are within the tag radius, a bonus is added
//! and the episode ends early. Miscoordinated tags earn nothing, so the
//! bonus is only reachable through joint behavior.
//!
//! Observations are fully informative at this scale: own position, the other
//! agent's position, the target. The global state is the true simulator
//! state — both positions plus the target.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{validate_joint, Env, EnvError, EnvSpec, EpisodeSummary, StepResult};
use crate::hybrid_action::{HybridAction, HybridActionSpace};
use crate::math;

pub const MOVE_LIMIT: f64 = 0.25;
pub const DEFAULT_TARGET: (f64, f64) = (0.5, 0.5);
pub const DEFAULT_TAG_RADIUS: f64 = 0.2;
pub const TAG_BONUS: f64 = 5.0;
pub const DEFAULT_HORIZON: u64 = 25;

/// Discrete action indices.
pub const MOVE: usize = 0;
pub const TAG: usize = 1;

pub struct CatchTarget {
    spec: EnvSpec,
    target: (f64, f64),
    tag_radius: f64,
    positions: [(f64, f64); 2],
    t: u64,
    running: bool,
}

impl CatchTarget {
    pub fn new(overrides: &super::EnvOverrides) -> Self {
        let horizon = overrides.horizon.unwrap_or(DEFAULT_HORIZON);
        let target = overrides.target.unwrap_or(DEFAULT_TARGET);
        let tag_radius = overrides.tag_radius.unwrap_or(DEFAULT_TAG_RADIUS);
        let space = HybridActionSpace::from_ranges(&[
            &[(-MOVE_LIMIT, MOVE_LIMIT), (-MOVE_LIMIT, MOVE_LIMIT)],
            &[],
        ])
        .expect("static space is valid");
        let spec = EnvSpec {
            name: String::from("catch_target"),
            n_agents: 2,
            obs_dims: vec![6, 6],
            global_state_dim: 6,
            action_spaces: vec![space.clone(), space],
            horizon,
        };
        CatchTarget {
            spec,
            target,
            tag_radius,
            positions: [(0.0, 0.0); 2],
            t: 0,
            running: false,
        }
    }

    pub fn target(&self) -> (f64, f64) {
        self.target
    }

    pub fn tag_radius(&self) -> f64 {
        self.tag_radius
    }

    fn global_state(&self) -> Vec<f64> {
        vec![
            self.positions[0].0,
            self.positions[0].1,
            self.positions[1].0,
            self.positions[1].1,
            self.target.0,
            self.target.1,
        ]
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        let mk = |own: (f64, f64), other: (f64, f64)| {
            vec![own.0, own.1, other.0, other.1, self.target.0, self.target.1]
        };
        vec![
            mk(self.positions[0], self.positions[1]),
            mk(self.positions[1], self.positions[0]),
        ]
    }

    fn distance(&self, pos: (f64, f64)) -> f64 {
        math::hypot(pos.0 - self.target.0, pos.1 - self.target.1)
    }
}

impl Env for CatchTarget {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = crate::seeded_rng(seed);
        for pos in &mut self.positions {
            pos.0 = rng.gen_range(-1.0..1.0);
            pos.1 = rng.gen_range(-1.0..1.0);
        }
        self.t = 0;
        self.running = true;
        (self.observations(), self.global_state())
    }

    fn step(&mut self, joint: &[HybridAction]) -> Result<StepResult, EnvError> {
        if !self.running {
            return Err(EnvError::EpisodeOver);
        }
        validate_joint(&self.spec, joint)?;

        for (pos, action) in self.positions.iter_mut().zip(joint.iter()) {
            if action.k == MOVE {
                pos.0 = math::clamp(pos.0 + action.params[0], -1.0, 1.0);
                pos.1 = math::clamp(pos.1 + action.params[1], -1.0, 1.0);
            }
        }

        let mean_dist =
            0.5 * (self.distance(self.positions[0]) + self.distance(self.positions[1]));
        let both_tag = joint[0].k == TAG && joint[1].k == TAG;
        let both_close = self.distance(self.positions[0]) <= self.tag_radius
            && self.distance(self.positions[1]) <= self.tag_radius;
        let caught = both_tag && both_close;

        self.t += 1;
        let done = caught || self.t >= self.spec.horizon;
        if done {
            self.running = false;
        }
        Ok(StepResult {
            observations: self.observations(),
            global_state: self.global_state(),
            reward: if caught { TAG_BONUS - mean_dist } else { -mean_dist },
            done,
        })
    }

    /// Success means the tag bonus was reached, which is the only early end.
    fn episode_success(&self, summary: &EpisodeSummary) -> bool {
        summary.ended_early
    }
}
