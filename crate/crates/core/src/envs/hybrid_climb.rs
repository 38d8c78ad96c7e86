//! A one-step, two-agent cooperation game over hybrid actions.
//!
//! Each agent picks action A (no parameters) or action B with a scalar
//! parameter in `[-1, 1]`. The shared reward is
//!
//! - both B: `1 - (x1 - 0.6)^2 - (x2 + 0.4)^2` — maximized at exactly 1.0
//!   when agent 0 plays 0.6 and agent 1 plays -0.4,
//! - both A: `0.5` — a safe but suboptimal equilibrium,
//! - mixed: `-0.1` — miscoordination is punished.
//!
//! The safe/risky structure means independent learners tend to retreat to
//! (A, A) while a coordinated update can hold the (B, B) optimum. The episode
//! is a single step; observations are a constant `[0]` per agent.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{validate_joint, Env, EnvError, EnvSpec, EpisodeSummary, StepResult};
use crate::hybrid_action::{HybridAction, HybridActionSpace};

pub const BOTH_A_REWARD: f64 = 0.5;
pub const MIXED_REWARD: f64 = -0.1;
pub const AGENT0_VERTEX: f64 = 0.6;
pub const AGENT1_VERTEX: f64 = -0.4;

pub struct HybridClimb {
    spec: EnvSpec,
    running: bool,
}

impl HybridClimb {
    pub fn new() -> Self {
        let space = HybridActionSpace::from_ranges(&[&[], &[(-1.0, 1.0)]])
            .expect("static space is valid");
        let spec = EnvSpec {
            name: String::from("hybrid_climb"),
            n_agents: 2,
            obs_dims: vec![1, 1],
            global_state_dim: 1,
            action_spaces: vec![space.clone(), space],
            horizon: 1,
        };
        HybridClimb {
            spec,
            running: false,
        }
    }

    /// Shared reward for a joint action, also used by the grid-search oracle.
    pub fn reward(joint: &[HybridAction]) -> f64 {
        match (joint[0].k, joint[1].k) {
            (1, 1) => {
                let x1 = joint[0].params[0];
                let x2 = joint[1].params[0];
                1.0 - (x1 - AGENT0_VERTEX) * (x1 - AGENT0_VERTEX)
                    - (x2 - AGENT1_VERTEX) * (x2 - AGENT1_VERTEX)
            }
            (0, 0) => BOTH_A_REWARD,
            _ => MIXED_REWARD,
        }
    }
}

impl Default for HybridClimb {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for HybridClimb {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        self.running = true;
        (vec![vec![0.0], vec![0.0]], vec![0.0])
    }

    fn step(&mut self, joint: &[HybridAction]) -> Result<StepResult, EnvError> {
        if !self.running {
            return Err(EnvError::EpisodeOver);
        }
        validate_joint(&self.spec, joint)?;
        self.running = false;
        Ok(StepResult {
            observations: vec![vec![0.0], vec![0.0]],
            global_state: vec![0.0],
            reward: Self::reward(joint),
            done: true,
        })
    }

    /// Within 5% of the cooperative optimum.
    fn episode_success(&self, summary: &EpisodeSummary) -> bool {
        summary.episode_return >= 0.95
    }
}
