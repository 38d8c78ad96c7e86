//! Cooperative multi-agent environments with hybrid action spaces.
//!
//! An environment is an N-agent game with per-agent observations, a global
//! state (the true simulator state, used only for centralized training), a
//! single shared reward, and a finite horizon. Two built-in games exercise
//! the algorithms at desk scale:
//!
//! - [`hybrid_climb`] — a one-step cooperation game where the discrete
//!   choices must match and the continuous parameters have a known optimum.
//! - [`catch_target`] — a multi-step pursuit on the unit square where both
//!   agents must reach a target and tag it simultaneously.
//!
//! Both have exact optima computable by the [`oracle`] module (grid search
//! and finite-horizon value iteration over a discretized lattice), so
//! learning results can be judged against ground truth.

pub mod catch_target;
pub mod hybrid_climb;
pub mod oracle;

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::hybrid_action::{ActionViolation, HybridAction, HybridActionSpace};
use crate::util::Fnv64;

pub use catch_target::CatchTarget;
pub use hybrid_climb::HybridClimb;
pub use oracle::{oracle_value, FiniteMdp, OracleConfig, OracleError};

/// Static description of an environment instance.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub name: String,
    pub n_agents: usize,
    pub obs_dims: Vec<usize>,
    pub global_state_dim: usize,
    pub action_spaces: Vec<HybridActionSpace>,
    pub horizon: u64,
}

impl EnvSpec {
    /// Stable fingerprint of everything that determines network shapes and
    /// action semantics. Checkpoints refuse to load against a different hash.
    pub fn stable_hash(&self) -> u64 {
        let mut h = Fnv64::new();
        h.write(self.name.as_bytes());
        h.write_u64(self.n_agents as u64);
        h.write_u64(self.global_state_dim as u64);
        h.write_u64(self.horizon);
        for &d in &self.obs_dims {
            h.write_u64(d as u64);
        }
        for space in &self.action_spaces {
            h.write_u64(space.discrete_count() as u64);
            for k in 0..space.discrete_count() {
                h.write_u64(space.param_dim(k) as u64);
                for b in space.bounds(k) {
                    h.write_f64(b.low);
                    h.write_f64(b.high);
                }
            }
        }
        h.finish()
    }
}

/// Result of one joint step: everything every agent and the learner see.
#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observations: Vec<Vec<f64>>,
    pub global_state: Vec<f64>,
    /// Shared scalar reward, identical for every agent.
    pub reward: f64,
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum EnvError {
    UnknownEnv(String),
    InvalidAction {
        agent: usize,
        violation: ActionViolation,
    },
    /// `step` called before `reset` or after the episode finished.
    EpisodeOver,
}

impl fmt::Display for EnvError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvError::UnknownEnv(name) => write!(f, "unknown environment '{name}'"),
            EnvError::InvalidAction { agent, violation } => {
                write!(f, "invalid action for agent {agent}: {violation}")
            }
            EnvError::EpisodeOver => write!(f, "episode not running; call reset first"),
        }
    }
}

#[cfg(any(test, feature = "std"))]
impl std::error::Error for EnvError {}

/// Summary of one finished episode, for env-specific success accounting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeSummary {
    pub episode_return: f64,
    pub steps: u64,
    /// True when the episode terminated before the horizon.
    pub ended_early: bool,
}

/// A cooperative stochastic game. One instance is single-owner; run parallel
/// episodes on independent instances with independent seeds.
pub trait Env {
    fn spec(&self) -> &EnvSpec;

    /// Starts a new episode. Deterministic for a given seed.
    fn reset(&mut self, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>);

    /// Advances the game by one joint action. Invalid actions are rejected
    /// before any dynamics run.
    fn step(&mut self, joint: &[HybridAction]) -> Result<StepResult, EnvError>;

    /// Whether a finished episode counts as a success for metrics purposes.
    fn episode_success(&self, summary: &EpisodeSummary) -> bool;
}

/// Adjustable environment parameters, exposed through the harness config.
/// `None` keeps the environment default.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EnvOverrides {
    pub horizon: Option<u64>,
    pub target: Option<(f64, f64)>,
    pub tag_radius: Option<f64>,
}

/// Registry of built-in environments, keyed by name.
pub fn make_env(name: &str, overrides: &EnvOverrides) -> Result<Box<dyn Env>, EnvError> {
    match name {
        "hybrid_climb" => Ok(Box::new(HybridClimb::new())),
        "catch_target" => Ok(Box::new(CatchTarget::new(overrides))),
        other => Err(EnvError::UnknownEnv(String::from(other))),
    }
}

/// Validates a whole joint action against the spec, reporting the first
/// offending agent.
pub(crate) fn validate_joint(spec: &EnvSpec, joint: &[HybridAction]) -> Result<(), EnvError> {
    if joint.len() != spec.n_agents {
        return Err(EnvError::InvalidAction {
            agent: joint.len().min(spec.n_agents),
            violation: ActionViolation::IndexOutOfRange {
                k: 0,
                discrete_count: 0,
            },
        });
    }
    for (agent, action) in joint.iter().enumerate() {
        crate::hybrid_action::validate(action, &spec.action_spaces[agent])
            .map_err(|violation| EnvError::InvalidAction { agent, violation })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_knows_both_envs_and_rejects_others() {
        assert!(make_env("hybrid_climb", &EnvOverrides::default()).is_ok());
        assert!(make_env("catch_target", &EnvOverrides::default()).is_ok());
        assert!(matches!(
            make_env("half_field_offense", &EnvOverrides::default()),
            Err(EnvError::UnknownEnv(_))
        ));
    }

    #[test]
    fn spec_hash_is_stable_and_sensitive() {
        let a = make_env("hybrid_climb", &EnvOverrides::default()).unwrap();
        let b = make_env("hybrid_climb", &EnvOverrides::default()).unwrap();
        let c = make_env("catch_target", &EnvOverrides::default()).unwrap();
        assert_eq!(a.spec().stable_hash(), b.spec().stable_hash());
        assert_ne!(a.spec().stable_hash(), c.spec().stable_hash());
        let d = make_env(
            "catch_target",
            &EnvOverrides {
                horizon: Some(30),
                ..Default::default()
            },
        )
        .unwrap();
        assert_ne!(c.spec().stable_hash(), d.spec().stable_hash());
    }
}
