//! The interface shared by every trainable algorithm.
//!
//! Execution is decentralized by construction: the greedy path takes one
//! agent index and that agent's observation only, so no policy can read the
//! global state or another agent's observation. Training (the `update`
//! method) is where centralized information flows.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::diffcore::mlp::DiffError;
use crate::diffcore::optim::OptimError;
use crate::hybrid_action::{ExploreParams, HybridAction, NoiseState};
use crate::replay::{ReplayBuffer, ReplayError};
use crate::ChaCha12Rng;

/// How target networks chase the live ones.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TargetSync {
    /// Copy the live parameters every `period` updates.
    Hard { period: u64 },
    /// Polyak averaging every update: `target <- tau*live + (1-tau)*target`.
    Soft { tau: f64 },
}

impl TargetSync {
    /// Whether a hard sync fires at this (1-based) update count.
    pub fn hard_due(&self, updates_done: u64) -> bool {
        match self {
            TargetSync::Hard { period } => *period > 0 && updates_done % period == 0,
            TargetSync::Soft { .. } => false,
        }
    }
}

/// Blends `live` into `target` according to the sync mode. For [`TargetSync::Hard`]
/// the caller decides when via [`TargetSync::hard_due`]; this applies the copy.
pub fn sync_values(target: &mut [f64], live: &[f64], mode: TargetSync) {
    debug_assert_eq!(target.len(), live.len());
    match mode {
        TargetSync::Hard { .. } => target.copy_from_slice(live),
        TargetSync::Soft { tau } => {
            for (t, l) in target.iter_mut().zip(live.iter()) {
                *t = tau * l + (1.0 - tau) * *t;
            }
        }
    }
}

/// Instrumentation from one action selection. `param_vectors` counts how many
/// per-discrete-action continuous parameter vectors the policies produced:
/// an all-actions policy head contributes its whole discrete count in one
/// pass, a conditioned head contributes one.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SelectStats {
    pub param_vectors: u64,
}

/// Named loss values from one update, for metrics.
pub type LossReport = Vec<(&'static str, f64)>;

#[derive(Clone, Debug, PartialEq)]
pub enum TrainError {
    Diff(DiffError),
    Optim(OptimError),
    Replay(ReplayError),
    /// Loss came out NaN or infinite.
    NonFiniteLoss(&'static str),
    /// An update was requested that the training schedule forbids.
    Schedule(&'static str),
    /// Checkpoint segments do not match this model.
    BadSegments(String),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::Diff(e) => write!(f, "{e}"),
            TrainError::Optim(e) => write!(f, "{e}"),
            TrainError::Replay(e) => write!(f, "{e}"),
            TrainError::NonFiniteLoss(which) => write!(f, "non-finite {which} loss"),
            TrainError::Schedule(msg) => write!(f, "schedule violation: {msg}"),
            TrainError::BadSegments(msg) => write!(f, "bad checkpoint segments: {msg}"),
        }
    }
}

#[cfg(any(test, feature = "std"))]
impl std::error::Error for TrainError {}

impl From<DiffError> for TrainError {
    fn from(e: DiffError) -> Self {
        TrainError::Diff(e)
    }
}

impl From<OptimError> for TrainError {
    fn from(e: OptimError) -> Self {
        TrainError::Optim(e)
    }
}

impl From<ReplayError> for TrainError {
    fn from(e: ReplayError) -> Self {
        TrainError::Replay(e)
    }
}

/// One named flat parameter block, the unit of checkpointing and hashing.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub name: String,
    pub values: Vec<f64>,
}

/// A trainable multi-agent algorithm over hybrid actions.
pub trait Algorithm {
    fn n_agents(&self) -> usize;

    /// Exploratory joint action. `noise` holds one per-agent integrator for
    /// Ornstein-Uhlenbeck exploration; Gaussian noise ignores it.
    fn select_joint(
        &self,
        observations: &[Vec<f64>],
        explore: &ExploreParams,
        rng: &mut ChaCha12Rng,
        noise: &mut [NoiseState],
    ) -> (Vec<HybridAction>, SelectStats);

    /// Greedy action for one agent from that agent's observation alone.
    fn greedy_action(&self, agent: usize, observation: &[f64]) -> HybridAction;

    /// One training update from a sampled batch, including target syncs.
    fn update(
        &mut self,
        buffer: &ReplayBuffer,
        batch_size: usize,
        rng: &mut ChaCha12Rng,
    ) -> Result<LossReport, TrainError>;

    /// Every parameter block by stable name, for checkpoints and hashing.
    fn segments(&self) -> Vec<Segment>;

    /// Restores parameter blocks produced by [`Algorithm::segments`].
    fn load_segments(&mut self, segments: &[Segment]) -> Result<(), TrainError>;
}

/// Greedy joint action via the per-agent path; the shape of
/// [`Algorithm::greedy_action`] guarantees decentralized execution.
pub fn greedy_joint(algo: &dyn Algorithm, observations: &[Vec<f64>]) -> Vec<HybridAction> {
    observations
        .iter()
        .enumerate()
        .map(|(i, obs)| algo.greedy_action(i, obs))
        .collect()
}

/// One network with its target copy and optimizer: the recurring unit in
/// every model here.
pub struct NetBundle {
    pub spec: crate::diffcore::mlp::MlpSpec,
    pub live: crate::diffcore::mlp::ParamBundle,
    pub target: crate::diffcore::mlp::ParamBundle,
    pub opt: crate::diffcore::optim::OptState,
}

impl NetBundle {
    pub fn new(spec: crate::diffcore::mlp::MlpSpec, lr: f64, rng: &mut ChaCha12Rng) -> Self {
        let live = spec.init_params(rng);
        let opt = crate::diffcore::optim::OptState::adam(lr, live.len());
        NetBundle {
            spec,
            target: live.clone(),
            live,
            opt,
        }
    }

    pub fn get(&self, net: crate::pdqn::Net) -> &crate::diffcore::mlp::ParamBundle {
        match net {
            crate::pdqn::Net::Live => &self.live,
            crate::pdqn::Net::Target => &self.target,
        }
    }

    pub fn apply_step(
        &mut self,
        grads: &crate::diffcore::mlp::ParamBundle,
    ) -> Result<(), TrainError> {
        let (next, state) = crate::diffcore::optim::optimizer_step(&self.live, grads, &self.opt)?;
        self.live = next;
        self.opt = state;
        Ok(())
    }

    pub fn sync(&mut self, mode: TargetSync) {
        sync_values(self.target.values_mut(), self.live.values(), mode);
    }
}
