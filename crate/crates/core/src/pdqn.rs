//! Parameterized deep Q-learning over one hybrid action space.
//!
//! Each agent carries two networks. The parameter policy maps an observation
//! to continuous parameters for *every* discrete action at once (tanh output,
//! affinely mapped into each action's bounds). The value network scores the
//! observation together with all those parameter blocks and emits one Q value
//! per discrete action, so a single forward pass prices the whole hybrid
//! action set. Action selection is the greedy discrete choice over those Q
//! values with the policy's parameters attached.
//!
//! Training alternates a TD update of the value network toward
//! `r + gamma * max_k Q'(s', mu'(s'))` (target copies of both networks) and a
//! deterministic-policy-gradient update of the parameter policy that ascends
//! the summed Q values with the value weights frozen — gradients reach the
//! policy only through the value network's parameter inputs.
//!
//! [`IndependentPdqn`] is the multi-agent baseline: one private agent per
//! player, each seeing only its own observation slice, no coordination.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::algorithm::{
    sync_values, Algorithm, LossReport, Segment, SelectStats, TargetSync, TrainError,
};
use crate::diffcore::mlp::{backward, forward, forward_trace, Activation, MlpSpec, ParamBundle};
use crate::diffcore::optim::{optimizer_step, OptState};
use crate::hybrid_action::{
    affine_from_unit, affine_from_unit_derivative, argmax, epsilon_greedy, perturb, Bounds,
    ExploreParams, HybridAction, HybridActionSpace, NoiseState,
};
use crate::replay::{JointTransition, ReplayBuffer};
use crate::ChaCha12Rng;

/// Hyperparameters shared by every agent net in this family.
#[derive(Clone, Debug, PartialEq)]
pub struct PdqnHyper {
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub value_lr: f64,
    pub policy_lr: f64,
    pub target_sync: TargetSync,
}

impl Default for PdqnHyper {
    fn default() -> Self {
        PdqnHyper {
            hidden: vec![64, 64],
            gamma: 0.95,
            value_lr: 1e-3,
            policy_lr: 1e-4,
            target_sync: TargetSync::Soft { tau: 0.01 },
        }
    }
}

/// Which copy of a network to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Net {
    Live,
    Target,
}

/// One agent's view of a joint transition.
#[derive(Clone, Copy, Debug)]
pub struct AgentSample<'a> {
    pub obs: &'a [f64],
    pub action: &'a HybridAction,
    pub reward: f64,
    pub next_obs: &'a [f64],
    pub done: bool,
}

impl<'a> AgentSample<'a> {
    pub fn slice(t: &'a JointTransition, agent: usize) -> Self {
        AgentSample {
            obs: &t.observations[agent],
            action: &t.actions[agent],
            reward: t.reward,
            next_obs: &t.next_observations[agent],
            done: t.done,
        }
    }
}

/// Value net, parameter-policy net, their target copies and optimizers.
pub struct PdqnAgent {
    obs_dim: usize,
    space: HybridActionSpace,
    flat_bounds: Vec<Bounds>,
    q_spec: MlpSpec,
    mu_spec: MlpSpec,
    q: ParamBundle,
    q_target: ParamBundle,
    mu: ParamBundle,
    mu_target: ParamBundle,
    q_opt: OptState,
    mu_opt: OptState,
    gamma: f64,
}

impl PdqnAgent {
    pub fn new(
        obs_dim: usize,
        space: HybridActionSpace,
        hyper: &PdqnHyper,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let k = space.discrete_count();
        let p_total = space.total_param_dim();
        let q_spec = MlpSpec::with_hidden(
            obs_dim + p_total,
            &hyper.hidden,
            k,
            Activation::Relu,
            Activation::Identity,
        )
        .expect("valid value net spec");
        let mu_spec = MlpSpec::with_hidden(
            obs_dim,
            &hyper.hidden,
            p_total.max(1),
            Activation::Relu,
            Activation::Tanh,
        )
        .expect("valid policy net spec");
        let q = q_spec.init_params(rng);
        let mu = mu_spec.init_params(rng);
        let q_opt = OptState::adam(hyper.value_lr, q.len());
        let mu_opt = OptState::adam(hyper.policy_lr, mu.len());
        PdqnAgent {
            obs_dim,
            flat_bounds: space.flat_bounds(),
            space,
            q_spec,
            mu_spec,
            q_target: q.clone(),
            q,
            mu_target: mu.clone(),
            mu,
            q_opt,
            mu_opt,
            gamma: hyper.gamma,
        }
    }

    pub fn space(&self) -> &HybridActionSpace {
        &self.space
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn value_spec(&self) -> &MlpSpec {
        &self.q_spec
    }

    pub fn policy_spec(&self) -> &MlpSpec {
        &self.mu_spec
    }

    pub fn value_params(&self) -> &ParamBundle {
        &self.q
    }

    pub fn value_params_mut(&mut self) -> &mut ParamBundle {
        &mut self.q
    }

    pub fn policy_params(&self) -> &ParamBundle {
        &self.mu
    }

    pub fn policy_params_mut(&mut self) -> &mut ParamBundle {
        &mut self.mu
    }

    pub fn value_target(&self) -> &ParamBundle {
        &self.q_target
    }

    pub fn value_target_mut(&mut self) -> &mut ParamBundle {
        &mut self.q_target
    }

    pub fn policy_target(&self) -> &ParamBundle {
        &self.mu_target
    }

    pub fn policy_target_mut(&mut self) -> &mut ParamBundle {
        &mut self.mu_target
    }

    fn bundle(&self, net: Net, policy: bool) -> &ParamBundle {
        match (net, policy) {
            (Net::Live, false) => &self.q,
            (Net::Target, false) => &self.q_target,
            (Net::Live, true) => &self.mu,
            (Net::Target, true) => &self.mu_target,
        }
    }

    /// Bounded continuous parameters for every discrete action, concatenated
    /// block by block. Empty when no action carries parameters.
    pub fn continuous_params(&self, obs: &[f64], net: Net) -> Result<Vec<f64>, TrainError> {
        if self.space.total_param_dim() == 0 {
            return Ok(Vec::new());
        }
        let raw = forward(&self.mu_spec, self.bundle(net, true), obs)?;
        Ok(affine_from_unit(&raw, &self.flat_bounds))
    }

    /// Q value of every discrete action at the given full parameter vector.
    pub fn q_values(&self, obs: &[f64], x_all: &[f64], net: Net) -> Result<Vec<f64>, TrainError> {
        let mut input = Vec::with_capacity(obs.len() + x_all.len());
        input.extend_from_slice(obs);
        input.extend_from_slice(x_all);
        Ok(forward(&self.q_spec, self.bundle(net, false), &input)?)
    }

    fn block(&self, k: usize) -> core::ops::Range<usize> {
        let start = self.space.block_offset(k);
        start..start + self.space.param_dim(k)
    }

    /// Greedy hybrid action with exploration: epsilon-greedy over the
    /// discrete values, bounded noise on the chosen parameters.
    pub fn select(
        &self,
        obs: &[f64],
        explore: &ExploreParams,
        rng: &mut ChaCha12Rng,
        noise: &mut NoiseState,
    ) -> Result<(HybridAction, SelectStats), TrainError> {
        let x_all = self.continuous_params(obs, Net::Live)?;
        let q = self.q_values(obs, &x_all, Net::Live)?;
        let k = epsilon_greedy(&q, explore.epsilon, rng).expect("space is non-empty");
        let x = perturb(&x_all[self.block(k)], explore, self.space.bounds(k), rng, noise);
        Ok((
            HybridAction::new(k, x),
            SelectStats {
                param_vectors: self.space.discrete_count() as u64,
            },
        ))
    }

    /// Fully deterministic greedy action (no exploration, no RNG).
    pub fn greedy(&self, obs: &[f64]) -> HybridAction {
        let x_all = self
            .continuous_params(obs, Net::Live)
            .expect("obs dims fixed by caller");
        let q = self
            .q_values(obs, &x_all, Net::Live)
            .expect("obs dims fixed by caller");
        let k = argmax(&q);
        HybridAction::new(k, x_all[self.block(k)].to_vec())
    }

    /// TD loss of the value network over a batch:
    /// `0.5 * mean_b [Q(s, k, x_k) - y]^2` with
    /// `y = r + gamma * (1-done) * max_k Q'(s', k, mu'_k(s'))`.
    ///
    /// The stored action's parameter block is spliced over the live policy's
    /// output for the remaining blocks; gradients flow to the value weights
    /// only.
    pub fn q_loss(&self, batch: &[AgentSample<'_>]) -> Result<(f64, ParamBundle), TrainError> {
        debug_assert!(!batch.is_empty());
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut grads = ParamBundle::zeros_like(&self.q);
        for sample in batch {
            let y = if sample.done {
                sample.reward
            } else {
                let x_next = self.continuous_params(sample.next_obs, Net::Target)?;
                let q_next = self.q_values(sample.next_obs, &x_next, Net::Target)?;
                sample.reward + self.gamma * q_next[argmax(&q_next)]
            };
            let mut x_all = self.continuous_params(sample.obs, Net::Live)?;
            x_all[self.block(sample.action.k)].copy_from_slice(&sample.action.params);

            let mut input = Vec::with_capacity(self.obs_dim + x_all.len());
            input.extend_from_slice(sample.obs);
            input.extend_from_slice(&x_all);
            let (q, trace) = forward_trace(&self.q_spec, &self.q, &input)?;
            let err = q[sample.action.k] - y;
            loss += 0.5 * scale * err * err;

            let mut d_out = vec![0.0; q.len()];
            d_out[sample.action.k] = scale * err;
            let (g, _) = backward(&self.q_spec, &self.q, &trace, &d_out)?;
            grads.add_scaled(&g, 1.0);
        }
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss("value"));
        }
        Ok((loss, grads))
    }

    /// Policy loss over a batch: `-mean_b sum_k Q(s, k, mu_k(s))` with the
    /// value weights fixed.
    ///
    /// Each summand references only its own action's parameters, so the
    /// gradient of term `k` flows through parameter block `k` alone even
    /// though the value network physically consumes every block; cross-block
    /// slopes are network artifacts no data identifies and must not steer
    /// the policy.
    pub fn policy_loss(&self, batch: &[AgentSample<'_>]) -> Result<(f64, ParamBundle), TrainError> {
        self.policy_loss_with_fill(batch, &self.mu)
    }

    /// [`PdqnAgent::policy_loss`] with the non-differentiated parameter
    /// blocks taken from `fill` instead of the live policy. Training uses
    /// `fill = live`; finite-difference probes freeze `fill` at the base
    /// point so the numeric derivative sees exactly the per-block paths the
    /// analytic gradient claims.
    pub fn policy_loss_with_fill(
        &self,
        batch: &[AgentSample<'_>],
        fill: &ParamBundle,
    ) -> Result<(f64, ParamBundle), TrainError> {
        debug_assert!(!batch.is_empty());
        let k_count = self.space.discrete_count();
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut grads = ParamBundle::zeros_like(&self.mu);
        if self.space.total_param_dim() == 0 {
            // Nothing for the policy to control; the value is still defined.
            for sample in batch {
                let q = self.q_values(sample.obs, &[], Net::Live)?;
                loss -= scale * q.iter().sum::<f64>();
            }
            return Ok((loss, grads));
        }
        let d_map = affine_from_unit_derivative(&self.flat_bounds);
        for sample in batch {
            let (raw, mu_trace) = forward_trace(&self.mu_spec, &self.mu, sample.obs)?;
            let x_live = affine_from_unit(&raw, &self.flat_bounds);
            let raw_fill = forward(&self.mu_spec, fill, sample.obs)?;
            let x_fill = affine_from_unit(&raw_fill, &self.flat_bounds);

            let mut d_raw = vec![0.0; raw.len()];
            for k in 0..k_count {
                let block = self.block(k);
                let mut x_k = x_fill.clone();
                x_k[block.clone()].copy_from_slice(&x_live[block.clone()]);
                let mut input = Vec::with_capacity(self.obs_dim + x_k.len());
                input.extend_from_slice(sample.obs);
                input.extend_from_slice(&x_k);
                let (q, q_trace) = forward_trace(&self.q_spec, &self.q, &input)?;
                loss -= scale * q[k];
                if block.is_empty() {
                    continue;
                }
                let mut d_out = vec![0.0; q.len()];
                d_out[k] = -scale;
                let (_, d_input) = backward(&self.q_spec, &self.q, &q_trace, &d_out)?;
                for i in block {
                    d_raw[i] += d_input[self.obs_dim + i] * d_map[i];
                }
            }
            let (g, _) = backward(&self.mu_spec, &self.mu, &mu_trace, &d_raw)?;
            grads.add_scaled(&g, 1.0);
        }
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss("policy"));
        }
        Ok((loss, grads))
    }

    pub fn apply_value_step(&mut self, grads: &ParamBundle) -> Result<(), TrainError> {
        let (next, state) = optimizer_step(&self.q, grads, &self.q_opt)?;
        self.q = next;
        self.q_opt = state;
        Ok(())
    }

    pub fn apply_policy_step(&mut self, grads: &ParamBundle) -> Result<(), TrainError> {
        let (next, state) = optimizer_step(&self.mu, grads, &self.mu_opt)?;
        self.mu = next;
        self.mu_opt = state;
        Ok(())
    }

    /// Blends (or copies) the live networks into the targets.
    pub fn sync_targets(&mut self, mode: TargetSync) {
        sync_values(self.q_target.values_mut(), self.q.values(), mode);
        sync_values(self.mu_target.values_mut(), self.mu.values(), mode);
    }

    /// Parameter blocks under `prefix`: live nets, targets and optimizer
    /// moments, enough to restore a run exactly.
    pub fn segments(&self, prefix: &str) -> Vec<Segment> {
        let mut out = Vec::new();
        push_net_segments(&mut out, prefix, "q", &self.q, &self.q_target, &self.q_opt);
        push_net_segments(&mut out, prefix, "mu", &self.mu, &self.mu_target, &self.mu_opt);
        out
    }

    pub fn load_segments(&mut self, prefix: &str, segments: &[Segment]) -> Result<(), TrainError> {
        load_net_segments(
            segments,
            prefix,
            "q",
            &mut self.q,
            &mut self.q_target,
            &mut self.q_opt,
        )?;
        load_net_segments(
            segments,
            prefix,
            "mu",
            &mut self.mu,
            &mut self.mu_target,
            &mut self.mu_opt,
        )
    }
}

/// Serializes one live/target/optimizer triple as named segments.
pub(crate) fn push_net_segments(
    out: &mut Vec<Segment>,
    prefix: &str,
    name: &str,
    live: &ParamBundle,
    target: &ParamBundle,
    opt: &OptState,
) {
    out.push(Segment {
        name: format!("{prefix}{name}"),
        values: live.values().to_vec(),
    });
    out.push(Segment {
        name: format!("{prefix}{name}.target"),
        values: target.values().to_vec(),
    });
    let (m, v) = opt.moments();
    out.push(Segment {
        name: format!("{prefix}{name}.opt.m"),
        values: m.to_vec(),
    });
    out.push(Segment {
        name: format!("{prefix}{name}.opt.v"),
        values: v.to_vec(),
    });
    out.push(Segment {
        name: format!("{prefix}{name}.opt.step"),
        values: vec![opt.step_count() as f64],
    });
}

pub(crate) fn load_net_segments(
    segments: &[Segment],
    prefix: &str,
    name: &str,
    live: &mut ParamBundle,
    target: &mut ParamBundle,
    opt: &mut OptState,
) -> Result<(), TrainError> {
    let find = |suffix: &str| -> Result<&Segment, TrainError> {
        let full = format!("{prefix}{name}{suffix}");
        segments
            .iter()
            .find(|s| s.name == full)
            .ok_or(TrainError::BadSegments(format!("missing segment '{full}'")))
    };
    let copy_into = |dst: &mut [f64], seg: &Segment| -> Result<(), TrainError> {
        if seg.values.len() != dst.len() {
            return Err(TrainError::BadSegments(format!(
                "segment '{}' has {} values, expected {}",
                seg.name,
                seg.values.len(),
                dst.len()
            )));
        }
        dst.copy_from_slice(&seg.values);
        Ok(())
    };
    copy_into(live.values_mut(), find("")?)?;
    copy_into(target.values_mut(), find(".target")?)?;
    let m = find(".opt.m")?.values.clone();
    let v = find(".opt.v")?.values.clone();
    let step_seg = find(".opt.step")?;
    if step_seg.values.len() != 1 {
        return Err(TrainError::BadSegments(String::from(
            "optimizer step segment must hold one value",
        )));
    }
    let (m0, _) = opt.moments();
    if m.len() != m0.len() {
        return Err(TrainError::BadSegments(format!(
            "optimizer moments for '{prefix}{name}' have wrong length"
        )));
    }
    opt.restore(step_seg.values[0] as u64, m, v);
    Ok(())
}

/// N private P-DQN agents with no coordination: the independent-learner
/// baseline. All agents train from the same joint buffer for equal data
/// budgets, but each reads only its own observation/action slice.
pub struct IndependentPdqn {
    agents: Vec<PdqnAgent>,
    target_sync: TargetSync,
    updates_done: u64,
}

impl IndependentPdqn {
    pub fn new(
        obs_dims: &[usize],
        spaces: &[HybridActionSpace],
        hyper: &PdqnHyper,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let agents = obs_dims
            .iter()
            .zip(spaces.iter())
            .map(|(&d, space)| PdqnAgent::new(d, space.clone(), hyper, rng))
            .collect();
        IndependentPdqn {
            agents,
            target_sync: hyper.target_sync,
            updates_done: 0,
        }
    }

    pub fn agent(&self, i: usize) -> &PdqnAgent {
        &self.agents[i]
    }

    pub fn agent_mut(&mut self, i: usize) -> &mut PdqnAgent {
        &mut self.agents[i]
    }
}

impl Algorithm for IndependentPdqn {
    fn n_agents(&self) -> usize {
        self.agents.len()
    }

    fn select_joint(
        &self,
        observations: &[Vec<f64>],
        explore: &ExploreParams,
        rng: &mut ChaCha12Rng,
        noise: &mut [NoiseState],
    ) -> (Vec<HybridAction>, SelectStats) {
        let mut stats = SelectStats::default();
        let joint = self
            .agents
            .iter()
            .enumerate()
            .map(|(i, agent)| {
                let (action, s) = agent
                    .select(&observations[i], explore, rng, &mut noise[i])
                    .expect("observation dims fixed by env");
                stats.param_vectors += s.param_vectors;
                action
            })
            .collect();
        (joint, stats)
    }

    fn greedy_action(&self, agent: usize, observation: &[f64]) -> HybridAction {
        self.agents[agent].greedy(observation)
    }

    fn update(
        &mut self,
        buffer: &ReplayBuffer,
        batch_size: usize,
        rng: &mut ChaCha12Rng,
    ) -> Result<LossReport, TrainError> {
        let batch = buffer.sample(batch_size, rng)?;
        let mut q_total = 0.0;
        let mut pi_total = 0.0;
        for i in 0..self.agents.len() {
            let views: Vec<AgentSample<'_>> =
                batch.iter().map(|t| AgentSample::slice(t, i)).collect();
            let (q_loss, q_grads) = self.agents[i].q_loss(&views)?;
            self.agents[i].apply_value_step(&q_grads)?;
            let (pi_loss, pi_grads) = self.agents[i].policy_loss(&views)?;
            self.agents[i].apply_policy_step(&pi_grads)?;
            q_total += q_loss;
            pi_total += pi_loss;
        }
        self.updates_done += 1;
        if matches!(self.target_sync, TargetSync::Soft { .. })
            || self.target_sync.hard_due(self.updates_done)
        {
            for agent in &mut self.agents {
                agent.sync_targets(self.target_sync);
            }
        }
        Ok(vec![("q", q_total), ("policy", pi_total)])
    }

    fn segments(&self) -> Vec<Segment> {
        let mut out = Vec::new();
        for (i, agent) in self.agents.iter().enumerate() {
            out.extend(agent.segments(&format!("agent{i}.")));
        }
        out
    }

    fn load_segments(&mut self, segments: &[Segment]) -> Result<(), TrainError> {
        for i in 0..self.agents.len() {
            let prefix = format!("agent{i}.");
            self.agents[i].load_segments(&prefix, segments)?;
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// Sets every weight to zero and the output biases to `biases`, making
    /// the network a constant function.
    pub fn make_constant(params: &mut ParamBundle, biases: &[f64]) {
        params.values_mut().iter_mut().for_each(|v| *v = 0.0);
        let last = params.layout().segs().len() - 1;
        let seg = params.layout().segs()[last];
        let b_offset = seg.b_offset;
        for (i, &b) in biases.iter().enumerate() {
            params.values_mut()[b_offset + i] = b;
        }
    }

    pub fn small_hyper() -> PdqnHyper {
        PdqnHyper {
            hidden: vec![8, 8],
            ..Default::default()
        }
    }

    pub fn soccer_space() -> HybridActionSpace {
        HybridActionSpace::from_ranges(&[
            &[(-1.0, 1.0), (-1.0, 1.0), (0.0, 3.0)],
            &[(-1.0, 1.0), (-1.0, 1.0)],
            &[],
        ])
        .unwrap()
    }
}
