//! Per-agent parameterized Q-learning coordinated by a monotone mixer.
//!
//! Every agent keeps its own P-DQN pair (all-actions parameter policy plus a
//! per-action value head over its own observation), and execution stays fully
//! decentralized: each agent argmaxes its own values. Training, however, is
//! centralized. A [`MixingNetwork`] conditioned on the global state combines
//! the per-agent chosen-action values into one joint value, and a single TD
//! loss on that joint value trains all value heads and the mixer together.
//! Because the mixer is monotone in every input, the per-agent greedy choice
//! *is* the joint greedy choice, which is what makes the decentralized
//! bootstrap below exact rather than approximate.
//!
//! Policy updates likewise go through the mixer: each agent's summed
//! action-values feed it, and every parameter policy ascends the resulting
//! joint score with all value and mixing weights frozen.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::algorithm::{Algorithm, LossReport, Segment, SelectStats, TargetSync, TrainError};
use crate::diffcore::mlp::{backward, forward_trace, ParamBundle};
use crate::envs::EnvSpec;
use crate::hybrid_action::{
    affine_from_unit_derivative, ExploreParams, HybridAction, NoiseState,
};
use crate::mixing::{MixingNetwork, MixingParams};
use crate::pdqn::{Net, PdqnAgent, PdqnHyper};
use crate::replay::{JointTransition, ReplayBuffer};
use crate::ChaCha12Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct MapqnHyper {
    pub pdqn: PdqnHyper,
    pub mixing_width: usize,
    pub mixing_lr: f64,
}

impl Default for MapqnHyper {
    fn default() -> Self {
        MapqnHyper {
            pdqn: PdqnHyper::default(),
            mixing_width: 32,
            mixing_lr: 1e-3,
        }
    }
}

/// Work counters for one loss evaluation, for the cost-signature checks:
/// `param_vectors` counts per-discrete-action parameter vectors produced by
/// policy nets, `policy_passes` the actual network evaluations behind them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct UpdateStats {
    pub policy_passes: u64,
    pub param_vectors: u64,
}

/// Joint TD loss value and its gradients.
pub struct TdLoss {
    pub loss: f64,
    pub value_grads: Vec<ParamBundle>,
    pub mixing_grads: MixingParams,
    pub stats: UpdateStats,
}

/// Joint policy objective and its gradients (of the *negated* objective, so
/// applying an optimizer step ascends the joint value).
pub struct PolicyUpdate {
    pub objective: f64,
    pub policy_grads: Vec<ParamBundle>,
    pub stats: UpdateStats,
}

/// N P-DQN agents plus the state-conditioned monotone mixer.
pub struct MapqnModel {
    agents: Vec<PdqnAgent>,
    mixing: MixingNetwork,
    gamma: f64,
    target_sync: TargetSync,
    updates_done: u64,
}

impl MapqnModel {
    pub fn new(spec: &EnvSpec, hyper: &MapqnHyper, rng: &mut ChaCha12Rng) -> Self {
        let agents: Vec<PdqnAgent> = spec
            .obs_dims
            .iter()
            .zip(spec.action_spaces.iter())
            .map(|(&d, space)| PdqnAgent::new(d, space.clone(), &hyper.pdqn, rng))
            .collect();
        let mixing = MixingNetwork::new(
            spec.n_agents,
            hyper.mixing_width,
            spec.global_state_dim,
            hyper.mixing_lr,
            rng,
        );
        MapqnModel {
            agents,
            mixing,
            gamma: hyper.pdqn.gamma,
            target_sync: hyper.pdqn.target_sync,
            updates_done: 0,
        }
    }

    pub fn agent(&self, i: usize) -> &PdqnAgent {
        &self.agents[i]
    }

    pub fn agent_mut(&mut self, i: usize) -> &mut PdqnAgent {
        &mut self.agents[i]
    }

    pub fn mixing(&self) -> &MixingNetwork {
        &self.mixing
    }

    pub fn mixing_mut(&mut self) -> &mut MixingNetwork {
        &mut self.mixing
    }

    /// Joint value of per-agent values under the global state.
    pub fn mix(&self, state: &[f64], q: &[f64], net: Net) -> Result<f64, TrainError> {
        self.mixing.mix(state, q, net)
    }

    /// Each agent's Q vector over its discrete actions, parameters taken
    /// from the same side's policy.
    pub fn per_agent_q_vectors(
        &self,
        observations: &[Vec<f64>],
        net: Net,
    ) -> Result<Vec<Vec<f64>>, TrainError> {
        self.agents
            .iter()
            .zip(observations.iter())
            .map(|(agent, obs)| {
                let x_all = agent.continuous_params(obs, net)?;
                agent.q_values(obs, &x_all, net)
            })
            .collect()
    }

    /// Sum of an agent's Q values over all its discrete actions at the
    /// current policy's parameters.
    pub fn q_value_sum(&self, agent: usize, obs: &[f64]) -> Result<f64, TrainError> {
        let a = &self.agents[agent];
        let x_all = a.continuous_params(obs, Net::Live)?;
        Ok(a.q_values(obs, &x_all, Net::Live)?.iter().sum())
    }

    /// Bootstrap joint value for one transition: each agent maxes its own
    /// target values, the maxima feed the target mixer under the next state.
    /// Monotonicity makes this equal to the joint max over discrete actions.
    pub fn bootstrap_value(&self, t: &JointTransition) -> Result<f64, TrainError> {
        let q_next = self.per_agent_q_vectors(&t.next_observations, Net::Target)?;
        let maxima: Vec<f64> = q_next
            .iter()
            .map(|q| q.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        self.mixing.mix(&t.next_state, &maxima, Net::Target)
    }

    /// Joint TD loss over a batch:
    /// `mean_b [y_tot - Q_tot(s, k, x_k)]^2` with
    /// `y_tot = r + gamma * (1-done) * Q_tot'(s', per-agent maxima)`.
    /// Gradients cover every agent's value net and the mixing hypernetworks.
    pub fn joint_td_loss(&self, batch: &[&JointTransition]) -> Result<TdLoss, TrainError> {
        debug_assert!(!batch.is_empty());
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut stats = UpdateStats::default();
        let mut value_grads: Vec<ParamBundle> = self
            .agents
            .iter()
            .map(|a| ParamBundle::zeros_like(a.value_params()))
            .collect();
        let mut mixing_grads = MixingParams::zeros_like(self.mixing.live());

        for t in batch {
            let y = if t.done {
                t.reward
            } else {
                t.reward + self.gamma * self.bootstrap_value(t)?
            };

            // Chosen-action value per agent, stored parameters spliced into
            // the live policy's blocks, with traces kept for backprop.
            let mut q_chosen = Vec::with_capacity(self.agents.len());
            let mut traces = Vec::with_capacity(self.agents.len());
            for (i, agent) in self.agents.iter().enumerate() {
                let obs = &t.observations[i];
                let mut x_all = agent.continuous_params(obs, Net::Live)?;
                stats.policy_passes += 1;
                stats.param_vectors += agent.space().discrete_count() as u64;
                let offset = agent.space().block_offset(t.actions[i].k);
                x_all[offset..offset + t.actions[i].params.len()]
                    .copy_from_slice(&t.actions[i].params);
                let mut input = Vec::with_capacity(obs.len() + x_all.len());
                input.extend_from_slice(obs);
                input.extend_from_slice(&x_all);
                let (q, trace) = forward_trace(agent.value_spec(), agent.value_params(), &input)?;
                q_chosen.push(q[t.actions[i].k]);
                traces.push((q.len(), trace));
            }

            let (q_tot, mix_grads) =
                self.mixing.mix_with_grads(&t.state, &q_chosen, 1.0)?;
            let err = q_tot - y;
            loss += scale * err * err;
            let d_qtot = 2.0 * scale * err;

            mixing_grads.add_scaled(&mix_grads.params, d_qtot);
            for (i, agent) in self.agents.iter().enumerate() {
                let (k_count, trace) = &traces[i];
                let mut d_out = vec![0.0; *k_count];
                d_out[t.actions[i].k] = d_qtot * mix_grads.d_q[i];
                let (g, _) = backward(agent.value_spec(), agent.value_params(), trace, &d_out)?;
                value_grads[i].add_scaled(&g, 1.0);
            }
        }
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss("joint TD"));
        }
        Ok(TdLoss {
            loss,
            value_grads,
            mixing_grads,
            stats,
        })
    }

    /// Joint policy objective: feed every agent's summed action-values into
    /// the mixer and ascend the result with value and mixing weights frozen.
    ///
    /// As in the single-agent policy loss, each summed term references only
    /// its own action's parameters, so term `k` backpropagates through
    /// parameter block `k` alone; the mixer contributes a per-agent scaling
    /// through its (non-negative) sensitivity to that agent's value sum.
    pub fn policy_update(&self, batch: &[&JointTransition]) -> Result<PolicyUpdate, TrainError> {
        let fills: Vec<&ParamBundle> = self.agents.iter().map(|a| a.policy_params()).collect();
        self.policy_update_with_fill(batch, &fills)
    }

    /// [`MapqnModel::policy_update`] with frozen non-differentiated blocks,
    /// for finite-difference verification (see
    /// [`PdqnAgent::policy_loss_with_fill`](crate::pdqn::PdqnAgent::policy_loss_with_fill)).
    pub fn policy_update_with_fill(
        &self,
        batch: &[&JointTransition],
        fills: &[&ParamBundle],
    ) -> Result<PolicyUpdate, TrainError> {
        debug_assert!(!batch.is_empty());
        let scale = 1.0 / batch.len() as f64;
        let mut objective = 0.0;
        let mut stats = UpdateStats::default();
        let mut policy_grads: Vec<ParamBundle> = self
            .agents
            .iter()
            .map(|a| ParamBundle::zeros_like(a.policy_params()))
            .collect();

        for t in batch {
            // Forward every agent: per-action value at the live policy's
            // block spliced over the fill, traces kept per action head.
            let mut q_sums = Vec::with_capacity(self.agents.len());
            let mut per_agent = Vec::with_capacity(self.agents.len());
            for (i, agent) in self.agents.iter().enumerate() {
                let obs = &t.observations[i];
                let bounds = agent.space().flat_bounds();
                let (raw, mu_trace) =
                    forward_trace(agent.policy_spec(), agent.policy_params(), obs)?;
                stats.policy_passes += 1;
                stats.param_vectors += agent.space().discrete_count() as u64;
                let x_live = crate::hybrid_action::affine_from_unit(&raw, &bounds);
                let raw_fill = crate::diffcore::mlp::forward(agent.policy_spec(), fills[i], obs)?;
                let x_fill = crate::hybrid_action::affine_from_unit(&raw_fill, &bounds);

                let k_count = agent.space().discrete_count();
                let mut q_sum = 0.0;
                let mut head_traces = Vec::with_capacity(k_count);
                for k in 0..k_count {
                    let offset = agent.space().block_offset(k);
                    let dims = agent.space().param_dim(k);
                    let mut x_k = x_fill.clone();
                    x_k[offset..offset + dims].copy_from_slice(&x_live[offset..offset + dims]);
                    let mut input = Vec::with_capacity(obs.len() + x_k.len());
                    input.extend_from_slice(obs);
                    input.extend_from_slice(&x_k);
                    let (q, q_trace) =
                        forward_trace(agent.value_spec(), agent.value_params(), &input)?;
                    q_sum += q[k];
                    head_traces.push((q.len(), q_trace));
                }
                q_sums.push(q_sum);
                per_agent.push((mu_trace, head_traces, raw.len(), obs.len()));
            }

            let (q_tot_s, mix_grads) = self.mixing.mix_with_grads(&t.state, &q_sums, 1.0)?;
            objective += scale * q_tot_s;

            for (i, agent) in self.agents.iter().enumerate() {
                let (mu_trace, head_traces, raw_len, obs_len) = &per_agent[i];
                let d_qhat = -scale * mix_grads.d_q[i];
                let d_map = affine_from_unit_derivative(&agent.space().flat_bounds());
                let mut d_raw = vec![0.0; *raw_len];
                for (k, (k_count, q_trace)) in head_traces.iter().enumerate() {
                    let offset = agent.space().block_offset(k);
                    let dims = agent.space().param_dim(k);
                    if dims == 0 {
                        continue;
                    }
                    let mut d_out = vec![0.0; *k_count];
                    d_out[k] = d_qhat;
                    let (_, d_input) =
                        backward(agent.value_spec(), agent.value_params(), q_trace, &d_out)?;
                    for j in offset..offset + dims {
                        d_raw[j] += d_input[obs_len + j] * d_map[j];
                    }
                }
                let (g, _) =
                    backward(agent.policy_spec(), agent.policy_params(), mu_trace, &d_raw)?;
                policy_grads[i].add_scaled(&g, 1.0);
            }
        }
        if !objective.is_finite() {
            return Err(TrainError::NonFiniteLoss("joint policy"));
        }
        Ok(PolicyUpdate {
            objective,
            policy_grads,
            stats,
        })
    }
}

impl Algorithm for MapqnModel {
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
        let td = self.joint_td_loss(&batch)?;
        for (i, grads) in td.value_grads.iter().enumerate() {
            self.agents[i].apply_value_step(grads)?;
        }
        self.mixing.apply_step(&td.mixing_grads)?;

        let pu = self.policy_update(&batch)?;
        for (i, grads) in pu.policy_grads.iter().enumerate() {
            self.agents[i].apply_policy_step(grads)?;
        }

        self.updates_done += 1;
        if matches!(self.target_sync, TargetSync::Soft { .. })
            || self.target_sync.hard_due(self.updates_done)
        {
            for agent in &mut self.agents {
                agent.sync_targets(self.target_sync);
            }
            self.mixing.sync_targets(self.target_sync);
        }
        Ok(vec![("td", td.loss), ("policy", -pu.objective)])
    }

    fn segments(&self) -> Vec<Segment> {
        let mut out = Vec::new();
        for (i, agent) in self.agents.iter().enumerate() {
            out.extend(agent.segments(&format!("agent{i}.")));
        }
        out.extend(self.mixing.segments("mix."));
        out
    }

    fn load_segments(&mut self, segments: &[Segment]) -> Result<(), TrainError> {
        for i in 0..self.agents.len() {
            let prefix = format!("agent{i}.");
            self.agents[i].load_segments(&prefix, segments)?;
        }
        self.mixing.load_segments("mix.", segments)
    }
}
