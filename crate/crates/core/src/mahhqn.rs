//! Hierarchical hybrid Q-learning: discrete choices up top, continuous
//! parameters below, trained separately and both centralized.
//!
//! The high level is a per-agent discrete Q network over the agent's own
//! observation, coordinated by a monotone mixing network. Unlike the flat
//! mixer, its hypernetworks are conditioned on the global state *extended
//! with the low level's current outputs* (the tuple of continuous parameters
//! the low-level policies would attach to the chosen discrete actions), so
//! the discrete coordination can see what the continuous level will do.
//!
//! The low level is a centralized actor-critic per agent: the policy maps the
//! observation concatenated with the chosen discrete action (one-hot) to that
//! action's parameters, and the critic scores the global state together with
//! everyone's hybrid actions (one-hot discrete, zero-padded parameters).
//!
//! Selection is cheap by construction: each agent picks one discrete action
//! first and evaluates its policy once for exactly that action — one
//! parameter vector per agent per step, versus one per discrete action in
//! the flat model.
//!
//! Training respects a warm-up: for the first `m` updates only the low level
//! learns (discrete actions explore uniformly meanwhile), because the
//! high-level bootstrap is meaningless while the continuous parameters that
//! condition it are still noise.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::algorithm::{
    Algorithm, LossReport, NetBundle, Segment, SelectStats, TargetSync, TrainError,
};
use crate::diffcore::mlp::{backward, forward, forward_trace, Activation, MlpSpec, ParamBundle};
use crate::envs::EnvSpec;
use crate::hybrid_action::{
    affine_from_unit, affine_from_unit_derivative, argmax, epsilon_greedy, perturb,
    ExploreParams, HybridAction, HybridActionSpace, NoiseState,
};
use crate::mixing::{MixingNetwork, MixingParams};
use crate::pdqn::Net;
use crate::replay::{JointTransition, ReplayBuffer};
use crate::util::Fnv64;
use crate::ChaCha12Rng;

/// Warm-up length and total length of a training run, in updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainSchedule {
    pub warmup_updates: u64,
    pub total_updates: u64,
}

impl TrainSchedule {
    pub fn new(warmup_updates: u64, total_updates: u64) -> Result<Self, TrainError> {
        if warmup_updates > total_updates {
            return Err(TrainError::Schedule("warm-up longer than the whole run"));
        }
        Ok(TrainSchedule {
            warmup_updates,
            total_updates,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MahhqnHyper {
    pub hidden: Vec<usize>,
    pub gamma: f64,
    /// Learning rates: high-level discrete Q nets, low-level critics,
    /// low-level policies, mixing hypernetworks.
    pub high_lr: f64,
    pub low_critic_lr: f64,
    pub low_policy_lr: f64,
    pub mixing_lr: f64,
    pub mixing_width: usize,
    pub target_sync: TargetSync,
    pub schedule: TrainSchedule,
}

impl Default for MahhqnHyper {
    fn default() -> Self {
        MahhqnHyper {
            hidden: vec![64, 64],
            gamma: 0.95,
            high_lr: 1e-3,
            low_critic_lr: 1e-3,
            low_policy_lr: 1e-4,
            mixing_lr: 1e-3,
            mixing_width: 32,
            target_sync: TargetSync::Soft { tau: 0.01 },
            schedule: TrainSchedule {
                warmup_updates: 0,
                total_updates: u64::MAX,
            },
        }
    }
}

/// Observation extended with the chosen discrete action, one-hot:
/// `[obs | e_k]` of length `obs_dim + discrete_count`.
pub fn obs_hat(obs: &[f64], k: usize, discrete_count: usize) -> Vec<f64> {
    debug_assert!(k < discrete_count);
    let mut out = Vec::with_capacity(obs.len() + discrete_count);
    out.extend_from_slice(obs);
    out.extend(core::iter::repeat(0.0).take(discrete_count));
    out[obs.len() + k] = 1.0;
    out
}

/// High-level loss value and gradients.
pub struct HighLoss {
    pub loss: f64,
    pub q_grads: Vec<ParamBundle>,
    pub mixing_grads: MixingParams,
}

/// Per-agent hierarchy: discrete Q head, conditioned parameter policy,
/// centralized critic.
struct AgentNets {
    space: HybridActionSpace,
    high_q: NetBundle,
    mu: NetBundle,
    critic: NetBundle,
}

/// The full hierarchical model.
pub struct MahhqnModel {
    agents: Vec<AgentNets>,
    high_mixing: MixingNetwork,
    state_dim: usize,
    gamma: f64,
    target_sync: TargetSync,
    schedule: TrainSchedule,
    updates_done: u64,
}

impl MahhqnModel {
    pub fn new(spec: &EnvSpec, hyper: &MahhqnHyper, rng: &mut ChaCha12Rng) -> Self {
        let mut agents = Vec::with_capacity(spec.n_agents);
        // Critic input: global state, then every agent's one-hot discrete
        // action followed by its zero-padded parameter block.
        let joint_action_dim: usize = spec
            .action_spaces
            .iter()
            .map(|s| s.discrete_count() + s.max_param_dim())
            .sum();
        for (i, space) in spec.action_spaces.iter().enumerate() {
            let obs_dim = spec.obs_dims[i];
            let k = space.discrete_count();
            let high_q = NetBundle::new(
                MlpSpec::with_hidden(obs_dim, &hyper.hidden, k, Activation::Relu, Activation::Identity)
                    .expect("valid high-level spec"),
                hyper.high_lr,
                rng,
            );
            let mu = NetBundle::new(
                MlpSpec::with_hidden(
                    obs_dim + k,
                    &hyper.hidden,
                    space.max_param_dim().max(1),
                    Activation::Relu,
                    Activation::Tanh,
                )
                .expect("valid low-level policy spec"),
                hyper.low_policy_lr,
                rng,
            );
            let critic = NetBundle::new(
                MlpSpec::with_hidden(
                    spec.global_state_dim + joint_action_dim,
                    &hyper.hidden,
                    1,
                    Activation::Relu,
                    Activation::Identity,
                )
                .expect("valid low-level critic spec"),
                hyper.low_critic_lr,
                rng,
            );
            agents.push(AgentNets {
                space: space.clone(),
                high_q,
                mu,
                critic,
            });
        }
        let chi_dim: usize = spec.action_spaces.iter().map(|s| s.max_param_dim()).sum();
        let high_mixing = MixingNetwork::new(
            spec.n_agents,
            hyper.mixing_width,
            spec.global_state_dim + chi_dim.max(0) + if chi_dim == 0 { 1 } else { 0 },
            hyper.mixing_lr,
            rng,
        );
        MahhqnModel {
            agents,
            high_mixing,
            state_dim: spec.global_state_dim,
            gamma: hyper.gamma,
            target_sync: hyper.target_sync,
            schedule: hyper.schedule,
            updates_done: 0,
        }
    }

    pub fn schedule(&self) -> TrainSchedule {
        self.schedule
    }

    pub fn updates_done(&self) -> u64 {
        self.updates_done
    }

    pub fn in_warmup(&self) -> bool {
        self.updates_done < self.schedule.warmup_updates
    }

    pub fn high_mixing(&self) -> &MixingNetwork {
        &self.high_mixing
    }

    pub fn high_mixing_mut(&mut self) -> &mut MixingNetwork {
        &mut self.high_mixing
    }

    pub fn high_q(&self, i: usize) -> &NetBundle {
        &self.agents[i].high_q
    }

    pub fn high_q_mut(&mut self, i: usize) -> &mut NetBundle {
        &mut self.agents[i].high_q
    }

    pub fn low_policy(&self, i: usize) -> &NetBundle {
        &self.agents[i].mu
    }

    pub fn low_policy_mut(&mut self, i: usize) -> &mut NetBundle {
        &mut self.agents[i].mu
    }

    pub fn low_critic(&self, i: usize) -> &NetBundle {
        &self.agents[i].critic
    }

    pub fn low_critic_mut(&mut self, i: usize) -> &mut NetBundle {
        &mut self.agents[i].critic
    }

    fn max_dim(&self, i: usize) -> usize {
        self.agents[i].space.max_param_dim()
    }

    /// Continuous parameters agent `i` attaches to discrete action `k`:
    /// the policy's leading outputs for that action's dimension, mapped into
    /// its bounds. Parameterless actions get an empty vector.
    pub fn low_policy_x(
        &self,
        i: usize,
        obs: &[f64],
        k: usize,
        net: Net,
    ) -> Result<Vec<f64>, TrainError> {
        let agent = &self.agents[i];
        let dims = agent.space.param_dim(k);
        if dims == 0 {
            return Ok(Vec::new());
        }
        let hat = obs_hat(obs, k, agent.space.discrete_count());
        let raw = forward(&agent.mu.spec, agent.mu.get(net), &hat)?;
        Ok(affine_from_unit(&raw[..dims], agent.space.bounds(k)))
    }

    /// The tuple of all agents' continuous parameters for the given discrete
    /// choices, from live or target low-level policies.
    pub fn compute_chi(
        &self,
        observations: &[Vec<f64>],
        ks: &[usize],
        net: Net,
    ) -> Result<Vec<Vec<f64>>, TrainError> {
        (0..self.agents.len())
            .map(|i| self.low_policy_x(i, &observations[i], ks[i], net))
            .collect()
    }

    /// Mixing conditioner: global state, then each agent's parameters padded
    /// with zeros to its maximum dimension. (A degenerate all-parameterless
    /// space pads with a single constant zero so the conditioner is never
    /// empty.)
    pub fn high_cond(&self, state: &[f64], chi: &[Vec<f64>]) -> Vec<f64> {
        let chi_dim: usize = (0..self.agents.len()).map(|i| self.max_dim(i)).sum();
        let mut cond = Vec::with_capacity(self.state_dim + chi_dim.max(1));
        cond.extend_from_slice(state);
        for (i, x) in chi.iter().enumerate() {
            cond.extend_from_slice(x);
            cond.extend(core::iter::repeat(0.0).take(self.max_dim(i) - x.len()));
        }
        if chi_dim == 0 {
            cond.push(0.0);
        }
        cond
    }

    /// Every agent's high-level Q vector over its discrete actions.
    pub fn high_q_vectors(
        &self,
        observations: &[Vec<f64>],
        net: Net,
    ) -> Result<Vec<Vec<f64>>, TrainError> {
        self.agents
            .iter()
            .zip(observations.iter())
            .map(|(agent, obs)| Ok(forward(&agent.high_q.spec, agent.high_q.get(net), obs)?))
            .collect()
    }

    /// Bootstrap ingredients for one transition: the target-side conditioner
    /// (next state plus target-policy parameters at the per-agent greedy
    /// discrete choices) and the per-agent target Q vectors. The conditioner
    /// is fixed by the greedy choices, so maximizing the mixed value over
    /// discrete actions decomposes into per-agent maxima exactly.
    pub fn high_bootstrap_inputs(
        &self,
        t: &JointTransition,
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>), TrainError> {
        let q_next = self.high_q_vectors(&t.next_observations, Net::Target)?;
        let greedy_ks: Vec<usize> = q_next.iter().map(|q| argmax(q)).collect();
        let chi_next = self.compute_chi(&t.next_observations, &greedy_ks, Net::Target)?;
        Ok((self.high_cond(&t.next_state, &chi_next), q_next))
    }

    /// High-level joint TD loss over a batch:
    /// `mean_b (y - Q_tot(s, k, chi))^2` with
    /// `y = r + gamma * (1-done) * Q_tot'(s', per-agent maxima, chi')`,
    /// `chi` from live low-level policies at the stored discrete actions and
    /// `chi'` from target low-level policies at the greedy next choices.
    /// Gradients cover the high-level Q nets and the mixing hypernetworks
    /// only. Refused during warm-up.
    pub fn high_loss(&self, batch: &[&JointTransition]) -> Result<HighLoss, TrainError> {
        if self.in_warmup() {
            return Err(TrainError::Schedule(
                "high-level update requested during warm-up",
            ));
        }
        debug_assert!(!batch.is_empty());
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut q_grads: Vec<ParamBundle> = self
            .agents
            .iter()
            .map(|a| ParamBundle::zeros_like(&a.high_q.live))
            .collect();
        let mut mixing_grads = MixingParams::zeros_like(self.high_mixing.live());

        for t in batch {
            let y = if t.done {
                t.reward
            } else {
                let (cond_next, q_next) = self.high_bootstrap_inputs(t)?;
                let maxima: Vec<f64> = q_next
                    .iter()
                    .map(|q| q.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                    .collect();
                t.reward + self.gamma * self.high_mixing.mix(&cond_next, &maxima, Net::Target)?
            };

            let ks: Vec<usize> = t.actions.iter().map(|a| a.k).collect();
            let chi = self.compute_chi(&t.observations, &ks, Net::Live)?;
            let cond = self.high_cond(&t.state, &chi);

            let mut q_chosen = Vec::with_capacity(self.agents.len());
            let mut traces = Vec::with_capacity(self.agents.len());
            for (i, agent) in self.agents.iter().enumerate() {
                let (q, trace) =
                    forward_trace(&agent.high_q.spec, &agent.high_q.live, &t.observations[i])?;
                q_chosen.push(q[ks[i]]);
                traces.push((q.len(), trace));
            }

            let (q_tot, mix_grads) = self.high_mixing.mix_with_grads(&cond, &q_chosen, 1.0)?;
            let err = q_tot - y;
            loss += scale * err * err;
            let d_qtot = 2.0 * scale * err;

            mixing_grads.add_scaled(&mix_grads.params, d_qtot);
            for (i, agent) in self.agents.iter().enumerate() {
                let (k_count, trace) = &traces[i];
                let mut d_out = vec![0.0; *k_count];
                d_out[ks[i]] = d_qtot * mix_grads.d_q[i];
                let (g, _) = backward(&agent.high_q.spec, &agent.high_q.live, trace, &d_out)?;
                q_grads[i].add_scaled(&g, 1.0);
            }
        }
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss("high-level"));
        }
        Ok(HighLoss {
            loss,
            q_grads,
            mixing_grads,
        })
    }

    /// Critic input: `[state | onehot(k_0), pad(x_0), ..., onehot(k_N-1), pad(x_N-1)]`.
    fn critic_input(&self, state: &[f64], ks: &[usize], xs: &[Vec<f64>]) -> Vec<f64> {
        let mut input = Vec::with_capacity(
            self.state_dim
                + self
                    .agents
                    .iter()
                    .map(|a| a.space.discrete_count() + a.space.max_param_dim())
                    .sum::<usize>(),
        );
        input.extend_from_slice(state);
        for (j, agent) in self.agents.iter().enumerate() {
            let k_count = agent.space.discrete_count();
            let base = input.len();
            input.extend(core::iter::repeat(0.0).take(k_count));
            input[base + ks[j]] = 1.0;
            input.extend_from_slice(&xs[j]);
            input.extend(core::iter::repeat(0.0).take(agent.space.max_param_dim() - xs[j].len()));
        }
        input
    }

    /// Offset of agent `i`'s padded parameter block inside the critic input.
    fn critic_x_offset(&self, i: usize) -> usize {
        let mut offset = self.state_dim;
        for agent in &self.agents[..i] {
            offset += agent.space.discrete_count() + agent.space.max_param_dim();
        }
        offset + self.agents[i].space.discrete_count()
    }

    /// Next joint hybrid action for the bootstrap, entirely from target
    /// networks: greedy discrete choices from the high-level targets,
    /// parameters from the low-level target policies.
    fn target_next_joint(
        &self,
        t: &JointTransition,
    ) -> Result<(Vec<usize>, Vec<Vec<f64>>), TrainError> {
        let q_next = self.high_q_vectors(&t.next_observations, Net::Target)?;
        let ks: Vec<usize> = q_next.iter().map(|q| argmax(q)).collect();
        let xs = self.compute_chi(&t.next_observations, &ks, Net::Target)?;
        Ok((ks, xs))
    }

    /// Centralized critic loss for one agent:
    /// `mean_b [y - Q_i(s, k_0, x_0, ..)]^2` with
    /// `y = r + gamma * (1-done) * Q_i'(s', k', x')` and the next joint
    /// action from target networks. The reward is the shared team scalar.
    pub fn low_critic_loss(
        &self,
        i: usize,
        batch: &[&JointTransition],
    ) -> Result<(f64, ParamBundle), TrainError> {
        debug_assert!(!batch.is_empty());
        let agent = &self.agents[i];
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut grads = ParamBundle::zeros_like(&agent.critic.live);
        for t in batch {
            let y = if t.done {
                t.reward
            } else {
                let (ks_next, xs_next) = self.target_next_joint(t)?;
                let input_next = self.critic_input(&t.next_state, &ks_next, &xs_next);
                t.reward
                    + self.gamma
                        * forward(&agent.critic.spec, &agent.critic.target, &input_next)?[0]
            };
            let ks: Vec<usize> = t.actions.iter().map(|a| a.k).collect();
            let xs: Vec<Vec<f64>> = t.actions.iter().map(|a| a.params.clone()).collect();
            let input = self.critic_input(&t.state, &ks, &xs);
            let (q, trace) = forward_trace(&agent.critic.spec, &agent.critic.live, &input)?;
            let err = q[0] - y;
            loss += scale * err * err;
            let d_out = [2.0 * scale * err];
            let (g, _) = backward(&agent.critic.spec, &agent.critic.live, &trace, &d_out)?;
            grads.add_scaled(&g, 1.0);
        }
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss("low-level critic"));
        }
        Ok((loss, grads))
    }

    /// Deterministic-policy-gradient step direction for one agent's policy:
    /// ascend its own critic with its parameter slot substituted by the live
    /// policy output, every other agent's action taken from the batch.
    /// Returns the objective (mean critic value) and the gradient of its
    /// negation with respect to the policy parameters.
    pub fn low_policy_update(
        &self,
        i: usize,
        batch: &[&JointTransition],
    ) -> Result<(f64, ParamBundle), TrainError> {
        debug_assert!(!batch.is_empty());
        let agent = &self.agents[i];
        let scale = 1.0 / batch.len() as f64;
        let mut objective = 0.0;
        let mut grads = ParamBundle::zeros_like(&agent.mu.live);
        let x_offset = self.critic_x_offset(i);
        for t in batch {
            let k_i = t.actions[i].k;
            let dims = agent.space.param_dim(k_i);
            let hat = obs_hat(&t.observations[i], k_i, agent.space.discrete_count());
            let (raw, mu_trace) = forward_trace(&agent.mu.spec, &agent.mu.live, &hat)?;
            let x_i = affine_from_unit(&raw[..dims], agent.space.bounds(k_i));

            let ks: Vec<usize> = t.actions.iter().map(|a| a.k).collect();
            let mut xs: Vec<Vec<f64>> = t.actions.iter().map(|a| a.params.clone()).collect();
            xs[i] = x_i;
            let input = self.critic_input(&t.state, &ks, &xs);
            let (q, critic_trace) =
                forward_trace(&agent.critic.spec, &agent.critic.live, &input)?;
            objective += scale * q[0];

            if dims > 0 {
                let d_out = [-scale];
                let (_, d_input) =
                    backward(&agent.critic.spec, &agent.critic.live, &critic_trace, &d_out)?;
                let d_map = affine_from_unit_derivative(agent.space.bounds(k_i));
                let mut d_raw = vec![0.0; agent.mu.spec.output_dim()];
                for d in 0..dims {
                    d_raw[d] = d_input[x_offset + d] * d_map[d];
                }
                let (g, _) = backward(&agent.mu.spec, &agent.mu.live, &mu_trace, &d_raw)?;
                grads.add_scaled(&g, 1.0);
            }
        }
        if !objective.is_finite() {
            return Err(TrainError::NonFiniteLoss("low-level policy"));
        }
        Ok((objective, grads))
    }

    /// Bit-stable hash of every high-level parameter (live nets, targets,
    /// optimizer moments): the warm-up freeze witness.
    pub fn high_level_hash(&self) -> u64 {
        let mut h = Fnv64::new();
        for seg in self.segments() {
            if seg.name.starts_with("high.") {
                h.write(seg.name.as_bytes());
                for v in &seg.values {
                    h.write_f64(*v);
                }
            }
        }
        h.finish()
    }
}

impl Algorithm for MahhqnModel {
    fn n_agents(&self) -> usize {
        self.agents.len()
    }

    /// Discrete choice by epsilon-greedy on the agent's high-level values
    /// (uniform during warm-up), then exactly one policy evaluation for the
    /// chosen action.
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
                let k = if self.in_warmup() {
                    rng.gen_range(0..agent.space.discrete_count())
                } else {
                    let q = forward(&agent.high_q.spec, &agent.high_q.live, &observations[i])
                        .expect("observation dims fixed by env");
                    epsilon_greedy(&q, explore.epsilon, rng).expect("space is non-empty")
                };
                let x = self
                    .low_policy_x(i, &observations[i], k, Net::Live)
                    .expect("observation dims fixed by env");
                stats.param_vectors += 1;
                let x = perturb(&x, explore, agent.space.bounds(k), rng, &mut noise[i]);
                HybridAction::new(k, x)
            })
            .collect();
        (joint, stats)
    }

    fn greedy_action(&self, agent: usize, observation: &[f64]) -> HybridAction {
        let a = &self.agents[agent];
        let q = forward(&a.high_q.spec, &a.high_q.live, observation)
            .expect("observation dims fixed by caller");
        let k = argmax(&q);
        let x = self
            .low_policy_x(agent, observation, k, Net::Live)
            .expect("observation dims fixed by caller");
        HybridAction::new(k, x)
    }

    /// One scheduled update: low-level critic and policy always; high-level
    /// TD once past warm-up. High-level targets stay frozen through warm-up
    /// so their parameters are bit-identical until the first high update.
    fn update(
        &mut self,
        buffer: &ReplayBuffer,
        batch_size: usize,
        rng: &mut ChaCha12Rng,
    ) -> Result<LossReport, TrainError> {
        let batch = buffer.sample(batch_size, rng)?;
        let mut critic_total = 0.0;
        let mut policy_total = 0.0;
        for i in 0..self.agents.len() {
            let (loss, grads) = self.low_critic_loss(i, &batch)?;
            self.agents[i].critic.apply_step(&grads)?;
            critic_total += loss;
        }
        for i in 0..self.agents.len() {
            let (objective, grads) = self.low_policy_update(i, &batch)?;
            self.agents[i].mu.apply_step(&grads)?;
            policy_total += objective;
        }

        let past_warmup = !self.in_warmup();
        let high = if past_warmup {
            let hl = self.high_loss(&batch)?;
            for (i, grads) in hl.q_grads.iter().enumerate() {
                self.agents[i].high_q.apply_step(grads)?;
            }
            self.high_mixing.apply_step(&hl.mixing_grads)?;
            hl.loss
        } else {
            0.0
        };

        self.updates_done += 1;
        let sync_now = matches!(self.target_sync, TargetSync::Soft { .. })
            || self.target_sync.hard_due(self.updates_done);
        if sync_now {
            for agent in &mut self.agents {
                agent.mu.sync(self.target_sync);
                agent.critic.sync(self.target_sync);
            }
            if past_warmup {
                for agent in &mut self.agents {
                    agent.high_q.sync(self.target_sync);
                }
                self.high_mixing.sync_targets(self.target_sync);
            }
        }
        Ok(vec![
            ("low_critic", critic_total),
            ("low_policy", -policy_total),
            ("high", high),
        ])
    }

    fn segments(&self) -> Vec<Segment> {
        let mut out = Vec::new();
        for (i, agent) in self.agents.iter().enumerate() {
            crate::pdqn::push_net_segments(
                &mut out,
                &format!("high.q{i}."),
                "net",
                &agent.high_q.live,
                &agent.high_q.target,
                &agent.high_q.opt,
            );
            crate::pdqn::push_net_segments(
                &mut out,
                &format!("low.mu{i}."),
                "net",
                &agent.mu.live,
                &agent.mu.target,
                &agent.mu.opt,
            );
            crate::pdqn::push_net_segments(
                &mut out,
                &format!("low.critic{i}."),
                "net",
                &agent.critic.live,
                &agent.critic.target,
                &agent.critic.opt,
            );
        }
        out.extend(self.high_mixing.segments("high.mix."));
        out
    }

    fn load_segments(&mut self, segments: &[Segment]) -> Result<(), TrainError> {
        for i in 0..self.agents.len() {
            let a = &mut self.agents[i];
            crate::pdqn::load_net_segments(
                segments,
                &format!("high.q{i}."),
                "net",
                &mut a.high_q.live,
                &mut a.high_q.target,
                &mut a.high_q.opt,
            )?;
            crate::pdqn::load_net_segments(
                segments,
                &format!("low.mu{i}."),
                "net",
                &mut a.mu.live,
                &mut a.mu.target,
                &mut a.mu.opt,
            )?;
            crate::pdqn::load_net_segments(
                segments,
                &format!("low.critic{i}."),
                "net",
                &mut a.critic.live,
                &mut a.critic.target,
                &mut a.critic.opt,
            )?;
        }
        self.high_mixing.load_segments("high.mix.", segments)
    }
}

/// Minimal scheduled trainer: interleaves environment steps with updates and
/// reports after every update, so callers can trace parameter hashes or
/// losses update by update.
pub struct RunConfig {
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Build up at least this many transitions before the first update.
    pub train_start: usize,
    pub explore: crate::hybrid_action::ExplorationConfig,
    pub env_seed: u64,
}

pub fn run_schedule<F>(
    model: &mut MahhqnModel,
    env: &mut dyn crate::envs::Env,
    cfg: &RunConfig,
    rng: &mut ChaCha12Rng,
    mut after_update: F,
) -> Result<(), TrainError>
where
    F: FnMut(u64, &MahhqnModel),
{
    let spec = env.spec().clone();
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity, &spec);
    let mut noise: Vec<NoiseState> = spec
        .action_spaces
        .iter()
        .map(|s| NoiseState::new(s.max_param_dim()))
        .collect();
    let mut episode = 0u64;
    let (mut obs, mut state) = env.reset(cfg.env_seed.wrapping_add(episode));
    let mut env_step = 0u64;
    let mut updates = 0u64;
    while updates < model.schedule.total_updates {
        let explore = ExploreParams::at(&cfg.explore, env_step);
        let (joint, _) = model.select_joint(&obs, &explore, rng, &mut noise);
        let result = env
            .step(&joint)
            .expect("selected actions are valid by construction");
        buffer.push(JointTransition {
            state: core::mem::take(&mut state),
            observations: core::mem::take(&mut obs),
            actions: joint,
            reward: result.reward,
            next_state: result.global_state.clone(),
            next_observations: result.observations.clone(),
            done: result.done,
        })?;
        if result.done {
            episode += 1;
            noise.iter_mut().for_each(NoiseState::reset);
            let (o, s) = env.reset(cfg.env_seed.wrapping_add(episode));
            obs = o;
            state = s;
        } else {
            obs = result.observations;
            state = result.global_state;
        }
        env_step += 1;
        if buffer.len() >= cfg.train_start.max(cfg.batch_size) {
            model.update(&buffer, cfg.batch_size, rng)?;
            updates += 1;
            after_update(updates, model);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::fd::check_gradient;
    use crate::envs::{make_env, EnvOverrides};
    use crate::hybrid_action::LinearSchedule;
    use crate::pdqn::test_support::make_constant;
    use crate::seeded_rng;
    use alloc::string::String;

    fn small_hyper(warmup: u64, total: u64) -> MahhqnHyper {
        MahhqnHyper {
            hidden: vec![8],
            mixing_width: 6,
            schedule: TrainSchedule {
                warmup_updates: warmup,
                total_updates: total,
            },
            ..Default::default()
        }
    }

    fn synth_spec(n: usize, k: usize) -> EnvSpec {
        let ranges: Vec<&[(f64, f64)]> = (0..k).map(|_| &[(-1.0, 1.0)][..]).collect();
        let space = HybridActionSpace::from_ranges(&ranges).unwrap();
        EnvSpec {
            name: String::from("synthetic"),
            n_agents: n,
            obs_dims: vec![3; n],
            global_state_dim: 4,
            action_spaces: vec![space; n],
            horizon: 8,
        }
    }

    fn random_transition(spec: &EnvSpec, rng: &mut ChaCha12Rng, done: bool) -> JointTransition {
        let obs = |rng: &mut ChaCha12Rng| -> Vec<Vec<f64>> {
            spec.obs_dims
                .iter()
                .map(|&d| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect()
        };
        let state = |rng: &mut ChaCha12Rng| -> Vec<f64> {
            (0..spec.global_state_dim)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect()
        };
        let actions = spec
            .action_spaces
            .iter()
            .map(|space| {
                let k = rng.gen_range(0..space.discrete_count());
                let params = space
                    .bounds(k)
                    .iter()
                    .map(|b| rng.gen_range(b.low..b.high))
                    .collect();
                HybridAction::new(k, params)
            })
            .collect();
        JointTransition {
            state: state(rng),
            observations: obs(rng),
            actions,
            reward: rng.gen_range(-1.0..1.0),
            next_state: state(rng),
            next_observations: obs(rng),
            done,
        }
    }

    fn batch_for(spec: &EnvSpec, rng: &mut ChaCha12Rng, len: usize) -> Vec<JointTransition> {
        (0..len)
            .map(|i| random_transition(spec, rng, i == len - 1))
            .collect()
    }

    #[test]
    fn obs_hat_concatenates_a_one_hot() {
        let obs = vec![0.5; 21];
        let hat = obs_hat(&obs, 2, 4);
        assert_eq!(hat.len(), 25);
        assert_eq!(hat[23], 1.0);
        assert_eq!(hat[21] + hat[22] + hat[24], 0.0);
        // k recoverable from the suffix.
        assert_eq!(argmax(&hat[21..]), 2);
        // K=1 appends a constant 1.
        assert_eq!(obs_hat(&[0.0], 0, 1), vec![0.0, 1.0]);
    }

    #[test]
    fn chi_from_a_constant_stub_policy() {
        let spec = synth_spec(2, 2);
        let mut model = MahhqnModel::new(&spec, &small_hyper(0, 100), &mut seeded_rng(0));
        // tanh(b) = 0.5 makes every policy output 0.5 after the [-1,1] map.
        let b = 0.5 * crate::math::ln(1.5 / 0.5);
        for i in 0..2 {
            make_constant(&mut model.low_policy_mut(i).live, &[b]);
        }
        let obs = vec![vec![0.1, 0.2, 0.3], vec![0.4, 0.5, 0.6]];
        let chi = model.compute_chi(&obs, &[0, 1], Net::Live).unwrap();
        for x in &chi {
            assert_eq!(x.len(), 1);
            assert!((x[0] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn chi_distinguishes_live_from_target() {
        let spec = synth_spec(2, 2);
        let mut model = MahhqnModel::new(&spec, &small_hyper(0, 100), &mut seeded_rng(1));
        let obs = vec![vec![0.1, 0.2, 0.3], vec![0.4, 0.5, 0.6]];
        let live = model.compute_chi(&obs, &[0, 0], Net::Live).unwrap();
        let target = model.compute_chi(&obs, &[0, 0], Net::Target).unwrap();
        assert_eq!(live, target);
        model.low_policy_mut(0).live.values_mut()[0] += 0.5;
        let live2 = model.compute_chi(&obs, &[0, 0], Net::Live).unwrap();
        let target2 = model.compute_chi(&obs, &[0, 0], Net::Target).unwrap();
        assert_ne!(live2, target2);
        assert_eq!(target, target2);
    }

    #[test]
    fn chi_matches_manual_per_agent_evaluation() {
        let spec = synth_spec(2, 3);
        let model = MahhqnModel::new(&spec, &small_hyper(0, 100), &mut seeded_rng(2));
        let obs = vec![vec![0.3, -0.1, 0.7], vec![0.0, 0.9, -0.4]];
        let ks = [2usize, 0usize];
        let chi = model.compute_chi(&obs, &ks, Net::Live).unwrap();
        for i in 0..2 {
            let hat = obs_hat(&obs[i], ks[i], 3);
            let raw = forward(
                &model.low_policy(i).spec,
                &model.low_policy(i).live,
                &hat,
            )
            .unwrap();
            let manual = affine_from_unit(&raw[..1], spec.action_spaces[i].bounds(ks[i]));
            assert_eq!(chi[i], manual);
        }
    }

    #[test]
    fn high_loss_is_refused_during_warmup() {
        let spec = synth_spec(2, 2);
        let model = MahhqnModel::new(&spec, &small_hyper(10, 100), &mut seeded_rng(3));
        let mut rng = seeded_rng(4);
        let owned = batch_for(&spec, &mut rng, 2);
        let batch: Vec<&JointTransition> = owned.iter().collect();
        assert!(matches!(
            model.high_loss(&batch),
            Err(TrainError::Schedule(_))
        ));
    }

    #[test]
    fn done_transition_reduces_high_y_to_reward() {
        let spec = synth_spec(2, 2);
        let model = MahhqnModel::new(&spec, &small_hyper(0, 100), &mut seeded_rng(5));
        let mut rng = seeded_rng(6);
        let mut t = random_transition(&spec, &mut rng, true);
        let a = model.high_loss(&[&t]).unwrap().loss;
        for v in &mut t.next_state {
            *v += 5.0;
        }
        let b = model.high_loss(&[&t]).unwrap().loss;
        assert_eq!(a, b);
    }

    #[test]
    fn per_agent_high_max_equals_brute_force_joint_max() {
        let mut rng = seeded_rng(7);
        for trial in 0..200 {
            let spec = synth_spec(2, 3);
            let model =
                MahhqnModel::new(&spec, &small_hyper(0, 100), &mut seeded_rng(30_000 + trial));
            let t = random_transition(&spec, &mut rng, false);
            let (cond, q_vectors) = model.high_bootstrap_inputs(&t).unwrap();
            let maxima: Vec<f64> = q_vectors
                .iter()
                .map(|q| q.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                .collect();
            let per_agent = model
                .high_mixing()
                .mix(&cond, &maxima, Net::Target)
                .unwrap();
            // Brute force over all joint discrete actions with the same
            // fixed conditioner.
            let mut best = f64::NEG_INFINITY;
            for k0 in 0..3 {
                for k1 in 0..3 {
                    let v = model
                        .high_mixing()
                        .mix(&cond, &[q_vectors[0][k0], q_vectors[1][k1]], Net::Target)
                        .unwrap();
                    best = best.max(v);
                }
            }
            assert!(
                (per_agent - best).abs() <= 1e-10,
                "trial {trial}: {per_agent} vs {best}"
            );
        }
    }

    #[test]
    fn constant_critic_loss_by_hand() {
        // Constant critic c, r=1, terminal transition: L = (1-c)^2.
        let spec = synth_spec(2, 2);
        let mut model = MahhqnModel::new(&spec, &small_hyper(0, 100), &mut seeded_rng(8));
        let c = 0.25;
        make_constant(&mut model.low_critic_mut(0).live, &[c]);
        let mut rng = seeded_rng(9);
        let mut t = random_transition(&spec, &mut rng, true);
        t.reward = 1.0;
        let (loss, _) = model.low_critic_loss(0, &[&t]).unwrap();
        assert!((loss - (1.0 - c) * (1.0 - c)).abs() < 1e-12);
    }

    #[test]
    fn crafted_bootstrap_assembles_y_by_hand() {
        // Live critic c=2, target critic d=3, r=1, gamma=0.95:
        // y = 1 + 0.95*3, L = (2 - y)^2.
        let spec = synth_spec(2, 2);
        let mut model = MahhqnModel::new(&spec, &small_hyper(0, 100), &mut seeded_rng(10));
        make_constant(&mut model.low_critic_mut(0).live, &[2.0]);
        make_constant(&mut model.low_critic_mut(0).target, &[3.0]);
        let mut rng = seeded_rng(11);
        let mut t = random_transition(&spec, &mut rng, false);
        t.reward = 1.0;
        let (loss, _) = model.low_critic_loss(0, &[&t]).unwrap();
        let y = 1.0 + 0.95 * 3.0;
        assert!((loss - (2.0 - y) * (2.0 - y)).abs() < 1e-12);
    }

    #[test]
    fn high_gradients_match_finite_differences() {
        let spec = synth_spec(2, 2);
        let model = MahhqnModel::new(&spec, &small_hyper(0, 100), &mut seeded_rng(12));
        let mut rng = seeded_rng(13);
        let owned = batch_for(&spec, &mut rng, 3);
        let batch: Vec<&JointTransition> = owned.iter().collect();
        let hl = model.high_loss(&batch).unwrap();

        let mut flat = Vec::new();
        for i in 0..2 {
            flat.extend_from_slice(model.high_q(i).live.values());
        }
        flat.extend_from_slice(&model.high_mixing().live().flat());
        let mut analytic = Vec::new();
        for g in &hl.q_grads {
            analytic.extend_from_slice(g.values());
        }
        analytic.extend_from_slice(&hl.mixing_grads.flat());

        let q_len = model.high_q(0).live.len();
        let eval = |x: &[f64]| {
            let mut probe = MahhqnModel::new(&spec, &small_hyper(0, 100), &mut seeded_rng(12));
            probe.high_q_mut(0).live.values_mut().copy_from_slice(&x[..q_len]);
            probe
                .high_q_mut(1)
                .live
                .values_mut()
                .copy_from_slice(&x[q_len..2 * q_len]);
            probe.high_mixing_mut().live_mut().set_flat(&x[2 * q_len..]);
            probe.high_loss(&batch).unwrap().loss
        };
        let report = check_gradient(eval, &flat, &analytic, 1e-5, 1e-4, Some((400, 0xb1)));
        assert!(report.passed, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn low_critic_gradients_match_finite_differences() {
        let spec = synth_spec(2, 2);
        let model = MahhqnModel::new(&spec, &small_hyper(0, 100), &mut seeded_rng(14));
        let mut rng = seeded_rng(15);
        let owned = batch_for(&spec, &mut rng, 3);
        let batch: Vec<&JointTransition> = owned.iter().collect();
        let (_, analytic) = model.low_critic_loss(0, &batch).unwrap();
        let eval = |x: &[f64]| {
            let mut probe = MahhqnModel::new(&spec, &small_hyper(0, 100), &mut seeded_rng(14));
            probe.low_critic_mut(0).live.values_mut().copy_from_slice(x);
            probe.low_critic_loss(0, &batch).unwrap().0
        };
        let report = check_gradient(
            eval,
            model.low_critic(0).live.values(),
            analytic.values(),
            1e-5,
            1e-4,
            Some((300, 0xb2)),
        );
        assert!(report.passed, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn low_policy_gradients_match_finite_differences() {
        let spec = synth_spec(2, 2);
        let model = MahhqnModel::new(&spec, &small_hyper(0, 100), &mut seeded_rng(16));
        let mut rng = seeded_rng(17);
        let owned = batch_for(&spec, &mut rng, 3);
        let batch: Vec<&JointTransition> = owned.iter().collect();
        for i in 0..2 {
            let (_, analytic) = model.low_policy_update(i, &batch).unwrap();
            let eval = |x: &[f64]| {
                let mut probe =
                    MahhqnModel::new(&spec, &small_hyper(0, 100), &mut seeded_rng(16));
                probe.low_policy_mut(i).live.values_mut().copy_from_slice(x);
                -probe.low_policy_update(i, &batch).unwrap().0
            };
            let report = check_gradient(
                eval,
                model.low_policy(i).live.values(),
                analytic.values(),
                1e-5,
                1e-4,
                Some((300, 0xb3 + i as u64)),
            );
            assert!(report.passed, "agent {i}: max rel err {}", report.max_rel_err);
        }
    }

    #[test]
    fn policy_step_touches_only_that_agents_policy() {
        let spec = synth_spec(2, 2);
        let mut model = MahhqnModel::new(&spec, &small_hyper(0, 100), &mut seeded_rng(18));
        let mut rng = seeded_rng(19);
        let owned = batch_for(&spec, &mut rng, 3);
        let batch: Vec<&JointTransition> = owned.iter().collect();
        let other_policy = model.low_policy(1).live.values().to_vec();
        let own_critic = model.low_critic(0).live.values().to_vec();
        let (_, grads) = model.low_policy_update(0, &batch).unwrap();
        model.low_policy_mut(0).apply_step(&grads).unwrap();
        assert_eq!(model.low_policy(1).live.values(), &other_policy[..]);
        assert_eq!(model.low_critic(0).live.values(), &own_critic[..]);
    }

    #[test]
    fn selection_uses_one_param_vector_per_agent_and_handles_empty_params() {
        let mut env = make_env("catch_target", &EnvOverrides::default()).unwrap();
        let spec = env.spec().clone();
        let model = MahhqnModel::new(&spec, &small_hyper(0, 100), &mut seeded_rng(20));
        let (obs, _) = env.reset(0);
        let mut noise: Vec<NoiseState> = (0..2).map(|_| NoiseState::new(2)).collect();
        let (joint, stats) = model.select_joint(
            &obs,
            &ExploreParams::greedy(),
            &mut seeded_rng(21),
            &mut noise,
        );
        assert_eq!(stats.param_vectors, 2);
        for (i, action) in joint.iter().enumerate() {
            assert_eq!(
                action.params.len(),
                spec.action_spaces[i].param_dim(action.k)
            );
        }
        // Force the parameterless tag and confirm the empty vector.
        let x = model.low_policy_x(0, &obs[0], 1, Net::Live).unwrap();
        assert!(x.is_empty());
    }

    #[test]
    fn greedy_selection_is_deterministic() {
        let spec = synth_spec(2, 3);
        let model = MahhqnModel::new(&spec, &small_hyper(0, 100), &mut seeded_rng(22));
        let obs = vec![vec![0.2, -0.6, 0.1], vec![0.9, 0.0, -0.3]];
        let a = crate::algorithm::greedy_joint(&model, &obs);
        let b = crate::algorithm::greedy_joint(&model, &obs);
        assert_eq!(a, b);
    }

    #[test]
    fn warmup_freezes_high_level_parameters() {
        let mut env = make_env("hybrid_climb", &EnvOverrides::default()).unwrap();
        let spec = env.spec().clone();
        let warmup = 15u64;
        let total = 30u64;
        let mut model = MahhqnModel::new(&spec, &small_hyper(warmup, total), &mut seeded_rng(23));
        let cfg = RunConfig {
            batch_size: 8,
            buffer_capacity: 256,
            train_start: 8,
            explore: crate::hybrid_action::ExplorationConfig {
                epsilon: LinearSchedule::constant(0.5),
                noise: crate::hybrid_action::NoiseKind::Gaussian,
                sigma: LinearSchedule::constant(0.2),
                ou_theta: 0.15,
            },
            env_seed: 0,
        };
        let mut hashes = Vec::new();
        run_schedule(&mut model, env.as_mut(), &cfg, &mut seeded_rng(24), |_, m| {
            hashes.push(m.high_level_hash())
        })
        .unwrap();
        assert_eq!(hashes.len(), total as usize);
        for u in 0..warmup as usize {
            assert_eq!(hashes[u], hashes[0], "high level moved during warm-up");
        }
        assert_ne!(hashes[warmup as usize], hashes[0]);
    }

    #[test]
    fn full_warmup_run_never_trains_the_high_level() {
        let mut env = make_env("hybrid_climb", &EnvOverrides::default()).unwrap();
        let spec = env.spec().clone();
        let mut model = MahhqnModel::new(&spec, &small_hyper(10, 10), &mut seeded_rng(25));
        let before = model.high_level_hash();
        let cfg = RunConfig {
            batch_size: 8,
            buffer_capacity: 256,
            train_start: 8,
            explore: crate::hybrid_action::ExplorationConfig {
                epsilon: LinearSchedule::constant(1.0),
                noise: crate::hybrid_action::NoiseKind::Gaussian,
                sigma: LinearSchedule::constant(0.3),
                ou_theta: 0.15,
            },
            env_seed: 1,
        };
        run_schedule(&mut model, env.as_mut(), &cfg, &mut seeded_rng(26), |_, _| {})
            .unwrap();
        assert_eq!(model.high_level_hash(), before);
        assert_eq!(model.updates_done(), 10);
    }

    #[test]
    fn segment_round_trip_restores_everything() {
        let spec = synth_spec(2, 2);
        let mut model = MahhqnModel::new(&spec, &small_hyper(0, 100), &mut seeded_rng(27));
        let segs = model.segments();
        model.low_policy_mut(0).live.values_mut()[3] += 1.0;
        let mut flat = model.high_mixing().live().flat();
        flat[0] += 2.0;
        model.high_mixing_mut().live_mut().set_flat(&flat);
        model.load_segments(&segs).unwrap();
        assert_eq!(model.segments(), segs);
    }
}
