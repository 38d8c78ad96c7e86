//! End-to-end gradient verification of every training loss.
//!
//! Seeds small random models and batches, evaluates each loss's analytic
//! gradient, and compares it against central finite differences of the loss
//! value alone. Seven losses are covered: the P-DQN value and policy losses,
//! the joint TD and joint policy losses of the mixing model, and the
//! high-level TD, low-level critic and low-level policy losses of the
//! hierarchical model. The finite-difference side never touches the backward
//! pass, so the two routes are independent.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::diffcore::fd::{check_gradient, FdReport};
use crate::envs::EnvSpec;
use crate::hybrid_action::{HybridAction, HybridActionSpace};
use crate::mahhqn::{MahhqnHyper, MahhqnModel, TrainSchedule};
use crate::mapqn::{MapqnHyper, MapqnModel};
use crate::pdqn::{AgentSample, PdqnAgent, PdqnHyper};
use crate::replay::JointTransition;
use crate::ChaCha12Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Coordinates probed per case; gradients are checked on a seeded subsample
/// beyond this.
const MAX_COORDS: usize = 300;

/// Outcome of checking one loss.
#[derive(Clone, Debug)]
pub struct GradCase {
    pub name: &'static str,
    pub report: FdReport,
}

/// All seven loss names, in the order [`run_suite`] reports them.
pub const LOSS_NAMES: [&str; 7] = [
    "pdqn.q_loss",
    "pdqn.policy_loss",
    "mapqn.joint_td_loss",
    "mapqn.policy_update",
    "mahhqn.high_loss",
    "mahhqn.low_critic_loss",
    "mahhqn.low_policy_update",
];

fn synth_spec(n: usize, k: usize) -> EnvSpec {
    let ranges: Vec<&[(f64, f64)]> = (0..k).map(|_| &[(-1.0, 1.0)][..]).collect();
    let space = HybridActionSpace::from_ranges(&ranges).unwrap();
    EnvSpec {
        name: alloc::string::String::from("gradcheck"),
        n_agents: n,
        obs_dims: vec![3; n],
        global_state_dim: 4,
        action_spaces: vec![space; n],
        horizon: 8,
    }
}

fn random_batch(spec: &EnvSpec, rng: &mut ChaCha12Rng, len: usize) -> Vec<JointTransition> {
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
    (0..len)
        .map(|i| {
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
                done: i == len - 1,
            }
        })
        .collect()
}

fn pdqn_hyper() -> PdqnHyper {
    PdqnHyper {
        hidden: vec![8],
        ..Default::default()
    }
}

fn mapqn_hyper() -> MapqnHyper {
    MapqnHyper {
        pdqn: pdqn_hyper(),
        mixing_width: 6,
        mixing_lr: 1e-3,
    }
}

fn mahhqn_hyper() -> MahhqnHyper {
    MahhqnHyper {
        hidden: vec![8],
        mixing_width: 6,
        schedule: TrainSchedule {
            warmup_updates: 0,
            total_updates: u64::MAX,
        },
        ..Default::default()
    }
}

struct Case {
    name: &'static str,
    point: Vec<f64>,
    analytic: Vec<f64>,
    eval: Box<dyn FnMut(&[f64]) -> f64>,
}

type OwnedSample = (Vec<f64>, HybridAction, f64, Vec<f64>, bool);

fn as_samples(data: &[OwnedSample]) -> Vec<AgentSample<'_>> {
    data.iter()
        .map(|(obs, action, reward, next_obs, done)| AgentSample {
            obs,
            action,
            reward: *reward,
            next_obs,
            done: *done,
        })
        .collect()
}

fn pdqn_cases(seed: u64, batch: &[JointTransition]) -> Vec<Case> {
    let spec = synth_spec(1, 3);
    let agent = PdqnAgent::new(3, spec.action_spaces[0].clone(), &pdqn_hyper(), &mut crate::seeded_rng(seed));
    let data: Vec<OwnedSample> = batch
        .iter()
        .map(|t| {
            (
                t.observations[0].clone(),
                t.actions[0].clone(),
                t.reward,
                t.next_observations[0].clone(),
                t.done,
            )
        })
        .collect();

    let (_, q_grads) = agent.q_loss(&as_samples(&data)).unwrap();
    let q_point = agent.value_params().values().to_vec();
    let spec_q = spec.clone();
    let data_q = data.clone();
    let q_case = Case {
        name: "pdqn.q_loss",
        point: q_point,
        analytic: q_grads.values().to_vec(),
        eval: Box::new(move |x: &[f64]| {
            let mut probe = PdqnAgent::new(
                3,
                spec_q.action_spaces[0].clone(),
                &pdqn_hyper(),
                &mut crate::seeded_rng(seed),
            );
            probe.value_params_mut().values_mut().copy_from_slice(x);
            probe.q_loss(&as_samples(&data_q)).unwrap().0
        }),
    };

    let (_, mu_grads) = agent.policy_loss(&as_samples(&data)).unwrap();
    let mu_point = agent.policy_params().values().to_vec();
    let mu_case = Case {
        name: "pdqn.policy_loss",
        point: mu_point,
        analytic: mu_grads.values().to_vec(),
        eval: Box::new(move |x: &[f64]| {
            let mut probe = PdqnAgent::new(
                3,
                spec.action_spaces[0].clone(),
                &pdqn_hyper(),
                &mut crate::seeded_rng(seed),
            );
            let fill = probe.policy_params().clone();
            probe.policy_params_mut().values_mut().copy_from_slice(x);
            probe
                .policy_loss_with_fill(&as_samples(&data), &fill)
                .unwrap()
                .0
        }),
    };

    vec![q_case, mu_case]
}

fn mapqn_cases(seed: u64, batch: Vec<JointTransition>) -> Vec<Case> {
    let spec = synth_spec(2, 2);
    let model = MapqnModel::new(&spec, &mapqn_hyper(), &mut crate::seeded_rng(seed));
    let refs: Vec<&JointTransition> = batch.iter().collect();

    let td = model.joint_td_loss(&refs).unwrap();
    let q_len = model.agent(0).value_params().len();
    let mut td_point = Vec::new();
    let mut td_analytic = Vec::new();
    for i in 0..2 {
        td_point.extend_from_slice(model.agent(i).value_params().values());
        td_analytic.extend_from_slice(td.value_grads[i].values());
    }
    td_point.extend_from_slice(&model.mixing().live().flat());
    td_analytic.extend_from_slice(&td.mixing_grads.flat());
    let spec_td = spec.clone();
    let batch_td = batch.clone();
    let td_case = Case {
        name: "mapqn.joint_td_loss",
        point: td_point,
        analytic: td_analytic,
        eval: Box::new(move |x: &[f64]| {
            let mut probe = MapqnModel::new(&spec_td, &mapqn_hyper(), &mut crate::seeded_rng(seed));
            probe
                .agent_mut(0)
                .value_params_mut()
                .values_mut()
                .copy_from_slice(&x[..q_len]);
            probe
                .agent_mut(1)
                .value_params_mut()
                .values_mut()
                .copy_from_slice(&x[q_len..2 * q_len]);
            probe.mixing_mut().live_mut().set_flat(&x[2 * q_len..]);
            let refs: Vec<&JointTransition> = batch_td.iter().collect();
            probe.joint_td_loss(&refs).unwrap().loss
        }),
    };

    let pu = model.policy_update(&refs).unwrap();
    let mu_len = model.agent(0).policy_params().len();
    let mut pu_point = Vec::new();
    let mut pu_analytic = Vec::new();
    for i in 0..2 {
        pu_point.extend_from_slice(model.agent(i).policy_params().values());
        pu_analytic.extend_from_slice(pu.policy_grads[i].values());
    }
    let pu_case = Case {
        name: "mapqn.policy_update",
        point: pu_point,
        analytic: pu_analytic,
        eval: Box::new(move |x: &[f64]| {
            let mut probe = MapqnModel::new(&spec, &mapqn_hyper(), &mut crate::seeded_rng(seed));
            let fills = [
                probe.agent(0).policy_params().clone(),
                probe.agent(1).policy_params().clone(),
            ];
            probe
                .agent_mut(0)
                .policy_params_mut()
                .values_mut()
                .copy_from_slice(&x[..mu_len]);
            probe
                .agent_mut(1)
                .policy_params_mut()
                .values_mut()
                .copy_from_slice(&x[mu_len..]);
            let refs: Vec<&JointTransition> = batch.iter().collect();
            let fill_refs: Vec<&crate::diffcore::mlp::ParamBundle> = fills.iter().collect();
            -probe
                .policy_update_with_fill(&refs, &fill_refs)
                .unwrap()
                .objective
        }),
    };

    vec![td_case, pu_case]
}

fn mahhqn_cases(seed: u64, batch: Vec<JointTransition>) -> Vec<Case> {
    let spec = synth_spec(2, 2);
    let model = MahhqnModel::new(&spec, &mahhqn_hyper(), &mut crate::seeded_rng(seed));
    let refs: Vec<&JointTransition> = batch.iter().collect();

    let hl = model.high_loss(&refs).unwrap();
    let q_len = model.high_q(0).live.len();
    let mut high_point = Vec::new();
    let mut high_analytic = Vec::new();
    for i in 0..2 {
        high_point.extend_from_slice(model.high_q(i).live.values());
        high_analytic.extend_from_slice(hl.q_grads[i].values());
    }
    high_point.extend_from_slice(&model.high_mixing().live().flat());
    high_analytic.extend_from_slice(&hl.mixing_grads.flat());
    let spec_h = spec.clone();
    let batch_h = batch.clone();
    let high_case = Case {
        name: "mahhqn.high_loss",
        point: high_point,
        analytic: high_analytic,
        eval: Box::new(move |x: &[f64]| {
            let mut probe = MahhqnModel::new(&spec_h, &mahhqn_hyper(), &mut crate::seeded_rng(seed));
            probe
                .high_q_mut(0)
                .live
                .values_mut()
                .copy_from_slice(&x[..q_len]);
            probe
                .high_q_mut(1)
                .live
                .values_mut()
                .copy_from_slice(&x[q_len..2 * q_len]);
            probe.high_mixing_mut().live_mut().set_flat(&x[2 * q_len..]);
            let refs: Vec<&JointTransition> = batch_h.iter().collect();
            probe.high_loss(&refs).unwrap().loss
        }),
    };

    let (_, critic_grads) = model.low_critic_loss(0, &refs).unwrap();
    let spec_c = spec.clone();
    let batch_c = batch.clone();
    let critic_case = Case {
        name: "mahhqn.low_critic_loss",
        point: model.low_critic(0).live.values().to_vec(),
        analytic: critic_grads.values().to_vec(),
        eval: Box::new(move |x: &[f64]| {
            let mut probe = MahhqnModel::new(&spec_c, &mahhqn_hyper(), &mut crate::seeded_rng(seed));
            probe.low_critic_mut(0).live.values_mut().copy_from_slice(x);
            let refs: Vec<&JointTransition> = batch_c.iter().collect();
            probe.low_critic_loss(0, &refs).unwrap().0
        }),
    };

    let (_, policy_grads) = model.low_policy_update(0, &refs).unwrap();
    let policy_case = Case {
        name: "mahhqn.low_policy_update",
        point: model.low_policy(0).live.values().to_vec(),
        analytic: policy_grads.values().to_vec(),
        eval: Box::new(move |x: &[f64]| {
            let mut probe = MahhqnModel::new(&spec, &mahhqn_hyper(), &mut crate::seeded_rng(seed));
            probe.low_policy_mut(0).live.values_mut().copy_from_slice(x);
            let refs: Vec<&JointTransition> = batch.iter().collect();
            -probe.low_policy_update(0, &refs).unwrap().0
        }),
    };

    vec![high_case, critic_case, policy_case]
}

/// Runs the whole suite. `fault` flips the sign of one analytic-gradient
/// coordinate of the named loss before comparing, to prove the checker
/// detects and names a corrupted gradient; pass `None` for the real check.
pub fn run_suite(seed: u64, fault: Option<&str>) -> Vec<GradCase> {
    let mut rng = crate::seeded_rng(seed ^ 0x9e37_79b9_7f4a_7c15);
    let single = random_batch(&synth_spec(1, 3), &mut rng, 4);
    let duo = random_batch(&synth_spec(2, 2), &mut rng, 4);

    let mut cases = pdqn_cases(seed, &single);
    cases.extend(mapqn_cases(seed, duo.clone()));
    cases.extend(mahhqn_cases(seed, duo));

    cases
        .into_iter()
        .map(|mut case| {
            if fault == Some(case.name) {
                // Flip the largest coordinate so the corruption is visible
                // even under subsampled probing.
                let worst = crate::hybrid_action::argmax(
                    &case.analytic.iter().map(|a| crate::math::abs(*a)).collect::<Vec<f64>>(),
                );
                case.analytic[worst] = -case.analytic[worst] - 1.0;
            }
            let report = check_gradient(
                &mut case.eval,
                &case.point,
                &case.analytic,
                FD_STEP,
                FD_TOLERANCE,
                Some((MAX_COORDS, 0x5eed_0000 + case.point.len() as u64)),
            );
            GradCase {
                name: case.name,
                report,
            }
        })
        .collect()
}
