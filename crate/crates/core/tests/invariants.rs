//! Property tests for the structural invariants: parameter-layout round
//! trips, squashing staying inside bounds, exploration outputs always
//! validating, and buffer FIFO order.

use hmarl_core::diffcore::mlp::{Activation, MlpSpec, ParamBundle};
use hmarl_core::hybrid_action::{
    argmax, epsilon_greedy, perturb, squash, validate, Bounds, ExploreParams, HybridAction,
    HybridActionSpace, NoiseKind, NoiseState,
};
use hmarl_core::seeded_rng;
use proptest::prelude::*;

fn arb_spec() -> impl Strategy<Value = MlpSpec> {
    (
        prop::collection::vec(1usize..6, 2..5),
        prop::sample::select(vec![Activation::Identity, Activation::Relu, Activation::Tanh, Activation::Elu]),
        prop::sample::select(vec![Activation::Identity, Activation::Tanh]),
    )
        .prop_map(|(widths, hidden_act, out_act)| {
            let hidden = vec![hidden_act; widths.len() - 2];
            MlpSpec::new(widths, hidden, out_act).unwrap()
        })
}

fn arb_bounds() -> impl Strategy<Value = Bounds> {
    (-5.0f64..5.0, 0.01f64..5.0).prop_map(|(low, width)| Bounds::new(low, low + width).unwrap())
}

proptest! {
    #[test]
    fn flatten_unflatten_round_trip_is_identity(spec in arb_spec(), seed in any::<u64>()) {
        let mut rng = seeded_rng(seed);
        let params = spec.init_params(&mut rng);
        // Flatten, rebuild from the flat vector, compare per-layer views.
        let rebuilt = ParamBundle::from_values(spec.layout(), params.values().to_vec()).unwrap();
        prop_assert_eq!(params.values(), rebuilt.values());
        for layer in 0..spec.layers() {
            prop_assert_eq!(params.weights(layer), rebuilt.weights(layer));
            prop_assert_eq!(params.biases(layer), rebuilt.biases(layer));
        }
        // And the layout segments tile the vector exactly.
        let total: usize = spec
            .layout()
            .segs()
            .iter()
            .map(|s| s.in_dim * s.out_dim + s.out_dim)
            .sum();
        prop_assert_eq!(total, params.len());
    }

    #[test]
    fn squash_stays_strictly_inside_and_is_monotone(
        bounds in prop::collection::vec(arb_bounds(), 1..5),
        raw in prop::collection::vec(-10.0f64..10.0, 1..5),
        bump in 1e-6f64..1.0,
    ) {
        let n = bounds.len().min(raw.len());
        let bounds = &bounds[..n];
        let raw = &raw[..n];
        let x = squash(raw, bounds);
        for (xi, b) in x.iter().zip(bounds.iter()) {
            prop_assert!(*xi > b.low && *xi < b.high);
        }
        // Monotone per coordinate.
        let mut bigger = raw.to_vec();
        bigger[0] += bump;
        let y = squash(&bigger, bounds);
        prop_assert!(y[0] > x[0]);
    }

    #[test]
    fn squash_and_perturb_outputs_always_validate(
        raw in prop::collection::vec(-10.0f64..10.0, 2..4),
        sigma in 0.0f64..3.0,
        seed in any::<u64>(),
        ou in any::<bool>(),
    ) {
        let space = HybridActionSpace::from_ranges(&[
            &[(-1.0, 1.0), (0.0, 3.0)],
            &[(-2.0, -1.0)],
            &[],
        ]).unwrap();
        let k = (seed % 3) as usize;
        let dims = space.param_dim(k);
        let x = squash(&raw[..dims], space.bounds(k));
        prop_assert_eq!(validate(&HybridAction::new(k, x.clone()), &space), Ok(()));

        let mut rng = seeded_rng(seed);
        let mut state = NoiseState::new(dims);
        let explore = ExploreParams {
            epsilon: 0.0,
            sigma,
            noise: if ou { NoiseKind::OrnsteinUhlenbeck } else { NoiseKind::Gaussian },
            ou_theta: 0.15,
        };
        let perturbed = perturb(&x, &explore, space.bounds(k), &mut rng, &mut state);
        prop_assert_eq!(validate(&HybridAction::new(k, perturbed), &space), Ok(()));
    }

    #[test]
    fn greedy_selection_is_a_pure_function_of_q(
        q in prop::collection::vec(-10.0f64..10.0, 1..8),
        seed_a in any::<u64>(),
        seed_b in any::<u64>(),
    ) {
        let a = epsilon_greedy(&q, 0.0, &mut seeded_rng(seed_a)).unwrap();
        let b = epsilon_greedy(&q, 0.0, &mut seeded_rng(seed_b)).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(a, argmax(&q));
        // Lowest index on ties.
        prop_assert!(q[..a].iter().all(|&v| v < q[a]));
    }
}

#[test]
fn no_sampled_element_was_evicted() {
    use hmarl_core::envs::{make_env, EnvOverrides};
    use hmarl_core::replay::{JointTransition, ReplayBuffer};

    let env = make_env("hybrid_climb", &EnvOverrides::default()).unwrap();
    let spec = env.spec().clone();
    let mut buf = ReplayBuffer::new(16, &spec);
    let mut rng = seeded_rng(5);
    for tag in 0..200u64 {
        buf.push(JointTransition {
            state: vec![0.0],
            observations: vec![vec![0.0], vec![0.0]],
            actions: vec![HybridAction::discrete(0), HybridAction::discrete(0)],
            reward: tag as f64,
            next_state: vec![0.0],
            next_observations: vec![vec![0.0], vec![0.0]],
            done: false,
        })
        .unwrap();
        if buf.len() >= 8 {
            for t in buf.sample(8, &mut rng).unwrap() {
                // Everything sampled must still be among the newest 16 tags.
                assert!(t.reward as u64 + 16 > tag, "evicted tag {} at {}", t.reward, tag);
            }
        }
    }
}
