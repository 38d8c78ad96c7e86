//! Ring-buffer storage for joint transitions with seeded uniform sampling.

use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::envs::EnvSpec;
use crate::hybrid_action::{validate, HybridAction};

/// One joint environment step: global state, per-agent observations and
/// actions, the shared reward, and the successor state.
#[derive(Clone, Debug, PartialEq)]
pub struct JointTransition {
    pub state: Vec<f64>,
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<HybridAction>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub next_observations: Vec<Vec<f64>>,
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ReplayError {
    /// Transition does not match the environment the buffer was built for.
    BadTransition(&'static str),
    /// Fewer stored transitions than the requested batch size.
    InsufficientData { have: usize, want: usize },
}

impl fmt::Display for ReplayError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReplayError::BadTransition(what) => write!(f, "invalid transition: {what}"),
            ReplayError::InsufficientData { have, want } => {
                write!(f, "buffer holds {have} transitions, batch of {want} requested")
            }
        }
    }
}

#[cfg(any(test, feature = "std"))]
impl std::error::Error for ReplayError {}

/// FIFO ring buffer of [`JointTransition`]s.
///
/// Single-writer, single-reader; any cross-thread use must be serialized by
/// the caller.
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<JointTransition>,
    /// Next write position once the buffer is full.
    head: usize,
    /// Total pushes ever, monotone.
    inserted: u64,
    shape: Shape,
}

/// Dims extracted from the environment spec, kept for push-time validation.
#[derive(Clone, Debug)]
struct Shape {
    state_dim: usize,
    obs_dims: Vec<usize>,
    spaces: Vec<crate::hybrid_action::HybridActionSpace>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, spec: &EnvSpec) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            storage: Vec::with_capacity(capacity.min(4096)),
            head: 0,
            inserted: 0,
            shape: Shape {
                state_dim: spec.global_state_dim,
                obs_dims: spec.obs_dims.clone(),
                spaces: spec.action_spaces.clone(),
            },
        }
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    fn check(&self, t: &JointTransition) -> Result<(), ReplayError> {
        let n = self.shape.obs_dims.len();
        if t.state.len() != self.shape.state_dim || t.next_state.len() != self.shape.state_dim {
            return Err(ReplayError::BadTransition("global state dim"));
        }
        if t.observations.len() != n || t.next_observations.len() != n || t.actions.len() != n {
            return Err(ReplayError::BadTransition("agent count"));
        }
        for i in 0..n {
            if t.observations[i].len() != self.shape.obs_dims[i]
                || t.next_observations[i].len() != self.shape.obs_dims[i]
            {
                return Err(ReplayError::BadTransition("observation dim"));
            }
            if validate(&t.actions[i], &self.shape.spaces[i]).is_err() {
                return Err(ReplayError::BadTransition("action invalid for space"));
            }
        }
        if !t.reward.is_finite() {
            return Err(ReplayError::BadTransition("non-finite reward"));
        }
        Ok(())
    }

    /// Appends one transition, evicting the oldest once at capacity.
    pub fn push(&mut self, t: JointTransition) -> Result<(), ReplayError> {
        self.check(&t)?;
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
        self.inserted += 1;
        Ok(())
    }

    pub fn get(&self, index: usize) -> &JointTransition {
        &self.storage[index]
    }

    /// Uniform sample with replacement; seeded RNG makes it reproducible.
    pub fn sample<'a, R: Rng>(
        &'a self,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<&'a JointTransition>, ReplayError> {
        if self.storage.len() < batch_size {
            return Err(ReplayError::InsufficientData {
                have: self.storage.len(),
                want: batch_size,
            });
        }
        Ok((0..batch_size)
            .map(|_| &self.storage[rng.gen_range(0..self.storage.len())])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_env, EnvOverrides};
    use crate::seeded_rng;
    use alloc::vec;

    fn tagged(spec: &EnvSpec, tag: f64) -> JointTransition {
        JointTransition {
            state: vec![0.0; spec.global_state_dim],
            observations: spec.obs_dims.iter().map(|&d| vec![0.0; d]).collect(),
            actions: spec
                .action_spaces
                .iter()
                .map(|_| HybridAction::discrete(0))
                .collect(),
            reward: tag,
            next_state: vec![0.0; spec.global_state_dim],
            next_observations: spec.obs_dims.iter().map(|&d| vec![0.0; d]).collect(),
            done: false,
        }
    }

    fn spec() -> EnvSpec {
        make_env("hybrid_climb", &EnvOverrides::default())
            .unwrap()
            .spec()
            .clone()
    }

    #[test]
    fn fifo_eviction_keeps_the_newest() {
        let spec = spec();
        let mut buf = ReplayBuffer::new(3, &spec);
        for tag in 1..=4 {
            buf.push(tagged(&spec, tag as f64)).unwrap();
        }
        let mut tags: Vec<f64> = (0..3).map(|i| buf.get(i).reward).collect();
        tags.sort_by(f64::total_cmp);
        assert_eq!(tags, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn eviction_order_is_strictly_fifo() {
        let spec = spec();
        let mut buf = ReplayBuffer::new(4, &spec);
        for tag in 0..20 {
            buf.push(tagged(&spec, tag as f64)).unwrap();
            // The oldest surviving tag must always be inserted - capacity + 1.
            let min_tag = (0..buf.len())
                .map(|i| buf.get(i).reward)
                .fold(f64::INFINITY, f64::min);
            let expected_min = (tag as i64 - 3).max(0) as f64;
            assert_eq!(min_tag, expected_min);
        }
    }

    #[test]
    fn push_on_empty_gives_size_one_and_round_trips() {
        let spec = spec();
        let mut buf = ReplayBuffer::new(8, &spec);
        let t = tagged(&spec, 42.0);
        buf.push(t.clone()).unwrap();
        assert_eq!(buf.len(), 1);
        assert_eq!(buf.get(0), &t);
    }

    #[test]
    fn invalid_dims_are_rejected() {
        let spec = spec();
        let mut buf = ReplayBuffer::new(8, &spec);
        let mut bad = tagged(&spec, 0.0);
        bad.state = vec![0.0; 7];
        assert!(matches!(buf.push(bad), Err(ReplayError::BadTransition(_))));
    }

    #[test]
    fn sampling_is_seeded_and_reproducible() {
        let spec = spec();
        let mut buf = ReplayBuffer::new(16, &spec);
        for tag in 0..10 {
            buf.push(tagged(&spec, tag as f64)).unwrap();
        }
        let a: Vec<f64> = buf
            .sample(6, &mut seeded_rng(42))
            .unwrap()
            .iter()
            .map(|t| t.reward)
            .collect();
        let b: Vec<f64> = buf
            .sample(6, &mut seeded_rng(42))
            .unwrap()
            .iter()
            .map(|t| t.reward)
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn underfull_buffer_is_an_error_and_single_element_batch_works() {
        let spec = spec();
        let mut buf = ReplayBuffer::new(8, &spec);
        let mut rng = seeded_rng(0);
        assert!(matches!(
            buf.sample(1, &mut rng),
            Err(ReplayError::InsufficientData { have: 0, want: 1 })
        ));
        buf.push(tagged(&spec, 7.0)).unwrap();
        let batch = buf.sample(1, &mut rng).unwrap();
        assert_eq!(batch[0].reward, 7.0);
    }

    #[test]
    fn uniform_sampling_frequency_within_three_sigma() {
        let spec = spec();
        let mut buf = ReplayBuffer::new(4, &spec);
        for tag in 0..4 {
            buf.push(tagged(&spec, tag as f64)).unwrap();
        }
        let mut rng = seeded_rng(77);
        let n = 10_000usize;
        let mut counts = [0usize; 4];
        for _ in 0..n / 4 {
            for t in buf.sample(4, &mut rng).unwrap() {
                counts[t.reward as usize] += 1;
            }
        }
        let expected = n as f64 * 0.25;
        let sigma = crate::math::sqrt(n as f64 * 0.25 * 0.75);
        for &c in &counts {
            assert!((c as f64 - expected).abs() < 3.0 * sigma);
        }
    }
}
