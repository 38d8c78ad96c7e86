//! Cooperative multi-agent reinforcement learning over discrete-continuous
//! hybrid action spaces.
//!
//! Every action is a pair `(k, x_k)`: a discrete choice `k` plus a continuous
//! parameter vector `x_k` whose length and bounds depend on `k`. Three
//! algorithm families learn over such spaces:
//!
//! - [`pdqn`] — single-agent parameterized deep Q-learning and the
//!   independent-learner multi-agent baseline built from it.
//! - [`mapqn`] — per-agent P-DQN heads coordinated through a monotonic
//!   state-conditioned mixing network, so the decentralized per-agent argmax
//!   recovers the joint greedy action.
//! - [`mahhqn`] — a two-level hierarchy: a mixing DQN over discrete actions
//!   conditioned on the low-level policies, plus a centralized actor-critic
//!   over the continuous parameters.
//!
//! Supporting modules: [`diffcore`] (a minimal differentiable MLP stack with
//! a finite-difference verification oracle), [`hybrid_action`] (action
//! spaces, bounded squashing, exploration), [`envs`] (two toy environments
//! with exact brute-force/value-iteration oracles), [`replay`] (joint
//! transition storage), and [`gradcheck`] (end-to-end gradient verification
//! of every training loss).
//!
//! The crate is `no_std` (with `alloc`); all file formats, configuration and
//! the CLI live in the companion `hmarl` crate. All numerics are `f64` and
//! every source of randomness is an explicit seeded [`ChaCha12Rng`], so
//! identical inputs give bit-identical results.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod algorithm;
pub mod diffcore;
pub mod envs;
pub mod gradcheck;
pub mod hybrid_action;
pub mod mahhqn;
pub mod mapqn;
pub mod math;
pub mod mixing;
pub mod pdqn;
pub mod replay;
pub mod util;

pub use rand_chacha::ChaCha12Rng;

/// Builds the deterministic RNG used throughout the crate from a `u64` seed.
pub fn seeded_rng(seed: u64) -> ChaCha12Rng {
    use rand::SeedableRng;
    ChaCha12Rng::seed_from_u64(seed)
}
