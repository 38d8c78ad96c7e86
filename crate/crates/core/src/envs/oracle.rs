//! Exact optima for the toy environments.
//!
//! The built-in games become finite MDPs by discretizing continuous
//! parameters onto per-dimension grids and, for the multi-step game, agent
//! positions onto a square lattice. Finite-horizon value iteration (backward
//! induction) then yields the optimal expected return, the ground truth that
//! learning runs are judged against.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use super::catch_target::{self, CatchTarget};
use super::hybrid_climb::HybridClimb;
use super::{Env, EnvOverrides};
use crate::hybrid_action::HybridAction;
use crate::math;

/// A finite, deterministic MDP with indexed states and joint actions.
pub trait FiniteMdp {
    fn num_states(&self) -> usize;
    fn num_actions(&self) -> usize;
    /// `(next_state, reward, done)`.
    fn step(&self, state: usize, action: usize) -> (usize, f64, bool);
    /// Initial-state distribution as `(state, weight)` pairs; weights sum to 1.
    fn initial_states(&self) -> Vec<(usize, f64)>;
}

#[derive(Clone, Debug, PartialEq)]
pub enum OracleError {
    UnknownEnv(alloc::string::String),
    /// states x actions x horizon exceeds the configured node budget.
    BudgetExceeded { nodes: u128, budget: u128 },
    BadConfig(&'static str),
}

impl fmt::Display for OracleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleError::UnknownEnv(name) => write!(f, "no oracle for environment '{name}'"),
            OracleError::BudgetExceeded { nodes, budget } => {
                write!(f, "search needs {nodes} nodes, budget is {budget}")
            }
            OracleError::BadConfig(msg) => write!(f, "bad oracle config: {msg}"),
        }
    }
}

#[cfg(any(test, feature = "std"))]
impl std::error::Error for OracleError {}

/// Oracle resolution and limits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleConfig {
    /// Grid points per continuous action dimension.
    pub action_grid: usize,
    /// Lattice points per position axis (multi-step games only).
    pub lattice: usize,
    /// Discount applied by the oracle. The learning metrics report
    /// undiscounted episode returns, so comparisons use 1.0.
    pub gamma: f64,
    /// Overrides the environment horizon when set.
    pub horizon: Option<u64>,
    /// Early-stop threshold on the value-iteration sweep delta.
    pub tol: f64,
    /// Refuse configurations whose states x actions x horizon exceed this.
    pub node_budget: u128,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            action_grid: 5,
            lattice: 9,
            gamma: 1.0,
            horizon: None,
            tol: 1e-6,
            node_budget: 2_000_000_000,
        }
    }
}

/// Evenly spaced grid over `[low, high]` with `g >= 2` points, endpoints
/// included.
pub fn grid_points(low: f64, high: f64, g: usize) -> Vec<f64> {
    debug_assert!(g >= 2);
    (0..g)
        .map(|i| low + (high - low) * i as f64 / (g - 1) as f64)
        .collect()
}

/// Backward induction over `horizon` sweeps:
/// `V_{t+1}(s) = max_a [ r(s,a) + gamma * (1-done) * V_t(s') ]`.
/// Stops early once a sweep changes no state by more than `tol`. Returns the
/// value of every state at the full horizon.
pub fn finite_horizon_values(
    mdp: &dyn FiniteMdp,
    gamma: f64,
    horizon: u64,
    tol: f64,
) -> Vec<f64> {
    let n = mdp.num_states();
    let a = mdp.num_actions();
    let mut values = vec![0.0; n];
    let mut next = vec![0.0; n];
    for _ in 0..horizon {
        let mut delta: f64 = 0.0;
        for s in 0..n {
            let mut best = f64::NEG_INFINITY;
            for action in 0..a {
                let (s2, r, done) = mdp.step(s, action);
                let q = r + if done { 0.0 } else { gamma * values[s2] };
                if q > best {
                    best = q;
                }
            }
            next[s] = best;
            delta = delta.max(math::abs(best - values[s]));
        }
        core::mem::swap(&mut values, &mut next);
        if delta < tol {
            break;
        }
    }
    values
}

/// Optimal expected return: horizon-step values averaged over the initial
/// distribution.
pub fn optimal_expected_return(
    mdp: &dyn FiniteMdp,
    gamma: f64,
    horizon: u64,
    tol: f64,
    budget: u128,
) -> Result<f64, OracleError> {
    let nodes =
        mdp.num_states() as u128 * mdp.num_actions() as u128 * horizon.max(1) as u128;
    if nodes > budget {
        return Err(OracleError::BudgetExceeded { nodes, budget });
    }
    let values = finite_horizon_values(mdp, gamma, horizon, tol);
    Ok(mdp
        .initial_states()
        .iter()
        .map(|&(s, w)| w * values[s])
        .sum())
}

/// Optimal expected return of a built-in environment under the given
/// discretization.
pub fn oracle_value(
    name: &str,
    overrides: &EnvOverrides,
    cfg: &OracleConfig,
) -> Result<f64, OracleError> {
    if cfg.action_grid < 2 {
        return Err(OracleError::BadConfig("action grid needs at least 2 points"));
    }
    match name {
        "hybrid_climb" => {
            let mdp = HybridClimbMdp::new(cfg.action_grid);
            let horizon = cfg.horizon.unwrap_or(1);
            optimal_expected_return(&mdp, cfg.gamma, horizon, cfg.tol, cfg.node_budget)
        }
        "catch_target" => {
            if cfg.lattice < 2 {
                return Err(OracleError::BadConfig("lattice needs at least 2 points"));
            }
            let env = CatchTarget::new(overrides);
            let horizon = cfg.horizon.unwrap_or(env.spec().horizon);
            let mdp = CatchTargetMdp::new(&env, cfg.lattice, cfg.action_grid);
            optimal_expected_return(&mdp, cfg.gamma, horizon, cfg.tol, cfg.node_budget)
        }
        other => Err(OracleError::UnknownEnv(alloc::string::String::from(other))),
    }
}

/// The one-step game as an exhaustive joint search: one state, every joint
/// combination of discrete choices and gridded parameters as one action.
pub struct HybridClimbMdp {
    /// Per-agent options: A, then B at each grid point.
    options: Vec<HybridAction>,
}

impl HybridClimbMdp {
    pub fn new(action_grid: usize) -> Self {
        let mut options = vec![HybridAction::discrete(0)];
        for x in grid_points(-1.0, 1.0, action_grid) {
            options.push(HybridAction::new(1, vec![x]));
        }
        HybridClimbMdp { options }
    }
}

impl FiniteMdp for HybridClimbMdp {
    fn num_states(&self) -> usize {
        1
    }

    fn num_actions(&self) -> usize {
        self.options.len() * self.options.len()
    }

    fn step(&self, _state: usize, action: usize) -> (usize, f64, bool) {
        let a0 = &self.options[action / self.options.len()];
        let a1 = &self.options[action % self.options.len()];
        let joint = [a0.clone(), a1.clone()];
        (0, HybridClimb::reward(&joint), true)
    }

    fn initial_states(&self) -> Vec<(usize, f64)> {
        vec![(0, 1.0)]
    }
}

/// The pursuit game on a position lattice.
///
/// Each agent's position snaps to an `L x L` lattice over the square; moves
/// displace by gridded deltas and snap to the nearest lattice point (ties
/// round away from zero). A state is the pair of agent cells; the target is
/// a fixed parameter. Per-agent actions are every gridded move plus the tag.
pub struct CatchTargetMdp {
    lattice: usize,
    tag_radius: f64,
    /// Distance from each cell to the target.
    dist: Vec<f64>,
    /// `next_cell[action * cells + cell]` after one per-agent action.
    next_cell: Vec<usize>,
    per_agent_actions: usize,
    /// Index of the tag action within the per-agent action list.
    tag_action: usize,
}

impl CatchTargetMdp {
    pub fn new(env: &CatchTarget, lattice: usize, action_grid: usize) -> Self {
        let coords = grid_points(-1.0, 1.0, lattice);
        let spacing = 2.0 / (lattice - 1) as f64;
        let cells = lattice * lattice;
        let target = env.target();

        let mut dist = Vec::with_capacity(cells);
        for iy in 0..lattice {
            for ix in 0..lattice {
                dist.push(math::hypot(coords[ix] - target.0, coords[iy] - target.1));
            }
        }

        let deltas = grid_points(-catch_target::MOVE_LIMIT, catch_target::MOVE_LIMIT, action_grid);
        let per_agent_actions = deltas.len() * deltas.len() + 1;
        let tag_action = per_agent_actions - 1;
        let snap = |x: f64| -> usize {
            let idx = libm::round((x + 1.0) / spacing);
            math::clamp(idx, 0.0, (lattice - 1) as f64) as usize
        };
        let mut next_cell = vec![0usize; per_agent_actions * cells];
        for (a, (dy, dx)) in deltas
            .iter()
            .flat_map(|dy| deltas.iter().map(move |dx| (*dy, *dx)))
            .enumerate()
        {
            for iy in 0..lattice {
                for ix in 0..lattice {
                    let cell = iy * lattice + ix;
                    let nx = snap(math::clamp(coords[ix] + dx, -1.0, 1.0));
                    let ny = snap(math::clamp(coords[iy] + dy, -1.0, 1.0));
                    next_cell[a * cells + cell] = ny * lattice + nx;
                }
            }
        }
        // Tag leaves the position unchanged.
        for cell in 0..cells {
            next_cell[tag_action * cells + cell] = cell;
        }

        CatchTargetMdp {
            lattice,
            tag_radius: env.tag_radius(),
            dist,
            next_cell,
            per_agent_actions,
            tag_action,
        }
    }

    fn cells(&self) -> usize {
        self.lattice * self.lattice
    }
}

impl FiniteMdp for CatchTargetMdp {
    fn num_states(&self) -> usize {
        self.cells() * self.cells()
    }

    fn num_actions(&self) -> usize {
        self.per_agent_actions * self.per_agent_actions
    }

    fn step(&self, state: usize, action: usize) -> (usize, f64, bool) {
        let cells = self.cells();
        let (c0, c1) = (state / cells, state % cells);
        let (a0, a1) = (action / self.per_agent_actions, action % self.per_agent_actions);
        let n0 = self.next_cell[a0 * cells + c0];
        let n1 = self.next_cell[a1 * cells + c1];
        let mean_dist = 0.5 * (self.dist[n0] + self.dist[n1]);
        let caught = a0 == self.tag_action
            && a1 == self.tag_action
            && self.dist[n0] <= self.tag_radius
            && self.dist[n1] <= self.tag_radius;
        let reward = if caught {
            catch_target::TAG_BONUS - mean_dist
        } else {
            -mean_dist
        };
        (n0 * cells + n1, reward, caught)
    }

    /// Uniform over every pair of lattice cells, mirroring the uniform
    /// continuous start positions.
    fn initial_states(&self) -> Vec<(usize, f64)> {
        let n = self.num_states();
        let w = 1.0 / n as f64;
        (0..n).map(|s| (s, w)).collect()
    }
}


/// Value-iteration result for the default pursuit configuration (lattice 9,
/// action grid 5, undiscounted, horizon 25), pinned after one oracle run.
/// Learning targets in the acceptance suite are stated relative to this.
pub const CATCH_TARGET_DEFAULT_ORACLE: f64 = 3.249092402512;

#[cfg(test)]
mod pinned {
    use super::*;

    #[test]
    fn default_pursuit_value_matches_the_pinned_constant() {
        let v = oracle_value(
            "catch_target",
            &EnvOverrides::default(),
            &OracleConfig::default(),
        )
        .unwrap();
        assert!(
            (v - CATCH_TARGET_DEFAULT_ORACLE).abs() < 1e-9,
            "oracle drifted: {v:.12}"
        );
    }
}
