//! Discrete-continuous hybrid action spaces.
//!
//! An action is a discrete choice `k` together with a continuous parameter
//! vector whose length and per-coordinate bounds depend on `k` (possibly
//! empty — a bare discrete action). This module owns validation, the bounded
//! squashing that maps unbounded network outputs into an action's box, and
//! the exploration machinery (epsilon-greedy over `k`, Gaussian or
//! Ornstein-Uhlenbeck noise over the parameters).

use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::math;

/// Closed interval for one parameter coordinate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds {
    pub low: f64,
    pub high: f64,
}

impl Bounds {
    pub fn new(low: f64, high: f64) -> Result<Self, SpaceError> {
        if !(low < high) || !low.is_finite() || !high.is_finite() {
            return Err(SpaceError::BadBounds { low, high });
        }
        Ok(Bounds { low, high })
    }

    pub fn width(&self) -> f64 {
        self.high - self.low
    }

    pub fn midpoint(&self) -> f64 {
        self.low + 0.5 * self.width()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.low && x <= self.high
    }

    pub fn clamp(&self, x: f64) -> f64 {
        math::clamp(x, self.low, self.high)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SpaceError {
    Empty,
    BadBounds { low: f64, high: f64 },
}

impl fmt::Display for SpaceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpaceError::Empty => write!(f, "action space needs at least one discrete action"),
            SpaceError::BadBounds { low, high } => {
                write!(f, "bounds must be finite with low < high, got [{low}, {high}]")
            }
        }
    }
}

#[cfg(any(test, feature = "std"))]
impl std::error::Error for SpaceError {}

/// The set of `K` discrete actions and each one's continuous parameter box.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridActionSpace {
    /// `param_bounds[k]` lists the bounds of action `k`'s parameters; an
    /// empty list means a parameterless action.
    param_bounds: Vec<Vec<Bounds>>,
}

impl HybridActionSpace {
    pub fn new(param_bounds: Vec<Vec<Bounds>>) -> Result<Self, SpaceError> {
        if param_bounds.is_empty() {
            return Err(SpaceError::Empty);
        }
        Ok(HybridActionSpace { param_bounds })
    }

    /// Convenience constructor from `(low, high)` pairs.
    pub fn from_ranges(ranges: &[&[(f64, f64)]]) -> Result<Self, SpaceError> {
        let mut param_bounds = Vec::with_capacity(ranges.len());
        for action in ranges {
            let mut bounds = Vec::with_capacity(action.len());
            for &(low, high) in *action {
                bounds.push(Bounds::new(low, high)?);
            }
            param_bounds.push(bounds);
        }
        Self::new(param_bounds)
    }

    /// Number of discrete actions.
    pub fn discrete_count(&self) -> usize {
        self.param_bounds.len()
    }

    pub fn param_dim(&self, k: usize) -> usize {
        self.param_bounds[k].len()
    }

    pub fn bounds(&self, k: usize) -> &[Bounds] {
        &self.param_bounds[k]
    }

    /// Largest parameter dimension over all discrete actions.
    pub fn max_param_dim(&self) -> usize {
        self.param_bounds.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Total parameter dimension summed over all discrete actions: the width
    /// of an "all parameters concatenated" vector.
    pub fn total_param_dim(&self) -> usize {
        self.param_bounds.iter().map(Vec::len).sum()
    }

    /// Offset of action `k`'s block inside the concatenated parameter vector.
    pub fn block_offset(&self, k: usize) -> usize {
        self.param_bounds[..k].iter().map(Vec::len).sum()
    }

    /// Bounds of the concatenated parameter vector, block by block.
    pub fn flat_bounds(&self) -> Vec<Bounds> {
        self.param_bounds.iter().flatten().copied().collect()
    }
}

/// One chosen action: discrete index plus its parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridAction {
    pub k: usize,
    pub params: Vec<f64>,
}

impl HybridAction {
    pub fn new(k: usize, params: Vec<f64>) -> Self {
        HybridAction { k, params }
    }

    /// A parameterless discrete action.
    pub fn discrete(k: usize) -> Self {
        HybridAction {
            k,
            params: Vec::new(),
        }
    }
}

/// First violation found when checking an action against a space.
#[derive(Clone, Debug, PartialEq)]
pub enum ActionViolation {
    IndexOutOfRange { k: usize, discrete_count: usize },
    DimMismatch { k: usize, expected: usize, got: usize },
    BoundViolation { coord: usize, value: f64, low: f64, high: f64 },
}

impl fmt::Display for ActionViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionViolation::IndexOutOfRange { k, discrete_count } => {
                write!(f, "discrete index {k} out of range [0, {discrete_count})")
            }
            ActionViolation::DimMismatch { k, expected, got } => {
                write!(f, "action {k} expects {expected} parameters, got {got}")
            }
            ActionViolation::BoundViolation {
                coord,
                value,
                low,
                high,
            } => write!(f, "coordinate {coord} = {value} outside [{low}, {high}]"),
        }
    }
}

#[cfg(any(test, feature = "std"))]
impl std::error::Error for ActionViolation {}

/// Accepts iff the index is in range, the parameter count matches, and every
/// coordinate lies within its bounds.
pub fn validate(action: &HybridAction, space: &HybridActionSpace) -> Result<(), ActionViolation> {
    let count = space.discrete_count();
    if action.k >= count {
        return Err(ActionViolation::IndexOutOfRange {
            k: action.k,
            discrete_count: count,
        });
    }
    let bounds = space.bounds(action.k);
    if action.params.len() != bounds.len() {
        return Err(ActionViolation::DimMismatch {
            k: action.k,
            expected: bounds.len(),
            got: action.params.len(),
        });
    }
    for (coord, (&value, b)) in action.params.iter().zip(bounds.iter()).enumerate() {
        if !b.contains(value) {
            return Err(ActionViolation::BoundViolation {
                coord,
                value,
                low: b.low,
                high: b.high,
            });
        }
    }
    Ok(())
}

/// Maps `t` in `[-1, 1]` affinely into the bounds: `low + (high-low)*(t+1)/2`.
pub fn affine_from_unit(unit: &[f64], bounds: &[Bounds]) -> Vec<f64> {
    debug_assert_eq!(unit.len(), bounds.len());
    unit.iter()
        .zip(bounds.iter())
        .map(|(&t, b)| b.low + b.width() * (t + 1.0) * 0.5)
        .collect()
}

/// Derivative of [`affine_from_unit`] per coordinate: `(high-low)/2`.
pub fn affine_from_unit_derivative(bounds: &[Bounds]) -> Vec<f64> {
    bounds.iter().map(|b| b.width() * 0.5).collect()
}

/// Squashes unbounded values into the bounds:
/// `x_i = low_i + (high_i - low_i) * (tanh(raw_i) + 1) / 2`.
/// Strictly inside `(low, high)` for finite inputs and monotone per
/// coordinate.
pub fn squash(raw: &[f64], bounds: &[Bounds]) -> Vec<f64> {
    debug_assert_eq!(raw.len(), bounds.len());
    let unit: Vec<f64> = raw.iter().map(|&r| math::tanh(r)).collect();
    affine_from_unit(&unit, bounds)
}

/// Epsilon-greedy selection over the discrete values: argmax with
/// probability `1 - epsilon` (lowest index on ties), otherwise uniform.
pub fn epsilon_greedy<R: Rng>(q: &[f64], epsilon: f64, rng: &mut R) -> Result<usize, SpaceError> {
    if q.is_empty() {
        return Err(SpaceError::Empty);
    }
    debug_assert!((0.0..=1.0).contains(&epsilon));
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return Ok(rng.gen_range(0..q.len()));
    }
    Ok(argmax(q))
}

/// Index of the maximum, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Linear interpolation from `start` to `end` over `decay_steps`, constant
/// afterwards.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl LinearSchedule {
    pub fn constant(value: f64) -> Self {
        LinearSchedule {
            start: value,
            end: value,
            decay_steps: 0,
        }
    }

    pub fn value(&self, step: u64) -> f64 {
        if self.decay_steps == 0 || step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseKind {
    Gaussian,
    OrnsteinUhlenbeck,
}

/// Exploration knobs: epsilon over the discrete choice, noise over the
/// continuous parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ExplorationConfig {
    pub epsilon: LinearSchedule,
    pub noise: NoiseKind,
    pub sigma: LinearSchedule,
    /// Mean-reversion rate when `noise` is Ornstein-Uhlenbeck.
    pub ou_theta: f64,
}

impl ExplorationConfig {
    /// No exploration at all; useful for greedy evaluation.
    pub fn greedy() -> Self {
        ExplorationConfig {
            epsilon: LinearSchedule::constant(0.0),
            noise: NoiseKind::Gaussian,
            sigma: LinearSchedule::constant(0.0),
            ou_theta: 0.15,
        }
    }
}

/// Exploration values resolved at one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExploreParams {
    pub epsilon: f64,
    pub sigma: f64,
    pub noise: NoiseKind,
    pub ou_theta: f64,
}

impl ExploreParams {
    pub fn greedy() -> Self {
        ExploreParams {
            epsilon: 0.0,
            sigma: 0.0,
            noise: NoiseKind::Gaussian,
            ou_theta: 0.15,
        }
    }

    pub fn at(cfg: &ExplorationConfig, step: u64) -> Self {
        ExploreParams {
            epsilon: cfg.epsilon.value(step),
            sigma: cfg.sigma.value(step),
            noise: cfg.noise,
            ou_theta: cfg.ou_theta,
        }
    }
}

/// Ornstein-Uhlenbeck integrator state, one slot per parameter coordinate.
/// Owned by a single actor loop; reset at episode boundaries.
#[derive(Clone, Debug, Default)]
pub struct NoiseState {
    ou: Vec<f64>,
}

impl NoiseState {
    pub fn new(dim: usize) -> Self {
        NoiseState {
            ou: alloc::vec![0.0; dim],
        }
    }

    pub fn reset(&mut self) {
        self.ou.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Adds exploration noise and clamps back into the bounds. `sigma == 0`
/// returns the input unchanged and leaves the RNG untouched.
pub fn perturb<R: Rng>(
    x: &[f64],
    explore: &ExploreParams,
    bounds: &[Bounds],
    rng: &mut R,
    state: &mut NoiseState,
) -> Vec<f64> {
    debug_assert_eq!(x.len(), bounds.len());
    if explore.sigma == 0.0 || x.is_empty() {
        return x.to_vec();
    }
    if state.ou.len() < x.len() {
        state.ou.resize(x.len(), 0.0);
    }
    let mut out = Vec::with_capacity(x.len());
    for (i, (&xi, b)) in x.iter().zip(bounds.iter()).enumerate() {
        let draw = explore.sigma * math::standard_normal(rng);
        let noise = match explore.noise {
            NoiseKind::Gaussian => draw,
            NoiseKind::OrnsteinUhlenbeck => {
                let n = state.ou[i] + explore.ou_theta * (0.0 - state.ou[i]) + draw;
                state.ou[i] = n;
                n
            }
        };
        out.push(b.clamp(xi + noise));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use alloc::vec;

    /// Four discrete actions shaped like a robot-soccer interface: a kick
    /// with planar target in [-1,1]^2 plus speed in [0,3], two movement
    /// actions with planar targets, and a parameterless intercept.
    fn soccer_space() -> HybridActionSpace {
        HybridActionSpace::from_ranges(&[
            &[(-1.0, 1.0), (-1.0, 1.0), (0.0, 3.0)],
            &[(-1.0, 1.0), (-1.0, 1.0)],
            &[(-1.0, 1.0), (-1.0, 1.0)],
            &[],
        ])
        .unwrap()
    }

    #[test]
    fn in_range_kick_is_accepted() {
        let space = soccer_space();
        let a = HybridAction::new(0, vec![0.5, 0.5, 2.0]);
        assert_eq!(validate(&a, &space), Ok(()));
    }

    #[test]
    fn overspeed_kick_is_rejected_at_coordinate_two() {
        let space = soccer_space();
        let a = HybridAction::new(0, vec![0.5, 0.5, 3.5]);
        assert_eq!(
            validate(&a, &space),
            Err(ActionViolation::BoundViolation {
                coord: 2,
                value: 3.5,
                low: 0.0,
                high: 3.0,
            })
        );
    }

    #[test]
    fn parameterless_action_with_empty_params_is_ok() {
        let space = soccer_space();
        assert_eq!(validate(&HybridAction::discrete(3), &space), Ok(()));
    }

    #[test]
    fn index_and_dim_violations() {
        let space = soccer_space();
        assert!(matches!(
            validate(&HybridAction::discrete(4), &space),
            Err(ActionViolation::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            validate(&HybridAction::new(1, vec![0.0]), &space),
            Err(ActionViolation::DimMismatch { expected: 2, got: 1, .. })
        ));
    }

    #[test]
    fn squash_of_zero_is_the_midpoint() {
        let b = vec![Bounds::new(-1.0, 1.0).unwrap()];
        assert_eq!(squash(&[0.0], &b), vec![0.0]);
    }

    #[test]
    fn squash_approaches_high_in_the_large_raw_limit() {
        let b = vec![Bounds::new(-1.0, 1.0).unwrap()];
        // Strictly inside for moderate raw values; the limit rounds onto the
        // boundary once tanh saturates in f64.
        let x = squash(&[5.0], &b)[0];
        assert!(x < 1.0 && x > 1.0 - 1e-3);
        assert_eq!(squash(&[1e3], &b)[0], 1.0);
    }

    #[test]
    fn squash_evaluates_the_mapping_formula() {
        // raw 1, bounds [0,3] -> 3*(tanh(1)+1)/2 = 2.6423912124...
        let b = vec![Bounds::new(0.0, 3.0).unwrap()];
        let got = squash(&[1.0], &b)[0];
        let want = 3.0 * (math::tanh(1.0) + 1.0) / 2.0;
        assert!((got - want).abs() < 1e-12);
        assert!((got - 2.642391).abs() < 1e-6);
    }

    #[test]
    fn greedy_picks_argmax_and_breaks_ties_low() {
        let mut rng = seeded_rng(0);
        assert_eq!(epsilon_greedy(&[1.0, 3.0, 2.0], 0.0, &mut rng).unwrap(), 1);
        assert_eq!(epsilon_greedy(&[2.0, 2.0], 0.0, &mut rng).unwrap(), 0);
    }

    #[test]
    fn empty_q_is_rejected() {
        let mut rng = seeded_rng(0);
        assert_eq!(epsilon_greedy(&[], 0.5, &mut rng), Err(SpaceError::Empty));
    }

    #[test]
    fn full_exploration_is_uniform_within_three_sigma() {
        let mut rng = seeded_rng(1234);
        let q = [0.0, 0.0, 0.0, 0.0];
        let n = 10_000usize;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[epsilon_greedy(&q, 1.0, &mut rng).unwrap()] += 1;
        }
        // Binomial(n, 1/4): sigma = sqrt(n*p*(1-p)).
        let expected = n as f64 * 0.25;
        let sigma = math::sqrt(n as f64 * 0.25 * 0.75);
        for (k, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - expected).abs() < 3.0 * sigma,
                "bin {k}: {c} vs {expected} +- {sigma}"
            );
        }
    }

    #[test]
    fn zero_sigma_perturb_is_identity() {
        let mut rng = seeded_rng(2);
        let b = vec![Bounds::new(-1.0, 1.0).unwrap(); 3];
        let x = vec![0.1, -0.5, 0.9];
        let mut state = NoiseState::new(3);
        let explore = ExploreParams {
            sigma: 0.0,
            ..ExploreParams::greedy()
        };
        assert_eq!(perturb(&x, &explore, &b, &mut rng, &mut state), x);
    }

    #[test]
    fn perturbed_actions_stay_within_bounds() {
        let mut rng = seeded_rng(3);
        let b = vec![Bounds::new(0.0, 3.0).unwrap(), Bounds::new(-1.0, 1.0).unwrap()];
        let mut state = NoiseState::new(2);
        for kind in [NoiseKind::Gaussian, NoiseKind::OrnsteinUhlenbeck] {
            let explore = ExploreParams {
                sigma: 5.0,
                noise: kind,
                ..ExploreParams::greedy()
            };
            for _ in 0..200 {
                let out = perturb(&[2.9, -0.95], &explore, &b, &mut rng, &mut state);
                assert!(b[0].contains(out[0]));
                assert!(b[1].contains(out[1]));
            }
        }
    }

    #[test]
    fn gaussian_noise_is_centered_on_the_input() {
        let mut rng = seeded_rng(99);
        let b = vec![Bounds::new(-10.0, 10.0).unwrap()];
        let mut state = NoiseState::new(1);
        let sigma = 0.1;
        let explore = ExploreParams {
            sigma,
            ..ExploreParams::greedy()
        };
        let n = 10_000usize;
        let x = 0.3;
        let mean: f64 = (0..n)
            .map(|_| perturb(&[x], &explore, &b, &mut rng, &mut state)[0])
            .sum::<f64>()
            / n as f64;
        let tol = 3.0 * sigma / math::sqrt(n as f64);
        assert!((mean - x).abs() < tol, "mean {mean} vs {x} +- {tol}");
    }

    #[test]
    fn schedule_interpolates_then_holds() {
        let s = LinearSchedule {
            start: 1.0,
            end: 0.0,
            decay_steps: 10,
        };
        assert_eq!(s.value(0), 1.0);
        assert!((s.value(5) - 0.5).abs() < 1e-12);
        assert_eq!(s.value(10), 0.0);
        assert_eq!(s.value(1000), 0.0);
    }
}
