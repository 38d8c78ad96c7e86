//! Central-finite-difference gradient checking.
//!
//! The checker is the independent oracle for every analytic gradient in this
//! crate: it never calls [`backward`](super::mlp::backward), only repeated
//! forward evaluations of the loss under perturbed parameters.

use alloc::vec::Vec;

use rand::Rng;

use super::mlp::{forward, DiffError, MlpSpec, OutputLoss, ParamBundle};
use crate::math;

/// Outcome of one gradient check.
#[derive(Clone, Debug)]
pub struct FdReport {
    /// Coordinates actually probed (all of them unless subsampled).
    pub checked: usize,
    pub max_rel_err: f64,
    /// Flat index where the worst error occurred.
    pub worst_coord: usize,
    pub step: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// `|a - n| / max(1, |a|, |n|)`: relative for large gradients, absolute for
/// small ones, so true-zero coordinates are not failed on rounding noise.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = math::abs(analytic).max(math::abs(numeric)).max(1.0);
    math::abs(analytic - numeric) / scale
}

/// Compares `analytic` against central differences of `f` at `x`.
///
/// `subsample`, as `(max_coords, seed)`, bounds the number of probed
/// coordinates for large vectors; the choice is drawn from a seeded RNG so
/// reruns probe the same coordinates. Failures are reported, never thrown.
pub fn check_gradient<F>(
    mut f: F,
    x: &[f64],
    analytic: &[f64],
    step: f64,
    tolerance: f64,
    subsample: Option<(usize, u64)>,
) -> FdReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    assert_eq!(x.len(), analytic.len());
    let coords: Vec<usize> = match subsample {
        Some((max_coords, seed)) if x.len() > max_coords => {
            let mut rng = crate::seeded_rng(seed);
            let mut picked = Vec::with_capacity(max_coords);
            // Partial Fisher-Yates over the index set.
            let mut indices: Vec<usize> = (0..x.len()).collect();
            for i in 0..max_coords {
                let j = rng.gen_range(i..indices.len());
                indices.swap(i, j);
                picked.push(indices[i]);
            }
            picked
        }
        _ => (0..x.len()).collect(),
    };

    let mut probe = x.to_vec();
    let mut max_rel_err = 0.0;
    let mut worst_coord = 0;
    for &i in &coords {
        let orig = probe[i];
        probe[i] = orig + step;
        let plus = f(&probe);
        probe[i] = orig - step;
        let minus = f(&probe);
        probe[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let err = relative_error(analytic[i], numeric);
        if err > max_rel_err {
            max_rel_err = err;
            worst_coord = i;
        }
    }
    FdReport {
        checked: coords.len(),
        max_rel_err,
        worst_coord,
        step,
        tolerance,
        passed: max_rel_err < tolerance,
    }
}

/// Checks the analytic parameter gradient of a summed batch loss on one MLP
/// against central differences.
pub fn fd_check(
    spec: &MlpSpec,
    params: &ParamBundle,
    loss: &dyn OutputLoss,
    inputs: &[Vec<f64>],
    step: f64,
    tolerance: f64,
) -> Result<FdReport, DiffError> {
    let (_, analytic) = super::mlp::grad(spec, params, loss, inputs)?;
    let layout = params.layout().clone();
    let eval = |x: &[f64]| -> f64 {
        let p = ParamBundle::from_values(layout.clone(), x.to_vec()).expect("layout fixed");
        let mut total = 0.0;
        for input in inputs {
            let output = forward(spec, &p, input).expect("shapes fixed");
            total += loss.eval(&output).0;
        }
        total
    };
    let subsample = if params.len() > 4096 {
        Some((1024, 0x5eed))
    } else {
        None
    };
    Ok(check_gradient(
        eval,
        params.values(),
        analytic.values(),
        step,
        tolerance,
        subsample,
    ))
}
