//! Monotone mixing of per-agent values into a joint value.
//!
//! A small feedforward combiner turns N per-agent Q values into one scalar:
//! one hidden layer of width M with elu, then a linear readout. Its weights
//! are not trained directly — they are *emitted per sample* by hypernetworks
//! conditioned on a context vector (the global state, optionally extended
//! with low-level policy outputs). The two weight matrices pass through an
//! absolute value, so every path from a per-agent value to the output has a
//! non-negative slope: the joint value is monotone non-decreasing in every
//! per-agent value, and a per-agent argmax is also the joint argmax.
//!
//! Hypernetworks: single affine maps for both weight matrices and the hidden
//! bias, a small two-layer relu net for the output bias.

use alloc::vec;
use alloc::vec::Vec;

use crate::algorithm::{sync_values, Segment, TargetSync, TrainError};
use crate::diffcore::mlp::{
    backward, forward_trace, Activation, MlpSpec, ParamBundle, Trace,
};
use crate::diffcore::optim::{optimizer_step, OptState};
use crate::math;
use crate::pdqn::Net;
use crate::ChaCha12Rng;

/// The four hypernetwork parameter bundles that define one mixing function.
#[derive(Clone, Debug, PartialEq)]
pub struct MixingParams {
    pub w1: ParamBundle,
    pub b1: ParamBundle,
    pub w2: ParamBundle,
    pub b2: ParamBundle,
}

impl MixingParams {
    pub fn total_len(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// All four bundles concatenated (w1, b1, w2, b2), for probes and
    /// finite-difference checks.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_len());
        out.extend_from_slice(self.w1.values());
        out.extend_from_slice(self.b1.values());
        out.extend_from_slice(self.w2.values());
        out.extend_from_slice(self.b2.values());
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        debug_assert_eq!(flat.len(), self.total_len());
        let mut offset = 0;
        for bundle in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            let len = bundle.len();
            bundle.values_mut().copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
    }

    pub fn zeros_like(other: &MixingParams) -> Self {
        MixingParams {
            w1: ParamBundle::zeros_like(&other.w1),
            b1: ParamBundle::zeros_like(&other.b1),
            w2: ParamBundle::zeros_like(&other.w2),
            b2: ParamBundle::zeros_like(&other.b2),
        }
    }

    pub fn add_scaled(&mut self, other: &MixingParams, scale: f64) {
        self.w1.add_scaled(&other.w1, scale);
        self.b1.add_scaled(&other.b1, scale);
        self.w2.add_scaled(&other.w2, scale);
        self.b2.add_scaled(&other.b2, scale);
    }
}

/// Intermediates of one mixing forward pass.
pub struct MixTrace {
    w1_raw: Vec<f64>,
    w1_trace: Trace,
    b1_trace: Trace,
    w2_raw: Vec<f64>,
    w2_trace: Trace,
    b2_trace: Trace,
    z: Vec<f64>,
    h: Vec<f64>,
    q: Vec<f64>,
}

/// Gradients of a scalar through the mixer: hypernetwork parameters plus the
/// per-agent value inputs and the conditioning vector.
pub struct MixGrads {
    pub params: MixingParams,
    pub d_q: Vec<f64>,
    pub d_cond: Vec<f64>,
}

/// Hypernetwork-parameterized monotone combiner with a target copy.
pub struct MixingNetwork {
    n_inputs: usize,
    hidden: usize,
    cond_dim: usize,
    w1_spec: MlpSpec,
    b1_spec: MlpSpec,
    w2_spec: MlpSpec,
    b2_spec: MlpSpec,
    live: MixingParams,
    target: MixingParams,
    opt: [OptState; 4],
}

impl MixingNetwork {
    pub fn new(
        n_inputs: usize,
        hidden: usize,
        cond_dim: usize,
        lr: f64,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        assert!(n_inputs >= 1 && hidden >= 1 && cond_dim >= 1);
        let affine = |out: usize| {
            MlpSpec::new(vec![cond_dim, out], vec![], Activation::Identity)
                .expect("valid hypernet spec")
        };
        let w1_spec = affine(n_inputs * hidden);
        let b1_spec = affine(hidden);
        let w2_spec = affine(hidden);
        let b2_spec = MlpSpec::new(
            vec![cond_dim, hidden, 1],
            vec![Activation::Relu],
            Activation::Identity,
        )
        .expect("valid hypernet spec");
        let live = MixingParams {
            w1: w1_spec.init_params(rng),
            b1: b1_spec.init_params(rng),
            w2: w2_spec.init_params(rng),
            b2: b2_spec.init_params(rng),
        };
        let opt = [
            OptState::adam(lr, live.w1.len()),
            OptState::adam(lr, live.b1.len()),
            OptState::adam(lr, live.w2.len()),
            OptState::adam(lr, live.b2.len()),
        ];
        MixingNetwork {
            n_inputs,
            hidden,
            cond_dim,
            w1_spec,
            b1_spec,
            w2_spec,
            b2_spec,
            target: live.clone(),
            live,
            opt,
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    pub fn live(&self) -> &MixingParams {
        &self.live
    }

    pub fn live_mut(&mut self) -> &mut MixingParams {
        &mut self.live
    }

    pub fn target(&self) -> &MixingParams {
        &self.target
    }

    fn params(&self, net: Net) -> &MixingParams {
        match net {
            Net::Live => &self.live,
            Net::Target => &self.target,
        }
    }

    /// Joint value of the per-agent values under the given conditioning.
    pub fn mix(&self, cond: &[f64], q: &[f64], net: Net) -> Result<f64, TrainError> {
        let (value, _) = self.mix_trace(cond, q, net)?;
        Ok(value)
    }

    fn mix_trace(&self, cond: &[f64], q: &[f64], net: Net) -> Result<(f64, MixTrace), TrainError> {
        if q.len() != self.n_inputs {
            return Err(TrainError::Diff(crate::diffcore::mlp::DiffError::Shape {
                what: "mixing inputs",
                expected: self.n_inputs,
                got: q.len(),
            }));
        }
        let p = self.params(net);
        let (w1_raw, w1_trace) = forward_trace(&self.w1_spec, &p.w1, cond)?;
        let (b1, b1_trace) = forward_trace(&self.b1_spec, &p.b1, cond)?;
        let (w2_raw, w2_trace) = forward_trace(&self.w2_spec, &p.w2, cond)?;
        let (b2, b2_trace) = forward_trace(&self.b2_spec, &p.b2, cond)?;

        let m = self.hidden;
        let mut z = vec![0.0; m];
        let mut h = vec![0.0; m];
        for j in 0..m {
            let mut sum = b1[j];
            for (i, &qi) in q.iter().enumerate() {
                sum += math::abs(w1_raw[i * m + j]) * qi;
            }
            z[j] = sum;
            h[j] = Activation::Elu.apply(sum);
        }
        let mut value = b2[0];
        for j in 0..m {
            value += math::abs(w2_raw[j]) * h[j];
        }
        Ok((
            value,
            MixTrace {
                w1_raw,
                w1_trace,
                b1_trace,
                w2_raw,
                w2_trace,
                b2_trace,
                z,
                h,
                q: q.to_vec(),
            },
        ))
    }

    /// Value plus the gradients of `d_out * value` with respect to the live
    /// hypernetwork parameters, the per-agent inputs, and the conditioning.
    pub fn mix_with_grads(
        &self,
        cond: &[f64],
        q: &[f64],
        d_out: f64,
    ) -> Result<(f64, MixGrads), TrainError> {
        let (value, trace) = self.mix_trace(cond, q, Net::Live)?;
        let grads = self.backward(cond, &trace, d_out)?;
        Ok((value, grads))
    }

    fn backward(&self, _cond: &[f64], t: &MixTrace, d_out: f64) -> Result<MixGrads, TrainError> {
        let m = self.hidden;
        let n = self.n_inputs;
        let p = &self.live;

        // Output layer: value = sum_j |w2_j| h_j + b2.
        let d_b2 = [d_out];
        let (g_b2, d_cond_b2) = backward(&self.b2_spec, &p.b2, &t.b2_trace, &d_b2)?;

        let mut d_w2_raw = vec![0.0; m];
        let mut d_z = vec![0.0; m];
        for j in 0..m {
            d_w2_raw[j] = d_out * t.h[j] * sign(t.w2_raw[j]);
            let d_h = d_out * math::abs(t.w2_raw[j]);
            d_z[j] = d_h * Activation::Elu.derivative(t.z[j], t.h[j]);
        }
        let (g_w2, d_cond_w2) = backward(&self.w2_spec, &p.w2, &t.w2_trace, &d_w2_raw)?;
        let (g_b1, d_cond_b1) = backward(&self.b1_spec, &p.b1, &t.b1_trace, &d_z)?;

        let mut d_w1_raw = vec![0.0; n * m];
        let mut d_q = vec![0.0; n];
        for i in 0..n {
            for j in 0..m {
                let raw = t.w1_raw[i * m + j];
                d_w1_raw[i * m + j] = d_z[j] * t.q[i] * sign(raw);
                d_q[i] += math::abs(raw) * d_z[j];
            }
        }
        let (g_w1, d_cond_w1) = backward(&self.w1_spec, &p.w1, &t.w1_trace, &d_w1_raw)?;

        let mut d_cond = d_cond_b2;
        for (a, b) in d_cond
            .iter_mut()
            .zip(d_cond_w1.iter().zip(d_cond_b1.iter()).zip(d_cond_w2.iter()))
        {
            let ((w1v, b1v), w2v) = b;
            *a += w1v + b1v + w2v;
        }

        Ok(MixGrads {
            params: MixingParams {
                w1: g_w1,
                b1: g_b1,
                w2: g_w2,
                b2: g_b2,
            },
            d_q,
            d_cond,
        })
    }

    /// One optimizer step on the live hypernetworks.
    pub fn apply_step(&mut self, grads: &MixingParams) -> Result<(), TrainError> {
        let bundles = [&grads.w1, &grads.b1, &grads.w2, &grads.b2];
        let mut next = self.live.clone();
        for (idx, (bundle, grad)) in [&mut next.w1, &mut next.b1, &mut next.w2, &mut next.b2]
            .into_iter()
            .zip(bundles)
            .enumerate()
        {
            let (p, s) = optimizer_step(bundle, grad, &self.opt[idx])?;
            *bundle = p;
            self.opt[idx] = s;
        }
        self.live = next;
        Ok(())
    }

    pub fn sync_targets(&mut self, mode: TargetSync) {
        sync_values(self.target.w1.values_mut(), self.live.w1.values(), mode);
        sync_values(self.target.b1.values_mut(), self.live.b1.values(), mode);
        sync_values(self.target.w2.values_mut(), self.live.w2.values(), mode);
        sync_values(self.target.b2.values_mut(), self.live.b2.values(), mode);
    }

    pub fn segments(&self, prefix: &str) -> Vec<Segment> {
        let mut out = Vec::new();
        let names = ["w1", "b1", "w2", "b2"];
        let lives = [&self.live.w1, &self.live.b1, &self.live.w2, &self.live.b2];
        let targets = [
            &self.target.w1,
            &self.target.b1,
            &self.target.w2,
            &self.target.b2,
        ];
        for i in 0..4 {
            crate::pdqn::push_net_segments(
                &mut out,
                prefix,
                names[i],
                lives[i],
                targets[i],
                &self.opt[i],
            );
        }
        out
    }

    pub fn load_segments(&mut self, prefix: &str, segments: &[Segment]) -> Result<(), TrainError> {
        let names = ["w1", "b1", "w2", "b2"];
        for i in 0..4 {
            let (live, target) = match i {
                0 => (&mut self.live.w1, &mut self.target.w1),
                1 => (&mut self.live.b1, &mut self.target.b1),
                2 => (&mut self.live.w2, &mut self.target.w2),
                _ => (&mut self.live.b2, &mut self.target.b2),
            };
            crate::pdqn::load_net_segments(segments, prefix, names[i], live, target, &mut self.opt[i])?;
        }
        Ok(())
    }

    /// Builds the all-ones-readout parameters used by the "sum of inputs"
    /// construction in tests: hypernets emit constant weights, the hidden
    /// layer stays in the linear elu regime for non-negative inputs.
    pub fn make_identity_sum(&mut self) {
        for bundle in [&mut self.live.w1, &mut self.live.b1, &mut self.live.w2, &mut self.live.b2]
        {
            bundle.values_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        // hyper_w1 constant output 1 for the first hidden unit's row entries:
        // biases of the affine map are the constant weight matrix.
        let m = self.hidden;
        {
            let seg = self.live.w1.layout().segs()[0];
            let values = self.live.w1.values_mut();
            for i in 0..self.n_inputs {
                values[seg.b_offset + i * m] = 1.0;
            }
        }
        // hyper_w2 constant output: first hidden unit feeds the output with
        // weight 1.
        {
            let seg = self.live.w2.layout().segs()[0];
            self.live.w2.values_mut()[seg.b_offset] = 1.0;
        }
        self.target = self.live.clone();
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::fd::check_gradient;
    use crate::seeded_rng;
    use rand::Rng as _;

    fn network(seed: u64, n: usize, hidden: usize, cond: usize) -> MixingNetwork {
        MixingNetwork::new(n, hidden, cond, 1e-3, &mut seeded_rng(seed))
    }

    #[test]
    fn identity_sum_construction_adds_inputs() {
        let mut net = network(0, 2, 4, 3);
        net.make_identity_sum();
        let cond = [0.2, -0.4, 0.9];
        let got = net.mix(&cond, &[1.0, 2.0], Net::Live).unwrap();
        assert!((got - 3.0).abs() < 1e-12, "{got}");
    }

    #[test]
    fn zero_biases_and_zero_inputs_give_zero() {
        let mut net = network(1, 3, 4, 2);
        for bundle in [
            &mut net.live.w1,
            &mut net.live.b1,
            &mut net.live.w2,
            &mut net.live.b2,
        ] {
            // Keep weights, zero every bias, so zero conditioning emits zero
            // hyper-outputs and zero q propagates to zero.
            let segs: Vec<_> = bundle.layout().segs().to_vec();
            for seg in segs {
                for v in &mut bundle.values_mut()[seg.b_offset..seg.b_offset + seg.out_dim] {
                    *v = 0.0;
                }
            }
        }
        let got = net.mix(&[0.0, 0.0], &[0.0, 0.0, 0.0], Net::Live).unwrap();
        assert_eq!(got, 0.0);
    }

    #[test]
    fn numeric_monotonicity_in_every_input() {
        let mut rng = seeded_rng(7);
        for trial in 0..200 {
            let n = rng.gen_range(2..5usize);
            let net = network(1000 + trial, n, 8, 4);
            let cond: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let q: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let h = 1e-6;
            for i in 0..n {
                let mut plus = q.clone();
                plus[i] += h;
                let mut minus = q.clone();
                minus[i] -= h;
                let d = (net.mix(&cond, &plus, Net::Live).unwrap()
                    - net.mix(&cond, &minus, Net::Live).unwrap())
                    / (2.0 * h);
                assert!(d >= -1e-8, "trial {trial}, input {i}: slope {d}");
            }
        }
    }

    #[test]
    fn analytic_input_gradient_matches_finite_differences() {
        let net = network(3, 3, 8, 4);
        let mut rng = seeded_rng(4);
        let cond: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let q: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, grads) = net.mix_with_grads(&cond, &q, 1.0).unwrap();
        let eval = |x: &[f64]| net.mix(&cond, x, Net::Live).unwrap();
        let report = check_gradient(eval, &q, &grads.d_q, 1e-6, 1e-6, None);
        assert!(report.passed, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn analytic_hyper_gradient_matches_finite_differences() {
        let net = network(5, 2, 6, 3);
        let mut rng = seeded_rng(6);
        let cond: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let q: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, grads) = net.mix_with_grads(&cond, &q, 1.0).unwrap();
        let flat = net.live().flat();
        let analytic = grads.params.flat();
        let mut probe = network(5, 2, 6, 3);
        let eval = move |x: &[f64]| {
            probe.live_mut().set_flat(x);
            probe.mix(&cond, &q, Net::Live).unwrap()
        };
        let report = check_gradient(eval, &flat, &analytic, 1e-5, 1e-4, None);
        assert!(report.passed, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn conditioning_gradient_matches_finite_differences() {
        let net = network(8, 2, 5, 4);
        let mut rng = seeded_rng(9);
        let cond: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let q: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, grads) = net.mix_with_grads(&cond, &q, 1.0).unwrap();
        let eval = |x: &[f64]| net.mix(x, &q, Net::Live).unwrap();
        let report = check_gradient(eval, &cond, &grads.d_cond, 1e-5, 1e-4, None);
        assert!(report.passed, "max rel err {}", report.max_rel_err);
    }
}
