//! Dense feed-forward networks over flat parameter vectors.
//!
//! A network is `widths[0] -> widths[1] -> ... -> widths.last()`, each arrow
//! an affine layer followed by an activation. Parameters live in one flat
//! `Vec<f64>` laid out layer by layer (row-major weights, then biases), so
//! optimizers, target copies, checkpoints and finite-difference probes all
//! operate on plain slices.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::math;

/// Element-wise activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    /// `z` for positive inputs, `exp(z) - 1` otherwise. Smooth first
    /// derivative, which keeps finite-difference checks clean.
    Elu,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Tanh => math::tanh(z),
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    math::exp(z) - 1.0
                }
            }
        }
    }

    /// Derivative at pre-activation `z`, given `y = apply(z)`.
    pub fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Elu => "elu",
        };
        f.write_str(name)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DiffError {
    /// Input, output or parameter length does not match the spec.
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    /// Spec invariant violated at construction.
    BadSpec(&'static str),
    /// A forward pass produced a non-finite value in the given layer.
    NonFinite { layer: usize },
}

impl fmt::Display for DiffError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiffError::Shape {
                what,
                expected,
                got,
            } => write!(f, "shape mismatch for {what}: expected {expected}, got {got}"),
            DiffError::BadSpec(msg) => write!(f, "invalid network spec: {msg}"),
            DiffError::NonFinite { layer } => {
                write!(f, "non-finite intermediate in layer {layer}")
            }
        }
    }
}

#[cfg(any(test, feature = "std"))]
impl std::error::Error for DiffError {}

/// Shape of a dense network.
///
/// `widths` lists the input width followed by every layer's output width, so
/// `widths.len() - 1` affine layers. `hidden` holds one activation per layer
/// except the last, which uses `output` (restricted to identity or tanh).
#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    widths: Vec<usize>,
    hidden: Vec<Activation>,
    output: Activation,
}

impl MlpSpec {
    pub fn new(
        widths: Vec<usize>,
        hidden: Vec<Activation>,
        output: Activation,
    ) -> Result<Self, DiffError> {
        if widths.len() < 2 {
            return Err(DiffError::BadSpec("need an input width and at least one layer"));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(DiffError::BadSpec("all widths must be >= 1"));
        }
        if hidden.len() != widths.len() - 2 {
            return Err(DiffError::BadSpec(
                "hidden activation count must be layer count - 1",
            ));
        }
        if !matches!(output, Activation::Identity | Activation::Tanh) {
            return Err(DiffError::BadSpec("output activation must be identity or tanh"));
        }
        Ok(MlpSpec {
            widths,
            hidden,
            output,
        })
    }

    /// `input -> hidden[0] -> ... -> output` with one activation for every
    /// hidden layer.
    pub fn with_hidden(
        input: usize,
        hidden_widths: &[usize],
        output_width: usize,
        hidden_act: Activation,
        output_act: Activation,
    ) -> Result<Self, DiffError> {
        let mut widths = Vec::with_capacity(hidden_widths.len() + 2);
        widths.push(input);
        widths.extend_from_slice(hidden_widths);
        widths.push(output_width);
        Self::new(widths, vec![hidden_act; hidden_widths.len()], output_act)
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Number of affine layers.
    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers() {
            self.output
        } else {
            self.hidden[layer]
        }
    }

    pub fn layout(&self) -> ParamLayout {
        let mut segs = Vec::with_capacity(self.layers());
        let mut offset = 0;
        for l in 0..self.layers() {
            let in_dim = self.widths[l];
            let out_dim = self.widths[l + 1];
            segs.push(LayerSeg {
                in_dim,
                out_dim,
                w_offset: offset,
                b_offset: offset + in_dim * out_dim,
            });
            offset += in_dim * out_dim + out_dim;
        }
        ParamLayout { segs, total: offset }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }

    /// Fresh parameters, every entry uniform in `±1/sqrt(fan_in)` of its
    /// layer. Biases use the same range as weights so that a network fed an
    /// all-zero input still has non-zero activations to learn from.
    pub fn init_params<R: Rng>(&self, rng: &mut R) -> ParamBundle {
        let layout = self.layout();
        let mut values = vec![0.0; layout.total];
        for seg in &layout.segs {
            let bound = 1.0 / math::sqrt(seg.in_dim as f64);
            for v in &mut values[seg.w_offset..seg.b_offset + seg.out_dim] {
                *v = rng.gen_range(-bound..bound);
            }
        }
        ParamBundle { layout, values }
    }

    pub fn zero_params(&self) -> ParamBundle {
        let layout = self.layout();
        let values = vec![0.0; layout.total];
        ParamBundle { layout, values }
    }
}

/// Where one layer's weights and biases sit in the flat vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSeg {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Start of the row-major `(out_dim, in_dim)` weight block.
    pub w_offset: usize,
    /// Start of the `out_dim` bias block.
    pub b_offset: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    segs: Vec<LayerSeg>,
    total: usize,
}

impl ParamLayout {
    pub fn segs(&self) -> &[LayerSeg] {
        &self.segs
    }

    pub fn total(&self) -> usize {
        self.total
    }
}

/// All weights and biases of one network as a flat vector plus its layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamBundle {
    layout: ParamLayout,
    values: Vec<f64>,
}

impl ParamBundle {
    /// Wraps an existing flat vector; the length must match the layout.
    pub fn from_values(layout: ParamLayout, values: Vec<f64>) -> Result<Self, DiffError> {
        if values.len() != layout.total {
            return Err(DiffError::Shape {
                what: "parameter vector",
                expected: layout.total,
                got: values.len(),
            });
        }
        Ok(ParamBundle { layout, values })
    }

    pub fn zeros_like(other: &ParamBundle) -> ParamBundle {
        ParamBundle {
            layout: other.layout.clone(),
            values: vec![0.0; other.values.len()],
        }
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Row-major `(out_dim, in_dim)` weight block of one layer.
    pub fn weights(&self, layer: usize) -> &[f64] {
        let seg = self.layout.segs[layer];
        &self.values[seg.w_offset..seg.b_offset]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        let seg = self.layout.segs[layer];
        &self.values[seg.b_offset..seg.b_offset + seg.out_dim]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Element-wise `self + scale * other`.
    pub fn add_scaled(&mut self, other: &ParamBundle, scale: f64) {
        debug_assert_eq!(self.values.len(), other.values.len());
        for (a, b) in self.values.iter_mut().zip(other.values.iter()) {
            *a += scale * b;
        }
    }
}

/// Cached intermediates of one forward pass, enough to backpropagate.
#[derive(Clone, Debug)]
pub struct Trace {
    input: Vec<f64>,
    /// Pre-activation of each layer.
    pre: Vec<Vec<f64>>,
    /// Post-activation of each layer; the last entry is the output.
    post: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.post.last().unwrap()
    }
}

fn check_input(spec: &MlpSpec, params: &ParamBundle, input: &[f64]) -> Result<(), DiffError> {
    if input.len() != spec.input_dim() {
        return Err(DiffError::Shape {
            what: "network input",
            expected: spec.input_dim(),
            got: input.len(),
        });
    }
    if params.len() != spec.param_count() {
        return Err(DiffError::Shape {
            what: "parameter vector",
            expected: spec.param_count(),
            got: params.len(),
        });
    }
    Ok(())
}

/// Plain forward pass.
pub fn forward(spec: &MlpSpec, params: &ParamBundle, input: &[f64]) -> Result<Vec<f64>, DiffError> {
    let (out, _) = forward_trace(spec, params, input)?;
    Ok(out)
}

/// Forward pass that also returns the per-layer intermediates needed by
/// [`backward`].
pub fn forward_trace(
    spec: &MlpSpec,
    params: &ParamBundle,
    input: &[f64],
) -> Result<(Vec<f64>, Trace), DiffError> {
    check_input(spec, params, input)?;
    let layers = spec.layers();
    let mut pre = Vec::with_capacity(layers);
    let mut post = Vec::with_capacity(layers);
    let mut current: &[f64] = input;
    for l in 0..layers {
        let seg = spec.layout().segs[l];
        let w = params.weights(l);
        let b = params.biases(l);
        let act = spec.activation(l);
        let mut z = vec![0.0; seg.out_dim];
        let mut y = vec![0.0; seg.out_dim];
        for o in 0..seg.out_dim {
            let row = &w[o * seg.in_dim..(o + 1) * seg.in_dim];
            let mut sum = b[o];
            for (wi, xi) in row.iter().zip(current.iter()) {
                sum += wi * xi;
            }
            if !sum.is_finite() {
                return Err(DiffError::NonFinite { layer: l });
            }
            z[o] = sum;
            y[o] = act.apply(sum);
        }
        pre.push(z);
        post.push(y);
        current = post.last().unwrap();
    }
    let output = post.last().unwrap().clone();
    Ok((
        output,
        Trace {
            input: input.to_vec(),
            pre,
            post,
        },
    ))
}

/// Reverse-mode pass. Given `d_output = dL/d(output)`, returns the exact
/// gradient of `L` with respect to every parameter, plus `dL/d(input)` so
/// networks can be chained (critics differentiated through their action
/// inputs, policies through their outputs).
pub fn backward(
    spec: &MlpSpec,
    params: &ParamBundle,
    trace: &Trace,
    d_output: &[f64],
) -> Result<(ParamBundle, Vec<f64>), DiffError> {
    if d_output.len() != spec.output_dim() {
        return Err(DiffError::Shape {
            what: "output gradient",
            expected: spec.output_dim(),
            got: d_output.len(),
        });
    }
    let mut grads = ParamBundle::zeros_like(params);
    let mut d_post = d_output.to_vec();
    for l in (0..spec.layers()).rev() {
        let seg = spec.layout().segs[l];
        let act = spec.activation(l);
        let z = &trace.pre[l];
        let y = &trace.post[l];
        let layer_input: &[f64] = if l == 0 { &trace.input } else { &trace.post[l - 1] };

        // dL/dz = dL/dy * act'(z)
        let mut d_z = vec![0.0; seg.out_dim];
        for o in 0..seg.out_dim {
            d_z[o] = d_post[o] * act.derivative(z[o], y[o]);
        }

        let w = params.weights(l);
        let mut d_input = vec![0.0; seg.in_dim];
        {
            let gv = grads.values_mut();
            for o in 0..seg.out_dim {
                let dz = d_z[o];
                gv[seg.b_offset + o] += dz;
                let w_row = seg.w_offset + o * seg.in_dim;
                for i in 0..seg.in_dim {
                    gv[w_row + i] += dz * layer_input[i];
                    d_input[i] += w[o * seg.in_dim + i] * dz;
                }
            }
        }
        d_post = d_input;
    }
    Ok((grads, d_post))
}

/// A scalar loss over one network output: value plus `dL/d(output)`.
pub trait OutputLoss {
    fn eval(&self, output: &[f64]) -> (f64, Vec<f64>);
}

impl<F> OutputLoss for F
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    fn eval(&self, output: &[f64]) -> (f64, Vec<f64>) {
        self(output)
    }
}

/// Loss and exact parameter gradient over an input batch. Per-sample losses
/// are summed; fold any `1/batch` normalization into the loss itself.
pub fn grad(
    spec: &MlpSpec,
    params: &ParamBundle,
    loss: &dyn OutputLoss,
    inputs: &[Vec<f64>],
) -> Result<(f64, ParamBundle), DiffError> {
    let mut total = 0.0;
    let mut grads = ParamBundle::zeros_like(params);
    for input in inputs {
        let (output, trace) = forward_trace(spec, params, input)?;
        let (value, d_output) = loss.eval(&output);
        let (g, _) = backward(spec, params, &trace, &d_output)?;
        total += value;
        grads.add_scaled(&g, 1.0);
    }
    Ok((total, grads))
}
