//! Fixed-topology multilayer perceptrons with hand-written reverse mode.
//!
//! Parameters live in a [`ParameterSet`] of named row-major arrays; layer `l`
//! owns `layer{l}.weight` with shape `(input_size, output_size)` and
//! `layer{l}.bias` with shape `(output_size)`. Batches are flat row-major
//! buffers of shape `(batch, width)`.

use std::collections::HashSet;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("network needs at least one layer")]
    Empty,
    #[error("layer {layer} has a zero-sized dimension")]
    ZeroSize { layer: usize },
    #[error("layer {layer} expects {expected} inputs but layer {prev} produces {found}", prev = layer - 1)]
    LayerMismatch {
        layer: usize,
        expected: usize,
        found: usize,
    },
    #[error("dimension mismatch for {what}: expected {expected}, got {found}")]
    Dimension {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("parameter set does not match: {0}")]
    Parameters(String),
    #[error("tape does not match this network: {0}")]
    Tape(String),
    #[error("non-finite gradient in `{name}`")]
    NonFiniteGradient { name: String },
    #[error("tau must lie in [0, 1], got {0}")]
    Tau(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(T::zero()),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Tanh => T::one() - y * y,
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Identity => T::one(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_size: usize,
    pub output_size: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input_size: usize, output_size: usize, activation: Activation) -> Self {
        Self {
            input_size,
            output_size,
            activation,
        }
    }
}

/// A named real-valued array with its shape.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> NamedArray<T> {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<T>) -> Result<Self, NnError> {
        let name = name.into();
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(NnError::Parameters(format!(
                "`{name}` has shape {shape:?} but {} values",
                data.len()
            )));
        }
        Ok(Self { name, shape, data })
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            data: vec![T::zero(); len],
        }
    }
}

/// Ordered collection of uniquely named arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<T> {
    arrays: Vec<NamedArray<T>>,
}

impl<T: Scalar> ParameterSet<T> {
    pub fn new(arrays: Vec<NamedArray<T>>) -> Result<Self, NnError> {
        let mut seen = HashSet::new();
        for a in &arrays {
            if !seen.insert(a.name.as_str()) {
                return Err(NnError::Parameters(format!("duplicate name `{}`", a.name)));
            }
        }
        Ok(Self { arrays })
    }

    pub fn arrays(&self) -> &[NamedArray<T>] {
        &self.arrays
    }

    pub fn arrays_mut(&mut self) -> &mut [NamedArray<T>] {
        &mut self.arrays
    }

    pub fn get(&self, name: &str) -> Option<&NamedArray<T>> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut NamedArray<T>> {
        self.arrays.iter_mut().find(|a| a.name == name)
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    /// Total number of scalar values.
    pub fn num_values(&self) -> usize {
        self.arrays.iter().map(|a| a.data.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            arrays: self
                .arrays
                .iter()
                .map(|a| NamedArray::zeros(a.name.clone(), a.shape.clone()))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.arrays
            .iter()
            .all(|a| a.data.iter().all(|v| v.is_finite()))
    }

    /// Same names and shapes in the same order.
    pub fn same_layout(&self, other: &Self) -> bool {
        self.arrays.len() == other.arrays.len()
            && self
                .arrays
                .iter()
                .zip(&other.arrays)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    fn check_layout(&self, other: &Self, what: &str) -> Result<(), NnError> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(NnError::Parameters(format!("{what}: names or shapes differ")))
        }
    }

    /// Element-wise `self += other`.
    pub fn accumulate(&mut self, other: &Self) -> Result<(), NnError> {
        self.check_layout(other, "accumulate")?;
        for (a, b) in self.arrays.iter_mut().zip(&other.arrays) {
            axpy(&mut a.data, T::one(), &b.data);
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for a in &mut self.arrays {
            a.data.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

/// Strided read-only matrix view.
#[derive(Debug, Clone, Copy)]
struct View<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    row_stride: usize,
    col_stride: usize,
}

impl<'a, T> View<'a, T> {
    fn row_major(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
        }
    }

    fn t(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
            data: self.data,
        }
    }

    fn in_bounds(&self) -> bool {
        self.rows == 0
            || self.cols == 0
            || (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride < self.data.len()
    }
}

/// `c = a b + beta c` with `c` row-major.
fn gemm<T: Scalar>(a: View<'_, T>, b: View<'_, T>, beta: T, c: &mut [T]) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    assert_eq!(c.len(), a.rows * b.cols, "output buffer size");
    assert!(a.in_bounds() && b.in_bounds(), "matrix view out of bounds");
    if c.is_empty() {
        return;
    }
    // SAFETY: the asserts above keep every addressed element inside its
    // slice, and `c` is a unique borrow distinct from `a` and `b`.
    unsafe {
        T::gemm(
            a.rows,
            a.cols,
            b.cols,
            T::one(),
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            b.cols as isize,
            1,
        );
    }
}

/// `y += a * x`.
#[inline]
fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Cached activations of one forward pass, consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    batch: usize,
    /// `values[0]` is the input, `values[l + 1]` the output of layer `l`.
    values: Vec<Vec<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn input(&self) -> &[T] {
        &self.values[0]
    }

    /// Final-layer output, `(batch, output_size)` row-major.
    pub fn output(&self) -> &[T] {
        self.values.last().expect("tape has at least the input")
    }

    pub fn into_output(mut self) -> Vec<T> {
        self.values.pop().expect("tape has at least the input")
    }
}

/// Gradients of a scalar objective with respect to parameters and inputs.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub params: ParameterSet<T>,
    /// `(batch, input_size)` row-major.
    pub input: Vec<T>,
}

/// Network topology. Parameters are kept separately so that online and
/// target copies share one topology.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    specs: Vec<LayerSpec>,
}

impl Mlp {
    pub fn new(specs: Vec<LayerSpec>) -> Result<Self, NnError> {
        if specs.is_empty() {
            return Err(NnError::Empty);
        }
        for (layer, s) in specs.iter().enumerate() {
            if s.input_size == 0 || s.output_size == 0 {
                return Err(NnError::ZeroSize { layer });
            }
            if layer > 0 && specs[layer - 1].output_size != s.input_size {
                return Err(NnError::LayerMismatch {
                    layer,
                    expected: s.input_size,
                    found: specs[layer - 1].output_size,
                });
            }
        }
        Ok(Self { specs })
    }

    /// `input -> hidden... -> output` with one activation for the hidden
    /// layers and another for the output layer.
    pub fn stack(
        input: usize,
        hidden: &[usize],
        output: usize,
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Result<Self, NnError> {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        let last = widths.len() - 2;
        let specs = widths
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let act = if l == last {
                    output_activation
                } else {
                    hidden_activation
                };
                LayerSpec::new(w[0], w[1], act)
            })
            .collect();
        Self::new(specs)
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn input_size(&self) -> usize {
        self.specs[0].input_size
    }

    pub fn output_size(&self) -> usize {
        self.specs[self.specs.len() - 1].output_size
    }

    pub fn weight_name(layer: usize) -> String {
        format!("layer{layer}.weight")
    }

    pub fn bias_name(layer: usize) -> String {
        format!("layer{layer}.bias")
    }

    /// Weights uniform in `±1/sqrt(input_size)`, biases zero.
    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> ParameterSet<T> {
        let mut arrays = Vec::with_capacity(2 * self.specs.len());
        for (l, s) in self.specs.iter().enumerate() {
            let bound = 1.0 / (s.input_size as f64).sqrt();
            let weights = (0..s.input_size * s.output_size)
                .map(|_| T::of(rng.random_range(-bound..bound)))
                .collect();
            arrays.push(NamedArray {
                name: Self::weight_name(l),
                shape: vec![s.input_size, s.output_size],
                data: weights,
            });
            arrays.push(NamedArray::zeros(Self::bias_name(l), vec![s.output_size]));
        }
        ParameterSet { arrays }
    }

    /// Checks that `params` holds exactly this network's arrays.
    pub fn check_params<T: Scalar>(&self, params: &ParameterSet<T>) -> Result<(), NnError> {
        if params.arrays.len() != 2 * self.specs.len() {
            return Err(NnError::Parameters(format!(
                "expected {} arrays, found {}",
                2 * self.specs.len(),
                params.arrays.len()
            )));
        }
        for (l, s) in self.specs.iter().enumerate() {
            let w = &params.arrays[2 * l];
            let b = &params.arrays[2 * l + 1];
            if w.name != Self::weight_name(l) || w.shape != [s.input_size, s.output_size] {
                return Err(NnError::Parameters(format!(
                    "`{}` {:?} does not match layer {l} ({}x{})",
                    w.name, w.shape, s.input_size, s.output_size
                )));
            }
            if b.name != Self::bias_name(l) || b.shape != [s.output_size] {
                return Err(NnError::Parameters(format!(
                    "`{}` {:?} does not match layer {l} bias ({})",
                    b.name, b.shape, s.output_size
                )));
            }
        }
        Ok(())
    }

    /// Single-sample forward pass.
    pub fn forward<T: Scalar>(
        &self,
        params: &ParameterSet<T>,
        input: &[T],
    ) -> Result<(Vec<T>, Tape<T>), NnError> {
        let tape = self.forward_batch(params, input, 1)?;
        Ok((tape.output().to_vec(), tape))
    }

    /// Forward pass over `batch` rows of `inputs`.
    pub fn forward_batch<T: Scalar>(
        &self,
        params: &ParameterSet<T>,
        inputs: &[T],
        batch: usize,
    ) -> Result<Tape<T>, NnError> {
        self.check_params(params)?;
        let expected = batch * self.input_size();
        if inputs.len() != expected || batch == 0 {
            return Err(NnError::Dimension {
                what: "input".into(),
                expected,
                found: inputs.len(),
            });
        }
        let mut values = Vec::with_capacity(self.specs.len() + 1);
        values.push(inputs.to_vec());
        for (l, s) in self.specs.iter().enumerate() {
            let w = &params.arrays[2 * l].data;
            let bias = &params.arrays[2 * l + 1].data;
            let x = &values[l];
            let mut out = Vec::with_capacity(batch * s.output_size);
            for _ in 0..batch {
                out.extend_from_slice(bias);
            }
            gemm(
                View::row_major(x, batch, s.input_size),
                View::row_major(w, s.input_size, s.output_size),
                T::one(),
                &mut out,
            );
            if s.activation != Activation::Identity {
                out.iter_mut().for_each(|v| *v = s.activation.apply(*v));
            }
            values.push(out);
        }
        Ok(Tape { batch, values })
    }

    fn check_tape<T: Scalar>(&self, tape: &Tape<T>, d_output: &[T]) -> Result<(), NnError> {
        if tape.values.len() != self.specs.len() + 1 {
            return Err(NnError::Tape(format!(
                "{} cached layers for a {}-layer network",
                tape.values.len().saturating_sub(1),
                self.specs.len()
            )));
        }
        if tape.values[0].len() != tape.batch * self.input_size() {
            return Err(NnError::Tape("input width differs".into()));
        }
        for (l, s) in self.specs.iter().enumerate() {
            if tape.values[l + 1].len() != tape.batch * s.output_size {
                return Err(NnError::Tape(format!("layer {l} width differs")));
            }
        }
        let expected = tape.batch * self.output_size();
        if d_output.len() != expected {
            return Err(NnError::Dimension {
                what: "output gradient".into(),
                expected,
                found: d_output.len(),
            });
        }
        Ok(())
    }

    /// Reverse pass. `d_output` is the gradient of the objective with respect
    /// to the batch output; parameter gradients are summed over the batch.
    pub fn backward<T: Scalar>(
        &self,
        params: &ParameterSet<T>,
        tape: &Tape<T>,
        d_output: &[T],
    ) -> Result<ParameterSet<T>, NnError> {
        self.check_params(params)?;
        self.check_tape(tape, d_output)?;
        let mut grads = params.zeros_like();
        self.reverse(params, tape, d_output, Some(&mut grads), None);
        Ok(grads)
    }

    /// Parameter gradients plus the gradient with respect to every input.
    pub fn backward_with_input<T: Scalar>(
        &self,
        params: &ParameterSet<T>,
        tape: &Tape<T>,
        d_output: &[T],
    ) -> Result<Gradients<T>, NnError> {
        self.check_params(params)?;
        self.check_tape(tape, d_output)?;
        let mut grads = params.zeros_like();
        let input = self.reverse(params, tape, d_output, Some(&mut grads), Some(0..self.input_size()));
        Ok(Gradients {
            params: grads,
            input,
        })
    }

    /// Gradient with respect to the input columns in `columns`, returned as
    /// `(batch, columns.len())` row-major. Parameter gradients are skipped.
    pub fn input_gradient<T: Scalar>(
        &self,
        params: &ParameterSet<T>,
        tape: &Tape<T>,
        d_output: &[T],
        columns: Range<usize>,
    ) -> Result<Vec<T>, NnError> {
        self.check_params(params)?;
        self.check_tape(tape, d_output)?;
        if columns.start > columns.end || columns.end > self.input_size() {
            return Err(NnError::Dimension {
                what: "input gradient columns".into(),
                expected: self.input_size(),
                found: columns.end,
            });
        }
        Ok(self.reverse(params, tape, d_output, None, Some(columns)))
    }

    fn reverse<T: Scalar>(
        &self,
        params: &ParameterSet<T>,
        tape: &Tape<T>,
        d_output: &[T],
        mut grads: Option<&mut ParameterSet<T>>,
        input_columns: Option<Range<usize>>,
    ) -> Vec<T> {
        let mut delta = d_output.to_vec();
        for (l, s) in self.specs.iter().enumerate().rev() {
            let y = &tape.values[l + 1];
            if s.activation != Activation::Identity {
                for (d, &yv) in delta.iter_mut().zip(y) {
                    *d *= s.activation.derivative_from_output(yv);
                }
            }
            let x = &tape.values[l];
            let w = &params.arrays[2 * l].data;
            if let Some(g) = grads.as_deref_mut() {
                let (gw, gb) = g.arrays.split_at_mut(2 * l + 1);
                for d in delta.chunks_exact(s.output_size) {
                    axpy(&mut gb[0].data, T::one(), d);
                }
                gemm(
                    View::row_major(x, tape.batch, s.input_size).t(),
                    View::row_major(&delta, tape.batch, s.output_size),
                    T::one(),
                    &mut gw[2 * l].data,
                );
            }
            let columns = if l > 0 {
                0..s.input_size
            } else {
                match &input_columns {
                    Some(c) => c.clone(),
                    None => return Vec::new(),
                }
            };
            let width = columns.len();
            let mut d_in = vec![T::zero(); tape.batch * width];
            let rows = &w[columns.start * s.output_size..columns.end * s.output_size];
            gemm(
                View::row_major(&delta, tape.batch, s.output_size),
                View::row_major(rows, width, s.output_size).t(),
                T::zero(),
                &mut d_in,
            );
            delta = d_in;
        }
        delta
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig<T> {
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Scalar> Default for AdamConfig<T> {
    fn default() -> Self {
        Self {
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            epsilon: T::of(1e-8),
        }
    }
}

/// Adam moments for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub first_moment: ParameterSet<T>,
    pub second_moment: ParameterSet<T>,
    pub step: u64,
    pub config: AdamConfig<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParameterSet<T>) -> Self {
        Self::with_config(params, AdamConfig::default())
    }

    pub fn with_config(params: &ParameterSet<T>, config: AdamConfig<T>) -> Self {
        Self {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
            config,
        }
    }
}

/// One bias-corrected Adam step that descends `grads`.
///
/// Nothing is modified when a gradient is non-finite or the layouts differ.
pub fn adam_step<T: Scalar>(
    params: &mut ParameterSet<T>,
    grads: &ParameterSet<T>,
    opt: &mut AdamState<T>,
    learning_rate: T,
) -> Result<(), NnError> {
    params.check_layout(grads, "gradients")?;
    params.check_layout(&opt.first_moment, "adam first moment")?;
    params.check_layout(&opt.second_moment, "adam second moment")?;
    if let Some(bad) = grads
        .arrays
        .iter()
        .find(|a| a.data.iter().any(|v| !v.is_finite()))
    {
        return Err(NnError::NonFiniteGradient {
            name: bad.name.clone(),
        });
    }
    let AdamConfig {
        beta1,
        beta2,
        epsilon,
    } = opt.config;
    opt.step += 1;
    let t = opt.step.min(i32::MAX as u64) as i32;
    let correction1 = T::one() - beta1.powi(t);
    let correction2 = T::one() - beta2.powi(t);
    let one = T::one();
    for (((p, g), m), v) in params
        .arrays
        .iter_mut()
        .zip(&grads.arrays)
        .zip(&mut opt.first_moment.arrays)
        .zip(&mut opt.second_moment.arrays)
    {
        for (((pv, &gv), mv), vv) in p
            .data
            .iter_mut()
            .zip(&g.data)
            .zip(&mut m.data)
            .zip(&mut v.data)
        {
            *mv = beta1 * *mv + (one - beta1) * gv;
            *vv = beta2 * *vv + (one - beta2) * gv * gv;
            let m_hat = *mv / correction1;
            let v_hat = *vv / correction2;
            *pv -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

/// `target = tau * online + (1 - tau) * target`, element-wise.
pub fn polyak_update<T: Scalar>(
    target: &mut ParameterSet<T>,
    online: &ParameterSet<T>,
    tau: T,
) -> Result<(), NnError> {
    if !(tau >= T::zero() && tau <= T::one()) {
        return Err(NnError::Tau(tau.as_f64()));
    }
    target.check_layout(online, "polyak")?;
    let keep = T::one() - tau;
    for (t, o) in target.arrays.iter_mut().zip(&online.arrays) {
        for (tv, &ov) in t.data.iter_mut().zip(&o.data) {
            *tv = tau * ov + keep * *tv;
        }
    }
    Ok(())
}

/// Max-shifted log-softmax.
pub fn log_softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let log_sum = logits.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
    logits.iter().map(|&x| x - log_sum).collect()
}
