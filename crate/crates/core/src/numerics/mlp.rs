//! Dense feed-forward networks with hand-written backpropagation.
//!
//! Weights are stored `in_dim × out_dim`, so a layer computes
//! `act(x · W + b)` on a row-major batch `x`. Gradients accumulate into each
//! [`ParamTensor::grad`]; callers zero them explicitly between steps.

use serde::{Deserialize, Serialize};

use super::matrix::{Matrix, Real};
use super::rng::RngStream;
use crate::error::{MaflError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply<T: Real>(self, v: T) -> T {
        match self {
            Activation::Relu => {
                if v > T::zero() {
                    v
                } else {
                    T::zero()
                }
            }
            Activation::Identity => v,
        }
    }
}

/// A parameter value with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor<T: Real = f32> {
    pub value: Matrix<T>,
    pub grad: Matrix<T>,
    pub trainable: bool,
}

impl<T: Real> ParamTensor<T> {
    pub fn new(value: Matrix<T>) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Self {
            value,
            grad,
            trainable: true,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn cast<U: Real>(&self) -> ParamTensor<U> {
        ParamTensor {
            value: self.value.cast(),
            grad: self.grad.cast(),
            trainable: self.trainable,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T: Real = f32> {
    pub weight: ParamTensor<T>,
    pub bias: ParamTensor<T>,
    pub activation: Activation,
}

impl<T: Real> Dense<T> {
    pub fn new(weight: Matrix<T>, bias: Vec<T>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.cols() {
            return Err(MaflError::dim("Dense::new bias", weight.cols(), bias.len()));
        }
        let bias = Matrix::new(1, weight.cols(), bias)?;
        Ok(Self {
            weight: ParamTensor::new(weight),
            bias: ParamTensor::new(bias),
            activation,
        })
    }

    /// Weights ~ U(−1/√fan_in, 1/√fan_in), zero bias.
    pub fn init_uniform(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut RngStream,
    ) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = Matrix::from_fn(in_dim, out_dim, |_, _| {
            T::from_f64(rng.uniform_range(-bound, bound))
        });
        Self {
            weight: ParamTensor::new(weight),
            bias: ParamTensor::new(Matrix::zeros(1, out_dim)),
            activation,
        }
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weight.value.rows()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weight.value.cols()
    }

    /// Pre-activation `x · W + b`.
    fn affine(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        let mut z = x.matmul(&self.weight.value)?;
        z.add_row_broadcast(self.bias.value.as_slice())?;
        Ok(z)
    }

    pub fn cast<U: Real>(&self) -> Dense<U> {
        Dense {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
            activation: self.activation,
        }
    }
}

/// Per-layer inputs and pre-activations from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T: Real = f32> {
    inputs: Vec<Matrix<T>>,
    pre: Vec<Matrix<T>>,
}

impl<T: Real> ForwardCache<T> {
    pub fn pre_activations(&self) -> &[Matrix<T>] {
        &self.pre
    }

    /// Bit pattern of which ReLU units were active, used by the gradient
    /// checker to detect finite-difference stencils that cross a kink.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.pre
            .iter()
            .flat_map(|m| m.as_slice().iter().map(|&v| v > T::zero()))
            .collect()
    }
}

/// Forward pass over an ordered list of layers.
pub fn mlp_forward<T: Real>(
    layers: &[Dense<T>],
    input: &Matrix<T>,
) -> Result<(Matrix<T>, ForwardCache<T>)> {
    let mut inputs = Vec::with_capacity(layers.len());
    let mut pre = Vec::with_capacity(layers.len());
    let mut x = input.clone();
    for (i, layer) in layers.iter().enumerate() {
        if x.cols() != layer.in_dim() {
            return Err(MaflError::dim(
                format!("layer {i} input"),
                layer.in_dim(),
                x.cols(),
            ));
        }
        let z = layer.affine(&x)?;
        let mut a = z.clone();
        for v in a.as_mut_slice() {
            *v = layer.activation.apply(*v);
        }
        inputs.push(x);
        pre.push(z);
        x = a;
    }
    Ok((x, ForwardCache { inputs, pre }))
}

/// Backward pass. Accumulates parameter gradients of trainable layers and
/// returns the gradient with respect to the network input.
///
/// Frozen layers still propagate gradients to their inputs; only their own
/// `grad` buffers are left untouched.
pub fn mlp_backward<T: Real>(
    layers: &mut [Dense<T>],
    cache: &ForwardCache<T>,
    upstream: &Matrix<T>,
) -> Result<Matrix<T>> {
    if cache.pre.len() != layers.len() {
        return Err(MaflError::State(format!(
            "forward cache has {} layers, network has {}",
            cache.pre.len(),
            layers.len()
        )));
    }
    let mut grad = upstream.clone();
    for (i, layer) in layers.iter_mut().enumerate().rev() {
        let z = &cache.pre[i];
        if grad.shape() != z.shape() {
            return Err(MaflError::dim(
                format!("layer {i} upstream gradient"),
                format!("{}x{}", z.rows(), z.cols()),
                format!("{}x{}", grad.rows(), grad.cols()),
            ));
        }
        if layer.activation == Activation::Relu {
            for (g, &zv) in grad.as_mut_slice().iter_mut().zip(z.as_slice()) {
                if zv <= T::zero() {
                    *g = T::zero();
                }
            }
        }
        let x = &cache.inputs[i];
        if layer.weight.trainable {
            let dw = x.matmul_tn(&grad)?;
            layer.weight.grad.add_assign(&dw)?;
        }
        if layer.bias.trainable {
            let db = grad.column_sums();
            for (b, d) in layer.bias.grad.as_mut_slice().iter_mut().zip(db) {
                *b = T::from_f64(b.as_f64() + d);
            }
        }
        grad = grad.matmul_nt(&layer.weight.value)?;
    }
    Ok(grad)
}

/// A network that can retain the cache of its most recent recorded forward
/// pass, so `backward` can be called without threading the cache around.
#[derive(Debug, Clone)]
pub struct Mlp<T: Real = f32> {
    layers: Vec<Dense<T>>,
    cache: Option<ForwardCache<T>>,
}

impl<T: Real> PartialEq for Mlp<T> {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl<T: Real> Mlp<T> {
    pub fn from_layers(layers: Vec<Dense<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(MaflError::Config("an MLP needs at least one layer".into()));
        }
        for i in 1..layers.len() {
            if layers[i].in_dim() != layers[i - 1].out_dim() {
                return Err(MaflError::dim(
                    format!("layer {i} input"),
                    layers[i - 1].out_dim(),
                    layers[i].in_dim(),
                ));
            }
        }
        Ok(Self {
            layers,
            cache: None,
        })
    }

    /// `dims = [in, hidden.., out]`; ReLU on hidden layers, identity on the last.
    pub fn init(dims: &[usize], rng: &mut RngStream) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(MaflError::Config(format!("invalid layer dims {dims:?}")));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                Dense::init_uniform(w[0], w[1], act, rng)
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<T>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.value.len() + l.bias.value.len())
            .sum()
    }

    /// Inference: no cache is kept.
    pub fn forward(&self, input: &Matrix<T>) -> Result<Matrix<T>> {
        Ok(mlp_forward(&self.layers, input)?.0)
    }

    /// Forward pass that keeps its cache for a later [`Mlp::backward`].
    pub fn forward_record(&mut self, input: &Matrix<T>) -> Result<Matrix<T>> {
        let (out, cache) = mlp_forward(&self.layers, input)?;
        self.cache = Some(cache);
        Ok(out)
    }

    pub fn last_cache(&self) -> Option<&ForwardCache<T>> {
        self.cache.as_ref()
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    /// Backpropagates `upstream` through the last recorded forward pass.
    pub fn backward(&mut self, upstream: &Matrix<T>) -> Result<Matrix<T>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| MaflError::State("backward called without a recorded forward".into()))?;
        mlp_backward(&mut self.layers, cache, upstream)
    }

    pub fn zero_grad(&mut self) {
        for l in &mut self.layers {
            l.weight.zero_grad();
            l.bias.zero_grad();
        }
    }

    pub fn set_trainable(&mut self, flag: bool) {
        for l in &mut self.layers {
            l.weight.trainable = flag;
            l.bias.trainable = flag;
        }
    }

    pub fn is_trainable(&self) -> bool {
        self.layers[0].weight.trainable
    }

    pub fn params(&self) -> impl Iterator<Item = &ParamTensor<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            layers: self.layers.iter().map(Dense::cast).collect(),
            cache: None,
        }
    }
}
