//! From-scratch CNN engine: tensors, layer kernels, the layer-stack model,
//! Adam, finite-difference gradient checking and checkpoint files.

mod adam;
mod checkpoint;
mod gradcheck;
mod layers;
mod tensor;

use rand::Rng;
use rand_distr::{Distribution, Normal};

pub use adam::{adam_step, AdamState};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, REL_ERROR_FLOOR};
pub use layers::{
    conv2d_backward, conv2d_forward, cross_entropy, dense_backward, dense_forward, maxpool2d_backward,
    maxpool2d_forward, relu, relu_backward, softmax, softmax_cross_entropy_grad, Conv2d, Dense, PoolIndices,
    PROB_FLOOR,
};
pub use tensor::{Scalar, Tensor};

use crate::error::{Error, Result};

/// One entry of a model's layer stack.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T = f64> {
    Conv2d(Conv2d<T>),
    Relu,
    MaxPool2d,
    Flatten,
    Dense(Dense<T>),
    Softmax,
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::Relu => "relu",
            Layer::MaxPool2d => "maxpool2d",
            Layer::Flatten => "flatten",
            Layer::Dense(_) => "dense",
            Layer::Softmax => "softmax",
        }
    }

    fn cast<U: Scalar>(&self) -> Layer<U> {
        match self {
            Layer::Conv2d(c) => Layer::Conv2d(c.cast()),
            Layer::Relu => Layer::Relu,
            Layer::MaxPool2d => Layer::MaxPool2d,
            Layer::Flatten => Layer::Flatten,
            Layer::Dense(d) => Layer::Dense(d.cast()),
            Layer::Softmax => Layer::Softmax,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match (self, input) {
            (Layer::Conv2d(c), &[ch, h, w]) => {
                let (kh, kw) = c.kernel();
                if ch != c.in_channels() || h < kh || w < kw {
                    return Err(Error::ShapeMismatch(format!(
                        "conv2d {:?} cannot take input {input:?}",
                        c.weight.shape()
                    )));
                }
                Ok(vec![c.out_channels(), h, w])
            }
            (Layer::MaxPool2d, &[ch, h, w]) => {
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::OddDimension { height: h, width: w });
                }
                Ok(vec![ch, h / 2, w / 2])
            }
            (Layer::Flatten, s) => Ok(vec![s.iter().product()]),
            (Layer::Dense(d), &[n]) if n == d.in_dim() => Ok(vec![d.out_dim()]),
            (Layer::Relu, s) => Ok(s.to_vec()),
            (Layer::Softmax, &[c]) if c >= 2 => Ok(vec![c]),
            (l, s) => Err(Error::ShapeMismatch(format!(
                "{} layer cannot take input {s:?}",
                l.kind()
            ))),
        }
    }
}

impl Conv2d {
    /// He-normal weights (`std = sqrt(2 / fan_in)`), zero bias.
    pub fn he_normal(out_ch: usize, in_ch: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        let fan_in = in_ch * kernel * kernel;
        Conv2d::new(
            he_tensor(&[out_ch, in_ch, kernel, kernel], fan_in, rng),
            Tensor::zeros(&[out_ch]),
        )
        .expect("consistent shapes")
    }
}

impl Dense {
    /// He-normal weights (`std = sqrt(2 / in_dim)`), zero bias.
    pub fn he_normal(out_dim: usize, in_dim: usize, rng: &mut impl Rng) -> Self {
        Dense::new(he_tensor(&[out_dim, in_dim], in_dim, rng), Tensor::zeros(&[out_dim])).expect("consistent shapes")
    }
}

fn he_tensor(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    Tensor::from_fn(shape, |_| normal.sample(rng))
}

fn forward_layers<T: Scalar>(layers: &[Layer<T>], x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut a = x.clone();
    for layer in layers {
        a = match layer {
            Layer::Conv2d(c) => conv2d_forward(&a, c)?,
            Layer::Relu => relu(&a),
            Layer::MaxPool2d => maxpool2d_forward(&a)?.0,
            Layer::Flatten => flatten(a)?,
            Layer::Dense(d) => dense_forward(&a, d)?,
            Layer::Softmax => softmax(&a)?,
        };
    }
    Ok(a)
}

fn flatten<T: Scalar>(a: Tensor<T>) -> Result<Tensor<T>> {
    let n = a.shape()[0];
    let rest: usize = a.shape()[1..].iter().product();
    a.reshape(&[n, rest])
}

fn check_batch(input_shape: &[usize; 3], x_shape: &[usize]) -> Result<()> {
    if x_shape.len() != 4 || x_shape[1..] != input_shape[..] || x_shape[0] == 0 {
        return Err(Error::ShapeMismatch(format!(
            "model expects [N,{},{},{}] with N >= 1, got {x_shape:?}",
            input_shape[0], input_shape[1], input_shape[2]
        )));
    }
    Ok(())
}

/// Row-wise argmax, ties going to the lowest index.
pub fn argmax_rows<T: Scalar>(probs: &Tensor<T>) -> Vec<usize> {
    let c = probs.shape()[1];
    probs
        .data()
        .chunks_exact(c)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Ordered layer stack with `f64` parameters and its Adam state.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    input_shape: [usize; 3],
    layers: Vec<Layer>,
    pub adam: AdamState,
}

impl Model {
    /// Validates that consecutive layers fit together for `[C, H, W]` inputs
    /// and that the stack ends in its only softmax.
    pub fn new(input_shape: [usize; 3], layers: Vec<Layer>) -> Result<Self> {
        let softmaxes = layers.iter().filter(|l| matches!(l, Layer::Softmax)).count();
        if softmaxes != 1 || !matches!(layers.last(), Some(Layer::Softmax)) {
            return Err(Error::InvalidConfig(
                "model must end in exactly one softmax layer".into(),
            ));
        }
        let mut shape = input_shape.to_vec();
        for layer in &layers {
            shape = layer.output_shape(&shape)?;
        }
        let mut model = Model {
            input_shape,
            layers,
            adam: AdamState::new(std::iter::empty(), 0.0),
        };
        model.adam = AdamState::new(model.params(), 1e-5);
        Ok(model)
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_classes(&self) -> usize {
        let mut shape = self.input_shape.to_vec();
        for layer in &self.layers {
            shape = layer.output_shape(&shape).expect("validated at construction");
        }
        shape[0]
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| match l {
                Layer::Conv2d(c) => vec![&c.weight, &c.bias],
                Layer::Dense(d) => vec![&d.weight, &d.bias],
                _ => vec![],
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| match l {
                Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
                Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
                _ => vec![],
            })
            .collect()
    }

    /// `<layer index>.<kind>.<weight|bias>` for every parameter tensor.
    pub fn param_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| match l {
                Layer::Conv2d(_) | Layer::Dense(_) => {
                    vec![format!("{i}.{}.weight", l.kind()), format!("{i}.{}.bias", l.kind())]
                }
                _ => vec![],
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Class probabilities in full precision.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        check_batch(&self.input_shape, x.shape())?;
        forward_layers(&self.layers, x)
    }

    pub fn loss(&self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        cross_entropy(&self.forward(x)?, labels)
    }

    /// Mean cross-entropy, probabilities and the gradient of the loss for
    /// every parameter tensor (ordered as [`Model::params`]).
    pub fn loss_and_grads(&self, x: &Tensor, labels: &[usize]) -> Result<(f64, Tensor, Vec<Tensor>)> {
        check_batch(&self.input_shape, x.shape())?;
        if labels.len() != x.shape()[0] {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for batch of {}",
                labels.len(),
                x.shape()[0]
            )));
        }
        let mut inputs: Vec<Tensor> = Vec::with_capacity(self.layers.len());
        let mut pools: Vec<Option<PoolIndices>> = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for layer in &self.layers {
            let (next, pool) = match layer {
                Layer::Conv2d(c) => (conv2d_forward(&a, c)?, None),
                Layer::Relu => (relu(&a), None),
                Layer::MaxPool2d => {
                    let (y, idx) = maxpool2d_forward(&a)?;
                    (y, Some(idx))
                }
                Layer::Flatten => (flatten(a.clone())?, None),
                Layer::Dense(d) => (dense_forward(&a, d)?, None),
                Layer::Softmax => (softmax(&a)?, None),
            };
            inputs.push(std::mem::replace(&mut a, next));
            pools.push(pool);
        }
        let probs = a;
        let loss = cross_entropy(&probs, labels)?;

        let mut grad = softmax_cross_entropy_grad(&probs, labels)?;
        let mut layer_grads: Vec<Vec<Tensor>> = vec![Vec::new(); self.layers.len()];
        let last = self.layers.len() - 1;
        for i in (0..last).rev() {
            let want_gx = i > 0;
            grad = match &self.layers[i] {
                Layer::Conv2d(c) => {
                    let g = layers::conv2d_backward_inner(&inputs[i], c, &grad, want_gx)?;
                    layer_grads[i] = vec![g.grad_w, g.grad_b];
                    match g.grad_x {
                        Some(gx) => gx,
                        None => break,
                    }
                }
                Layer::Dense(d) => {
                    let (gx, gw, gb) = layers::dense_backward_inner(&inputs[i], d, &grad, want_gx)?;
                    layer_grads[i] = vec![gw, gb];
                    match gx {
                        Some(gx) => gx,
                        None => break,
                    }
                }
                Layer::Relu => relu_backward(&inputs[i], &grad)?,
                Layer::MaxPool2d => maxpool2d_backward(pools[i].as_ref().expect("recorded"), &grad)?,
                Layer::Flatten => grad.reshape(inputs[i].shape())?,
                Layer::Softmax => unreachable!("softmax is terminal"),
            };
        }
        let grads: Vec<Tensor> = layer_grads.into_iter().flatten().collect();
        if grads.iter().any(|g| !g.all_finite()) {
            return Err(Error::NonFinite("backward pass"));
        }
        Ok((loss, probs, grads))
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.adam.lr = lr;
    }

    /// One forward/backward pass and Adam update. Returns the batch loss and
    /// the number of correctly classified samples (before the update).
    pub fn train_step(&mut self, x: &Tensor, labels: &[usize]) -> Result<(f64, usize)> {
        let (loss, probs, grads) = self.loss_and_grads(x, labels)?;
        let correct = argmax_rows(&probs).iter().zip(labels).filter(|(p, l)| p == l).count();
        let mut state = std::mem::replace(&mut self.adam, AdamState::new(std::iter::empty(), 0.0));
        let result = adam_step(&mut self.params_mut(), &grads, &mut state);
        self.adam = state;
        result?;
        Ok((loss, correct))
    }

    /// Single-precision copy of the network for inference.
    pub fn inference(&self) -> InferenceModel {
        InferenceModel {
            input_shape: self.input_shape,
            num_classes: self.num_classes(),
            layers: self.layers.iter().map(Layer::cast).collect(),
        }
    }

    /// Class probabilities from the single-precision inference path.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor<f32>> {
        self.inference().predict(&x.cast())
    }
}

/// Immutable `f32` network, safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceModel {
    input_shape: [usize; 3],
    num_classes: usize,
    layers: Vec<Layer<f32>>,
}

impl InferenceModel {
    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn predict(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        check_batch(&self.input_shape, x.shape())?;
        forward_layers(&self.layers, x)
    }

    pub fn classify(&self, x: &Tensor<f32>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.predict(x)?))
    }
}
