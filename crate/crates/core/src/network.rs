//! The sub-model classifier: three convolutions followed by two dense layers.
//!
//! ```text
//! conv k×k → C1, ReLU
//! conv k×k → C2, ReLU, max-pool 2×2
//! conv k×k → C3, ReLU, max-pool 2×2
//! flatten, dense → hidden, ReLU, dense → classes
//! ```

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::layers::{
    conv_from_cols, conv_input_grad, conv_param_grads, cross_entropy, dense_forward, dense_input_grad,
    dense_param_grads, im2col, max_pool2_backward, max_pool2_forward, relu_backward, relu_forward, ConvGeometry,
};
use crate::tensor::{Tensor, TensorError};

/// Layer widths of the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: [usize; 3],
    pub kernel: usize,
    pub conv_channels: [usize; 3],
    pub hidden: usize,
    pub classes: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            input: [28, 28, 1],
            kernel: 3,
            conv_channels: [32, 64, 64],
            hidden: 128,
            classes: 10,
        }
    }
}

/// Names of the parameter tensors in storage order.
pub const PARAM_NAMES: [&str; 10] = [
    "conv1.kernel",
    "conv1.bias",
    "conv2.kernel",
    "conv2.bias",
    "conv3.kernel",
    "conv3.bias",
    "dense1.weight",
    "dense1.bias",
    "dense2.weight",
    "dense2.bias",
];

impl Architecture {
    pub fn compact() -> Self {
        Self {
            conv_channels: [16, 32, 32],
            ..Self::default()
        }
    }

    fn geometries(&self) -> Result<[ConvGeometry; 3], TensorError> {
        let k = self.kernel;
        let [c1, c2, c3] = self.conv_channels;
        let g1 = ConvGeometry::new(&self.input, &[k, k, self.input[2], c1], 1, 0)?;
        let g2 = ConvGeometry::new(&g1.out_dims(), &[k, k, c1, c2], 1, 0)?;
        let [h2, w2, _] = g2.out_dims();
        let g3 = ConvGeometry::new(&[h2 / 2, w2 / 2, c2], &[k, k, c2, c3], 1, 0)?;
        if g3.out_height < 2 || g3.out_width < 2 {
            return Err(TensorError::Geometry(format!("input {:?} too small for {self:?}", self.input)));
        }
        Ok([g1, g2, g3])
    }

    pub fn flatten_len(&self) -> Result<usize, TensorError> {
        let [_, _, g3] = self.geometries()?;
        Ok((g3.out_height / 2) * (g3.out_width / 2) * g3.out_channels)
    }

    /// Shapes of every parameter tensor, in [`PARAM_NAMES`] order.
    pub fn param_shapes(&self) -> Result<Vec<Vec<usize>>, TensorError> {
        let k = self.kernel;
        let [c1, c2, c3] = self.conv_channels;
        let flat = self.flatten_len()?;
        Ok(vec![
            vec![k, k, self.input[2], c1],
            vec![c1],
            vec![k, k, c1, c2],
            vec![c2],
            vec![k, k, c2, c3],
            vec![c3],
            vec![flat, self.hidden],
            vec![self.hidden],
            vec![self.hidden, self.classes],
            vec![self.classes],
        ])
    }

    pub fn num_parameters(&self) -> Result<usize, TensorError> {
        Ok(self.param_shapes()?.iter().map(|s| s.iter().product::<usize>()).sum())
    }
}

/// All trainable parameters of one classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierWeights {
    arch: Architecture,
    params: Vec<Tensor>,
    geoms: [ConvGeometry; 3],
}

impl ClassifierWeights {
    pub fn zeros(arch: Architecture) -> Result<Self, TensorError> {
        let params = arch.param_shapes()?.iter().map(|s| Tensor::zeros(s)).collect();
        Self::from_params(arch, params)
    }

    /// He-normal kernels and zero biases.
    pub fn init_he(arch: Architecture, rng: &mut impl Rng) -> Result<Self, TensorError> {
        let mut w = Self::zeros(arch)?;
        for (i, p) in w.params.iter_mut().enumerate() {
            if i % 2 == 1 {
                continue;
            }
            let dims = p.dims();
            let fan_in: usize = dims[..dims.len() - 1].iter().product();
            let normal = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("finite std");
            for v in p.data_mut() {
                *v = normal.sample(rng);
            }
        }
        Ok(w)
    }

    pub fn from_params(arch: Architecture, params: Vec<Tensor>) -> Result<Self, TensorError> {
        let shapes = arch.param_shapes()?;
        if shapes.len() != params.len() {
            return Err(TensorError::Geometry(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for (shape, p) in shapes.iter().zip(&params) {
            p.expect_dims(shape)?;
        }
        let geoms = arch.geometries()?;
        Ok(Self { arch, params, geoms })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn named_params(&self) -> impl Iterator<Item = (&'static str, &Tensor)> {
        PARAM_NAMES.iter().copied().zip(&self.params)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(Tensor::all_finite)
    }

    /// Zero tensors with this model's parameter shapes.
    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| Tensor::zeros(p.dims())).collect()
    }

    /// Runs the network and keeps every intermediate needed by [`Self::backward`].
    pub fn forward_tape(&self, input: &Tensor) -> Result<ForwardTape, TensorError> {
        input.expect_dims(&self.arch.input)?;
        let [g1, g2, g3] = &self.geoms;
        let p = &self.params;

        let cols1 = im2col(input.data(), g1);
        let mut a1 = conv_from_cols(&cols1, p[0].data(), p[1].data(), g1);
        relu_forward(&mut a1);

        let cols2 = im2col(&a1, g2);
        let mut a2 = conv_from_cols(&cols2, p[2].data(), p[3].data(), g2);
        relu_forward(&mut a2);
        let (pool1, arg1, _) = max_pool2_forward(&a2, g2.out_dims());

        let cols3 = im2col(&pool1, g3);
        let mut a3 = conv_from_cols(&cols3, p[4].data(), p[5].data(), g3);
        relu_forward(&mut a3);
        let (flat, arg2, _) = max_pool2_forward(&a3, g3.out_dims());

        let mut hidden = dense_forward(&flat, p[6].data(), p[7].data());
        relu_forward(&mut hidden);
        let logits = dense_forward(&hidden, p[8].data(), p[9].data());

        Ok(ForwardTape {
            cols1,
            a1,
            cols2,
            a2,
            arg1,
            cols3,
            a3,
            arg2,
            flat,
            hidden,
            logits,
        })
    }

    /// Back-propagates `dlogits` through a recorded forward pass.
    ///
    /// Parameter gradients are *added* into `param_grads` when given; the
    /// input gradient is returned when `want_input` is set.
    pub fn backward(
        &self,
        tape: &ForwardTape,
        dlogits: &[f32],
        mut param_grads: Option<&mut [Tensor]>,
        want_input: bool,
    ) -> Option<Tensor> {
        let [g1, g2, g3] = &self.geoms;
        let p = &self.params;

        if let Some(pg) = param_grads.as_deref_mut() {
            let (w, b) = split_pair(pg, 8);
            dense_param_grads(&tape.hidden, dlogits, w, b);
        }
        let mut dh = dense_input_grad(p[8].data(), dlogits, tape.hidden.len());
        relu_backward(&tape.hidden, &mut dh);

        if let Some(pg) = param_grads.as_deref_mut() {
            let (w, b) = split_pair(pg, 6);
            dense_param_grads(&tape.flat, &dh, w, b);
        }
        let dflat = dense_input_grad(p[6].data(), &dh, tape.flat.len());

        let mut da3 = max_pool2_backward(&dflat, &tape.arg2, tape.a3.len());
        relu_backward(&tape.a3, &mut da3);
        if let Some(pg) = param_grads.as_deref_mut() {
            let (w, b) = split_pair(pg, 4);
            conv_param_grads(&tape.cols3, &da3, g3, w, b);
        }
        let dpool1 = conv_input_grad(p[4].data(), &da3, g3);

        let mut da2 = max_pool2_backward(&dpool1, &tape.arg1, tape.a2.len());
        relu_backward(&tape.a2, &mut da2);
        if let Some(pg) = param_grads.as_deref_mut() {
            let (w, b) = split_pair(pg, 2);
            conv_param_grads(&tape.cols2, &da2, g2, w, b);
        }
        let mut da1 = conv_input_grad(p[2].data(), &da2, g2);
        relu_backward(&tape.a1, &mut da1);
        if let Some(pg) = param_grads.as_deref_mut() {
            let (w, b) = split_pair(pg, 0);
            conv_param_grads(&tape.cols1, &da1, g1, w, b);
        }
        if !want_input {
            return None;
        }
        let dx = conv_input_grad(p[0].data(), &da1, g1);
        Some(Tensor::new(self.arch.input.to_vec(), dx).expect("input dims"))
    }
}

fn split_pair(grads: &mut [Tensor], at: usize) -> (&mut [f32], &mut [f32]) {
    let (w, rest) = grads[at..].split_at_mut(1);
    (w[0].data_mut(), rest[0].data_mut())
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    cols1: Vec<f32>,
    a1: Vec<f32>,
    cols2: Vec<f32>,
    a2: Vec<f32>,
    arg1: Vec<u32>,
    cols3: Vec<f32>,
    a3: Vec<f32>,
    arg2: Vec<u32>,
    flat: Vec<f32>,
    hidden: Vec<f32>,
    logits: Vec<f32>,
}

impl ForwardTape {
    pub fn logits(&self) -> &[f32] {
        &self.logits
    }
}

/// Per-layer parameter gradients plus the gradient with respect to the input.
#[derive(Debug, Clone)]
pub struct LayerGradients {
    pub parameter_grads: Vec<Tensor>,
    pub input_grad: Tensor,
}

/// Pre-softmax logits of the classifier.
pub fn model_forward(weights: &ClassifierWeights, input: &Tensor) -> Result<Tensor, TensorError> {
    let tape = weights.forward_tape(input)?;
    Tensor::new(vec![weights.arch.classes], tape.logits)
}

/// Cross-entropy loss plus gradients for every parameter and for the input.
pub fn loss_and_gradients(
    weights: &ClassifierWeights,
    input: &Tensor,
    label: usize,
) -> Result<(f64, LayerGradients), TensorError> {
    check_label(label, weights.arch.classes)?;
    let tape = weights.forward_tape(input)?;
    let (loss, dlogits) = cross_entropy(&tape.logits, label);
    if !loss.is_finite() {
        return Err(TensorError::NonFinite("cross-entropy loss"));
    }
    let mut grads = weights.zero_grads();
    let input_grad = weights
        .backward(&tape, &dlogits, Some(&mut grads), true)
        .expect("input gradient requested");
    if !input_grad.all_finite() || !grads.iter().all(Tensor::all_finite) {
        return Err(TensorError::NonFinite("gradients"));
    }
    Ok((
        loss,
        LayerGradients {
            parameter_grads: grads,
            input_grad,
        },
    ))
}

fn check_label(label: usize, classes: usize) -> Result<(), TensorError> {
    if label >= classes {
        return Err(TensorError::Geometry(format!("label {label} outside 0..{classes}")));
    }
    Ok(())
}

/// A classifier whose logits can be differentiated with respect to its input.
///
/// Attacks are written against this trait so they apply equally to the CNN
/// and to closed-form models used as oracles.
pub trait Differentiable {
    type Tape;

    fn num_classes(&self) -> usize;

    fn forward(&self, x: &Tensor) -> Result<(Vec<f32>, Self::Tape), TensorError>;

    /// Vector-Jacobian product `Jᵀ·dlogits` at the recorded point.
    fn input_vjp(&self, tape: &Self::Tape, dlogits: &[f32]) -> Tensor;

    fn logits(&self, x: &Tensor) -> Result<Vec<f32>, TensorError> {
        Ok(self.forward(x)?.0)
    }

    fn predict_label(&self, x: &Tensor) -> Result<usize, TensorError> {
        Ok(crate::tensor::argmax(&self.logits(x)?))
    }
}

impl Differentiable for ClassifierWeights {
    type Tape = ForwardTape;

    fn num_classes(&self) -> usize {
        self.arch.classes
    }

    fn forward(&self, x: &Tensor) -> Result<(Vec<f32>, ForwardTape), TensorError> {
        let tape = self.forward_tape(x)?;
        Ok((tape.logits.clone(), tape))
    }

    fn input_vjp(&self, tape: &ForwardTape, dlogits: &[f32]) -> Tensor {
        self.backward(tape, dlogits, None, true).expect("input gradient requested")
    }
}

/// Cross-entropy loss, logits and `∇ₓL` for any differentiable classifier.
pub fn loss_input_gradient<M: Differentiable>(
    model: &M,
    x: &Tensor,
    label: usize,
) -> Result<(f64, Vec<f32>, Tensor), TensorError> {
    check_label(label, model.num_classes())?;
    let (logits, tape) = model.forward(x)?;
    let (loss, dlogits) = cross_entropy(&logits, label);
    if !loss.is_finite() {
        return Err(TensorError::NonFinite("cross-entropy loss"));
    }
    let grad = model.input_vjp(&tape, &dlogits);
    Ok((loss, logits, grad))
}
