use crate::network::Differentiable;
use crate::tensor::{Tensor, TensorError};

/// Affine classifier `z = W·x + b` over a flattened input.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    input_dims: Vec<usize>,
    /// Row-major `[classes, inputs]`.
    weights: Vec<f32>,
    bias: Vec<f32>,
}

impl LinearModel {
    pub fn new(input_dims: Vec<usize>, weights: Vec<f32>, bias: Vec<f32>) -> Result<Self, TensorError> {
        let n: usize = input_dims.iter().product();
        if bias.is_empty() || weights.len() != n * bias.len() {
            return Err(TensorError::LengthMismatch {
                dims: vec![bias.len(), n],
                len: weights.len(),
            });
        }
        Ok(Self {
            input_dims,
            weights,
            bias,
        })
    }

    pub fn row(&self, class: usize) -> &[f32] {
        let n = self.weights.len() / self.bias.len();
        &self.weights[class * n..(class + 1) * n]
    }
}

impl Differentiable for LinearModel {
    type Tape = ();

    fn num_classes(&self) -> usize {
        self.bias.len()
    }

    fn forward(&self, x: &Tensor) -> Result<(Vec<f32>, ()), TensorError> {
        x.expect_dims(&self.input_dims)?;
        let logits = (0..self.bias.len())
            .map(|k| {
                let dot: f64 = self.row(k).iter().zip(x.data()).map(|(&w, &v)| f64::from(w) * f64::from(v)).sum();
                (dot + f64::from(self.bias[k])) as f32
            })
            .collect();
        Ok((logits, ()))
    }

    fn input_vjp(&self, _tape: &(), dlogits: &[f32]) -> Tensor {
        let mut g = Tensor::zeros(&self.input_dims);
        for (k, &d) in dlogits.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (gi, &w) in g.data_mut().iter_mut().zip(self.row(k)) {
                *gi += d * w;
            }
        }
        g
    }
}
