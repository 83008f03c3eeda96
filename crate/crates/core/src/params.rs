//! Shared plumbing for trainable parameter trees.
//!
//! Parameter structs are generic over their leaf type: `Tensor` for stored
//! weights, [`Var`] once bound onto a [`Graph`]. Every tree exposes the same
//! depth-first leaf order through `visit`/`visit_mut`, so flat lists of
//! gradients and optimizer moments line up with the parameters they belong to.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::autograd::{Graph, Tensor, Var};

/// Whether a leaf takes part in L2 regularization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Weight,
    Bias,
}

/// Binds a stored parameter onto a graph as a trainable or frozen leaf.
pub(crate) fn bind(g: &mut Graph, t: &Tensor, trainable: bool) -> Var {
    if trainable {
        g.param(t.clone())
    } else {
        g.constant(t.clone())
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// `[rows × cols]` matrix with entries uniform in `±1/sqrt(cols)`.
pub(crate) fn uniform_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / (cols.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Tensor::matrix(rows, cols, data).expect("shape matches data")
}

pub(crate) fn uniform_vector(len: usize, fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Tensor::vector((0..len).map(|_| dist.sample(rng)).collect())
}

/// Dense affine layer `W x + b` with `W: [out × in]`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Linear<T = Tensor> {
    pub weight: T,
    pub bias: T,
}

impl Linear<Tensor> {
    pub fn init(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Linear {
            weight: uniform_matrix(outputs, inputs, rng),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Linear {
            weight: Tensor::zeros(&[outputs, inputs]),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Linear<Var> {
        self.map(&mut |t| bind(g, t, trainable))
    }
}

impl Linear<Var> {
    pub fn forward(&self, g: &mut Graph, x: Var) -> crate::Result<Var> {
        let wx = g.matvec(self.weight, x)?;
        g.add(wx, self.bias)
    }
}

impl<T> Linear<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Linear<U> {
        Linear {
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, Role, &T)) {
        f(&join(prefix, "weight"), Role::Weight, &self.weight);
        f(&join(prefix, "bias"), Role::Bias, &self.bias);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Role, &mut T)) {
        f(&join(prefix, "weight"), Role::Weight, &mut self.weight);
        f(&join(prefix, "bias"), Role::Bias, &mut self.bias);
    }
}
