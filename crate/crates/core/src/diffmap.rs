//! Differentiable image-to-vector mappings `f: X → R^K` with vector-Jacobian
//! products, shared by representation matching and adversarial probing.

use rcdm_tensor::{Graph, Real, Tensor, Var};

use crate::encoders::{Encoder, Source};
use crate::error::{Error, Result};
use crate::nn::Fingerprint;

pub trait DiffMap<T: Real> {
    /// Per-item input shape `(channels, height, width)`.
    fn input_shape(&self) -> [usize; 3];

    fn output_dim(&self) -> usize;

    /// Builds `f(x)` for a batch `x` of shape `(n, c, h, w)`; the result is `(n, K)`.
    fn forward_graph(&self, g: &mut Graph<T>, x: Var) -> Var;

    fn input_dim(&self) -> usize {
        self.input_shape().iter().product()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        if s.len() != 4 || s[1..] != self.input_shape() {
            return Err(Error::ShapeMismatch(format!(
                "mapping expects (n, {:?}), got {s:?}",
                self.input_shape()
            )));
        }
        Ok(())
    }

    fn evaluate(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = self.forward_graph(&mut g, xv);
        Ok(g.value(y).clone())
    }

    /// `f(x)` together with `seedᵀ·J_f(x)`, where `seed = seed_fn(f(x))`.
    fn value_and_vjp(
        &self,
        x: &Tensor<T>,
        seed_fn: &mut dyn FnMut(&Tensor<T>) -> Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let xv = g.param(x.clone());
        let y = self.forward_graph(&mut g, xv);
        let value = g.value(y).clone();
        let seed = seed_fn(&value);
        let mut grads = g.backward_with(y, seed);
        let gx = grads.take(xv).unwrap_or_else(|| Tensor::zeros(x.shape()));
        Ok((value, gx))
    }
}

/// `f(x) = A·vec(x)` with `A` of shape `(K, D)`.
#[derive(Clone, Debug)]
pub struct LinearMap<T> {
    pub a: Tensor<T>,
    pub shape: [usize; 3],
}

impl<T: Real> LinearMap<T> {
    pub fn new(a: Tensor<T>, shape: [usize; 3]) -> Result<Self> {
        let d: usize = shape.iter().product();
        if a.rank() != 2 || a.shape()[1] != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: a.shape().get(1).copied().unwrap_or(0),
            });
        }
        Ok(Self { a, shape })
    }
}

impl<T: Real> DiffMap<T> for LinearMap<T> {
    fn input_shape(&self) -> [usize; 3] {
        self.shape
    }

    fn output_dim(&self) -> usize {
        self.a.shape()[0]
    }

    fn forward_graph(&self, g: &mut Graph<T>, x: Var) -> Var {
        let n = g.shape(x)[0];
        let flat = g.reshape(x, &[n, self.input_dim()]);
        let a = g.constant(self.a.clone());
        g.matmul_t(flat, a)
    }
}

/// A frozen encoder viewed as a mapping to one of its outputs.
#[derive(Clone, Copy, Debug)]
pub struct EncoderMap<'a, T> {
    pub encoder: &'a Encoder<T>,
    pub source: Source,
}

impl<'a, T: Real> EncoderMap<'a, T> {
    pub fn new(encoder: &'a Encoder<T>, source: Source) -> Self {
        Self { encoder, source }
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.encoder.fingerprint()
    }
}

impl<T: Real> DiffMap<T> for EncoderMap<'_, T> {
    fn input_shape(&self) -> [usize; 3] {
        self.encoder.input_shape()
    }

    fn output_dim(&self) -> usize {
        self.encoder.dim(self.source)
    }

    fn forward_graph(&self, g: &mut Graph<T>, x: Var) -> Var {
        let p = self.encoder.params().bind(g, false);
        self.encoder.forward(g, &p, x, self.source)
    }
}
