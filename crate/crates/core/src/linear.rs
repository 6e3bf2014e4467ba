//! Dense affine head `y = W x + b`, shared by the relation head and the ID classifier.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;

/// Half-width of the uniform initialization range.
pub const INIT_SCALE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearHead<T: Real = f64> {
    pub outputs: usize,
    pub inputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

/// Gradient with the same layout as [`LinearHead`].
#[derive(Clone, Debug, PartialEq)]
pub struct LinearGrad<T: Real = f64> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> LinearGrad<T> {
    pub fn zeros(outputs: usize, inputs: usize) -> Self {
        Self {
            weights: vec![T::zero(); outputs * inputs],
            bias: vec![T::zero(); outputs],
        }
    }

    pub fn scale(&mut self, k: T) {
        self.weights.iter_mut().chain(&mut self.bias).for_each(|g| *g *= k);
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += *b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += *b;
        }
    }

    /// Accumulates `delta ⊗ input` into the weights and `delta` into the bias.
    pub(crate) fn add_outer(&mut self, delta: &[T], input: &[T]) {
        let cols = input.len();
        for (r, &dr) in delta.iter().enumerate() {
            if dr.is_zero() {
                continue;
            }
            for (w, &x) in self.weights[r * cols..(r + 1) * cols].iter_mut().zip(input) {
                *w += dr * x;
            }
            self.bias[r] += dr;
        }
    }
}

impl<T: Real> LinearHead<T> {
    pub fn zeros(outputs: usize, inputs: usize) -> Self {
        Self {
            outputs,
            inputs,
            weights: vec![T::zero(); outputs * inputs],
            bias: vec![T::zero(); outputs],
        }
    }

    /// Small uniform weights in `[-INIT_SCALE, INIT_SCALE)`, zero bias.
    pub fn seeded(outputs: usize, inputs: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..outputs * inputs)
            .map(|_| T::lit(rng.random_range(-INIT_SCALE..INIT_SCALE)))
            .collect();
        Self {
            outputs,
            inputs,
            weights,
            bias: vec![T::zero(); outputs],
        }
    }

    pub fn weight(&self, row: usize, col: usize) -> T {
        self.weights[row * self.inputs + col]
    }

    pub fn row(&self, row: usize) -> &[T] {
        &self.weights[row * self.inputs..(row + 1) * self.inputs]
    }

    pub fn forward(&self, input: &[T]) -> Result<Vec<T>> {
        check_dim("linear head input", self.inputs, input.len())?;
        Ok((0..self.outputs)
            .map(|r| self.row(r).iter().zip(input).map(|(&w, &x)| w * x).sum::<T>() + self.bias[r])
            .collect())
    }

    pub fn apply_step(&mut self, grad: &LinearGrad<T>, learning_rate: T) {
        for (w, g) in self.weights.iter_mut().zip(&grad.weights) {
            *w -= learning_rate * *g;
        }
        for (b, g) in self.bias.iter_mut().zip(&grad.bias) {
            *b -= learning_rate * *g;
        }
    }

    pub fn check_shape(&self) -> Result<()> {
        if self.weights.len() != self.outputs * self.inputs || self.bias.len() != self.outputs {
            return Err(Error::InvalidInput(format!(
                "head buffers do not match {}x{} shape",
                self.outputs, self.inputs
            )));
        }
        if !self.weights.iter().chain(&self.bias).all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("head has non-finite entries".into()));
        }
        Ok(())
    }
}
