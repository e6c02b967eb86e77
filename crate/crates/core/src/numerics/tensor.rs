//! Dense f64 tensors with shape metadata, and named trainable parameters.

use crate::error::{Error, Result};
use crate::numerics::rng::Rng;

/// Row-major dense array of f64 values.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::Shape {
                op: "tensor",
                detail: format!(
                    "shape {:?} holds {} values, got {}",
                    shape,
                    expected,
                    values.len()
                ),
            });
        }
        Ok(Tensor { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            values: vec![v],
        }
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Tensor {
            shape: vec![values.len()],
            values,
        }
    }

    /// Matrix constructor from rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape {
                op: "tensor",
                detail: "ragged rows".into(),
            });
        }
        let mut values = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            values.extend_from_slice(r);
        }
        Ok(Tensor {
            shape: vec![rows.len(), cols],
            values,
        })
    }

    pub fn uniform(shape: Vec<usize>, lo: f64, hi: f64, rng: &mut Rng) -> Self {
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| rng.uniform(lo, hi)).collect();
        Tensor { shape, values }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.values[0])
        } else {
            Err(Error::Shape {
                op: "item",
                detail: format!("expected scalar, got shape {:?}", self.shape),
            })
        }
    }

    /// Number of rows when interpreted as a matrix [rows x cols].
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Row length when interpreted as a matrix; a vector is a single row.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 | 1 => self.len(),
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn row(&self, index: usize) -> &[f64] {
        let cols = self.cols();
        &self.values[index * cols..(index + 1) * cols]
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Handle into a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// A trainable tensor with its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape().to_vec());
        Parameter {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn reset_grad(&mut self) {
        for g in self.grad.values_mut() {
            *g = 0.0;
        }
    }
}

/// Arena of all trainable parameters of a model. Plain data, so models can be
/// shared read-only across threads for inference.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let id = ParamId(self.params.len());
        self.params.push(Parameter::new(name, value));
        id
    }

    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        rng: &mut Rng,
    ) -> ParamId {
        self.add(name, Tensor::uniform(shape, -0.1, 0.1, rng))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn reset_grads(&mut self) {
        for p in &mut self.params {
            p.reset_grad();
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, delta: &[f64]) {
        let grad = self.params[id.0].grad.values_mut();
        debug_assert_eq!(grad.len(), delta.len());
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }
}
